"""Price panels, sector metadata, log returns and window grids.

Prices come in long format (one row per date and ticker) and are aligned
onto the dates where every ticker has a price.  Nothing is imputed: dates
with a gap are dropped and reported.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, IngestError

PRICE_SCHEMA = {"date": "date", "ticker": "ticker", "adj_close": "adj_close"}
SECTOR_SCHEMA = {"ticker": "ticker", "sector_code": "sector_code", "sub_industry": "sub_industry"}

# GICS sector codes in the order used to lay out matrix rows.
GICS_ORDER = ("E", "M", "I", "CD", "CST", "HC", "F", "RE", "IT", "CSE", "U")


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _as_dates(values) -> np.ndarray:
    try:
        return np.asarray(values, dtype="datetime64[D]")
    except (ValueError, TypeError) as exc:
        raise IngestError(f"unparseable date: {exc}") from exc


@dataclass(frozen=True)
class DropReport:
    dropped_dates: tuple = ()  # (iso date, tuple of tickers missing on that date)
    dropped_tickers: tuple = ()

    def to_dict(self):
        return {
            "dropped_dates": [{"date": d, "missing": list(m)} for d, m in self.dropped_dates],
            "dropped_tickers": list(self.dropped_tickers),
        }


@dataclass(frozen=True)
class PricePanel:
    """Dense K x (T_tot + 1) matrix of adjusted closing prices."""

    tickers: tuple
    dates: np.ndarray
    prices: np.ndarray
    drop_report: DropReport = field(default_factory=DropReport, compare=False)

    def __post_init__(self):
        tickers = tuple(str(t) for t in self.tickers)
        dates = _frozen(_as_dates(self.dates))
        prices = _frozen(np.asarray(self.prices, dtype=float))
        if len(set(tickers)) != len(tickers):
            raise IngestError("duplicate ticker in panel")
        if prices.ndim != 2 or prices.shape != (len(tickers), len(dates)):
            raise IngestError(
                f"price matrix shape {prices.shape} does not match "
                f"{len(tickers)} tickers x {len(dates)} dates"
            )
        if len(dates) > 1 and not np.all(np.diff(dates) > np.timedelta64(0, "D")):
            raise IngestError("dates must be strictly increasing")
        bad = ~np.isfinite(prices) | (prices <= 0)
        if bad.any():
            i, t = np.argwhere(bad)[0]
            raise IngestError(
                f"nonpositive or non-finite price {prices[i, t]!r} for {tickers[i]} on {dates[t]}",
                date=str(dates[t]),
                ticker=tickers[i],
            )
        object.__setattr__(self, "tickers", tickers)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "prices", prices)

    @property
    def shape(self):
        return self.prices.shape

    def select(self, tickers: Sequence[str]) -> "PricePanel":
        """Reorder (or subset) the rows to ``tickers``."""
        index = {t: i for i, t in enumerate(self.tickers)}
        try:
            rows = [index[t] for t in tickers]
        except KeyError as exc:
            raise ConfigError(f"unknown ticker {exc.args[0]!r}") from None
        return PricePanel(tuple(tickers), self.dates, self.prices[rows], self.drop_report)


@dataclass(frozen=True)
class SectorMap:
    """ticker -> (sector code, sub-industry) plus the sector display order."""

    entries: Mapping[str, tuple]
    sector_order: tuple

    def __post_init__(self):
        order = tuple(self.sector_order)
        if len(set(order)) != len(order):
            raise ConfigError("sector_order lists a sector code twice")
        used = {sec for sec, _ in self.entries.values()}
        missing = used - set(order)
        if missing:
            raise ConfigError(f"sector codes missing from sector_order: {sorted(missing)}")
        object.__setattr__(self, "entries", dict(self.entries))
        object.__setattr__(self, "sector_order", order)

    def sector(self, ticker):
        return self.entries[ticker][0]

    def members(self, sector):
        return [t for t, (s, _) in self.entries.items() if s == sector]

    def ordered(self, tickers: Sequence[str]) -> list:
        """Sort tickers by sector rank, then sub-industry, then ticker."""
        missing = [t for t in tickers if t not in self.entries]
        if missing:
            raise ConfigError(f"tickers without sector entry: {missing[:5]}")
        rank = {s: i for i, s in enumerate(self.sector_order)}
        return sorted(
            tickers,
            key=lambda t: (rank[self.entries[t][0]], self.entries[t][1], t),
        )

    @classmethod
    def from_records(cls, records, sector_order=None):
        entries = {}
        for ticker, sector, sub in records:
            if ticker in entries:
                raise IngestError(f"ticker {ticker} listed twice in sector map", ticker=ticker)
            entries[str(ticker)] = (str(sector), str(sub))
        if sector_order is None:
            sector_order = default_sector_order({s for s, _ in entries.values()})
        return cls(entries, tuple(sector_order))


def default_sector_order(codes) -> tuple:
    """GICS order for known codes, the rest appended lexicographically."""
    codes = set(codes)
    known = [c for c in GICS_ORDER if c in codes]
    return tuple(known + sorted(codes - set(known)))


@dataclass(frozen=True)
class ReturnPanel:
    """K x T_tot daily log returns.

    ``dates[t]`` is the trading date on which the return interval starts,
    i.e. the date of ``S_i(t)`` in ``ln(S_i(t+1) / S_i(t))``.
    """

    tickers: tuple
    dates: np.ndarray
    returns: np.ndarray
    sectors: tuple = ()

    def __post_init__(self):
        returns = _frozen(np.asarray(self.returns, dtype=float))
        dates = _frozen(_as_dates(self.dates))
        tickers = tuple(self.tickers)
        if returns.shape != (len(tickers), len(dates)):
            raise IngestError(f"return matrix shape {returns.shape} inconsistent with labels")
        if not np.isfinite(returns).all():
            raise IngestError("non-finite return")
        if self.sectors and len(self.sectors) != len(tickers):
            raise IngestError("sector labels do not match tickers")
        object.__setattr__(self, "returns", returns)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "tickers", tickers)
        object.__setattr__(self, "sectors", tuple(self.sectors))

    @property
    def n_assets(self):
        return self.returns.shape[0]

    @property
    def n_dates(self):
        return self.returns.shape[1]


@dataclass(frozen=True)
class WindowGrid:
    t_ep: int
    stride: int
    windows: np.ndarray  # (n, 2) half-open [start, stop)
    center_index: np.ndarray
    center_dates: np.ndarray | None = None

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return (tuple(int(x) for x in w) for w in self.windows)

    def __getitem__(self, i):
        start, stop = self.windows[i]
        return int(start), int(stop)


def load_price_panel(path, schema: Mapping[str, str] | None = None, min_coverage: float = 0.0) -> PricePanel:
    """Read a long-format price CSV into a dense panel.

    Tickers observed on fewer than ``min_coverage`` of all dates are dropped
    first; afterwards only dates on which every remaining ticker has a price
    are kept.  Empty price cells count as missing observations.
    """
    schema = {**PRICE_SCHEMA, **(schema or {})}
    path = Path(path)
    if not path.exists():
        raise IngestError(f"price file not found: {path}")
    df = pd.read_csv(path, dtype={schema["ticker"]: str}, encoding="utf-8")
    missing = [c for c in schema.values() if c not in df.columns]
    if missing:
        raise IngestError(f"columns {missing} not found in {path.name}")
    df = df[[schema["date"], schema["ticker"], schema["adj_close"]]].copy()
    df.columns = ["date", "ticker", "price"]
    df["date"] = pd.to_datetime(df["date"], format="ISO8601").dt.strftime("%Y-%m-%d")
    df["price"] = pd.to_numeric(df["price"], errors="coerce")

    dup = df.duplicated(["date", "ticker"], keep=False)
    if dup.any():
        row = df[dup].iloc[0]
        raise IngestError(f"duplicate observation for {row.ticker} on {row.date}", row.date, row.ticker)

    wide = df.pivot(index="date", columns="ticker", values="price").sort_index()
    wide = wide.reindex(sorted(wide.columns), axis=1)

    coverage = wide.notna().mean(axis=0)
    dropped_tickers = tuple(sorted(coverage.index[coverage < min_coverage]))
    wide = wide.drop(columns=list(dropped_tickers))
    if wide.shape[1] == 0:
        raise IngestError("no ticker survives the coverage filter")

    present = wide.notna()
    keep = present.all(axis=1)
    dropped_dates = tuple(
        (d, tuple(wide.columns[~present.loc[d].to_numpy()]))
        for d in wide.index[~keep]
    )
    wide = wide[keep]
    if wide.empty:
        raise IngestError("no date on which all tickers have a price")

    values = wide.to_numpy(dtype=float).T
    bad = ~np.isfinite(values) | (values <= 0)
    if bad.any():
        i, t = np.argwhere(bad)[0]
        raise IngestError(
            f"nonpositive price {values[i, t]} for {wide.columns[i]} on {wide.index[t]}",
            date=wide.index[t],
            ticker=wide.columns[i],
        )
    return PricePanel(
        tuple(wide.columns),
        np.array(wide.index.tolist(), dtype="datetime64[D]"),
        values,
        DropReport(dropped_dates, dropped_tickers),
    )


def load_sector_map(path, schema: Mapping[str, str] | None = None, sector_order=None) -> SectorMap:
    schema = {**SECTOR_SCHEMA, **(schema or {})}
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in schema.values() if c not in df.columns]
    if missing:
        raise IngestError(f"columns {missing} not found in {Path(path).name}")
    records = zip(df[schema["ticker"]], df[schema["sector_code"]], df[schema["sub_industry"]])
    return SectorMap.from_records(records, sector_order)


def write_price_csv(panel: PricePanel, path) -> None:
    """Write a panel in the long price-CSV schema."""
    rows = ["date,ticker,adj_close"]
    dates = [str(d) for d in panel.dates]
    for i, ticker in enumerate(panel.tickers):
        rows.extend(f"{d},{ticker},{p!r}" for d, p in zip(dates, panel.prices[i].tolist()))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def write_sector_csv(sector_map: SectorMap, path) -> None:
    lines = ["ticker,sector_code,sub_industry"]
    for t in sorted(sector_map.entries):
        sec, sub = sector_map.entries[t]
        lines.append(f"{t},{sec},{sub}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def compute_log_returns(panel: PricePanel, sector_map: SectorMap | None = None) -> ReturnPanel:
    """Daily log returns ``ln(S(t+1)/S(t))``; rows sorted by sector when a map is given."""
    if sector_map is not None:
        panel = panel.select(sector_map.ordered(panel.tickers))
        sectors = tuple(sector_map.sector(t) for t in panel.tickers)
    else:
        sectors = ()
    if panel.prices.shape[1] < 2:
        raise IngestError("need at least two price dates to form a return")
    returns = np.log(panel.prices[:, 1:] / panel.prices[:, :-1])
    return ReturnPanel(panel.tickers, panel.dates[:-1], returns, sectors)


def build_window_grid(n_dates: int, t_ep: int, stride: int = 1, dates=None, include_last=None) -> WindowGrid:
    """Windows ``[start, start + t_ep)`` advanced by ``stride``.

    Overlapping grids (``stride < t_ep``) leave out the window that ends on
    the final index, so a stride-1 grid has ``n_dates - t_ep`` windows.
    Disjoint grids keep every window that fits.  ``include_last`` overrides
    either default.
    """
    if t_ep < 1 or stride < 1:
        raise ConfigError("t_ep and stride must be positive")
    if t_ep > n_dates:
        raise ConfigError(f"window length {t_ep} exceeds {n_dates} dates")
    if include_last is None:
        include_last = stride >= t_ep
    last_start = n_dates - t_ep if include_last else n_dates - t_ep - 1
    starts = np.arange(0, last_start + 1, stride, dtype=np.int64)
    windows = np.stack([starts, starts + t_ep], axis=1) if len(starts) else np.empty((0, 2), np.int64)
    centers = starts + t_ep // 2
    center_dates = None
    if dates is not None:
        dates = _as_dates(dates)
        if len(dates) != n_dates:
            raise ConfigError("dates length does not match n_dates")
        center_dates = _frozen(dates[centers])
    return WindowGrid(t_ep, stride, _frozen(windows), _frozen(centers), center_dates)


def epoch_grid(rp: ReturnPanel, t_ep: int, anchor=None, end=None) -> tuple:
    """Disjoint epochs starting at the first trading date >= ``anchor``.

    Epochs must end on or before ``end`` (a date) when given.  Returns the
    grid together with the resolved start index.
    """
    start = 0
    if anchor is not None:
        start = int(np.searchsorted(rp.dates, np.datetime64(str(anchor), "D"), side="left"))
        if start >= rp.n_dates:
            raise ConfigError(f"epoch anchor {anchor} is after the last trading date")
    stop = rp.n_dates
    if end is not None:
        stop = int(np.searchsorted(rp.dates, np.datetime64(str(end), "D"), side="right"))
    n = stop - start
    if n < t_ep:
        raise ConfigError("not enough dates after the anchor for a single epoch")
    grid = build_window_grid(n, t_ep, t_ep, include_last=True)
    windows = grid.windows + start
    centers = grid.center_index + start
    return WindowGrid(t_ep, t_ep, _frozen(windows), _frozen(centers), _frozen(rp.dates[centers])), start


def slice_window(rp: ReturnPanel, w) -> np.ndarray:
    """Raw K x T_ep block of returns for window ``w = (start, stop)``."""
    start, stop = int(w[0]), int(w[1])
    if not 0 <= start < stop <= rp.n_dates:
        raise ConfigError(f"window {w} outside [0, {rp.n_dates})")
    return rp.returns[:, start:stop]


def last_trading_day_index(dates, year: int) -> int:
    """Index of the last date falling in ``year`` (or -1)."""
    dates = _as_dates(dates)
    cutoff = np.datetime64(dt.date(year, 12, 31), "D")
    return int(np.searchsorted(dates, cutoff, side="right")) - 1
