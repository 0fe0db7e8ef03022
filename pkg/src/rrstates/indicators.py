"""Indicator time series built from sliding-window matrices.

* six mean-value series (mean covariance / correlation before and after
  removing the market mode, for both construction paths),
* the pairwise distance matrix between reduced-rank correlation matrices,
* row averages of that distance matrix over a baseline column range, with
  entries below a cutoff left out,
* an equal-weight sector price index.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, DegenerateResidualError, DegenerateWindowError, NumericalError
from .market_data import PricePanel, ReturnPanel, SectorMap, WindowGrid, last_trading_day_index, slice_window
from .matrix_io import open_matrix_for_write
from .spectral import (
    Approach,
    ReducedRankCorr,
    correlation_matrix,
    covariance_matrix,
    rescale_to_correlation,
    spectral_decompose,
    subtract_market_dyad,
)

DEFAULT_CUTOFF = 0.22
MISSING = "NA"


class SeriesName(str, enum.Enum):
    MEAN_COV_SIGMA = "mean_cov_sigma"
    MEAN_COV_SIGMA_B = "mean_cov_sigma_b"
    MEAN_COV_SIGMA_L = "mean_cov_sigma_l"
    MEAN_CORR_C = "mean_corr_c"
    MEAN_CORR_C_B = "mean_corr_c_b"
    MEAN_CORR_C_L = "mean_corr_c_l"


# (standard, residual, reduced) series produced by each construction path
APPROACH_SERIES = {
    Approach.COVARIANCE: (SeriesName.MEAN_COV_SIGMA, SeriesName.MEAN_COV_SIGMA_B, SeriesName.MEAN_CORR_C_B),
    Approach.CORRELATION: (SeriesName.MEAN_CORR_C, SeriesName.MEAN_COV_SIGMA_L, SeriesName.MEAN_CORR_C_L),
}


@dataclass(frozen=True)
class IndicatorSeries:
    name: SeriesName
    timestamps: np.ndarray
    values: np.ndarray  # NaN marks a degenerate window

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class DistanceMatrix:
    approach: Approach
    values: np.ndarray  # may be a read-only memmap
    cutoff: float = DEFAULT_CUTOFF
    labels: np.ndarray | None = None

    @property
    def dim(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class AveragedDistanceSeries:
    approach: Approach
    baseline_end: int
    values: np.ndarray
    counts: np.ndarray
    timestamps: np.ndarray | None = None
    cutoff: float = DEFAULT_CUTOFF


@dataclass(frozen=True)
class SectorIndex:
    sector: str
    timestamps: np.ndarray
    values: np.ndarray


@dataclass
class WindowDiagnostics:
    records: list = field(default_factory=list)

    def add(self, window, center_date, approach, stage, exc):
        self.records.append(
            {
                "window": int(window),
                "center_date": None if center_date is None else str(center_date),
                "approach": Approach(approach).value,
                "stage": stage,
                "error": type(exc).__name__,
                "message": str(exc),
                "asset": getattr(exc, "ticker", None) or getattr(exc, "asset", None),
            }
        )


def mean_matrix_value(m) -> float:
    """Average over all K^2 entries, diagonal included."""
    m = np.asarray(m, dtype=float)
    return float(m.sum() / (m.shape[0] * m.shape[1]))


def embed(matrix) -> np.ndarray:
    """Compact vector whose Euclidean norm equals the scaled Frobenius norm.

    ``||embed(A) - embed(B)|| == ||A - B||_F / K`` for symmetric A, B: the
    strict upper triangle is weighted by sqrt(2) and the diagonal kept once.
    """
    m = np.asarray(matrix, dtype=float)
    k = m.shape[0]
    iu = np.triu_indices(k, 1)
    return np.concatenate([math.sqrt(2.0) * m[iu], np.diag(m)]) / k


def embedding_dim(k: int) -> int:
    return k * (k - 1) // 2 + k


def _window_means(block, approach, tickers):
    """Means of (standard, residual, reduced) plus the reduced matrix; NaN on failure."""
    out = [math.nan, math.nan, math.nan]
    if approach is Approach.COVARIANCE:
        standard = covariance_matrix(block)
    else:
        standard = correlation_matrix(block, tickers)
    out[0] = mean_matrix_value(standard)
    residual = subtract_market_dyad(standard, spectral_decompose(standard))
    out[1] = mean_matrix_value(residual)
    reduced = rescale_to_correlation(residual, approach)
    out[2] = mean_matrix_value(reduced.matrix)
    return out, reduced


def analyze_window(rp: ReturnPanel, grid: WindowGrid, index: int, approaches, diagnostics=None):
    """Per-approach ``(means, ReducedRankCorr | None)`` for one window."""
    block = slice_window(rp, grid[index])
    center = grid.center_dates[index] if grid.center_dates is not None else None
    result = {}
    for approach in approaches:
        try:
            means, reduced = _window_means(block, approach, rp.tickers)
            reduced = ReducedRankCorr(reduced.approach, reduced.matrix, reduced.sigma_diag, index)
        except (DegenerateWindowError, DegenerateResidualError, NumericalError) as exc:
            means, reduced = _partial_means(block, approach), None
            if diagnostics is not None:
                diagnostics.add(index, center, approach, "reduced_rank", exc)
        result[approach] = (means, reduced)
    return result


def _partial_means(block, approach):
    out = [math.nan, math.nan, math.nan]
    try:
        standard = covariance_matrix(block) if approach is Approach.COVARIANCE else correlation_matrix(block)
        out[0] = mean_matrix_value(standard)
        out[1] = mean_matrix_value(subtract_market_dyad(standard))
    except (DegenerateWindowError, NumericalError):
        pass
    return out


def indicator_series(rp: ReturnPanel, grid: WindowGrid, approaches=tuple(Approach), threads=1, sink=None):
    """Mean-value series over every window of ``grid``.

    Returns ``(series, diagnostics)`` where ``series`` maps SeriesName to
    IndicatorSeries (three per requested approach).  ``sink(approach, index,
    reduced)`` is called with every reduced-rank matrix, in window order.
    """
    approaches = tuple(Approach(a) for a in approaches)
    if not approaches:
        raise ConfigError("no approach selected")
    n = len(grid)
    values = {name: np.full(n, np.nan) for a in approaches for name in APPROACH_SERIES[a]}
    diagnostics = WindowDiagnostics()

    def work(i):
        local = WindowDiagnostics()
        return analyze_window(rp, grid, i, approaches, local), local

    def consume(i, res, local):
        diagnostics.records.extend(local.records)
        for approach, (means, reduced) in res.items():
            for name, v in zip(APPROACH_SERIES[approach], means):
                values[name][i] = v
            if sink is not None:
                sink(approach, i, reduced)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            # map preserves submission order, so sinks see windows in sequence
            for i, (res, local) in enumerate(pool.map(work, range(n))):
                consume(i, res, local)
    else:
        for i in range(n):
            consume(i, *work(i))

    stamps = grid.center_dates if grid.center_dates is not None else grid.center_index
    series = {name: IndicatorSeries(name, stamps, v) for name, v in values.items()}
    return series, diagnostics


def _check_mats(mats):
    mats = list(mats)
    if not mats:
        raise ConfigError("no matrices given")
    approaches = {m.approach for m in mats}
    if len(approaches) > 1:
        raise ConfigError(f"mixed approaches in distance matrix input: {sorted(a.value for a in approaches)}")
    dims = {m.dim for m in mats}
    if len(dims) > 1:
        raise ConfigError(f"matrices of different dimension: {sorted(dims)}")
    return mats, approaches.pop()


def distance_matrix(mats, threads=1, out_path=None, cutoff=DEFAULT_CUTOFF, labels=None, block_rows=256) -> DistanceMatrix:
    """Pairwise ``||C_a - C_b||_F / K`` between reduced-rank correlation matrices."""
    mats, approach = _check_mats(mats)
    x = np.stack([embed(m.matrix) for m in mats])
    return distance_matrix_from_embedding(x, approach, threads, out_path, cutoff, labels, block_rows)


def distance_matrix_from_embedding(x, approach, threads=1, out_path=None, cutoff=DEFAULT_CUTOFF, labels=None, block_rows=256):
    """Distance matrix from rows of :func:`embed` vectors.

    Rows are processed in blocks against the upper triangle and mirrored,
    so entries are bitwise symmetric and independent of ``threads``.  With
    ``out_path`` the result is written into a memory-mapped binary matrix
    file instead of being held in memory.
    """
    n = x.shape[0]
    approach = Approach(approach) if approach is not None else None
    if out_path is not None:
        d = open_matrix_for_write(out_path, n, approach)
    else:
        d = np.zeros((n, n))
    starts = list(range(0, n, block_rows))

    def work(i0):
        i1 = min(i0 + block_rows, n)
        blk = cdist(np.asarray(x[i0:i1]), np.asarray(x[i0:]), "euclidean")
        for r in range(i1 - i0):
            blk[r, r] = 0.0
        d[i0:i1, i0:] = blk
        d[i0:, i0:i1] = blk.T

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, starts))
    else:
        for i0 in starts:
            work(i0)
    if out_path is not None:
        d.flush()
    return DistanceMatrix(approach, d, cutoff, labels)


def averaged_distance(dm: DistanceMatrix, t_c: int, cutoff=None, strict_tc=False, block_rows=512) -> AveragedDistanceSeries:
    """Row means of ``dm[:, :t_c]`` over entries ``>= cutoff``.

    Masked entries leave both the sum and the divisor; ``strict_tc=True``
    divides the survivor sum by ``t_c`` instead.  Rows without survivors
    are NaN with count 0.
    """
    cutoff = dm.cutoff if cutoff is None else cutoff
    n = dm.dim
    if not 1 <= t_c <= n:
        raise ConfigError(f"baseline end {t_c} outside [1, {n}]")
    values = np.empty(n)
    counts = np.empty(n, dtype=np.int64)
    for r0 in range(0, n, block_rows):
        cols = np.asarray(dm.values[r0 : r0 + block_rows, :t_c])
        keep = cols >= cutoff
        c = keep.sum(axis=1)
        s = np.where(keep, cols, 0.0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            v = s / (t_c if strict_tc else c)
        v[c == 0] = np.nan
        values[r0 : r0 + len(c)] = v
        counts[r0 : r0 + len(c)] = c
    return AveragedDistanceSeries(dm.approach, t_c, values, counts, dm.labels, cutoff)


def default_baseline_end(center_dates, first_date=None) -> int:
    """Number of windows centred on or before the last trading day of the second calendar year."""
    center_dates = np.asarray(center_dates, dtype="datetime64[D]")
    first = np.datetime64(first_date if first_date is not None else center_dates[0], "D")
    year = int(str(first)[:4]) + 1
    t_c = last_trading_day_index(center_dates, year) + 1
    if t_c < 1:
        raise ConfigError("no window centred within the first two calendar years")
    return t_c


def sector_index(panel: PricePanel, sm: SectorMap, sector: str) -> SectorIndex:
    """Equal-weight average of member adjusted closes per date."""
    if sector not in sm.sector_order:
        raise ConfigError(f"unknown sector code {sector!r}")
    members = [t for t in panel.tickers if t in sm.entries and sm.sector(t) == sector]
    if not members:
        raise ConfigError(f"sector {sector!r} has no member in the panel")
    rows = [panel.tickers.index(t) for t in members]
    return SectorIndex(sector, panel.dates, panel.prices[rows].mean(axis=0))


def _fmt(v):
    return MISSING if not np.isfinite(v) else repr(float(v))


def write_series_csv(path, timestamps, values, counts=None) -> None:
    header = "timestamp,value,count" if counts is not None else "timestamp,value"
    lines = [header]
    for i, (t, v) in enumerate(zip(timestamps, values)):
        row = f"{t},{_fmt(v)}"
        if counts is not None:
            row += f",{int(counts[i])}"
        lines.append(row)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_series_csv(path):
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    stamps = np.array([r["timestamp"] for r in rows])
    values = np.array([np.nan if r["value"] == MISSING else float(r["value"]) for r in rows])
    counts = np.array([int(r["count"]) for r in rows]) if rows and "count" in rows[0] else None
    return stamps, values, counts


def render_heatmap(matrix, path, cutoff=None, labels=None, title=None, cmap="RdBu_r") -> None:
    """Save a heatmap; entries below ``cutoff`` are drawn white."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    m = np.array(matrix, dtype=float)
    if cutoff is not None:
        m = np.ma.masked_less(m, cutoff)
    colormap = plt.get_cmap(cmap).copy()
    colormap.set_bad("white")
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(m, cmap=colormap, interpolation="nearest")
    fig.colorbar(im, ax=ax)
    if labels is not None:
        # one tick per contiguous run of identical labels (e.g. sector codes)
        labels = list(labels)
        starts = [i for i in range(len(labels)) if i == 0 or labels[i] != labels[i - 1]]
        ax.set_xticks(starts, [labels[i] for i in starts], fontsize=6)
        ax.set_yticks(starts, [labels[i] for i in starts], fontsize=6)
    if title:
        ax.set_title(title)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
