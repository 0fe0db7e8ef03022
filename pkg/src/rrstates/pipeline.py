"""End-to-end runs driven by a YAML configuration file.

Stages, in order, each writing into its own subdirectory of the output
directory and reading only what earlier stages wrote to disk:

    ingest      prices (+ sectors) -> sector-ordered log returns
    indicators  sliding windows -> six mean-value series, embedded C_B / C_L
    distances   distance matrices and averaged distances
    states      disjoint epochs -> k-means market states, typical states
    snapshots   snapshot sequences with transition reports
    report      event annotations of every series

A ``manifest.json`` records the configuration, input and output hashes,
library versions, resolved indices and per-stage wall time.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import os
import platform
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, RRStatesError
from .indicators import (
    APPROACH_SERIES,
    DEFAULT_CUTOFF,
    DistanceMatrix,
    averaged_distance,
    default_baseline_end,
    distance_matrix_from_embedding,
    embed,
    embedding_dim,
    indicator_series,
    read_series_csv,
    render_heatmap,
    write_series_csv,
)
from .market_data import (
    ReturnPanel,
    build_window_grid,
    compute_log_returns,
    epoch_grid,
    load_price_panel,
    load_sector_map,
    slice_window,
)
from .market_states import (
    ClusterConfig,
    assignment_to_dict,
    cluster_states,
    detect_transition,
    sequence_to_dict,
    snapshot_sequence,
    typical_state,
)
from .matrix_io import read_matrix, write_matrix, write_matrix_csv
from .spectral import Approach, reduced_rank_pipeline
from .errors import DegenerateResidualError, DegenerateWindowError, NumericalError

log = logging.getLogger(__name__)

STAGES = ("ingest", "indicators", "distances", "states", "snapshots", "report")
ENV_PREFIX = "RRSTATES_"

DEFAULT_CONFIG_TEXT = """\
# rrstates run configuration
input:
  prices: prices.csv          # long format: date, ticker, adj_close
  sectors: null               # ticker, sector_code, sub_industry (optional)
  events: default             # event calendar CSV; "default" = bundled crisis dates, null = none
  price_schema: {}
  sector_schema: {}
windows:
  t_ep: 42td                  # 42 trading days = 2 trading months
  stride: 1td                 # sliding windows shifted by one trading day
indicators:
  approaches: [covariance, correlation]
  cutoff: 0.22                # distances below this are excluded from averages
  baseline_end_date: null     # null = last trading day of the second calendar year
  strict_tc: false            # divide averaged distances by t_c instead of survivor count
  heatmaps: false
states:
  epoch_anchor_date: null     # first epoch starts at the first trading date >= anchor
  epoch_end_date: null
  snapshot_start: 5           # epochs in the first snapshot
  cluster:
    k: 2
    restarts: 32
    max_iters: 300
    seed: 0
    tol: 1.0e-8
    min_separation: 2.5
output:
  dir: out
threads: 1
"""

_DURATION = re.compile(r"^\s*(\d+)\s*(td|d|trading[_ ]?days?)?\s*$", re.IGNORECASE)


def parse_duration(value) -> int:
    """Trading-day count from ``42``, ``"42td"`` or ``"42 trading_days"``."""
    if isinstance(value, bool):
        raise ConfigError(f"invalid duration {value!r}")
    if isinstance(value, int):
        return value
    m = _DURATION.match(str(value))
    if not m:
        raise ConfigError(f"invalid duration {value!r}; use e.g. '42td'")
    return int(m.group(1))


@dataclass(frozen=True)
class RunConfig:
    prices: str
    sectors: str | None = None
    events: str | None = "default"
    price_schema: dict = field(default_factory=dict)
    sector_schema: dict = field(default_factory=dict)
    t_ep: int = 42
    stride: int = 1
    approaches: tuple = (Approach.COVARIANCE, Approach.CORRELATION)
    cutoff: float = DEFAULT_CUTOFF
    baseline_end_date: str | None = None
    strict_tc: bool = False
    heatmaps: bool = False
    epoch_anchor_date: str | None = None
    epoch_end_date: str | None = None
    snapshot_start: int = 5
    cluster: ClusterConfig = ClusterConfig(min_separation=2.5)
    out: str = "out"
    threads: int = 1

    def __post_init__(self):
        approaches = tuple(Approach(a) for a in self.approaches)
        if not approaches:
            raise ConfigError("approaches must name at least one of covariance, correlation")
        if len(set(approaches)) != len(approaches):
            raise ConfigError("approach listed twice")
        object.__setattr__(self, "approaches", approaches)
        if self.t_ep < 2:
            raise ConfigError("t_ep must be at least 2 trading days")
        if self.stride < 1:
            raise ConfigError("stride must be at least 1 trading day")
        if self.snapshot_start < self.cluster.k:
            raise ConfigError("snapshot_start must be >= k")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @classmethod
    def from_tree(cls, tree: dict, base_dir=None) -> "RunConfig":
        tree = _merge(yaml.safe_load(DEFAULT_CONFIG_TEXT), tree or {})
        base = Path(base_dir) if base_dir is not None else Path.cwd()

        def path(p):
            if p is None or p == "default":
                return p
            p = Path(p)
            return str(p if p.is_absolute() else base / p)

        inp, win, ind, st = tree["input"], tree["windows"], tree["indicators"], tree["states"]
        try:
            cluster = ClusterConfig(**st["cluster"])
        except TypeError as exc:
            raise ConfigError(f"bad cluster section: {exc}") from None
        return cls(
            prices=path(inp["prices"]),
            sectors=path(inp.get("sectors")),
            events=path(inp.get("events")),
            price_schema=dict(inp.get("price_schema") or {}),
            sector_schema=dict(inp.get("sector_schema") or {}),
            t_ep=parse_duration(win["t_ep"]),
            stride=parse_duration(win["stride"]),
            approaches=tuple(ind["approaches"] or ()),
            cutoff=float(ind["cutoff"]),
            baseline_end_date=_date_or_none(ind.get("baseline_end_date")),
            strict_tc=bool(ind["strict_tc"]),
            heatmaps=bool(ind["heatmaps"]),
            epoch_anchor_date=_date_or_none(st.get("epoch_anchor_date")),
            epoch_end_date=_date_or_none(st.get("epoch_end_date")),
            snapshot_start=int(st["snapshot_start"]),
            cluster=cluster,
            out=path(tree["output"]["dir"]),
            threads=int(tree["threads"]),
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["approaches"] = [a.value for a in self.approaches]
        return d


def _date_or_none(v):
    return None if v is None else str(v)


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def env_overrides(environ=None) -> dict:
    """``RRSTATES_SECTION__KEY=value`` -> nested override tree."""
    environ = os.environ if environ is None else environ
    tree = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        keys = name[len(ENV_PREFIX):].lower().split("__")
        node = tree
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = yaml.safe_load(raw)
    return tree


def load_config(path=None, overrides=None, environ=None) -> RunConfig:
    tree, base = {}, None
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        tree = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        base = path.parent
    tree = _merge(tree, env_overrides(environ))
    tree = _merge(tree, overrides or {})
    return RunConfig.from_tree(tree, base)


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class Event:
    label: str
    description: str
    date: np.datetime64
    kind: str = ""


@dataclass(frozen=True)
class EventCalendar:
    entries: tuple

    def __post_init__(self):
        labels = [e.label for e in self.entries]
        if len(set(labels)) != len(labels):
            raise ConfigError("event labels must be unique")


def load_event_calendar(path=None) -> EventCalendar:
    """CSV with columns label, description, date (and optional kind)."""
    if path is None or path == "default":
        text = resources.files("rrstates").joinpath("data/crisis_events.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    entries = []
    for row in csv.DictReader(text.splitlines()):
        try:
            date = np.datetime64(row["date"].strip(), "D")
        except ValueError:
            raise ConfigError(f"invalid event date {row['date']!r}") from None
        entries.append(Event(row["label"].strip(), row["description"].strip(), date, (row.get("kind") or "").strip()))
    return EventCalendar(tuple(entries))


@dataclass(frozen=True)
class Annotation:
    label: str
    description: str
    date: str
    index: int
    timestamp: str
    distance_days: int


def annotate(timestamps, cal: EventCalendar):
    """Nearest-timestamp annotation of ``timestamps`` (sorted dates).

    Returns ``(annotations, skipped, row_labels)`` where ``row_labels[i]``
    joins the labels of all events mapped to row ``i``.  Events before the
    first or after the last timestamp are skipped.
    """
    ts = np.asarray(timestamps, dtype="datetime64[D]")
    notes, skipped = [], []
    row_labels = [""] * len(ts)
    for ev in cal.entries:
        if len(ts) == 0 or ev.date < ts[0] or ev.date > ts[-1]:
            skipped.append(ev.label)
            continue
        j = int(np.searchsorted(ts, ev.date))
        candidates = [i for i in (j - 1, j) if 0 <= i < len(ts)]
        i = min(candidates, key=lambda c: (abs(int((ts[c] - ev.date).astype(int))), c))
        notes.append(
            Annotation(ev.label, ev.description, str(ev.date), i, str(ts[i]), int((ts[i] - ev.date).astype(int)))
        )
        row_labels[i] = ";".join(filter(None, [row_labels[i], ev.label]))
    return notes, skipped, row_labels


# ---------------------------------------------------------------------------
# helpers


def sha256_file(path, chunk=1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            b = fh.read(chunk)
            if not b:
                break
            h.update(b)
    return h.hexdigest()


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _versions():
    import pandas
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pandas.__version__,
        "rrstates": __version__,
    }


def _write_npy_rows(path, shape):
    """Open ``path`` as a .npy file and return a handle for sequential row writes."""
    fh = open(path, "wb")
    np.lib.format.write_array_header_1_0(fh, {"descr": "<f8", "fortran_order": False, "shape": shape})
    return fh


class Run:
    """State of one pipeline execution over an output directory."""

    def __init__(self, cfg: RunConfig, resume=False):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.resume = resume
        self.manifest_path = self.out / "manifest.json"
        self.previous = {}
        if self.manifest_path.exists():
            try:
                self.previous = json.loads(self.manifest_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                self.previous = {}
        self.manifest = {
            "status": "RUNNING",
            "config": cfg.to_dict(),
            "config_hash": hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest(),
            "versions": _versions(),
            "inputs": {},
            "resolved": dict(self.previous.get("resolved", {})),
            "stages": {},
        }

    # -- bookkeeping -------------------------------------------------------
    def stage_dir(self, name):
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _stage_complete(self, name):
        prev = self.previous.get("stages", {}).get(name)
        if not prev or prev.get("status") != "OK":
            return False
        if self.previous.get("config_hash") != self.manifest["config_hash"]:
            return False
        for rel, digest in prev.get("outputs", {}).items():
            p = self.out / rel
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def _outputs(self, name):
        d = self.out / name
        if not d.exists():
            return {}
        return {
            str(p.relative_to(self.out)): sha256_file(p)
            for p in sorted(d.rglob("*"))
            if p.is_file()
        }

    def execute(self, stages=STAGES, force=()):
        """Run ``stages`` in pipeline order; raises after writing a FAILED manifest."""
        self.out.mkdir(parents=True, exist_ok=True)
        for p in (self.cfg.prices, self.cfg.sectors):
            if p is not None and Path(p).exists():
                self.manifest["inputs"][Path(p).name] = sha256_file(p)
        rerun_downstream = False
        try:
            for name in STAGES:
                if name not in stages:
                    if name in self.previous.get("stages", {}):
                        self.manifest["stages"][name] = self.previous["stages"][name]
                    continue
                skip = (
                    (self.resume or name not in force)
                    and not rerun_downstream
                    and self._stage_complete(name)
                )
                if skip:
                    self.manifest["stages"][name] = {**self.previous["stages"][name], "resumed": True}
                    log.info("stage %s: up to date", name)
                    continue
                rerun_downstream = True
                log.info("stage %s: running", name)
                t0 = time.perf_counter()
                self.manifest["stages"][name] = {"status": "RUNNING"}
                getattr(self, f"stage_{name}")()
                self.manifest["stages"][name] = {
                    "status": "OK",
                    "wall_time_s": round(time.perf_counter() - t0, 6),
                    "outputs": self._outputs(name),
                }
        except Exception as exc:
            self.manifest["status"] = "FAILED"
            self.manifest["failed_stage"] = name
            self.manifest["error"] = f"{type(exc).__name__}: {exc}"
            self.manifest["stages"][name] = {"status": "FAILED", "outputs": self._outputs(name)}
            self._write_manifest()
            raise
        self.manifest["status"] = "OK"
        self._write_manifest()
        return self.manifest

    def _write_manifest(self):
        digest = hashlib.sha256()
        for name in STAGES:
            for rel, h in sorted(self.manifest["stages"].get(name, {}).get("outputs", {}).items()):
                digest.update(f"{rel}\0{h}\n".encode())
        self.manifest["outputs_digest"] = digest.hexdigest()
        _dump_json(self.manifest_path, self.manifest)

    # -- loaders for upstream artifacts -------------------------------------
    def returns(self) -> ReturnPanel:
        d = self.out / "ingest"
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
        returns = np.load(d / "returns.npy")
        return ReturnPanel(tuple(meta["tickers"]), np.array(meta["dates"], dtype="datetime64[D]"), returns, tuple(meta["sectors"]))

    def windows(self, rp):
        return build_window_grid(rp.n_dates, self.cfg.t_ep, self.cfg.stride, rp.dates)

    # -- stages -------------------------------------------------------------
    def stage_ingest(self):
        cfg = self.cfg
        d = self.stage_dir("ingest")
        panel = load_price_panel(cfg.prices, cfg.price_schema)
        sm = load_sector_map(cfg.sectors, cfg.sector_schema) if cfg.sectors else None
        rp = compute_log_returns(panel, sm)
        np.save(d / "returns.npy", np.ascontiguousarray(rp.returns))
        meta = {
            "tickers": list(rp.tickers),
            "sectors": list(rp.sectors),
            "dates": [str(x) for x in rp.dates],
            "price_dates": len(panel.dates),
            "drop_report": panel.drop_report.to_dict(),
        }
        _dump_json(d / "meta.json", meta)
        self.manifest["resolved"].update({"n_assets": rp.n_assets, "n_returns": rp.n_dates})

    def stage_indicators(self):
        cfg = self.cfg
        d = self.stage_dir("indicators")
        rp = self.returns()
        grid = self.windows(rp)
        if len(grid) == 0:
            raise ConfigError("no complete window fits the return panel")
        k = rp.n_assets
        dim = embedding_dim(k)
        handles = {a: _write_npy_rows(d / f"embedded_{a.value}.npy", (len(grid), dim)) for a in cfg.approaches}
        nan_row = np.full(dim, np.nan).tobytes()

        def sink(approach, index, reduced):
            fh = handles[approach]
            fh.write(nan_row if reduced is None else embed(reduced.matrix).astype("<f8").tobytes())

        try:
            series, diagnostics = indicator_series(rp, grid, cfg.approaches, cfg.threads, sink)
        finally:
            for fh in handles.values():
                fh.close()
        for name, s in series.items():
            write_series_csv(d / f"{name.value}.csv", s.timestamps, s.values)
        with open(d / "windows.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("index,start,stop,center_date\n")
            for i, (start, stop) in enumerate(grid):
                fh.write(f"{i},{start},{stop},{grid.center_dates[i]}\n")
        _dump_json(d / "diagnostics.json", {"degenerate_windows": diagnostics.records})
        self.manifest["resolved"]["n_windows"] = len(grid)

    def stage_distances(self):
        cfg = self.cfg
        d = self.stage_dir("distances")
        rp = self.returns()
        grid = self.windows(rp)
        stamps = grid.center_dates
        if cfg.baseline_end_date is not None:
            t_c = int(np.searchsorted(stamps, np.datetime64(cfg.baseline_end_date, "D"), side="right"))
            if t_c < 1:
                raise ConfigError("baseline_end_date precedes the first window centre")
        else:
            t_c = default_baseline_end(stamps, rp.dates[0])
        self.manifest["resolved"]["t_c"] = t_c
        self.manifest["resolved"]["baseline_end_timestamp"] = str(stamps[t_c - 1])
        for a in cfg.approaches:
            x = np.load(self.out / "indicators" / f"embedded_{a.value}.npy", mmap_mode="r")
            dm = distance_matrix_from_embedding(
                x, a, cfg.threads, d / f"distance_{a.value}.rrcm", cfg.cutoff, stamps
            )
            avg = averaged_distance(dm, t_c, cfg.cutoff, cfg.strict_tc)
            write_series_csv(d / f"averaged_distance_{a.value}.csv", stamps, avg.values, avg.counts)
            if cfg.heatmaps:
                step = max(1, dm.dim // 800)
                sub = np.asarray(dm.values[::step, ::step])
                render_heatmap(sub, d / f"distance_{a.value}.png", cutoff=cfg.cutoff, cmap="viridis")
            del dm, x

    def _epochs(self, rp):
        grid, start = epoch_grid(rp, self.cfg.t_ep, self.cfg.epoch_anchor_date, self.cfg.epoch_end_date)
        self.manifest["resolved"]["epoch_anchor_index"] = start
        self.manifest["resolved"]["n_epochs"] = len(grid)
        dates = [(str(rp.dates[s]), str(rp.dates[e - 1])) for s, e in grid]
        return grid, dates

    def stage_states(self):
        cfg = self.cfg
        d = self.stage_dir("states")
        rp = self.returns()
        grid, dates = self._epochs(rp)
        with open(d / "epochs.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("index,start,stop,start_date,end_date\n")
            for i, ((s, e), (sd, ed)) in enumerate(zip(grid, dates)):
                fh.write(f"{i},{s},{e},{sd},{ed}\n")
        for a in cfg.approaches:
            mats = []
            for i, w in enumerate(grid):
                block = slice_window(rp, w)
                try:
                    mats.append(reduced_rank_pipeline(block, a, i).matrix)
                except (DegenerateWindowError, DegenerateResidualError, NumericalError) as exc:
                    raise RRStatesError(f"epoch {i} ({dates[i][0]}): {exc}") from exc
            stack = np.stack(mats)
            np.save(d / f"epoch_matrices_{a.value}.npy", stack)
            assignment = cluster_states(stack.reshape(len(mats), -1) / rp.n_assets, cfg.cluster, cfg.threads)
            refs = []
            for ts in typical_state(assignment, mats):
                name = f"typical_{a.value}_{ts.state}.rrcm"
                write_matrix(d / name, ts.matrix, a)
                write_matrix_csv(d / f"typical_{a.value}_{ts.state}.csv", ts.matrix, rp.tickers, confirm_large=True)
                if cfg.heatmaps:
                    render_heatmap(ts.matrix, d / f"typical_{a.value}_{ts.state}.png", labels=rp.sectors or None)
                refs.append(name)
            _dump_json(d / f"assignment_{a.value}.json", assignment_to_dict(assignment, dates, refs, cfg.cluster))

    def stage_snapshots(self):
        cfg = self.cfg
        d = self.stage_dir("snapshots")
        rp = self.returns()
        grid, dates = self._epochs(rp)
        if cfg.snapshot_start > len(grid):
            raise ConfigError(f"snapshot_start {cfg.snapshot_start} exceeds {len(grid)} epochs")
        for a in cfg.approaches:
            stack = np.load(self.out / "states" / f"epoch_matrices_{a.value}.npy")
            seq = snapshot_sequence(list(stack), cfg.cluster, cfg.snapshot_start, cfg.threads)
            doc = sequence_to_dict(seq, dates, cfg.cluster)
            for t in doc["transitions"]:
                t["epoch_start_date"], t["epoch_end_date"] = dates[t["epoch"]]
            _dump_json(d / f"snapshots_{a.value}.json", doc)

    def stage_report(self):
        cfg = self.cfg
        d = self.stage_dir("report")
        if cfg.events is None:
            _dump_json(d / "events.json", {"annotations": {}, "skipped": {}})
            return
        cal = load_event_calendar(cfg.events)
        tables = {}
        for a in cfg.approaches:
            for name in APPROACH_SERIES[a]:
                tables[name.value] = self.out / "indicators" / f"{name.value}.csv"
            tables[f"averaged_distance_{a.value}"] = self.out / "distances" / f"averaged_distance_{a.value}.csv"
        annotations, skipped = {}, {}
        for key, path in sorted(tables.items()):
            stamps, values, counts = read_series_csv(path)
            notes, skip, row_labels = annotate(stamps, cal)
            annotations[key] = [dataclasses.asdict(n) for n in notes]
            skipped[key] = skip
            with open(path, encoding="utf-8") as src:
                lines = src.read().splitlines()
            out = [lines[0] + ",events"] + [f"{ln},{lab}" for ln, lab in zip(lines[1:], row_labels)]
            (d / f"annotated_{key}.csv").write_text("\n".join(out) + "\n", encoding="utf-8")
        transitions = {}
        for a in cfg.approaches:
            p = self.out / "snapshots" / f"snapshots_{a.value}.json"
            if p.exists():
                transitions[a.value] = json.loads(p.read_text(encoding="utf-8"))["transitions"]
        _dump_json(d / "events.json", {"annotations": annotations, "skipped": skipped, "transitions": transitions})


def run(cfg: RunConfig, stages=STAGES, resume=False, force=None) -> dict:
    """Execute the pipeline; returns the manifest dict.

    Stages listed in ``force`` are recomputed even if up to date (default:
    all requested stages unless ``resume``).
    """
    force = stages if force is None else force
    return Run(cfg, resume).execute(stages, force)
