"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N PASS|FAIL`` line; the lines are also
collected into the terminal summary.
"""

import dataclasses
import json
import resource
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from rrstates.indicators import DistanceMatrix, averaged_distance, distance_matrix
from rrstates.market_data import ReturnPanel, build_window_grid, write_price_csv
from rrstates.market_states import ClusterConfig, kmeans, snapshot_sequence, detect_transition, vectorize
from rrstates.matrix_io import read_header
from rrstates.pipeline import RunConfig, run
from rrstates.spectral import Approach, reduced_rank_pipeline, reduced_rank_stages
from rrstates.synth import generate, oracle_distance, oracle_pipeline, two_regime_specs

T_EP = 42
SWITCH = 16
RHO = 0.7
N_SEEDS = 100
TIMINGS = {}


def random_blocks(n, k_range, t_max, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        k = int(rng.integers(k_range[0], k_range[1] + 1))
        t = int(rng.integers(k + 2, t_max + 1))
        factor = rng.standard_normal(t) * rng.uniform(0, 1)
        scales = rng.uniform(0.2, 3.0, (k, 1))
        out.append(scales * (factor + rng.standard_normal((k, t))))
    return out


@pytest.fixture(scope="module")
def validity_blocks():
    return random_blocks(200, (5, 50), 300, seed=2024)


@pytest.fixture(scope="module")
def planted():
    """Per-seed epoch matrices, snapshot sequences and transition reports."""
    cfg = ClusterConfig()
    t0 = time.perf_counter()
    results = []
    for seed in range(N_SEEDS):
        sp = generate(two_regime_specs(20, SWITCH, 30 - SWITCH, rho=RHO), 20, T_EP, seed=seed)
        r = sp.returns.returns
        mats = [reduced_rank_pipeline(r[:, e * T_EP : (e + 1) * T_EP], Approach.COVARIANCE) for e in range(30)]
        seq = snapshot_sequence(mats, cfg, start_count=5)
        results.append((sp, mats, seq, detect_transition(seq)))
    TIMINGS["planted"] = time.perf_counter() - t0
    return results


def test_criterion_01_window_arithmetic(tmp_path, verdict):
    grid = build_window_grid(4026, T_EP, 1)
    sp = generate(two_regime_specs(6, 48, 48), 6, T_EP, seed=0)
    rp = sp.returns
    short = ReturnPanel(rp.tickers, rp.dates[:4026], rp.returns[:, :4026])
    write_price_csv(dataclasses.replace(sp, returns=short).prices(), tmp_path / "prices.csv")
    cfg = RunConfig(prices=str(tmp_path / "prices.csv"), out=str(tmp_path / "out"), events=None)
    m = run(cfg, stages=("ingest", "indicators"))
    lengths = {
        p.name: len(p.read_text().splitlines()) - 1 for p in (tmp_path / "out" / "indicators").glob("mean_*.csv")
    }
    ok = len(grid) == 3984 and m["resolved"]["n_windows"] == 3984 and set(lengths.values()) == {3984}
    verdict(1, "window arithmetic", ok, f"windows={len(grid)} series={sorted(set(lengths.values()))} n={len(lengths)}")


def test_criterion_02_reduced_rank_validity(validity_blocks, verdict):
    t0 = time.perf_counter()
    worst = {"diag": 0.0, "range": 0.0, "min_eig": np.inf, "null_eig": 0.0}
    for block in validity_blocks:
        for approach in Approach:
            c = reduced_rank_pipeline(block, approach).matrix
            w = np.linalg.eigvalsh(c)
            worst["diag"] = max(worst["diag"], np.abs(np.diag(c) - 1).max())
            worst["range"] = max(worst["range"], np.abs(c).max() - 1)
            worst["min_eig"] = min(worst["min_eig"], w.min())
            worst["null_eig"] = max(worst["null_eig"], np.abs(w).min())
    elapsed = time.perf_counter() - t0
    ok = (
        worst["diag"] <= 1e-10
        and worst["range"] <= 1e-10
        and worst["min_eig"] >= -1e-8
        and worst["null_eig"] <= 1e-8
        and elapsed < 60
    )
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items()) + f", {elapsed:.1f}s"
    verdict(2, "reduced-rank validity (400 matrices)", ok, detail)


def test_criterion_03_oracle_equivalence(two_regime_panel, verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for block in random_blocks(100, (3, 20), 200, seed=7):
        for approach in Approach:
            ours = reduced_rank_pipeline(block, approach).matrix
            ref = oracle_pipeline(block, approach).matrix
            worst = max(worst, np.abs(ours - ref).max())
    r = two_regime_panel.returns.returns
    mats = [reduced_rank_pipeline(r[:, e * T_EP : (e + 1) * T_EP], Approach.COVARIANCE) for e in range(30)]
    dist_err = np.abs(distance_matrix(mats).values - oracle_distance(mats)).max()
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and dist_err <= 1e-12 and elapsed < 60
    verdict(3, "oracle equivalence", ok, f"pipeline={worst:.2e} distance={dist_err:.2e} {elapsed:.1f}s")


def test_criterion_04_dyad_and_trace_laws(validity_blocks, verdict):
    dyad = trace_c = trace_res = 0.0
    for block in validity_blocks:
        for approach in Approach:
            s = reduced_rank_stages(block, approach)
            kappa, u = s.spectrum.top_value, s.spectrum.top_vector
            scale = max(1.0, np.abs(s.standard).max())
            dyad = max(dyad, np.abs(s.standard - s.residual - kappa * np.outer(u, u)).max() / scale)
            trace_res = max(trace_res, abs(np.trace(s.residual) - (np.trace(s.standard) - kappa)) / scale)
            k = block.shape[0]
            if approach is Approach.CORRELATION:
                trace_c = max(trace_c, abs(np.trace(s.standard) - k))
            trace_c = max(trace_c, abs(np.trace(s.reduced.matrix) - k))
    ok = dyad <= 1e-10 and trace_res <= 1e-10 and trace_c == 0.0
    verdict(4, "dyad identity and trace laws", ok, f"dyad={dyad:.2e} trace_resid={trace_res:.2e} trace_C={trace_c}")


def _distance_ratio(sp, mats):
    d = distance_matrix(mats).values
    reg = sp.regime_of_epoch
    same = (reg[:, None] == reg[None, :]) & ~np.eye(len(reg), dtype=bool)
    return d[reg[:, None] != reg[None, :]].mean() / d[same].mean()


def test_criterion_05_regime_recovery(planted, verdict):
    t0 = time.perf_counter()
    hits = 0
    ratios = []
    for sp, mats, seq, report in planted:
        ratios.append(_distance_ratio(sp, mats))
        persistent = [t.epoch for t in report if t.persistent]
        if persistent == [SWITCH]:
            hits += 1
    elapsed = TIMINGS["planted"] + time.perf_counter() - t0
    ok = hits >= 95 and min(ratios) >= 3 and elapsed < 300
    verdict(
        5,
        "regime recovery",
        ok,
        f"{hits}/{N_SEEDS} seeds, min between/within ratio={min(ratios):.2f}, {elapsed:.0f}s",
    )


def test_criterion_06_snapshot_pattern(planted, verdict):
    expected = {frozenset(range(SWITCH)), frozenset({SWITCH})}
    hits = 0
    for _, _, seq, _ in planted:
        snap = seq.snapshots[SWITCH + 1 - seq.start_count]  # epochs 0..SWITCH
        assert len(snap.labels) == SWITCH + 1
        hits += snap.partition() == expected
    again = snapshot_sequence(planted[0][1], ClusterConfig(), start_count=5)
    same = all(
        a.labels.tobytes() == b.labels.tobytes() for a, b in zip(again.snapshots, planted[0][2].snapshots)
    )
    verdict(6, "snapshot pattern {n-1, 1}", hits == N_SEEDS and same, f"{hits}/{N_SEEDS} seeds, deterministic={same}")


def test_criterion_07_kmeans_contract(planted, verdict):
    worst_rise = -np.inf  # largest change between consecutive Lloyd inertias
    best_ok = True
    runs = 0
    for _, _, seq, _ in planted:
        for snap in seq.snapshots:
            for hist in snap.histories:
                runs += 1
                if len(hist) > 1:
                    worst_rise = max(worst_rise, np.diff(hist).max())
            if snap.restart_inertias:
                best_ok &= snap.inertia <= min(snap.restart_inertias)
    mats = planted[0][1]
    pts = np.stack([vectorize(m.matrix) for m in mats])
    serial = kmeans(pts, ClusterConfig(k=3, seed=11))
    bitwise = True
    for threads in (2, 4, 8):
        other = kmeans(pts, ClusterConfig(k=3, seed=11), threads=threads)
        bitwise &= other.labels.tobytes() == serial.labels.tobytes()
        bitwise &= other.centroids.tobytes() == serial.centroids.tobytes()
        bitwise &= other.inertia == serial.inertia
        seq = snapshot_sequence(mats, ClusterConfig(), start_count=5, threads=threads)
        for a, b in zip(seq.snapshots, planted[0][2].snapshots):
            bitwise &= a.labels.tobytes() == b.labels.tobytes() and a.centroids.tobytes() == b.centroids.tobytes()
    ok = worst_rise < 1e-9 and best_ok and bitwise
    verdict(7, "k-means contract", ok, f"{runs} Lloyd runs, largest step change={worst_rise:.1e}, best<=all={best_ok}, bitwise={bitwise}")


def test_criterion_08_averaged_distance_masking(verdict):
    dm = DistanceMatrix(Approach.COVARIANCE, np.array([[0.1, 0.1, 0.3]] * 3))
    avg = averaged_distance(dm, 3, cutoff=0.22)
    unit = avg.values[0] == pytest.approx(0.3) and avg.counts[0] == 1
    rng = np.random.default_rng(8)
    cutoffs = np.linspace(0.0, 0.6, 13)
    monotone = True
    for _ in range(50):
        n = int(rng.integers(5, 40))
        x = rng.uniform(0, 1, (n, n))
        d = DistanceMatrix(Approach.COVARIANCE, (x + x.T) / 2 * (1 - np.eye(n)))
        t_c = int(rng.integers(1, n + 1))
        prev = None
        for c in cutoffs:
            cur = averaged_distance(d, t_c, cutoff=c).values
            if prev is not None:
                keep = np.isfinite(cur)
                monotone &= bool(np.all(np.isfinite(prev[keep])) and np.all(cur[keep] >= prev[keep]))
            prev = cur
    verdict(8, "averaged-distance masking", unit and monotone, f"survivor mean={avg.values[0]}, monotone over 50 matrices={monotone}")


def _tree(root):
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }


def test_criterion_09_end_to_end_determinism(tmp_path, verdict):
    t0 = time.perf_counter()
    sp = generate(two_regime_specs(20, SWITCH, 30 - SWITCH, rho=RHO), 20, T_EP, seed=0)
    write_price_csv(sp.prices(), tmp_path / "prices.csv")
    digests, trees = [], []
    for name in ("a", "b"):
        cfg = RunConfig(prices=str(tmp_path / "prices.csv"), out=str(tmp_path / name))
        digests.append(run(cfg)["outputs_digest"])
        trees.append(_tree(tmp_path / name))
    elapsed = time.perf_counter() - t0
    ok = digests[0] == digests[1] and trees[0] == trees[1] and elapsed < 120
    verdict(9, "end-to-end determinism", ok, f"{len(trees[0])} files identical={trees[0] == trees[1]}, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_10_full_scale(tmp_path, verdict):
    k, n_returns = 250, 4026
    blocks = tuple((tuple(range(b, k, 10)), 0.4) for b in range(10))
    from rrstates.synth import RegimeSpec

    specs = (RegimeSpec(48, 0.01, blocks[:5], 0.01), RegimeSpec(48, 0.01, blocks[5:], 0.01))
    sp = generate(specs, k, T_EP, seed=0)
    rp = sp.returns
    short = ReturnPanel(rp.tickers, rp.dates[:n_returns], rp.returns[:, :n_returns])
    write_price_csv(dataclasses.replace(sp, returns=short).prices(), tmp_path / "prices.csv")
    (tmp_path / "run.yaml").write_text("input:\n  prices: prices.csv\noutput:\n  dir: out\n", encoding="utf-8")
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "rrstates.cli", "run", "--config", str(tmp_path / "run.yaml")],
        capture_output=True,
        text=True,
    )
    elapsed = time.perf_counter() - t0
    peak_gb = resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss / 2**20  # KiB on Linux
    out = tmp_path / "out"
    m = json.loads((out / "manifest.json").read_text())
    dims = [read_header(out / "distances" / f"distance_{a}.rrcm")[0] for a in ("covariance", "correlation")]
    series = len((out / "indicators" / "mean_corr_c_b.csv").read_text().splitlines()) - 1
    snaps = all((out / "snapshots" / f"snapshots_{a}.json").exists() for a in ("covariance", "correlation"))
    ok = proc.returncode == 0 and dims == [3984, 3984] and series == 3984 and snaps and elapsed < 1800 and peak_gb < 4
    stages = {s: round(v.get("wall_time_s", 0)) for s, v in m["stages"].items()}
    verdict(10, "full-scale run", ok, f"{elapsed:.0f}s, peak RSS {peak_gb:.2f} GB, distance dim {dims}, stages {stages}")
