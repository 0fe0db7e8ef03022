import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rrstates.errors import ConfigError
from rrstates.indicators import (
    DistanceMatrix,
    SeriesName,
    averaged_distance,
    default_baseline_end,
    distance_matrix,
    embed,
    embedding_dim,
    indicator_series,
    mean_matrix_value,
    read_series_csv,
    render_heatmap,
    sector_index,
    write_series_csv,
)
from rrstates.market_data import PricePanel, ReturnPanel, SectorMap, build_window_grid
from rrstates.spectral import Approach, ReducedRankCorr, reduced_rank_pipeline
from rrstates.synth import RegimeSpec, generate, oracle_distance


def rrc(matrix, approach=Approach.COVARIANCE):
    m = np.asarray(matrix, dtype=float)
    return ReducedRankCorr(approach, m, np.ones(len(m)))


def epoch_mats(panel, approach=Approach.COVARIANCE):
    rp, t = panel.returns, panel.t_ep
    return [reduced_rank_pipeline(rp.returns[:, e * t : (e + 1) * t], approach) for e in range(rp.n_dates // t)]


# mean values


@pytest.mark.parametrize("k", [1, 4, 9])
def test_mean_of_identity(k):
    assert mean_matrix_value(np.eye(k)) == pytest.approx(1 / k)


def test_mean_of_ones():
    assert mean_matrix_value(np.ones((5, 5))) == 1.0


def test_embedding_dim_counts_pairs_and_diagonal():
    k = 250
    assert embedding_dim(k) == 31125 + k
    assert embed(np.eye(7)).shape == (embedding_dim(7),)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31))
def test_mean_linearity(k, alpha, beta, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, k, k))
    lhs = mean_matrix_value(alpha * a + beta * b)
    assert lhs == pytest.approx(alpha * mean_matrix_value(a) + beta * mean_matrix_value(b), abs=1e-12)


def test_equicorrelation_mean():
    k, rho = 10, 0.3
    spec = RegimeSpec(1, 0.0, ((tuple(range(k)), rho),), 0.01)
    rp = generate([spec], k, 5000, seed=2).returns
    grid = build_window_grid(rp.n_dates, rp.n_dates, 1, include_last=True)
    series, _ = indicator_series(rp, grid, [Approach.CORRELATION])
    value = series[SeriesName.MEAN_CORR_C].values[0]
    # Pearson standard error ~ (1 - rho^2)/sqrt(T), averaged over 90 of 100 entries
    assert value == pytest.approx((1 + (k - 1) * rho) / k, abs=3 * (1 - rho**2) / np.sqrt(5000))


def test_unit_variance_makes_cov_and_corr_means_equal(rng):
    t = 40
    data = rng.standard_normal((6, 3 * t))
    for s in range(3):  # unit variance on every window of a disjoint grid
        w = data[:, s * t : (s + 1) * t]
        w -= w.mean(axis=1, keepdims=True)
        w /= w.std(axis=1, keepdims=True)
    rp = ReturnPanel(tuple("abcdef"), np.datetime64("2001-01-01") + np.arange(3 * t), data)
    series, _ = indicator_series(rp, build_window_grid(3 * t, t, t))
    np.testing.assert_allclose(
        series[SeriesName.MEAN_COV_SIGMA].values, series[SeriesName.MEAN_CORR_C].values, atol=1e-10
    )
    np.testing.assert_allclose(
        series[SeriesName.MEAN_CORR_C_B].values, series[SeriesName.MEAN_CORR_C_L].values, atol=1e-10
    )


def test_degenerate_window_is_a_gap(rng):
    data = rng.standard_normal((4, 30))
    data[2, 10:20] = 0.0  # flat for exactly one disjoint window
    rp = ReturnPanel(tuple("abcd"), np.datetime64("2001-01-01") + np.arange(30), data)
    grid = build_window_grid(30, 10, 10, dates=rp.dates)
    seen = []
    series, diag = indicator_series(rp, grid, sink=lambda a, i, m: seen.append((a, i, m is None)))
    for name in (SeriesName.MEAN_CORR_C, SeriesName.MEAN_CORR_C_L):
        v = series[name].values
        assert np.isnan(v[1]) and np.isfinite(v[[0, 2]]).all()
    assert np.isfinite(series[SeriesName.MEAN_COV_SIGMA].values[1])
    rec = [r for r in diag.records if r["approach"] == "correlation"]
    assert rec and rec[0]["window"] == 1 and rec[0]["asset"] == "c"
    assert (Approach.CORRELATION, 1, True) in seen


def test_threads_do_not_change_series(two_regime_panel):
    rp = two_regime_panel.returns
    grid = build_window_grid(rp.n_dates, 42, 5)
    a, _ = indicator_series(rp, grid, threads=1)
    b, _ = indicator_series(rp, grid, threads=4)
    for name in a:
        assert a[name].values.tobytes() == b[name].values.tobytes()


# distances


def test_identical_matrices_have_zero_distance():
    m = rrc(np.eye(3))
    assert distance_matrix([m, m]).values[0, 1] == 0.0


def test_sign_flip_bound():
    k = 6
    c = np.where(np.add.outer(np.arange(k), np.arange(k)) % 2, -1.0, 1.0)
    neg = -c
    np.fill_diagonal(neg, 1.0)
    d = distance_matrix([rrc(c), rrc(neg)]).values[0, 1]
    assert d <= 2.0
    assert d == pytest.approx(2 * np.sqrt(k * (k - 1)) / k)


def test_distance_matches_oracle(two_regime_panel):
    mats = epoch_mats(two_regime_panel)
    np.testing.assert_allclose(distance_matrix(mats).values, oracle_distance(mats), rtol=0, atol=1e-12)


def test_embedding_isometry(rng):
    a, b = (np.corrcoef(rng.standard_normal((5, 20))) for _ in range(2))
    assert np.linalg.norm(embed(a) - embed(b)) == pytest.approx(np.linalg.norm(a - b) / 5, rel=1e-14)


def test_mixed_approaches_rejected():
    with pytest.raises(ConfigError):
        distance_matrix([rrc(np.eye(2)), rrc(np.eye(2), Approach.CORRELATION)])


def test_streamed_matches_in_memory(tmp_path, two_regime_panel):
    from rrstates.matrix_io import read_matrix

    mats = epoch_mats(two_regime_panel)
    mem = distance_matrix(mats, block_rows=7).values
    distance_matrix(mats, out_path=tmp_path / "d.rrcm", threads=3, block_rows=4)
    disk, code = read_matrix(tmp_path / "d.rrcm")
    assert code == 1
    assert disk.tobytes() == mem.tobytes()
    assert mem.tobytes() == mem.T.copy().tobytes()


def test_metric_properties(two_regime_panel):
    d = distance_matrix(epoch_mats(two_regime_panel)).values
    n = len(d)
    assert np.all(np.diag(d) == 0)
    np.testing.assert_array_equal(d, d.T)
    rng = np.random.default_rng(0)
    for a, b, c in rng.integers(0, n, (500, 3)):
        assert d[a, b] <= d[a, c] + d[c, b] + 1e-10


def test_adjacent_windows_are_closer_than_distant_ones():
    rp = generate([RegimeSpec(12, 0.01, ((tuple(range(5)), 0.5),), 0.01)], 10, 42, seed=9).returns
    grid = build_window_grid(rp.n_dates, 42, 1)
    mats = []
    indicator_series(rp, grid, [Approach.COVARIANCE], sink=lambda a, i, m: mats.append(m))
    d = distance_matrix(mats).values
    idx = np.arange(len(d))
    gap = np.abs(idx[:, None] - idx[None, :])
    assert np.median(d[gap == 1]) < np.median(d[gap >= 42])


# averaged distance


def test_constant_rows():
    dm = DistanceMatrix(Approach.COVARIANCE, np.full((12, 12), 0.5))
    avg = averaged_distance(dm, 10)
    np.testing.assert_array_equal(avg.values, 0.5)
    np.testing.assert_array_equal(avg.counts, 10)


def test_survivor_mean():
    dm = DistanceMatrix(Approach.COVARIANCE, np.array([[0.1, 0.1, 0.3]] * 3))
    avg = averaged_distance(dm, 3, cutoff=0.22)
    assert avg.values[0] == pytest.approx(0.3) and avg.counts[0] == 1
    strict = averaged_distance(dm, 3, cutoff=0.22, strict_tc=True)
    assert strict.values[0] == pytest.approx(0.1)


def test_row_without_survivors_is_missing(tmp_path):
    dm = DistanceMatrix(Approach.COVARIANCE, np.array([[0.0, 0.1], [0.1, 0.0]]))
    avg = averaged_distance(dm, 2)
    assert np.isnan(avg.values).all() and (avg.counts == 0).all()
    write_series_csv(tmp_path / "a.csv", ["t0", "t1"], avg.values, avg.counts)
    assert (tmp_path / "a.csv").read_text().splitlines()[1] == "t0,NA,0"


@pytest.mark.parametrize("t_c", [0, 5])
def test_baseline_out_of_range(t_c):
    with pytest.raises(ConfigError):
        averaged_distance(DistanceMatrix(Approach.COVARIANCE, np.zeros((4, 4))), t_c)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_cutoff_monotonicity(seed, c1, c2):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (15, 15))
    d = (x + x.T) / 2
    np.fill_diagonal(d, 0)
    dm = DistanceMatrix(Approach.COVARIANCE, d)
    lo, hi = sorted((c1, c2))
    a, b = averaged_distance(dm, 10, lo), averaged_distance(dm, 10, hi)
    both = np.isfinite(b.values)
    assert np.all(np.isfinite(a.values[both]))
    assert np.all(b.values[both] >= a.values[both] - 1e-15)


def test_default_baseline_end_matches_calendar():
    dates = np.busday_offset("1997-01-02", np.arange(800), roll="forward")
    t_c = default_baseline_end(dates)
    assert str(dates[t_c - 1]) == "1998-12-31"
    assert str(dates[t_c]) > "1998-12-31"


# sector index


def test_sector_index():
    dates = np.datetime64("2001-01-01") + np.arange(3)
    p = np.array([1.0, 2.0, 3.0])
    panel = PricePanel(("A", "B", "C"), dates, [p, 3 * p, 10 * p])
    sm = SectorMap.from_records([("A", "IT", ""), ("B", "IT", ""), ("C", "E", "")])
    np.testing.assert_allclose(sector_index(panel, sm, "IT").values, 2 * p)
    np.testing.assert_allclose(sector_index(panel, sm, "E").values, 10 * p)
    with pytest.raises(ConfigError):
        sector_index(panel, sm, "XX")


# serialization and rendering


def test_series_csv_round_trip(tmp_path):
    stamps = ["2001-01-02", "2001-01-03", "2001-01-04"]
    values = np.array([0.25, np.nan, 1 / 3])
    write_series_csv(tmp_path / "s.csv", stamps, values)
    text = (tmp_path / "s.csv").read_text()
    assert text.splitlines()[0] == "timestamp,value"
    assert "2001-01-03,NA" in text
    s, v, c = read_series_csv(tmp_path / "s.csv")
    assert list(s) == stamps and c is None
    np.testing.assert_array_equal(v, values)


def test_heatmap_writes_image(tmp_path):
    pytest.importorskip("matplotlib")
    render_heatmap(np.random.default_rng(0).uniform(0, 1, (8, 8)), tmp_path / "h.png", cutoff=0.22)
    assert (tmp_path / "h.png").read_bytes()[:4] == b"\x89PNG"
