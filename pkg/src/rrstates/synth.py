"""Synthetic regime-switching return panels and brute-force oracles.

Returns within a regime are Gaussian with covariance

    Sigma = beta beta^T + noise_scale^2 * R_blocks

where ``R_blocks`` has unit diagonal and ``rho_s`` between distinct members
of the same block.  The population correlation of every regime is therefore
known in closed form.  Regimes last a whole number of epochs.

The oracle functions re-derive the reduced-rank construction by explicit
summation and a cyclic Jacobi eigensolver; they share no code with
:mod:`rrstates.spectral`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateResidualError, DegenerateWindowError, NumericalError
from .market_data import PricePanel, ReturnPanel, SectorMap

BASE_PRICE = 100.0
START_DATE = "2000-01-03"


@dataclass(frozen=True)
class RegimeSpec:
    duration: int  # in epochs
    market_beta: object = 0.0  # scalar or per-asset loadings
    sector_blocks: tuple = ()  # tuple of (asset index tuple, rho)
    noise_scale: float = 0.01

    def blocks(self, k):
        """Per-asset block id and per-block rho; unlisted assets are singletons."""
        block_id = np.full(k, -1)
        rhos = []
        for b, (members, rho) in enumerate(self.sector_blocks):
            members = list(members)
            if not abs(rho) < 1:
                raise ConfigError(f"block correlation {rho} outside (-1, 1)")
            if any(m < 0 or m >= k for m in members):
                raise ConfigError("block member outside asset range")
            if (block_id[members] != -1).any():
                raise ConfigError("sector blocks overlap")
            block_id[members] = b
            rhos.append(float(rho))
        nxt = len(rhos)
        for i in np.flatnonzero(block_id == -1):
            block_id[i] = nxt
            rhos.append(0.0)
            nxt += 1
        return block_id, np.array(rhos)

    def covariance(self, k):
        if self.duration < 1:
            raise ConfigError("regime duration must be >= 1 epoch")
        if self.noise_scale <= 0:
            raise ConfigError("noise_scale must be positive")
        beta = np.broadcast_to(np.asarray(self.market_beta, dtype=float), (k,))
        block_id, rhos = self.blocks(k)
        same = block_id[:, None] == block_id[None, :]
        r = np.where(same, rhos[block_id][:, None], 0.0)
        np.fill_diagonal(r, 1.0)
        return np.outer(beta, beta) + self.noise_scale**2 * r

    def correlation(self, k):
        cov = self.covariance(k)
        s = np.sqrt(np.diag(cov))
        return cov / np.outer(s, s)


@dataclass(frozen=True)
class SyntheticPanel:
    returns: ReturnPanel
    regime_of_epoch: np.ndarray
    block_of_asset: np.ndarray  # (n_regimes, K)
    specs: tuple
    t_ep: int

    @property
    def switch_epochs(self):
        """Indices of the first epoch of every regime after the first."""
        r = self.regime_of_epoch
        return [int(i) for i in np.flatnonzero(r[1:] != r[:-1]) + 1]

    def prices(self) -> PricePanel:
        """Prices rebuilt from base 100; one more date than there are returns."""
        rp = self.returns
        logp = np.concatenate([np.zeros((rp.n_assets, 1)), np.cumsum(rp.returns, axis=1)], axis=1)
        last = np.busday_offset(rp.dates[-1], 1, roll="forward")
        dates = np.append(rp.dates, last)
        return PricePanel(rp.tickers, dates, BASE_PRICE * np.exp(logp))

    def sector_map(self, regime=0) -> SectorMap:
        """Sector codes taken from the block layout of one regime."""
        ids = self.block_of_asset[regime]
        records = [(t, f"S{ids[i]:02d}", "synthetic") for i, t in enumerate(self.returns.tickers)]
        return SectorMap.from_records(records)


def generate(specs, k_assets, t_ep, seed=0, start_date=START_DATE) -> SyntheticPanel:
    """Draw a K x (sum(duration) * t_ep) panel of Gaussian log returns."""
    specs = tuple(specs)
    if not specs:
        raise ConfigError("at least one regime is required")
    if k_assets < 4:
        raise ConfigError("k_assets must be >= 4")
    if t_ep < 2:
        raise ConfigError("t_ep must be >= 2")
    rng = np.random.default_rng(seed)
    chunks, regime_of_epoch, blocks = [], [], []
    for r, spec in enumerate(specs):
        cov = spec.covariance(k_assets)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ConfigError(f"regime {r} covariance is not positive definite") from None
        n = spec.duration * t_ep
        chunks.append(chol @ rng.standard_normal((k_assets, n)))
        regime_of_epoch += [r] * spec.duration
        blocks.append(spec.blocks(k_assets)[0])
    returns = np.concatenate(chunks, axis=1)
    dates = np.busday_offset(np.datetime64(start_date, "D"), np.arange(returns.shape[1]), roll="forward")
    width = len(str(k_assets - 1))
    tickers = tuple(f"A{i:0{width}d}" for i in range(k_assets))
    rp = ReturnPanel(tickers, dates, returns)
    return SyntheticPanel(rp, np.array(regime_of_epoch), np.stack(blocks), specs, t_ep)


def two_regime_specs(k_assets=20, first=16, second=14, rho=0.6, beta=0.01, noise=0.01):
    """Two regimes with the same market mode and reshuffled sector blocks.

    The first regime groups assets into contiguous halves, the second into
    interleaved even/odd halves, so residual correlations change sign for
    half of all pairs at the switch.
    """
    half = k_assets // 2
    a = ((tuple(range(half)), rho), (tuple(range(half, k_assets)), rho))
    b = ((tuple(range(0, k_assets, 2)), rho), (tuple(range(1, k_assets, 2)), rho))
    return (
        RegimeSpec(first, beta, a, noise),
        RegimeSpec(second, beta, b, noise),
    )


# ---------------------------------------------------------------------------
# oracles


def oracle_covariance(block):
    """Covariance with divisor T by explicit double loops."""
    x = [list(map(float, row)) for row in np.asarray(block)]
    k, t = len(x), len(x[0])
    means = [math.fsum(r) / t for r in x]
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            s = math.fsum((x[i][n] - means[i]) * (x[j][n] - means[j]) for n in range(t)) / t
            out[i, j] = out[j, i] = s
    return out


def oracle_pearson(block):
    """Textbook pairwise Pearson coefficients."""
    x = np.asarray(block, dtype=float)
    k = x.shape[0]
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            a = x[i] - x[i].mean()
            b = x[j] - x[j].mean()
            den = math.sqrt(math.fsum(a * a) * math.fsum(b * b))
            if den == 0:
                raise DegenerateWindowError(f"asset {i if math.fsum(a * a) == 0 else j} is constant")
            out[i, j] = out[j, i] = math.fsum(a * b) / den
    return out


def jacobi_eigh(a, tol=1e-12, max_sweeps=100):
    """Cyclic Jacobi rotations; returns ascending eigenvalues and eigenvectors."""
    a = np.array(a, dtype=float, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = math.sqrt(float((np.tril(a, -1) ** 2).sum()))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise NumericalError("Jacobi iteration did not converge")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def oracle_pipeline(block, approach):
    """Independent reduced-rank correlation matrix (covariance or correlation path)."""
    from .spectral import Approach, ReducedRankCorr

    approach = Approach(approach)
    if approach is Approach.COVARIANCE:
        m = oracle_covariance(block)
    else:
        m = oracle_pearson(block)
    w, v = jacobi_eigh(m)
    top = w[-1]
    u = v[:, -1]
    tied = np.flatnonzero(w >= top - 1e-10 * max(1.0, abs(top)))
    if len(tied) > 1:
        basis = v[:, tied]
        p = basis @ (basis.T @ np.ones(len(u)))
        if np.linalg.norm(p) > 1e-12:
            u = p / np.linalg.norm(p)
    k = m.shape[0]
    resid = np.empty_like(m)
    for i in range(k):
        for j in range(k):
            resid[i, j] = m[i, j] - top * u[i] * u[j]
    sigma = np.empty(k)
    for i in range(k):
        if resid[i, i] <= 1e-14:
            raise DegenerateResidualError(f"residual variance of asset {i} vanished", asset=i)
        sigma[i] = math.sqrt(resid[i, i])
    out = np.empty_like(m)
    for i in range(k):
        for j in range(k):
            out[i, j] = resid[i, j] / (sigma[i] * sigma[j])
    return ReducedRankCorr(approach, out, sigma)


def oracle_distance(mats):
    """Scaled Frobenius distances by an explicit sum over every entry pair."""
    mats = [np.asarray(getattr(m, "matrix", m), dtype=float) for m in mats]
    n, k = len(mats), mats[0].shape[0]
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            d = mats[a] - mats[b]
            s = math.fsum((d * d).ravel())
            out[a, b] = out[b, a] = math.sqrt(s) / k
    return out
