"""Reduced-form market model and its Monte-Carlo oracles.

Closed-form layer: noise-trader demand ``H(f, L) = c0 * L^alpha * e^{-c1 f}``,
the arbitrage-profit rate :func:`ap0` and arbitrage-excess rate :func:`ae0`
(both per unit pool value per unit time), and the erf-based conditional
expectation of the per-block excess given the interblock time.

Stochastic layer: block times are exponential with mean ``delta_t`` and the
log-mispricing accumulated over a block is ``N(0, sigma^2 * tau)``. Draws use
inverse-CDF transforms on a counter-based (Philox) uniform stream so results
are reproducible for a given seed and can be partitioned across workers by
counter range.

Units: time is measured in days, ``sigma`` per sqrt(day), ``r`` per day. Only
the dimensionless combinations ``sigma^2 * delta_t`` and
``f / (sigma * sqrt(delta_t))`` enter the formulas. The closed forms require
``sigma^2 * delta_t < 8`` so that ``1 - sigma^2 delta_t / 8 > 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import ndtri

from .pool import pool_value

__all__ = [
    "MarketParams",
    "MispricingSample",
    "MCRates",
    "ap0",
    "ae0",
    "excess_ratio",
    "kappa",
    "noise_volume",
    "noise_volume_per_value",
    "conditional_excess",
    "block_rng",
    "sample_block",
    "sample_blocks",
    "mc_rates",
]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class MarketParams:
    """Model constants. Validated once at construction.

    ``alpha`` must lie strictly inside (0, 1): demand per unit pool value is
    then strictly decreasing in liquidity, unbounded as L -> 0 and vanishing
    as L -> infinity, which the equilibrium solvers rely on for bracketing.
    """

    sigma: float
    delta_t: float
    r: float
    f_max: float
    c0: float = 25.0
    c1: float = 120.0
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if not (self.sigma >= 0.0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if not (self.delta_t > 0.0 and math.isfinite(self.delta_t)):
            raise ValueError(f"delta_t must be positive, got {self.delta_t}")
        if self.sigma**2 * self.delta_t >= 8.0:
            raise ValueError(
                f"sigma^2 * delta_t = {self.sigma ** 2 * self.delta_t} "
                "violates the validity condition (< 8)"
            )
        if self.r < 0.0:
            raise ValueError(f"r must be non-negative, got {self.r}")
        if self.f_max < 0.0:
            raise ValueError(f"f_max must be non-negative, got {self.f_max}")
        if self.c0 <= 0.0 or self.c1 <= 0.0:
            raise ValueError(f"c0 and c1 must be positive, got {self.c0}, {self.c1}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be strictly inside (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class MispricingSample:
    """One block draw: interblock time and accumulated log-mispricing."""

    tau: float
    z: float


@dataclass(frozen=True)
class MCRates:
    """Monte-Carlo rate estimates with standard errors, per unit value per day."""

    fee: float
    n_samples: int
    ap0_hat: float
    ap0_se: float
    ae0_hat: float
    ae0_se: float


def _check_fee(fee: float) -> None:
    if not (fee >= 0.0 and math.isfinite(fee)):
        raise ValueError(f"fee must be non-negative, got {fee}")


def _denominator(params: MarketParams) -> float:
    denom = 1.0 - params.sigma**2 * params.delta_t / 8.0
    if denom <= 0.0:
        raise ValueError("sigma^2 * delta_t >= 8: closed forms are invalid")
    return denom


def kappa(fee: float, params: MarketParams) -> float:
    """Dimensionless fee scale ``f / (sigma * sqrt(delta_t / 2))``."""
    scale = params.sigma * math.sqrt(params.delta_t / 2.0)
    if scale == 0.0:
        return math.inf if fee > 0.0 else 0.0
    return fee / scale


def ap0(fee: float, params: MarketParams) -> float:
    """Arbitrage-profit rate per unit pool value per unit time at a fixed fee.

    sigma^2/8 (the continuous-time rebalancing-loss rate) times the
    probability 1/(1 + kappa) that the mispricing escapes the fee band at a
    block time, times the expected profit factor cosh(f/2)/(1 - sigma^2 dt/8)
    conditioned on trade. Strictly decreasing in the fee.
    """
    _check_fee(fee)
    if params.sigma == 0.0:
        return 0.0  # no price motion, no arbitrage
    k = kappa(fee, params)
    return (
        params.sigma**2
        / 8.0
        * (1.0 / (1.0 + k))
        * math.cosh(0.5 * fee)
        / _denominator(params)
    )


def ae0(fee: float, params: MarketParams) -> float:
    """Arbitrage profit forgone to outsiders, per unit pool value per unit time.

    Same conditional profit factor as :func:`ap0` but with escape probability
    ``e^{-kappa}``: the pool restarts each block on-price, so reaching the
    band edge requires a full crossing within one block. ae0 <= ap0 with
    equality only at zero fee.
    """
    _check_fee(fee)
    if params.sigma == 0.0:
        return 0.0
    k = kappa(fee, params)
    return (
        params.sigma**2 / 8.0 * math.exp(-k) * math.cosh(0.5 * fee) / _denominator(params)
    )


def excess_ratio(fee: float, params: MarketParams) -> float:
    """``ae0 / ap0 = (1 + kappa) * e^{-kappa}``, exponentially vanishing in kappa."""
    _check_fee(fee)
    k = kappa(fee, params)
    if math.isinf(k):
        return 0.0
    return (1.0 + k) * math.exp(-k)


def noise_volume(fee: float, liquidity: float, params: MarketParams) -> float:
    """Expected noise-trade volume per unit time, ``c0 * L^alpha * e^{-c1 f}``."""
    _check_fee(fee)
    if liquidity < 0.0:
        raise ValueError(f"liquidity must be non-negative, got {liquidity}")
    return params.c0 * liquidity**params.alpha * math.exp(-params.c1 * fee)


def noise_volume_per_value(
    fee: float, liquidity: float, params: MarketParams, price: float = 1.0
) -> float:
    """Noise volume per unit pool value, ``H(f, L) / (2 sqrt(P) L)``.

    Evaluated at the reference price ``price``. Strictly decreasing in L for
    alpha < 1, diverging as L -> 0 and vanishing as L -> infinity.
    """
    if liquidity <= 0.0:
        raise ValueError(f"liquidity must be positive, got {liquidity}")
    return noise_volume(fee, liquidity, params) / pool_value(liquidity, price)


def _phibar(x: float) -> float:
    # Standard normal upper tail via erfc.
    return 0.5 * math.erfc(x / _SQRT2)


def conditional_excess(
    sigma: float, tau: float, fee: float, side: Literal["plus", "minus"] = "plus"
) -> float:
    """Expected one-sided excess per unit pool value, given the block time.

    For ``z ~ N(0, sigma^2 tau)`` this is E[A_side / V | tau], where A_plus
    (A_minus) is the outside-arbitrage profit from a buy (sell) at mispricing
    z. Evaluates the Gaussian tail integrals in closed form; the two sides
    satisfy E[A_minus | tau] = e^{-f} E[A_plus | tau] by z -> -z symmetry.
    """
    _check_fee(fee)
    if not (tau > 0.0 and math.isfinite(tau)):
        raise ValueError(f"tau must be positive, got {tau}")
    if side not in ("plus", "minus"):
        raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")
    s = sigma * math.sqrt(tau)
    if s == 0.0:
        return 0.0
    growth = math.exp(s * s / 8.0)
    tail = (
        math.exp(-0.5 * fee) * growth * _phibar((fee - 0.5 * s * s) / s)
        - 2.0 * _phibar(fee / s)
        + math.exp(0.5 * fee) * growth * _phibar((fee + 0.5 * s * s) / s)
    )
    half_fee = 0.5 * fee if side == "plus" else -0.5 * fee
    return 0.5 * math.exp(half_fee) * tail


def block_rng(seed: int) -> np.random.Generator:
    """Counter-based generator for block draws; same seed, same stream."""
    return np.random.Generator(np.random.Philox(key=seed))


# uniforms are clamped off exact zero: u = 0 would give tau = 0 and
# ndtri(0) = -inf, whose product is NaN
_U_FLOOR = np.finfo(float).tiny


def sample_block(params: MarketParams, rng: np.random.Generator) -> MispricingSample:
    """Draw one block: tau ~ Exp(mean delta_t), z ~ N(0, sigma^2 tau).

    Consumes exactly two uniforms via inverse CDF, so the stream position
    determines the draw regardless of how batches are sliced.
    """
    u = np.maximum(rng.random(2), _U_FLOOR)
    tau = -params.delta_t * math.log1p(-u[0])
    z = float(ndtri(u[1])) * params.sigma * math.sqrt(tau)
    return MispricingSample(tau=tau, z=z)


def sample_blocks(
    params: MarketParams, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`sample_block`: returns ``(tau, z)`` arrays of length n.

    Row-major uniform consumption matches n sequential scalar draws.
    """
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    u = np.maximum(rng.random((n, 2)), _U_FLOOR)
    tau = -params.delta_t * np.log1p(-u[:, 0])
    z = ndtri(u[:, 1]) * params.sigma * np.sqrt(tau)
    return tau, z


def _excess_fraction_vec(z: np.ndarray, fee: float) -> np.ndarray:
    # Vectorized pool.excess_fraction: profit per unit value outside the band.
    gap = np.abs(z) - fee
    active = gap > 0.0
    out = np.zeros_like(z)
    if np.any(active):
        scale = np.exp(np.sign(z[active]) * 0.5 * fee)
        out[active] = scale * 2.0 * np.sinh(0.25 * gap[active]) ** 2
    return out


def mc_rates(
    fee: float,
    params: MarketParams,
    n_samples: int,
    seed: int = 0,
    chains: int = 250,
) -> MCRates:
    """Monte-Carlo estimates of the profit and excess rates at a given fee.

    The excess estimator draws i.i.d. blocks: the pool starts each block
    on-price (the manager corrects it for free), so the pre-trade mispricing
    is exactly N(0, sigma^2 tau) and the per-block excess is averaged
    directly.

    The profit estimator simulates the fixed-fee pool in stationarity: the
    mispricing carries over between blocks, clamped to the fee band whenever
    arbitrageurs trade. It runs ``chains`` independent replicas after a
    warmup proportional to the band-crossing time, and reports the standard
    error across replica means (the within-chain samples are autocorrelated).
    At fee zero the two estimators sample the same law.
    """
    _check_fee(fee)
    if n_samples < 10_000:
        raise ValueError(f"n_samples must be at least 10^4, got {n_samples}")
    if chains < 2:
        raise ValueError(f"chains must be at least 2, got {chains}")
    rng = block_rng(seed)
    dt = params.delta_t

    # Excess: i.i.d. per-block draws.
    _, z = sample_blocks(params, n_samples, rng)
    vals = _excess_fraction_vec(z, fee)
    ae0_hat = float(vals.mean()) / dt
    ae0_se = float(vals.std(ddof=1)) / math.sqrt(n_samples) / dt

    # Profit: stationary band-clamped chain, vectorized across replicas.
    steps = -(-n_samples // chains)
    k = kappa(fee, params)
    # warmup covers ~40 band-crossing times; capped because for very wide
    # bands trades are so rare that the start state cannot bias the mean
    warmup = max(512, min(20_000, int(40.0 * k * k) + 1)) if math.isfinite(k) else 512
    z_state = np.zeros(chains)
    totals = np.zeros(chains)
    for i in range(warmup + steps):
        u = np.maximum(rng.random((chains, 2)), _U_FLOOR)
        tau = -dt * np.log1p(-u[:, 0])
        eps = ndtri(u[:, 1]) * params.sigma * np.sqrt(tau)
        if i >= warmup:
            totals += _excess_fraction_vec(z_state, fee)
        z_state = np.clip(z_state, -fee, fee) + eps
    means = totals / steps / dt
    ap0_hat = float(means.mean())
    ap0_se = float(means.std(ddof=1)) / math.sqrt(chains)

    return MCRates(
        fee=fee,
        n_samples=n_samples,
        ap0_hat=ap0_hat,
        ap0_se=ap0_se,
        ae0_hat=ae0_hat,
        ae0_se=ae0_se,
    )
