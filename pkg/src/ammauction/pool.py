"""Constant-product pool mechanics.

Reserves ``(x, y)`` satisfy the invariant ``sqrt(x * y) = L``. Asset ``y`` is
the numeraire: the spot price of the risky asset ``x`` is ``y / x`` and the
value of the reserves at an external price ``P`` is ``2 * sqrt(P) * L``.

Swap fees accrue to a fee recipient *outside* the curve (normally the pool
manager), so no trade ever changes ``L``. Two fee conventions coexist:

* :func:`swap_exact_in` charges a proportional fee on the input side; only
  the net input is traded against the curve.
* :func:`arb_trade_to_band` uses the symmetric log-space convention: the
  numeraire leg is scaled by ``e^{+f}`` on buys and ``e^{-f}`` on sells.
  The two conventions agree to O(f^2); the closed-form arbitrage accounting
  in :func:`arb_excess_instant` is exact under the log-space one.

All operations are pure: they take and return immutable values and are safe
to call from any number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

Side = Literal["buy_x", "sell_x"]

_LIQ_RTOL = 1e-12


@dataclass(frozen=True)
class PoolState:
    """Immutable snapshot of a constant-product pool.

    ``liquidity`` is derived from the reserves when omitted; when supplied it
    must match ``sqrt(reserve_x * reserve_y)`` to within 1e-12 relative.
    """

    reserve_x: float
    reserve_y: float
    swap_fee: float = 0.0
    fee_cap: float = 0.05
    withdrawal_fee: float = 0.0
    liquidity: float | None = None

    def __post_init__(self) -> None:
        if not (self.reserve_x > 0.0 and math.isfinite(self.reserve_x)):
            raise ValueError(f"reserve_x must be positive, got {self.reserve_x}")
        if not (self.reserve_y > 0.0 and math.isfinite(self.reserve_y)):
            raise ValueError(f"reserve_y must be positive, got {self.reserve_y}")
        if not 0.0 <= self.swap_fee <= self.fee_cap:
            raise ValueError(
                f"swap_fee {self.swap_fee} outside [0, fee_cap={self.fee_cap}]"
            )
        if not 0.0 <= self.withdrawal_fee < 1.0:
            raise ValueError(f"withdrawal_fee {self.withdrawal_fee} outside [0, 1)")
        derived = math.sqrt(self.reserve_x * self.reserve_y)
        if self.liquidity is None:
            object.__setattr__(self, "liquidity", derived)
        elif abs(self.liquidity - derived) > _LIQ_RTOL * derived:
            raise ValueError(
                f"liquidity {self.liquidity} inconsistent with reserves "
                f"(sqrt(x*y) = {derived})"
            )

    @property
    def spot_price(self) -> float:
        return self.reserve_y / self.reserve_x

    @classmethod
    def from_price(cls, liquidity: float, price: float, **kwargs) -> "PoolState":
        """Pool holding ``liquidity`` with its implied price at ``price``."""
        x, y = pool_holdings(liquidity, price)
        return cls(reserve_x=x, reserve_y=y, **kwargs)


@dataclass(frozen=True)
class TradeResult:
    """Outcome of a single swap.

    ``amount_in``/``amount_out`` are what the trader pays and receives
    (input-asset and output-asset units). ``fee_paid`` is the numeraire value
    routed to the fee recipient; it never enters the reserves, so
    ``new_pool.liquidity`` equals the pre-trade liquidity.
    """

    amount_in: float
    amount_out: float
    fee_paid: float
    new_pool: PoolState


def pool_value(liquidity: float, price: float) -> float:
    """Numeraire value ``2 * sqrt(price) * liquidity`` of pool reserves."""
    if not (price > 0.0 and math.isfinite(price)):
        raise ValueError(f"price must be positive, got {price}")
    if liquidity < 0.0:
        raise ValueError(f"liquidity must be non-negative, got {liquidity}")
    return 2.0 * math.sqrt(price) * liquidity


def pool_holdings(liquidity: float, price: float) -> tuple[float, float]:
    """Reserves ``(L / sqrt(P), L * sqrt(P))`` at implied price ``P``."""
    if not (price > 0.0 and math.isfinite(price)):
        raise ValueError(f"price must be positive, got {price}")
    if liquidity < 0.0:
        raise ValueError(f"liquidity must be non-negative, got {liquidity}")
    sqrt_p = math.sqrt(price)
    return liquidity / sqrt_p, liquidity * sqrt_p


def swap_exact_in(
    pool: PoolState, side: Side, amount_in: float, fee: float | None = None
) -> TradeResult:
    """Swap a fixed input against the curve, charging the fee on the input.

    ``buy_x`` pays numeraire in and takes the risky asset out; ``sell_x`` is
    the reverse. The fee is measured in numeraire value (sell-side input is
    valued at the pre-trade spot price) and withheld from the curve, so the
    reserves move by the net input only and liquidity is preserved.
    """
    if fee is None:
        fee = pool.swap_fee
    if not 0.0 <= fee <= pool.fee_cap:
        raise ValueError(f"fee {fee} outside [0, fee_cap={pool.fee_cap}]")
    if not (amount_in > 0.0 and math.isfinite(amount_in)):
        raise ValueError(f"amount_in must be positive and finite, got {amount_in}")

    net = amount_in * (1.0 - fee)
    if side == "buy_x":
        new_y = pool.reserve_y + net
        new_x = pool.reserve_x * pool.reserve_y / new_y
        amount_out = pool.reserve_x - new_x
        fee_paid = fee * amount_in
        exhausts = not (0.0 < new_x < pool.reserve_x)
    elif side == "sell_x":
        new_x = pool.reserve_x + net
        new_y = pool.reserve_x * pool.reserve_y / new_x
        amount_out = pool.reserve_y - new_y
        fee_paid = fee * amount_in * pool.spot_price
        exhausts = not (0.0 < new_y < pool.reserve_y)
    else:
        raise ValueError(f"side must be 'buy_x' or 'sell_x', got {side!r}")
    if exhausts or not math.isfinite(amount_out):
        raise ValueError("trade would exhaust a reserve")

    new_pool = PoolState(
        new_x, new_y, pool.swap_fee, pool.fee_cap, pool.withdrawal_fee
    )
    return TradeResult(amount_in, amount_out, fee_paid, new_pool)


def arb_trade_to_band(
    pool: PoolState, true_price: float, fee: float | None = None
) -> Optional[TradeResult]:
    """Arbitrage the pool until the log-mispricing equals the fee.

    With ``z = ln(true_price / spot)``: inside the no-trade band
    (``|z| <= fee``) returns ``None``. Otherwise the implied price moves to
    ``true_price * e^{-fee}`` (``z > fee``, arbitrageur buys ``x``) or
    ``true_price * e^{+fee}`` (``z < -fee``, sells ``x``). The numeraire leg
    carries the log-space fee factor, so the arbitrageur's profit at
    ``true_price`` equals the matching closed form in
    :func:`arb_excess_instant` exactly.
    """
    if not (true_price > 0.0 and math.isfinite(true_price)):
        raise ValueError(f"true_price must be positive, got {true_price}")
    if fee is None:
        fee = pool.swap_fee
    if fee < 0.0:
        raise ValueError(f"fee must be non-negative, got {fee}")

    z = math.log(true_price / pool.spot_price)
    if abs(z) <= fee:
        return None

    if z > fee:
        # Pool price is too low: buy x, pay e^{+fee}-grossed numeraire.
        target = true_price * math.exp(-fee)
        new_x, new_y = pool_holdings(pool.liquidity, target)
        curve_in = new_y - pool.reserve_y
        fee_paid = math.expm1(fee) * curve_in
        amount_in = curve_in + fee_paid
        amount_out = pool.reserve_x - new_x
    else:
        # Pool price is too high: sell x, receive e^{-fee}-scaled numeraire.
        target = true_price * math.exp(fee)
        new_x, new_y = pool_holdings(pool.liquidity, target)
        curve_out = pool.reserve_y - new_y
        fee_paid = -math.expm1(-fee) * curve_out
        amount_in = new_x - pool.reserve_x
        amount_out = curve_out - fee_paid

    new_pool = PoolState(
        new_x, new_y, pool.swap_fee, pool.fee_cap, pool.withdrawal_fee
    )
    return TradeResult(amount_in, amount_out, fee_paid, new_pool)


def arb_profit(pool_before: PoolState, trade: TradeResult, true_price: float) -> float:
    """Trader's mark-to-market profit: value drained from the pool, net of fee."""
    dx = pool_before.reserve_x - trade.new_pool.reserve_x
    dy = pool_before.reserve_y - trade.new_pool.reserve_y
    return true_price * dx + dy - trade.fee_paid


def _band_gap_value(gap: float) -> float:
    # e^{gap/2} - 2 + e^{-gap/2}, written to avoid cancellation near gap = 0
    return 4.0 * math.sinh(0.25 * gap) ** 2


def excess_fraction(z: float, fee: float) -> float:
    """Outside-arbitrageur profit per unit pool value at mispricing ``z``.

    Zero inside the band ``|z| <= fee``; otherwise the profit from trading
    the pool to the band edge, with the numeraire leg fee-grossed.
    """
    if fee < 0.0:
        raise ValueError(f"fee must be non-negative, got {fee}")
    if z > fee:
        return 0.5 * math.exp(0.5 * fee) * _band_gap_value(z - fee)
    if z < -fee:
        return 0.5 * math.exp(-0.5 * fee) * _band_gap_value(z + fee)
    return 0.0


def correction_fraction(z: float) -> float:
    """Fee-free profit per unit pool value from correcting mispricing ``z`` to zero.

    Equals ``cosh(z/2) - 1``; this is also the hedged value the pool loses to
    the correcting trader.
    """
    return 2.0 * math.sinh(0.25 * z) ** 2


def arb_excess_instant(liquidity: float, price: float, z: float, fee: float) -> float:
    """Numeraire profit available to outside arbitrageurs at mispricing ``z``.

    Non-negative, and zero exactly when ``|z| <= fee``. Scales linearly in
    ``liquidity`` and in ``sqrt(price)`` (value-proportional).
    """
    return pool_value(liquidity, price) * excess_fraction(z, fee)


def withdrawal_fee_required(ratio: float) -> float:
    """Exit fee fraction that offsets withdrawing ahead of a bounded price move.

    ``ratio`` is the gross price ratio the fee cap permits (about
    ``1 + fee_cap``). Ratios below one mirror to ``1/ratio``: a downward move
    of the same gross size creates a smaller opportunity, so the upward case
    binds. Returns ``1 - 2*sqrt(ratio)/(1 + ratio)``, in ``[0, 1)``.
    """
    if not (ratio > 0.0 and math.isfinite(ratio)):
        raise ValueError(f"price ratio must be positive, got {ratio}")
    if ratio < 1.0:
        ratio = 1.0 / ratio
    # algebraically 1 - 2*sqrt(r)/(1+r); this form avoids cancellation near 1
    return (math.sqrt(ratio) - 1.0) ** 2 / (1.0 + ratio)


def strategic_withdrawal_values(
    liquidity: float, pool_price: float, ratio: float
) -> tuple[float, float]:
    """Position values around a strategic exit when the true price moved by ``ratio``.

    Returns ``(v_now, v_after)``: the value of the holdings withdrawn before
    the manager's correcting arbitrage, and the value of the same liquidity
    left in the pool after it. ``(v_now - v_after) / v_now`` equals
    :func:`withdrawal_fee_required` at the same ratio.
    """
    if liquidity <= 0.0:
        raise ValueError(f"liquidity must be positive, got {liquidity}")
    if not (pool_price > 0.0 and math.isfinite(pool_price)):
        raise ValueError(f"pool_price must be positive, got {pool_price}")
    if ratio < 1.0:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    v_now = (1.0 + ratio) * math.sqrt(pool_price) * liquidity
    v_after = 2.0 * math.sqrt(ratio * pool_price) * liquidity
    return v_now, v_after
