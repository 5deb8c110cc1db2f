"""Block-by-block discrete-event simulation of the managed pool.

Each block: draw an interblock time and a fresh log-mispricing increment; let
outside arbitrageurs trade the pool to the fee band (their net profit is the
manager's forgone "excess"); let the manager, who pays no fee, correct the
remaining gap to zero; book noise-trader fee flow; and stream one block of
auction rent. Noise trades are pure fee flow and do not move the pool price.

Price normalization: value homogeneity (profits per unit pool value depend on
the mispricing only) lets the simulator rebase the price level to 1 at every
block start, so the pool value stays O(L) over arbitrarily long horizons and
the per-block accounting identity can be checked to float precision.
Per-block value accounting closes exactly: manager arb profit + arbitrageur
swap fees + outside arb profit = the pool's adverse-selection loss, all
measured from actual reserve changes at the block's true price.

When no manager is seated (no bids, or a depleted deposit with no runner-up)
nobody corrects the pool for free: the mispricing carries over to the next
block, the fee reverts to the configured default, and swap fees route to the
LPs instead of a manager.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from . import equilibrium, market
from .auction import AuctionParams, AuctionRejection, AuctionState, Bid, _to_fraction
from .market import MarketParams
from .pool import (
    PoolState,
    arb_profit,
    arb_trade_to_band,
    strategic_withdrawal_values,
    withdrawal_fee_required,
)

__all__ = [
    "BidSpec",
    "SimConfig",
    "SimReport",
    "ConfigError",
    "ReplayParseError",
    "WithdrawalAttackReport",
    "run_sim",
    "run_strategic_withdrawal_attack",
    "replay_auction",
]

SCHEMA_VERSION = 1

BLOCK_LOG_HEADER = ("block", "tau", "z", "fee", "arb_profit", "excess", "noise_fees", "rent")


class ConfigError(ValueError):
    """A simulation config failed validation."""


class ReplayParseError(ValueError):
    """A scenario file line could not be parsed; carries the line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class BidSpec:
    bidder: str
    rent: float
    deposit: float


@dataclass(frozen=True)
class SimConfig:
    horizon_blocks: int
    seed: int
    market: MarketParams
    k_delay: int = 5
    min_increment_factor: float = 1.10
    default_fee: float | None = None  # fee when unmanaged; None -> fee cap
    withdrawal_fee: float | None = None  # None -> exactly offsets a capped move
    manager_policy: str = "fixed"  # "fixed" | "optimal"
    manager_fee: float | None = None  # fixed policy; None -> default fee
    lp_policy: str = "static"  # "static" | "zero_profit"
    initial_liquidity: float = 1.0
    initial_bids: tuple[BidSpec, ...] = ()

    def __post_init__(self) -> None:
        if self.horizon_blocks < 1:
            raise ConfigError(f"horizon_blocks must be >= 1, got {self.horizon_blocks}")
        if self.manager_policy not in ("fixed", "optimal"):
            raise ConfigError(f"unknown manager_policy {self.manager_policy!r}")
        if self.lp_policy not in ("static", "zero_profit"):
            raise ConfigError(f"unknown lp_policy {self.lp_policy!r}")
        if self.initial_liquidity <= 0.0:
            raise ConfigError(
                f"initial_liquidity must be positive, got {self.initial_liquidity}"
            )
        if self.manager_fee is not None and not (
            0.0 <= self.manager_fee <= self.market.f_max
        ):
            raise ConfigError(
                f"manager_fee {self.manager_fee} outside [0, {self.market.f_max}]"
            )
        if len(self.initial_bids) > 2:
            raise ConfigError("at most two initial bids are supported (top and runner-up)")
        if self.lp_policy == "zero_profit" and not self.initial_bids:
            raise ConfigError("zero_profit lp_policy needs an initial bid to price rent")

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        version = raw.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
        try:
            mkt = MarketParams(**raw["market"])
        except KeyError:
            raise ConfigError("config is missing the 'market' section")
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad market params: {exc}")
        bids = tuple(
            BidSpec(bidder=str(b["bidder"]), rent=float(b["rent"]), deposit=float(b["deposit"]))
            for b in raw.get("initial_bids", ())
        )
        known = {
            "horizon_blocks",
            "seed",
            "k_delay",
            "min_increment_factor",
            "default_fee",
            "withdrawal_fee",
            "manager_policy",
            "manager_fee",
            "lp_policy",
            "initial_liquidity",
        }
        extra = set(raw) - known - {"schema_version", "market", "initial_bids"}
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(
                horizon_blocks=int(raw["horizon_blocks"]),
                seed=int(raw.get("seed", 0)),
                market=mkt,
                initial_bids=bids,
                **{k: raw[k] for k in known - {"horizon_blocks", "seed"} if k in raw},
            )
        except KeyError as exc:
            raise ConfigError(f"config is missing {exc}")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc))

    def to_dict(self) -> dict:
        m = self.market
        return {
            "schema_version": SCHEMA_VERSION,
            "horizon_blocks": self.horizon_blocks,
            "seed": self.seed,
            "market": {
                "sigma": m.sigma,
                "delta_t": m.delta_t,
                "r": m.r,
                "f_max": m.f_max,
                "c0": m.c0,
                "c1": m.c1,
                "alpha": m.alpha,
            },
            "k_delay": self.k_delay,
            "min_increment_factor": self.min_increment_factor,
            "default_fee": self.default_fee,
            "withdrawal_fee": self.withdrawal_fee,
            "manager_policy": self.manager_policy,
            "manager_fee": self.manager_fee,
            "lp_policy": self.lp_policy,
            "initial_liquidity": self.initial_liquidity,
            "initial_bids": [
                {"bidder": b.bidder, "rent": b.rent, "deposit": b.deposit}
                for b in self.initial_bids
            ],
        }


@dataclass(frozen=True)
class SimReport:
    horizon_blocks: int
    seed: int
    fee_effective_mean: float
    ap0_hat: float
    ap0_se: float
    ae0_hat: float
    ae0_se: float
    manager_noise_fees: float
    manager_arb_fees: float
    manager_arb_profit: float
    manager_rent_paid: float
    lp_rent_received: float
    lp_fee_revenue: float  # swap fees routed to LPs while unmanaged
    lp_adverse_selection: float
    lp_capital_charge: float
    noise_volume_total: float
    noise_fees_paid: float
    external_arb_profit: float
    usurps: int
    depletions: int
    no_trade_blocks: int
    unmanaged_blocks: int
    accounting_drift: float
    max_block_residual: float
    max_end_mispricing: float
    pnl_by_agent: dict[str, float]

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "pnl_by_agent"}
        out["pnl_by_agent"] = dict(sorted(self.pnl_by_agent.items()))
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _install_initial_bids(auc: AuctionState, specs: Sequence[BidSpec], k_delay: int) -> None:
    # Bootstrap bids as if submitted K blocks before the start, already active.
    ordered = sorted(specs, key=lambda s: -_to_fraction(s.rent, "rent"))
    for i, spec in enumerate(ordered):
        rent = _to_fraction(spec.rent, "rent")
        deposit = _to_fraction(spec.deposit, "deposit")
        if rent <= 0 or deposit < rent * k_delay or (deposit / rent).denominator != 1:
            raise ConfigError(
                f"initial bid for {spec.bidder!r} violates the deposit rules"
            )
        bid = Bid(
            bidder=spec.bidder,
            rent=rent,
            deposit=deposit,
            submitted_at=-k_delay,
            active_from=0,
        )
        auc.deposits_posted += deposit
        if i == 0:
            auc.top = bid
        else:
            auc.next = bid


def run_sim(config: SimConfig, block_log: Optional[IO[str]] = None) -> SimReport:
    """Run the block simulation; deterministic for a given config and seed.

    ``block_log`` takes an optional text sink for the per-block CSV rows
    (columns :data:`BLOCK_LOG_HEADER`).
    """
    params = config.market
    dt = params.delta_t
    horizon = config.horizon_blocks
    fee_cap = params.f_max

    auction = AuctionState(
        AuctionParams(
            k_delay=config.k_delay,
            fee_cap=fee_cap,
            min_increment_factor=config.min_increment_factor,
            default_fee=config.default_fee,
        )
    )
    _install_initial_bids(auction, config.initial_bids, config.k_delay)
    auction.register_lp("lp", 1)

    liquidity = config.initial_liquidity
    if config.lp_policy == "zero_profit":
        # enter at the rent's zero-profit level: R/dt = (ap0(0) + r) * 2L,
        # converting the per-block rent into a per-time rate
        rent_rate = float(auction.top.rent) / dt
        liquidity = rent_rate / (2.0 * (market.ap0(0.0, params) + params.r))

    if config.manager_policy == "optimal":
        policy_fee = equilibrium.manager_optimal_fee(liquidity, params)
    else:
        policy_fee = (
            config.manager_fee if config.manager_fee is not None else auction.params.default_fee
        )
    if auction.manager is not None:
        auction.set_fee(auction.manager, policy_fee)

    rng = market.block_rng(config.seed)
    taus, zs = market.sample_blocks(params, horizon, rng)

    value_scale = 2.0 * liquidity  # pool value at the (rebased) true price of 1
    excess_frac = np.zeros(horizon)
    adverse_frac = np.zeros(horizon)

    mgr_noise = mgr_arbfee = mgr_arb_total = mgr_rent = 0.0
    lp_rent = lp_fees = lp_adverse = lp_capital = 0.0
    noise_volume_total = noise_fees_paid = ext_profit = 0.0
    usurps = depletions = no_trade = unmanaged_blocks = 0
    drift = 0.0
    max_resid = 0.0
    max_end_z = 0.0
    fee_sum = 0.0
    pnl: dict[str, float] = {"lp": 0.0, "external_arb": 0.0, "noise_traders": 0.0}
    noise_rate_cache: dict[float, float] = {}
    z_carry = 0.0

    if block_log is not None:
        block_log.write(",".join(BLOCK_LOG_HEADER) + "\n")

    one_share = Fraction(1)
    for b in range(horizon):
        events = auction.advance_block(one_share)
        rent_amount = 0.0
        manager = None  # whoever pays this block's rent manages this block
        for ev in events:
            if ev.kind == "usurped":
                usurps += 1
                auction.set_fee(ev.bidder, policy_fee)
            elif ev.kind == "depleted":
                depletions += 1
            elif ev.kind == "rent":
                rent_amount += float(ev.amount)
                manager = ev.bidder
        fee = auction.block_fee
        fee_sum += fee

        tau = float(taus[b])
        z = z_carry + float(zs[b])
        pool = PoolState.from_price(
            liquidity, math.exp(-z), swap_fee=min(fee, fee_cap), fee_cap=fee_cap
        )
        start_value = pool.reserve_x + pool.reserve_y  # true price is 1

        excess = arb_fee = mgr_arb = 0.0
        trade = arb_trade_to_band(pool, 1.0, fee)
        if trade is None:
            no_trade += 1
        else:
            excess = arb_profit(pool, trade, 1.0)
            arb_fee = trade.fee_paid
            pool = trade.new_pool
        if manager is not None:
            correction = arb_trade_to_band(pool, 1.0, 0.0)
            if correction is not None:
                mgr_arb = arb_profit(pool, correction, 1.0)
                pool = correction.new_pool
        else:
            unmanaged_blocks += 1

        end_value = pool.reserve_x + pool.reserve_y
        adverse = start_value - end_value
        residual = mgr_arb + arb_fee + excess - adverse
        drift += residual
        max_resid = max(max_resid, abs(residual))
        z_end = -math.log(pool.spot_price)
        if manager is not None:
            max_end_z = max(max_end_z, abs(z_end))
            z_carry = 0.0
        else:
            z_carry = z_end

        rate = noise_rate_cache.get(fee)
        if rate is None:
            rate = market.noise_volume(fee, liquidity, params)
            noise_rate_cache[fee] = rate
        noise_vol = rate * tau
        noise_fee = fee * noise_vol

        excess_frac[b] = excess / value_scale
        adverse_frac[b] = adverse / value_scale

        noise_volume_total += noise_vol
        noise_fees_paid += noise_fee
        ext_profit += excess
        lp_adverse += adverse
        lp_capital += params.r * value_scale * tau
        lp_rent += rent_amount
        pnl["lp"] += rent_amount - adverse
        pnl["external_arb"] += excess
        pnl["noise_traders"] -= noise_fee
        if manager is not None:
            mgr_noise += noise_fee
            mgr_arbfee += arb_fee
            mgr_arb_total += mgr_arb
            mgr_rent += rent_amount
            pnl[manager] = pnl.get(manager, 0.0) + noise_fee + arb_fee + mgr_arb - rent_amount
        else:
            lp_fees += noise_fee + arb_fee
            pnl["lp"] += noise_fee + arb_fee

        if block_log is not None:
            block_log.write(
                f"{b + 1},{tau!r},{z!r},{fee!r},{mgr_arb!r},{excess!r},"
                f"{noise_fee!r},{rent_amount!r}\n"
            )

    n = float(horizon)
    return SimReport(
        horizon_blocks=horizon,
        seed=config.seed,
        fee_effective_mean=fee_sum / n,
        ap0_hat=float(adverse_frac.mean()) / dt,
        ap0_se=float(adverse_frac.std(ddof=1)) / math.sqrt(n) / dt,
        ae0_hat=float(excess_frac.mean()) / dt,
        ae0_se=float(excess_frac.std(ddof=1)) / math.sqrt(n) / dt,
        manager_noise_fees=mgr_noise,
        manager_arb_fees=mgr_arbfee,
        manager_arb_profit=mgr_arb_total,
        manager_rent_paid=mgr_rent,
        lp_rent_received=lp_rent,
        lp_fee_revenue=lp_fees,
        lp_adverse_selection=lp_adverse,
        lp_capital_charge=lp_capital,
        noise_volume_total=noise_volume_total,
        noise_fees_paid=noise_fees_paid,
        external_arb_profit=ext_profit,
        usurps=usurps,
        depletions=depletions,
        no_trade_blocks=no_trade,
        unmanaged_blocks=unmanaged_blocks,
        accounting_drift=drift,
        max_block_residual=max_resid,
        max_end_mispricing=max_end_z,
        pnl_by_agent=pnl,
    )


@dataclass(frozen=True)
class WithdrawalAttackRow:
    ratio: float
    v_now: float
    v_after: float
    fee_paid: float
    net_gain: float
    gross_gain: float


@dataclass(frozen=True)
class WithdrawalAttackReport:
    """Strategic-withdrawal sweep: exit just before the manager's arbitrage.

    ``net_gain`` compares withdrawing now (paying the exit fee, credited to
    the manager) against staying through the correcting trade. With the fee
    set to exactly offset a move of the full fee cap, the gain is zero at the
    cap and negative below it.
    """

    fee_rate: float
    rows: tuple[WithdrawalAttackRow, ...]
    max_net_gain: float
    gain_at_cap: float
    manager_fee_credit: float

    CSV_HEADER = ("ratio", "v_now", "v_after", "fee_paid", "net_gain", "gross_gain")

    def to_csv_rows(self) -> list[tuple]:
        return [
            (r.ratio, r.v_now, r.v_after, r.fee_paid, r.net_gain, r.gross_gain)
            for r in self.rows
        ]


def run_strategic_withdrawal_attack(
    config: SimConfig, ratios: Iterable[float] | None = None
) -> WithdrawalAttackReport:
    """Sweep price-move ratios and value an LP that withdraws pre-correction.

    The LP sees the realized move before the manager can trade and withdraws
    whenever that is profitable gross of the exit fee (any ratio above one).
    """
    f_max = config.market.f_max
    fee_rate = (
        config.withdrawal_fee
        if config.withdrawal_fee is not None
        else withdrawal_fee_required(1.0 + f_max)
    )
    if ratios is None:
        grid = np.linspace(1.0, 1.0 + f_max, 41)
        grid[-1] = 1.0 + f_max
        ratios = grid
    liquidity = config.initial_liquidity
    rows = []
    credit = 0.0
    for ratio in map(float, ratios):
        v_now, v_after = strategic_withdrawal_values(liquidity, 1.0, ratio)
        fee_paid = fee_rate * v_now
        net = (1.0 - fee_rate) * v_now - v_after
        gross = v_now - v_after
        if gross > 0.0:  # the strategic LP withdraws; the fee goes to the manager
            credit += fee_paid
        rows.append(
            WithdrawalAttackRow(
                ratio=ratio,
                v_now=v_now,
                v_after=v_after,
                fee_paid=fee_paid,
                net_gain=net,
                gross_gain=gross,
            )
        )
    cap_row = min(rows, key=lambda r: abs(r.ratio - (1.0 + f_max)))
    return WithdrawalAttackReport(
        fee_rate=fee_rate,
        rows=tuple(rows),
        max_net_gain=max(r.net_gain for r in rows),
        gain_at_cap=cap_row.net_gain,
        manager_fee_credit=credit,
    )


_REPLAY_ACTIONS = {
    "submit_bid",
    "reduce_deposit",
    "top_up",
    "set_fee",
    "register_lp",
    "claim_rent",
    "advance",
}

TRACE_HEADER = (
    "line",
    "block",
    "origin",
    "action",
    "bidder",
    "rent",
    "deposit",
    "fee",
    "amount",
    "shares",
    "status",
    "detail",
)


@dataclass(frozen=True)
class ReplayTrace:
    rows: tuple[dict, ...]
    final_state_json: str

    def to_csv_rows(self) -> list[tuple]:
        return [tuple(row.get(k, "") for k in TRACE_HEADER) for row in self.rows]


def _trace_row(**kw) -> dict:
    row = {k: "" for k in TRACE_HEADER}
    row.update({k: v for k, v in kw.items() if v is not None})
    return row


def replay_auction(scenario_path: str) -> ReplayTrace:
    """Replay a line-delimited JSON auction scenario into an event trace.

    The first line configures the auction (``k_delay``, ``fee_cap``,
    optionally ``min_increment_factor``, ``default_fee``,
    ``lp_total_shares``). Every following line is an action at a block height:
    invalid actions are recorded in the trace with their rejection code
    rather than aborting the replay; malformed lines raise
    :class:`ReplayParseError` with the line number.
    """
    with open(scenario_path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    header = None
    header_no = 0
    events: list[tuple[int, dict]] = []
    for no, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ReplayParseError(no, f"malformed JSON ({exc.msg})")
        if not isinstance(obj, dict):
            raise ReplayParseError(no, "each line must be a JSON object")
        if header is None:
            if "k_delay" not in obj or "fee_cap" not in obj:
                raise ReplayParseError(no, "first line must configure k_delay and fee_cap")
            header = obj
            header_no = no
            continue
        if "action" not in obj or obj["action"] not in _REPLAY_ACTIONS:
            raise ReplayParseError(no, f"unknown action {obj.get('action')!r}")
        if "block" not in obj or not isinstance(obj["block"], int):
            raise ReplayParseError(no, "missing integer 'block'")
        events.append((no, obj))

    if header is None:
        raise ReplayParseError(1, "empty scenario: missing header line")
    try:
        params = AuctionParams(
            k_delay=int(header["k_delay"]),
            fee_cap=float(header["fee_cap"]),
            min_increment_factor=float(header.get("min_increment_factor", 1.10)),
            default_fee=header.get("default_fee"),
        )
    except (TypeError, ValueError) as exc:
        raise ReplayParseError(header_no, f"bad auction params: {exc}")
    shares = header.get("lp_total_shares")

    auction = AuctionState(params)
    rows: list[dict] = []

    def advance_to(block: int, line_no: int) -> None:
        if block < auction.current_block:
            raise ReplayParseError(
                line_no, f"block {block} precedes current block {auction.current_block}"
            )
        while auction.current_block < block:
            for ev in auction.advance_block(shares):
                rows.append(
                    _trace_row(
                        line=line_no,
                        block=ev.block,
                        origin="auction",
                        action=ev.kind,
                        bidder=ev.bidder,
                        amount=None if ev.amount is None else str(ev.amount),
                        detail=ev.reason,
                        status="event",
                    )
                )

    def require(obj: dict, line_no: int, *keys: str) -> list:
        missing = [k for k in keys if k not in obj]
        if missing:
            raise ReplayParseError(line_no, f"action {obj['action']!r} needs {missing}")
        return [obj[k] for k in keys]

    for line_no, obj in events:
        advance_to(obj["block"], line_no)
        action = obj["action"]
        status, detail = "ok", ""
        try:
            if action == "submit_bid":
                bidder, rent, deposit = require(obj, line_no, "bidder", "rent", "deposit")
                auction.submit_bid(bidder, rent, deposit)
            elif action == "reduce_deposit":
                bidder, amount = require(obj, line_no, "bidder", "amount")
                auction.reduce_deposit(bidder, amount)
            elif action == "top_up":
                bidder, amount = require(obj, line_no, "bidder", "amount")
                auction.top_up_deposit(bidder, amount)
            elif action == "set_fee":
                bidder, fee = require(obj, line_no, "bidder", "fee")
                auction.set_fee(bidder, fee)
            elif action == "register_lp":
                lp, lp_shares = require(obj, line_no, "lp", "shares")
                auction.register_lp(lp, lp_shares)
            elif action == "claim_rent":
                (lp,) = require(obj, line_no, "lp")
                detail = str(auction.claim_rent(lp))
            # "advance" has no payload: advance_to already ran
        except AuctionRejection as exc:
            status, detail = f"rejected:{exc.code}", str(exc)
        rows.append(
            _trace_row(
                line=line_no,
                block=obj["block"],
                origin="scenario",
                action=action,
                bidder=obj.get("bidder", obj.get("lp")),
                rent=obj.get("rent"),
                deposit=obj.get("deposit"),
                fee=obj.get("fee"),
                amount=obj.get("amount"),
                shares=obj.get("shares"),
                status=status,
                detail=detail,
            )
        )

    return ReplayTrace(rows=tuple(rows), final_state_json=auction.to_json())
