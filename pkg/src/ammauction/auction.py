"""Harberger-lease manager auction: a deterministic block-level state machine.

Bids name a per-block rent ``R`` with a deposit ``D`` that must be a multiple
of ``R`` and at least ``R * K``. New bids activate ``K`` blocks after
submission, so the manager and rent effective at block ``N`` are fixed by the
state at block ``N - K``: a pending bid cannot touch the top or next slot, or
anyone's deposit, before it activates.

Slot model: ``top`` is the current manager's bid; ``next`` is the single
tracked runner-up (normally a previously usurped manager that has not
cancelled); ``pending`` holds bids waiting out the activation delay. On
activation a bid contends for the ``next`` slot and usurps within the same
block when its rent beats the top's, demoting the old manager (deposit
intact) into the runner-up slot. When a rent deduction empties the top's
deposit, the runner-up (always activated, by construction) is promoted, so a
pending bid can never reach the manager seat early.

All deposit and rent arithmetic uses exact rationals, so the conservation
identity

    deposits posted == rent distributed + refunds + live deposits

holds exactly, not merely to rounding. Rent streams to LPs through a
monotone rent-per-share accumulator: a holder's claim is
``shares * (accumulator_now - accumulator_at_snapshot)``, settled lazily.

Mutations must be serialized by the caller (single writer); reads of
serialized snapshots are safe from any thread.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Optional, Union

Number = Union[int, float, str, Fraction]

__all__ = [
    "AuctionParams",
    "AuctionRejection",
    "AuctionEvent",
    "Bid",
    "AuctionState",
]


class AuctionRejection(ValueError):
    """An action refused by the auction rules; ``code`` is machine-stable."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


def _to_fraction(value: Number, what: str) -> Fraction:
    """Exact conversion; floats go through their shortest decimal form."""
    try:
        if isinstance(value, Fraction):
            return value
        if isinstance(value, bool):
            raise TypeError
        if isinstance(value, int):
            return Fraction(value)
        if isinstance(value, float):
            return Fraction(Decimal(str(value)))
        if isinstance(value, str):
            return Fraction(Decimal(value))
        raise TypeError
    except (ValueError, TypeError, ArithmeticError):
        raise AuctionRejection("invalid-amount", f"{what} is not a number: {value!r}")


@dataclass(frozen=True)
class AuctionParams:
    k_delay: int
    fee_cap: float
    min_increment_factor: float = 1.10
    default_fee: float | None = None  # fee when unmanaged; None means fee_cap

    def __post_init__(self) -> None:
        if self.k_delay < 1:
            raise ValueError(f"k_delay must be >= 1, got {self.k_delay}")
        if self.min_increment_factor < 1.0:
            raise ValueError(
                f"min_increment_factor must be >= 1, got {self.min_increment_factor}"
            )
        if self.fee_cap < 0.0:
            raise ValueError(f"fee_cap must be >= 0, got {self.fee_cap}")
        if self.default_fee is None:
            object.__setattr__(self, "default_fee", self.fee_cap)
        elif not 0.0 <= self.default_fee <= self.fee_cap:
            raise ValueError(
                f"default_fee {self.default_fee} outside [0, {self.fee_cap}]"
            )


@dataclass
class Bid:
    bidder: str
    rent: Fraction
    deposit: Fraction
    submitted_at: int
    active_from: int

    def runway(self) -> Fraction:
        """Blocks of rent the remaining deposit covers."""
        return self.deposit / self.rent

    def to_dict(self) -> dict:
        return {
            "bidder": self.bidder,
            "rent": str(self.rent),
            "deposit": str(self.deposit),
            "submitted_at": self.submitted_at,
            "active_from": self.active_from,
        }


@dataclass(frozen=True)
class AuctionEvent:
    block: int
    kind: str  # activated | next-replaced | usurped | demoted | rent | depleted
    bidder: str | None = None
    amount: Fraction | None = None
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "block": self.block,
            "kind": self.kind,
            "bidder": self.bidder,
            "amount": None if self.amount is None else str(self.amount),
            "reason": self.reason,
        }


@dataclass
class _LPAccount:
    shares: Fraction
    snapshot: Fraction
    accrued: Fraction = Fraction(0)


class AuctionState:
    def __init__(self, params: AuctionParams, start_block: int = 0):
        self.params = params
        self.current_block = start_block
        self.top: Optional[Bid] = None
        self.next: Optional[Bid] = None
        self.pending: list[Bid] = []
        self.effective_fee: float = params.default_fee
        self.block_fee: float = params.default_fee  # fee in force for the last-advanced block
        self._pending_fee: float | None = None
        self._pending_fee_setter: str | None = None
        self.rent_per_share = Fraction(0)
        # conservation ledger
        self.deposits_posted = Fraction(0)
        self.rent_distributed = Fraction(0)
        self.refunds = Fraction(0)
        self.claims_paid = Fraction(0)
        self._lps: dict[str, _LPAccount] = {}
        self._increment = _to_fraction(params.min_increment_factor, "increment")

    # -- queries ------------------------------------------------------------

    @property
    def manager(self) -> str | None:
        return self.top.bidder if self.top is not None else None

    def live_bids(self) -> Iterable[Bid]:
        if self.top is not None:
            yield self.top
        if self.next is not None:
            yield self.next
        yield from self.pending

    def conservation_gap(self) -> Fraction:
        """Posted minus (distributed + refunded + still on deposit); zero always."""
        live = sum((b.deposit for b in self.live_bids()), Fraction(0))
        return self.deposits_posted - (self.rent_distributed + self.refunds + live)

    def lp_registered_shares(self) -> Fraction:
        return sum((a.shares for a in self._lps.values()), Fraction(0))

    # -- bidder actions -----------------------------------------------------

    def submit_bid(self, bidder: str, rent: Number, deposit: Number) -> Bid:
        """Enqueue a bid; it activates (and may usurp) K blocks from now.

        Rejection codes: ``invalid-rent``, ``deposit-not-multiple``,
        ``deposit-too-small``, ``increment-too-small``.
        """
        r = _to_fraction(rent, "rent")
        d = _to_fraction(deposit, "deposit")
        if r <= 0:
            raise AuctionRejection("invalid-rent", f"rent must be positive, got {rent}")
        if d <= 0 or (d / r).denominator != 1:
            raise AuctionRejection(
                "deposit-not-multiple", f"deposit {deposit} is not a multiple of rent {rent}"
            )
        if d < r * self.params.k_delay:
            raise AuctionRejection(
                "deposit-too-small",
                f"deposit {deposit} below rent * K = {r * self.params.k_delay}",
            )
        benchmark = max((b.rent for b in self.live_bids()), default=None)
        if benchmark is not None and (r < benchmark * self._increment or r <= benchmark):
            raise AuctionRejection(
                "increment-too-small",
                f"rent {rent} must exceed {benchmark} by factor "
                f"{self.params.min_increment_factor}",
            )
        bid = Bid(
            bidder=bidder,
            rent=r,
            deposit=d,
            submitted_at=self.current_block,
            active_from=self.current_block + self.params.k_delay,
        )
        self.pending.append(bid)
        self.deposits_posted += d
        return bid

    def _find_bid(self, bidder: str) -> tuple[Bid, str]:
        if self.top is not None and self.top.bidder == bidder:
            return self.top, "top"
        if self.next is not None and self.next.bidder == bidder:
            return self.next, "next"
        for bid in self.pending:
            if bid.bidder == bidder:
                return bid, "pending"
        raise AuctionRejection("no-live-bid", f"{bidder} has no live bid")

    def reduce_deposit(self, bidder: str, amount: Number) -> Fraction:
        """Withdraw deposit, subject to the runway floors. Returns the refund.

        The top bid must keep ``R * K``. The next bid, while the top cannot
        cover K blocks on its own, must keep the combined runway at K; it may
        cancel outright otherwise. Pending bids keep the submission floor or
        cancel. Remaining deposits stay multiples of the rent.
        """
        amt = _to_fraction(amount, "amount")
        bid, slot = self._find_bid(bidder)
        if amt <= 0 or amt > bid.deposit:
            raise AuctionRejection(
                "invalid-amount", f"amount {amount} outside (0, {bid.deposit}]"
            )
        remaining = bid.deposit - amt
        floor_rk = bid.rent * self.params.k_delay
        if slot == "top":
            floor = floor_rk  # the top bid can never cancel
        elif slot == "next":
            shortfall = Fraction(0)
            if self.top is not None and self.top.runway() < self.params.k_delay:
                shortfall = self.params.k_delay - self.top.runway()
            floor = shortfall * bid.rent
        else:  # pending: keep the submission floor, or cancel outright
            floor = Fraction(0) if remaining == 0 else floor_rk
        if remaining < floor:
            raise AuctionRejection(
                "would-violate-coverage",
                f"{slot} bid must keep a deposit of at least {floor}",
            )
        if (remaining / bid.rent).denominator != 1:
            raise AuctionRejection(
                "deposit-not-multiple",
                f"remaining deposit {remaining} is not a multiple of rent {bid.rent}",
            )
        bid.deposit = remaining
        self.refunds += amt
        if remaining == 0:
            if slot == "next":
                self.next = None
            else:
                self.pending.remove(bid)
        return amt

    def top_up_deposit(self, bidder: str, amount: Number) -> None:
        """Add deposit to a live bid, in multiples of its rent."""
        amt = _to_fraction(amount, "amount")
        bid, _ = self._find_bid(bidder)
        if amt <= 0:
            raise AuctionRejection("invalid-amount", f"amount must be positive, got {amount}")
        if (amt / bid.rent).denominator != 1:
            raise AuctionRejection(
                "deposit-not-multiple", f"top-up {amount} is not a multiple of rent {bid.rent}"
            )
        bid.deposit += amt
        self.deposits_posted += amt

    def set_fee(self, bidder: str, fee: float) -> None:
        """Request the swap fee for the next block; manager only, capped."""
        if self.manager is None or bidder != self.manager:
            raise AuctionRejection("not-manager", f"{bidder} is not the pool manager")
        if not 0.0 <= fee <= self.params.fee_cap:
            raise AuctionRejection(
                "fee-above-cap", f"fee {fee} outside [0, {self.params.fee_cap}]"
            )
        self._pending_fee = float(fee)
        self._pending_fee_setter = bidder

    # -- LP rent accounting ---------------------------------------------------

    def register_lp(self, lp_id: str, shares: Number) -> None:
        """Record an LP's share balance, settling rent accrued so far."""
        s = _to_fraction(shares, "shares")
        if s < 0:
            raise AuctionRejection("invalid-amount", f"shares must be >= 0, got {shares}")
        account = self._lps.get(lp_id)
        if account is None:
            if s > 0:
                self._lps[lp_id] = _LPAccount(shares=s, snapshot=self.rent_per_share)
            return
        account.accrued += account.shares * (self.rent_per_share - account.snapshot)
        account.snapshot = self.rent_per_share
        account.shares = s
        if s == 0 and account.accrued == 0:
            del self._lps[lp_id]

    def claim_rent(self, lp_id: str) -> Fraction:
        """Pay out rent accrued to an LP since its last claim; idempotent."""
        account = self._lps.get(lp_id)
        if account is None:
            raise AuctionRejection("unknown-lp", f"no shares registered for {lp_id!r}")
        amount = account.accrued + account.shares * (self.rent_per_share - account.snapshot)
        account.accrued = Fraction(0)
        account.snapshot = self.rent_per_share
        self.claims_paid += amount
        return amount

    # -- block clock ----------------------------------------------------------

    def advance_block(self, lp_total_shares: Number | None = None) -> list[AuctionEvent]:
        """Advance one block: activations, usurpation, rent, depletion.

        ``lp_total_shares`` is the authoritative LP share supply for the rent
        accumulator; defaults to the registered total, or one synthetic share
        when nothing is registered. Total function of state: never raises for
        any reachable state.
        """
        self.current_block += 1
        block = self.current_block
        events: list[AuctionEvent] = []

        # 1. activations contend for the next slot
        due = [b for b in self.pending if b.active_from <= block] if self.pending else ()
        for bid in due:
            self.pending.remove(bid)
            events.append(AuctionEvent(block, "activated", bid.bidder, bid.deposit))
            if self.next is None:
                self.next = bid
            elif bid.rent > self.next.rent:  # ties keep the earlier bid
                self._refund(self.next)
                events.append(
                    AuctionEvent(block, "next-replaced", self.next.bidder, reason=bid.bidder)
                )
                self.next = bid
            else:
                self._refund(bid)
                events.append(
                    AuctionEvent(block, "next-replaced", bid.bidder, reason=self.next.bidder)
                )

        # 2. a strictly higher activated bid usurps the manager; the outbid
        # manager keeps its deposit and demotes into the runner-up slot
        if self.next is not None and (self.top is None or self.next.rent > self.top.rent):
            reason = "vacant" if self.top is None else "outbid"
            old_top = self.top
            self.top, self.next = self.next, old_top
            events.append(AuctionEvent(block, "usurped", self.top.bidder, reason=reason))
            if old_top is not None:
                events.append(AuctionEvent(block, "demoted", old_top.bidder, old_top.deposit))
            self._pending_fee = None  # a dethroned manager's request dies with it
            self._pending_fee_setter = None

        # 3. fee set last block takes effect now, if the setter still manages
        if self._pending_fee is not None:
            if self._pending_fee_setter == self.manager:
                self.effective_fee = self._pending_fee
            self._pending_fee = None
            self._pending_fee_setter = None
        # a depletion below hands over only from the next block on, so the
        # fee ruling *this* block is pinned here
        self.block_fee = self.effective_fee

        # 4. rent streams from the manager's deposit to LP shares
        if self.top is not None:
            shares = (
                _to_fraction(lp_total_shares, "lp_total_shares")
                if lp_total_shares is not None
                else self.lp_registered_shares()
            )
            if shares <= 0:
                shares = Fraction(1)
            rent = self.top.rent
            self.top.deposit -= rent
            self.rent_distributed += rent
            self.rent_per_share += rent if shares == 1 else rent / shares
            events.append(AuctionEvent(block, "rent", self.top.bidder, rent))

            # 5. depletion promotes the (already activated) next bid
            if self.top.deposit == 0:
                events.append(AuctionEvent(block, "depleted", self.top.bidder))
                self.top = None
                if self.next is not None:
                    self.top, self.next = self.next, None
                    events.append(
                        AuctionEvent(block, "usurped", self.top.bidder, reason="depletion")
                    )

        if self.top is None:
            self.effective_fee = self.params.default_fee
            self._pending_fee = None
            self._pending_fee_setter = None
        return events

    def _refund(self, bid: Bid) -> None:
        self.refunds += bid.deposit
        bid.deposit = Fraction(0)

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "current_block": self.current_block,
            "params": {
                "k_delay": self.params.k_delay,
                "fee_cap": self.params.fee_cap,
                "min_increment_factor": self.params.min_increment_factor,
                "default_fee": self.params.default_fee,
            },
            "top": None if self.top is None else self.top.to_dict(),
            "next": None if self.next is None else self.next.to_dict(),
            "pending": [b.to_dict() for b in self.pending],
            "effective_fee": self.effective_fee,
            "pending_fee": self._pending_fee,
            "rent_per_share": str(self.rent_per_share),
            "deposits_posted": str(self.deposits_posted),
            "rent_distributed": str(self.rent_distributed),
            "refunds": str(self.refunds),
            "claims_paid": str(self.claims_paid),
            "lps": {
                lp: {
                    "shares": str(a.shares),
                    "snapshot": str(a.snapshot),
                    "accrued": str(a.accrued),
                }
                for lp, a in sorted(self._lps.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
