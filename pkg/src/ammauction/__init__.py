"""Auction-managed constant-product AMM toolkit.

A constant-product pool whose swap fee is set by a pool manager that leases
the role through a deposit-backed rent auction, paired with the closed-form
arbitrage-rate model, equilibrium solvers, and the Monte-Carlo machinery used
to validate them. See the README for the module map and the CLI.
"""

__version__ = "0.1.0"

from .auction import AuctionParams, AuctionRejection, AuctionState, Bid
from .equilibrium import (
    AMEquilibrium,
    BracketError,
    DominanceReport,
    FFEquilibrium,
    SolverConfig,
    dominance_report,
    solve_am_equilibrium,
    solve_ff_liquidity,
)
from .market import MarketParams, MCRates, ae0, ap0, excess_ratio, mc_rates
from .pool import (
    PoolState,
    TradeResult,
    arb_excess_instant,
    arb_trade_to_band,
    pool_holdings,
    pool_value,
    swap_exact_in,
    withdrawal_fee_required,
)
from .sim import (
    BidSpec,
    SimConfig,
    SimReport,
    replay_auction,
    run_sim,
    run_strategic_withdrawal_attack,
)
