"""Operator command line: closed-form tables, Monte-Carlo validation,
equilibrium reports, simulation runs, and auction scenario replay.

Outputs are plot-tool-agnostic CSV (and JSON for simulation reports). Every
output file embeds a manifest header carrying the command, tool version,
seed, and a hash of the effective configuration, so a run can be reproduced
from its artifacts alone. Exit codes are a stable contract for CI:

    0  success / validation passed
    1  validation failed (Monte Carlo vs closed form, or dominance)
    2  usage, config, or parse error
    3  solver bracket failure
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__, market
from .equilibrium import BracketError, DominanceReport, dominance_report
from .market import MarketParams
from .sim import (
    ConfigError,
    ReplayParseError,
    SimConfig,
    TRACE_HEADER,
    replay_auction,
    run_sim,
    run_strategic_withdrawal_attack,
)

_DEFAULTS = {
    "sigma": 0.05,
    "delta_t": 0.01,
    "r": 1e-4,
    "f_max": 0.05,
    "c0": 25.0,
    "c1": 120.0,
    "alpha": 0.5,
}

PARAMS_SCHEMA_VERSION = 1


def _manifest(command: str, config: dict, seed: int | None, outputs: list[str]) -> dict:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest()[:16],
        "outputs": outputs,
    }


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _write_csv(path: Path, manifest: dict, header: Sequence[str], rows: Iterable[tuple]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# manifest " + json.dumps(manifest, sort_keys=True) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _print_csv(manifest: dict, header: Sequence[str], rows: Iterable[tuple]) -> None:
    sys.stdout.write("# manifest " + json.dumps(manifest, sort_keys=True) + "\n")
    sys.stdout.write(",".join(header) + "\n")
    for row in rows:
        sys.stdout.write(",".join(_fmt(v) for v in row) + "\n")


def _add_params_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("market parameters")
    group.add_argument("--config", metavar="PATH", help="JSON file with market parameters")
    for name in _DEFAULTS:
        group.add_argument(f"--{name.replace('_', '-')}", type=float, default=None)


def _load_params(args: argparse.Namespace) -> MarketParams:
    values = dict(_DEFAULTS)
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ConfigError("params config must be a JSON object")
        version = raw.pop("schema_version", PARAMS_SCHEMA_VERSION)
        if version != PARAMS_SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {PARAMS_SCHEMA_VERSION}, got {version!r}")
        unknown = set(raw) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown parameter keys: {sorted(unknown)}")
        values.update(raw)
    for name in _DEFAULTS:
        override = getattr(args, name)
        if override is not None:
            values[name] = override
    try:
        return MarketParams(**values)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _parse_fees(args: argparse.Namespace, params: MarketParams) -> list[float]:
    if args.fees:
        try:
            fees = [float(tok) for tok in args.fees.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(f"--fees must be a comma-separated float list, got {args.fees!r}")
        if not fees or any(f < 0.0 for f in fees):
            raise ConfigError("--fees must list non-negative fees")
        return fees
    n = args.grid
    return [params.f_max * i / (n - 1) for i in range(n)]


def _out_dir(args: argparse.Namespace) -> Path | None:
    if args.out is None:
        return None
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_formulas(args: argparse.Namespace) -> int:
    params = _load_params(args)
    fees = _parse_fees(args, params)
    if args.liquidity <= 0.0:
        raise ConfigError(f"--liquidity must be positive, got {args.liquidity}")
    rows = []
    for f in fees:
        rows.append(
            (
                f,
                market.ap0(f, params),
                market.ae0(f, params),
                market.excess_ratio(f, params),
                market.noise_volume_per_value(f, args.liquidity, params),
            )
        )
    header = ("f", "ap0", "ae0", "ratio", "H0")
    manifest = _manifest(
        "formulas",
        {"params": params.__dict__, "fees": fees, "liquidity": args.liquidity},
        None,
        ["formulas.csv"],
    )
    out = _out_dir(args)
    if out is None:
        _print_csv(manifest, header, rows)
    else:
        _write_csv(out / "formulas.csv", manifest, header, rows)
        print(f"wrote {out / 'formulas.csv'}")
    return 0


def _zscore(estimate: float, reference: float, se: float) -> float:
    if se == 0.0:
        return 0.0 if estimate == reference else math.inf
    return (estimate - reference) / se


def cmd_mc_validate(args: argparse.Namespace) -> int:
    params = _load_params(args)
    if args.samples < 10_000:
        raise ConfigError(f"--samples must be at least 10000, got {args.samples}")
    fees = _parse_fees(args, params)
    closed = params
    if args.corrupt_closed_form:  # negative-control hook: skews the reference only
        closed = replace(params, sigma=params.sigma * 1.5)
    header = ("f", "ap0_hat", "ap0_se", "ap0_ref", "z_ap0", "ae0_hat", "ae0_se", "ae0_ref", "z_ae0", "pass")
    rows = []
    all_pass = True
    for f in fees:
        est = market.mc_rates(f, params, args.samples, seed=args.seed, chains=args.chains)
        ap_ref = market.ap0(f, closed)
        ae_ref = market.ae0(f, closed)
        z_ap = _zscore(est.ap0_hat, ap_ref, est.ap0_se)
        z_ae = _zscore(est.ae0_hat, ae_ref, est.ae0_se)
        ok = abs(z_ap) <= 3.0 and abs(z_ae) <= 3.0
        all_pass = all_pass and ok
        rows.append(
            (f, est.ap0_hat, est.ap0_se, ap_ref, z_ap, est.ae0_hat, est.ae0_se, ae_ref, z_ae, int(ok))
        )
        print(
            f"f={f:<8g} z_ap0={z_ap:+6.2f} z_ae0={z_ae:+6.2f} "
            f"[{'pass' if ok else 'FAIL'}]"
        )
    manifest = _manifest(
        "mc_validate",
        {"params": params.__dict__, "fees": fees, "samples": args.samples, "chains": args.chains},
        args.seed,
        ["mc_validate.csv"],
    )
    out = _out_dir(args)
    if out is not None:
        _write_csv(out / "mc_validate.csv", manifest, header, rows)
    print("validation:", "pass" if all_pass else "FAIL")
    return 0 if all_pass else 1


def cmd_equilibrium(args: argparse.Namespace) -> int:
    params = _load_params(args)
    report = dominance_report(params, n_grid=args.grid)
    manifest = _manifest(
        "equilibrium", {"params": params.__dict__, "grid": args.grid}, None, ["equilibrium.csv"]
    )
    out = _out_dir(args)
    rows = report.to_csv_rows()
    if out is None:
        _print_csv(manifest, DominanceReport.CSV_HEADER, rows)
    else:
        _write_csv(out / "equilibrium.csv", manifest, DominanceReport.CSV_HEADER, rows)
    am = report.am
    print(
        f"L_star={am.L_star!r} R_star={am.R_star!r} f_star={am.f_star!r} "
        f"f_opt={am.f_opt!r} L_max={am.L_max!r} ff_best_fee={am.ff_best_fee!r}"
    )
    print(f"proof_margin={report.proof_margin!r} dominated={report.dominated}")
    if report.flagged:
        print("note: best fixed fee is zero; strict dominance not asserted")
    return 0 if report.dominated else 1


def cmd_simulate(args: argparse.Namespace) -> int:
    raw = json.loads(Path(args.config_path).read_text(encoding="utf-8"))
    config = SimConfig.from_dict(raw)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = _out_dir(args)
    manifest = _manifest(
        "simulate", config.to_dict(), config.seed, ["report.json", "blocks.csv"]
    )
    if out is None:
        report = run_sim(config)
        payload = {"manifest": manifest, "report": report.to_dict()}
        print(json.dumps(payload, sort_keys=True, indent=2))
        return 0
    blocks_path = out / "blocks.csv"
    with open(blocks_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# manifest " + json.dumps(manifest, sort_keys=True) + "\n")
        report = run_sim(config, block_log=fh)
    payload = {"manifest": manifest, "report": report.to_dict()}
    (out / "report.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {out / 'report.json'} and {blocks_path}")
    return 0


def cmd_attack(args: argparse.Namespace) -> int:
    raw = json.loads(Path(args.config_path).read_text(encoding="utf-8"))
    config = SimConfig.from_dict(raw)
    report = run_strategic_withdrawal_attack(config)
    manifest = _manifest("attack", config.to_dict(), config.seed, ["attack.csv"])
    out = _out_dir(args)
    if out is None:
        _print_csv(manifest, report.CSV_HEADER, report.to_csv_rows())
    else:
        _write_csv(out / "attack.csv", manifest, report.CSV_HEADER, report.to_csv_rows())
    print(
        f"withdrawal_fee={report.fee_rate!r} max_net_gain={report.max_net_gain!r} "
        f"gain_at_cap={report.gain_at_cap!r}"
    )
    return 0 if report.max_net_gain <= 0.0 else 1


def cmd_replay(args: argparse.Namespace) -> int:
    trace = replay_auction(args.scenario_path)
    manifest = _manifest("replay", {"scenario": str(args.scenario_path)}, None, ["trace.csv"])
    out = _out_dir(args)
    if out is None:
        _print_csv(manifest, TRACE_HEADER, trace.to_csv_rows())
    else:
        _write_csv(out / "trace.csv", manifest, TRACE_HEADER, trace.to_csv_rows())
        (out / "final_state.json").write_text(trace.final_state_json + "\n", encoding="utf-8")
        print(f"wrote {out / 'trace.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ammauction",
        description="Auction-managed AMM toolkit: formulas, validation, equilibria, simulation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("formulas", help="closed-form rate table over a fee grid")
    _add_params_options(p)
    p.add_argument("--fees", help="comma-separated fee list (overrides --grid)")
    p.add_argument("--grid", type=int, default=64, help="fee grid size over [0, f_max]")
    p.add_argument("--liquidity", type=float, default=1.0, help="liquidity for the H0 column")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_formulas)

    p = sub.add_parser("mc-validate", help="Monte-Carlo check of the closed-form rates")
    _add_params_options(p)
    p.add_argument("--fees", help="comma-separated fee list (overrides --grid)")
    p.add_argument("--grid", type=int, default=5, help="fee grid size over [0, f_max]")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--chains", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--corrupt-closed-form", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_mc_validate)

    p = sub.add_parser("equilibrium", help="solve both designs and emit the dominance table")
    _add_params_options(p)
    p.add_argument("--grid", type=int, default=64, help="fee grid size for the comparison")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("simulate", help="run the block simulator from a JSON config")
    p.add_argument("config_path", metavar="CONFIG")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack", help="strategic-withdrawal sweep from a JSON config")
    p.add_argument("config_path", metavar="CONFIG")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("replay", help="replay an auction scenario file to a trace")
    p.add_argument("scenario_path", metavar="SCENARIO")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BracketError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ReplayParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
