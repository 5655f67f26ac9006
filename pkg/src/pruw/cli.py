"""Command-line front end.

    pruw run    --config C --out DIR   setup + rounds; transcript, costs, verification
    pruw audit  --config C --out DIR   privacy audits and their negative controls
    pruw costs  --config C             closed-form cost table over an r / r' grid
    pruw verify --config C --transcript T   replay and compare a transcript

Exit status 0 means every check passed.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from .audit import AuditConfig, UnderpoweredAudit, run_all
from .config import load_config
from .coordinator import dump_setup
from .orchestrator import cost_report_csv, run_config, verification_csv
from .params import (InvalidParams, Sabotage, as_fraction, baseline_cost, theoretical_read_cost,
                     theoretical_write_cost)

log = logging.getLogger("pruw")

TRANSCRIPT = "transcript.jsonl"
COSTS = "costs.csv"
VERIFICATION = "verification.csv"
AUDIT = "audit.csv"


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _fail_config(exc: InvalidParams) -> int:
    print("invalid configuration:", file=sys.stderr)
    for v in exc.violations:
        print(f"  - {v}", file=sys.stderr)
    return 2


def cmd_run(args) -> int:
    try:
        cfg = _load(args)
        result = run_config(cfg, Sabotage(args.sabotage))
    except InvalidParams as exc:
        return _fail_config(exc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = result.simulation
    (out / TRANSCRIPT).write_text(sim.transcript.to_jsonl())
    (out / COSTS).write_text(cost_report_csv(result.reports))
    (out / VERIFICATION).write_text(verification_csv(result.verifications))
    if args.dump_setup:
        dump_setup(sim.databases, out / "setup.json")
    status = "ok" if result.ok else "FAILED"
    print(f"{cfg.rounds} rounds, {len(sim.transcript)} messages, verification {status}")
    return 0 if result.ok else 1


def cmd_audit(args) -> int:
    try:
        cfg = _load(args)
    except InvalidParams as exc:
        return _fail_config(exc)
    acfg = AuditConfig(q=cfg.q, M=cfg.M, P=cfg.P, ell=cfg.derived_ell, r=cfg.r,
                       trials=args.trials or cfg.trials, seed=cfg.seed,
                       sabotage=Sabotage(args.sabotage))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UnderpoweredAudit)
        report = run_all(acfg, args.mode)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    for msg in report.warnings:
        if not any(str(w.message) == msg for w in caught):
            print(f"warning: {msg}", file=sys.stderr)
    if not any(c.mode == "exhaustive" for c in report.checks):
        print("warning: configuration too large for exhaustive audits; statistical only", file=sys.stderr)
    text = report.to_csv()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / AUDIT).write_text(text)
    sys.stdout.write(text)
    return 0 if report.ok else 1


def _grid(text: str):
    return [as_fraction(x) for x in text.split(",") if x.strip()]


def cmd_costs(args) -> int:
    try:
        p = _load(args).params()
    except InvalidParams as exc:
        return _fail_config(exc)
    base = baseline_cost(p.N)
    lines = ["r,r_prime,C_R,C_W,C_T,baseline_C_R,baseline_C_W,baseline_C_T"]
    for r in _grid(args.r_grid):
        for rp in _grid(args.r_prime_grid):
            cr, cw = theoretical_read_cost(p, rp), theoretical_write_cost(p, r)
            row = [r, rp, cr, cw, cr + cw, base, base, 2 * base]
            lines.append(",".join(f"{float(x):.6g}" for x in row))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_verify(args) -> int:
    try:
        cfg = _load(args)
        result = run_config(cfg, Sabotage(args.sabotage))
    except InvalidParams as exc:
        return _fail_config(exc)
    recorded = Path(args.transcript).read_text()
    replay = result.simulation.transcript.to_jsonl()
    same = recorded == replay
    if not same:
        a, b = recorded.splitlines(), replay.splitlines()
        first = next((i for i, (x, y) in enumerate(zip(a, b)) if x != y), min(len(a), len(b)))
        print(f"transcript differs from replay at line {first + 1}", file=sys.stderr)
    print(f"transcript {'matches' if same else 'DIFFERS'}; verification {'ok' if result.ok else 'FAILED'}")
    return 0 if same and result.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pruw", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sabotage = [s.value for s in Sabotage]

    def common(p, out_required=False):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--sabotage", choices=sabotage, default="none")
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("run", help="simulate and verify")
    common(p, out_required=True)
    p.add_argument("--dump-setup", action="store_true", help="also write setup.json (no permutation)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("audit", help="privacy audits")
    common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--mode", choices=["auto", "exhaustive", "statistical"], default="auto")
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("costs", help="closed-form cost table")
    common(p)
    p.add_argument("--r-grid", default="0,0.2,0.4,0.6,0.8,1")
    p.add_argument("--r-prime-grid", default="0,0.2,0.4,0.6,0.8,1")
    p.set_defaults(fn=cmd_costs)

    p = sub.add_parser("verify", help="replay a run and compare its transcript")
    common(p)
    p.add_argument("--transcript", required=True)
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
