"""Command line entry point: ``secmarket {run,sweep,verify-recovery,gas-report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness, maskrecovery
from .errors import MarketError
from .kernels import BACKEND

log = logging.getLogger("secmarket")


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    result = harness.run_session(cfg)
    out = harness.write_outputs(result, args.out)
    print(json.dumps(result.summary(), sort_keys=True))
    log.info("wrote %s", out)
    return 0


def cmd_sweep(args) -> int:
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    text = harness.sweep(cfg, args.param, args.values, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def cmd_verify(args) -> int:
    worst = 0.0
    import numpy as np

    rng = np.random.default_rng(args.seed)
    for trial in range(args.trials):
        n_clients = int(rng.integers(1, 9))
        n_L = int(rng.integers(1, 5))
        shapes = [(int(rng.integers(1, 33)),) for _ in range(int(rng.integers(1, 4)))]
        worst = max(worst, maskrecovery.verify(n_clients, n_L, shapes, int(rng.integers(2**31))))
    ok = worst <= 1e-9
    print(f"{args.trials} bundles, max relative error {worst:.3e}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_gas(args) -> int:
    rows = harness.gas_table(_ints(args.R), _ints(args.N), args.dim, args.mu, args.m)
    cols = ["R", "N", "Register", "PubKeyInteract", "ModelAggregate", "OutlierSuppression"]
    print(",".join(cols))
    for row in rows:
        print(",".join(str(row[c]) for c in cols))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="secmarket", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment session")
    run.add_argument("--config", default="defaults", help="preset name or key=value file")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default="runs/latest")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run one session per parameter value")
    sw.add_argument("--config", default="defaults")
    sw.add_argument("--param", required=True)
    sw.add_argument("--values", required=True, help="comma-separated list")
    sw.add_argument("--seed", type=int, default=None)
    sw.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    sw.set_defaults(func=cmd_sweep)

    vr = sub.add_parser("verify-recovery", help="check the encrypted-gradient recovery identity")
    vr.add_argument("--seed", type=int, default=0)
    vr.add_argument("--trials", type=int, default=100)
    vr.set_defaults(func=cmd_verify)

    gr = sub.add_parser("gas-report", help="metered contract work per phase")
    gr.add_argument("--R", default="4,6,8")
    gr.add_argument("--N", default="4")
    gr.add_argument("--dim", type=int, default=64)
    gr.add_argument("--mu", type=float, default=0.0)
    gr.add_argument("--m", type=int, default=1)
    gr.set_defaults(func=cmd_gas)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("kernel backend: %s", BACKEND)
    try:
        return args.func(args)
    except MarketError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
