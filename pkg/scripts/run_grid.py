"""Run the correctness grid and print one line per configuration.

    python scripts/run_grid.py [--rounds 3] [--writers 3]

Every configuration is decoded through the private reading path after each
round and compared symbol by symbol with the plaintext oracle.
"""

import argparse
import itertools
import sys
import time
from fractions import Fraction

from pruw.config import parse_config
from pruw.orchestrator import run_config


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rounds", type=int, default=3)
    ap.add_argument("--writers", type=int, default=3)
    ap.add_argument("--q", type=int, default=2053)
    args = ap.parse_args()

    start = time.perf_counter()
    failed = 0
    print("N,M,P,r,rounds,verified,costs_within_bounds")
    for ell, M, P, r in itertools.product((1, 2, 3), (2, 3), (5, 8), ("1/5", "2/5")):
        writes = round(P * Fraction(r))
        cfg = parse_config(dict(schema_version=1, N=4 * ell + 2, M=M, P=P, q=args.q, r=f"{writes}/{P}",
                                seed=1000 * ell + 100 * M + 10 * P + writes, rounds=args.rounds,
                                writers_per_round=args.writers))
        res = run_config(cfg)
        verified = all(v.ok for v in res.verifications)
        bounded = all(rep.within_bounds() for rep in res.reports)
        failed += not (verified and bounded)
        print(f"{cfg.N},{M},{P},{writes}/{P},{args.rounds},{int(verified)},{int(bounded)}")
    print(f"# {time.perf_counter() - start:.2f}s, {failed} failing", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
