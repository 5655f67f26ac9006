"""Measured versus closed-form per-user costs over a grid of uplink rates.

    python scripts/cost_sweep.py [--q 17 --P 17] [--N 6,10,14] [--rounds 3]

One writer per round touches P·r subpackets, so from round 2 on the
downlink rate r' equals r. Rows report the last round's measured costs
(whole-symbol wire count), the closed forms, and the baseline 2/(1-2/N).
With P a power of q the two agree exactly.
"""

import argparse
import sys

from pruw.client import SparseUpdate
from pruw.field import PrimeField
from pruw.orchestrator import RoundPlan, Simulation
from pruw.params import SystemParams, baseline_cost
from pruw.rng import stream


def sweep(N: int, P: int, q: int, rounds: int, seed: int):
    fld = PrimeField(q)
    for k in range(0, P + 1):
        p = SystemParams.build(N=N, M=2, P=P, q=q, r=f"{k}/{P}", seed=seed)
        sim = Simulation(p, fld.random(stream(seed, "sweep", N, k), (p.M, p.P, p.ell)))
        writer = sim.add_client(1)
        rng = stream(seed, "sweep-updates", N, k)
        for t in range(1, rounds + 1):
            B = sorted(int(x) + 1 for x in rng.choice(P, k, replace=False))
            upd = SparseUpdate.from_dict(P, p.ell, {b: fld.random_nonzero(rng, p.ell) for b in B})
            rep = sim.run_round(RoundPlan(t, [(writer, upd)], []))
        yield p, rep


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--q", type=int, default=17)
    ap.add_argument("--P", type=int, default=17)
    ap.add_argument("--N", default="6,10,14", help="comma-separated database counts")
    ap.add_argument("--rounds", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print("N,r,r_prime,C_R,C_R_theory,C_W,C_W_theory,C_T,baseline_C_T")
    for N in (int(x) for x in args.N.split(",")):
        for p, rep in sweep(N, args.P, args.q, args.rounds, args.seed):
            (mr, mw, mt), (tr, tw, _) = rep.measured, rep.theoretical
            row = [p.r, rep.r_prime, mr, tr, mw, tw, mt, 2 * baseline_cost(N)]
            print(f"{N}," + ",".join(f"{float(x):.6g}" for x in row))
    return 0


if __name__ == "__main__":
    sys.exit(main())
