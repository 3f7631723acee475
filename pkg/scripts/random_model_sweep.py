"""Quadtree vs Flowtree success rates on the planted random sphere model.

    python3 scripts/random_model_sweep.py --d 10 --s 10 --eps 0.25 --trials 100
    python3 scripts/random_model_sweep.py --d 10 --s 100 --eps 0.4 --trials 100

Writes a CSV (N, quadtree_rate, flowtree_rate) and, with --plot, a PNG.
"""

import argparse
import time

from w1nns.synth import run_model_sweep, sweep_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=10)
    ap.add_argument("--s", type=int, default=10)
    ap.add_argument("--eps", type=float, default=0.25)
    ap.add_argument("--N", default="100,300,1000,3000,10000")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="random_model.csv")
    ap.add_argument("--plot", help="optional PNG path (needs matplotlib)")
    args = ap.parse_args()

    t0 = time.perf_counter()
    rows = run_model_sweep(args.d, args.s, args.eps, [int(n) for n in args.N.split(",")],
                           args.trials, args.seed)
    with open(args.out, "w") as fh:
        fh.write(sweep_csv(rows))
    for N, q, f in rows:
        print(f"N={N:>6}  quadtree={q:.2f}  flowtree={f:.2f}")
    print(f"{time.perf_counter() - t0:.1f}s -> {args.out}")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        Ns = [r[0] for r in rows]
        plt.semilogx(Ns, [r[1] for r in rows], "o-", label="Quadtree")
        plt.semilogx(Ns, [r[2] for r in rows], "s-", label="Flowtree")
        plt.xlabel("N")
        plt.ylabel("success rate")
        plt.ylim(-0.05, 1.05)
        plt.title(f"d={args.d}, s={args.s}, eps={args.eps}")
        plt.legend()
        plt.savefig(args.plot, dpi=120, bbox_inches="tight")


if __name__ == "__main__":
    main()
