#!/usr/bin/env python3
"""Cost and Jain-index curves against each fairness threshold.

Generates the case fleet once, then calls ``fairv2v sweep`` for the hard,
soft and budget families, leaving one CSV per family in the output folder.
Axis ranges follow the plotted ranges; step sizes are our own choice.
"""
import argparse
from pathlib import Path

from fairv2v.cli import main as cli

SWEEPS = {
    "hard": ["--param", "zbar", "--points", "0.1:1.5:0.1"],
    "soft": ["--param", "zbar_c", "--points", "1:15:1"],
    "budget": ["--param", "theta", "--points", "0.25,0.5,1.0,1.5", "--param2", "budget", "--points2", "1,2,4,8"],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--case", choices=("residential", "shopping"), default="shopping")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--families", nargs="+", choices=list(SWEEPS), default=list(SWEEPS))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--solver", choices=("exact", "heuristic"), default="heuristic")
    ap.add_argument("--small", action="store_true", help="10 EVs on 12 two-hour slots, for a quick look")
    ap.add_argument("--outdir", default="results")
    args = ap.parse_args()

    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    scen = out / f"{args.case}_seed{args.seed}.json"
    gen = ["generate", "--case", args.case, "--seed", str(args.seed), "-o", str(scen)]
    if args.small:
        gen += ["--n-fixed", "5", "--n-random", "5", "--slot-hours", "2", "--slot-count", "12"]
    elif args.case == "shopping":
        gen += ["--n-fixed", "30", "--n-random", "70"]
    if cli(gen):
        raise SystemExit("scenario generation failed")
    for fam in args.families:
        csv_path = out / f"{args.case}_{fam}.csv"
        code = cli(["sweep", str(scen), *SWEEPS[fam], "--solver", args.solver, "--keep-going",
                    "--workers", str(args.workers), "-o", str(csv_path)])
        if code:
            raise SystemExit(f"{fam} sweep exited with {code}")


if __name__ == "__main__":
    main()
