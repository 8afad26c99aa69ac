"""Replicate study over the simulation designs: proposed estimator and baselines.

Prints one ``mean (sd)`` row per (model, method) and writes all rows to a
JSON file. Defaults are desk-sized; ``--replicates 100`` matches a full study.

    python scripts/replicate_study.py --models M1 M3 M5 --replicates 5 --jobs 4
"""

import argparse
import json
import time
from pathlib import Path

from deeprank.cli import config_from_dict, replicate

METHODS = {
    "proposed": {},
    "mrc-linear": {"arch": {"hidden_widths": [], "dropout_rate": 0.0},
                   "optimizer": {"learning_rate": 1e-2}},
    "nn-lse": {"train": {"loss": "lse"}},
    "nn-lad": {"train": {"loss": "lad"}},
    "nn-huber": {"train": {"loss": "huber"}},
    "nn-cauchy": {"train": {"loss": "cauchy"}},
}
CENSORED = {"M5", "M6"}
COLUMNS = ("rank", "mse", "lad", "cauchy", "huber")


def run(model, method, args):
    doc = {"simulate": {"model": model, "p": args.p, "n_train": args.n, "n_valid": args.n, "n_test": args.n},
           "replicates": args.replicates, "seed": args.seed}
    for block, values in METHODS[method].items():
        doc[block] = dict(values)
    return replicate(config_from_dict(doc), jobs=args.jobs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", nargs="+", default=["M1", "M2", "M3", "M4", "M5", "M6"])
    ap.add_argument("--methods", nargs="+", default=list(METHODS), choices=list(METHODS))
    ap.add_argument("--replicates", type=int, default=5)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--p", type=int, default=15)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="replicate_study.json")
    args = ap.parse_args()

    rows = []
    print(f"{'model':6s}{'method':12s}" + "".join(f"{c:>16s}" for c in COLUMNS))
    for model in args.models:
        for method in args.methods:
            if model in CENSORED and method not in ("proposed", "mrc-linear"):
                continue  # regression losses ignore censoring
            t0 = time.perf_counter()
            try:
                agg = run(model, method, args)["aggregate"]
            except Exception as exc:  # a diverging baseline is a result, keep going
                print(f"{model:6s}{method:12s}  failed: {exc}")
                rows.append({"model": model, "method": method, "error": str(exc)})
                continue
            cells = "".join(f"{agg[c]['mean']:>9.3f} ({agg[c]['sd']:.3f})" for c in COLUMNS)
            print(f"{model:6s}{method:12s}{cells}   {time.perf_counter() - t0:.0f}s", flush=True)
            rows.append({"model": model, "method": method, "aggregate": agg})
    Path(args.out).write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
