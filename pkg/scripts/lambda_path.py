"""Selection along a lambda path on a high-dimensional M1 draw.

For each lambda prints the validation score, the number of selected columns,
how many of them are noise, and TOP10/TOP20.

    python scripts/lambda_path.py --p 100 --lambdas 0 1 3 10 30
"""

import argparse

from deeprank.cli import SimulateBlock, simulate_splits
from deeprank.data import standardize
from deeprank.metrics import top_k
from deeprank.network import NetworkArchitecture, first_layer_norms
from deeprank.train import TrainConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=int, default=100)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.1, 1.0, 3.0, 10.0, 30.0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    s = simulate_splits(SimulateBlock("M1", p=args.p, n_train=args.n, n_valid=args.n, n_test=2), args.seed)
    (train, valid), _ = standardize(s.train, s.valid)
    arch = NetworkArchitecture(args.p, (64, 32), 0.1)
    truth = set(s.truth)
    print(f"{'lambda':>8s} {'valid':>7s} {'selected':>8s} {'noise':>6s} {'top10':>6s} {'top20':>6s} {'epoch':>6s}")
    for lam in args.lambdas:
        res = fit(train, valid, arch, TrainConfig(lam=lam, seed=args.seed))
        norms = first_layer_norms(res.best_params)
        chosen = {q for q, _ in res.selected}
        score = res.history[res.best_epoch - 1]["valid_score"]
        print(f"{lam:8g} {score:7.4f} {len(chosen):8d} {len(chosen - truth):6d} "
              f"{top_k(norms, truth, 10):6d} {top_k(norms, truth, 20):6d} {res.best_epoch:6d}", flush=True)


if __name__ == "__main__":
    main()
