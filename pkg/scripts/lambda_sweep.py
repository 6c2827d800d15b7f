"""Sweep the ridge weight lambda on a planted dataset and print mAP per value.

    python3 scripts/lambda_sweep.py --lams 1e-3 0.1 1 10 100 1e4
"""

import argparse

from dsdl.data import synth_generate
from dsdl.model import DivergenceError, Hyper, apus_train, architecture_for, evaluate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lams", type=float, nargs="+", default=[1e-3, 1e-1, 1.0, 10.0, 100.0, 1e4, 1e5])
    ap.add_argument("--beta", type=float, default=1e-4)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    planted = synth_generate(64, 8, 512, args.seed, 0.05, n_holdout=128)
    arch = architecture_for(planted.train)
    print(f"{'lambda':>10s}  {'train mAP':>9s}  {'held-out':>9s}")
    for lam in args.lams:
        try:
            ck = apus_train(planted.train, hyper=Hyper(lam=lam, beta=args.beta, epochs=args.epochs,
                                                       seed=args.seed), arch=arch)
        except DivergenceError as exc:
            print(f"{lam:10.3g}  diverged ({exc})")
            continue
        tr, te = evaluate(ck, planted.train).map, evaluate(ck, planted.test).map
        print(f"{lam:10.3g}  {tr:9.4f}  {te:9.4f}")


if __name__ == "__main__":
    main()
