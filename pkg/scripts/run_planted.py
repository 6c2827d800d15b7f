"""Train on a planted dataset and report training and held-out metrics.

    python3 scripts/run_planted.py --seed 0 --preset voc
"""

import argparse
import time

from dsdl.data import synth_generate
from dsdl.model import PRESETS, Hyper, apus_train, architecture_for, evaluate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--c", type=int, default=8)
    ap.add_argument("--n", type=int, default=512)
    ap.add_argument("--n-holdout", type=int, default=128)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--preset", choices=sorted(PRESETS), default="voc")
    ap.add_argument("--feature", choices=["mlp", "passthrough"], default="mlp")
    args = ap.parse_args()

    planted = synth_generate(args.d, args.c, args.n, args.seed, args.noise, n_holdout=args.n_holdout)
    hyper = Hyper(seed=args.seed, **PRESETS[args.preset])
    start = time.perf_counter()
    ck = apus_train(planted.train, hyper=hyper, arch=architecture_for(planted.train, feature=args.feature))
    print(f"trained {hyper.epochs} epochs in {time.perf_counter() - start:.2f}s")
    for name, split in (("train", planted.train), ("held-out", planted.test)):
        report = evaluate(ck, split)
        print(f"\n== {name} ==")
        print(report.to_table())


if __name__ == "__main__":
    main()
