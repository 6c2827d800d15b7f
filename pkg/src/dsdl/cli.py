"""Command line: ``dsdl {train,eval,predict,synth,gradcheck}``.

Settings resolve as defaults < ``--preset`` < ``--config`` file < flags.
The config file is flat ``key = value`` text; unknown keys are errors.

Exit codes: 0 success, 1 usage/config error, 2 numerical divergence,
3 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import data as io
from .metrics import assign_threshold, metric_report
from .model import PRESETS, Architecture, DivergenceError, Hyper, apus_train, toy_gradcheck

log = logging.getLogger("dsdl")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # hyper-parameters
    lam: float = 10.0
    beta: float = 1e-4
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    grad_mode: str = "full"
    sim_floor: float = 1e-3
    lr_step: int = 40
    lr_gamma: float = 0.1
    # architecture
    feature: str = "mlp"
    feature_hidden: int = 64
    dict_dim: int = 0  # 0: same as the input feature dimension
    ae_hidden: int = 32
    # paths
    features: str = ""
    labels: str = ""
    embeddings: str = ""
    checkpoint: str = ""
    report: str = ""
    curve: str = ""
    out: str = ""
    # evaluation
    topk: int = 3
    ap_mode: str = "all_points"
    # synthetic data
    d: int = 64
    c: int = 8
    n: int = 512
    n_holdout: int = 128
    k: int = 16
    noise: float = 0.05

    def hyper(self) -> Hyper:
        names = {f.name for f in fields(Hyper)}
        return Hyper(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(self).items())


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    t = _FIELDS[key].type
    try:
        if t in (int, "int"):
            return int(raw)
        if t in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for key {key!r}") from None
    return raw.strip()


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip()
        out[key] = val.strip() if key == "preset" else _convert(key, val.strip())
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    file_vals = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        file_vals = parse_config_text(text, args.config)
    preset = args.preset or file_vals.pop("preset", None)
    file_vals.pop("preset", None)
    values = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r} (choose from {', '.join(PRESETS)})")
        values.update(PRESETS[preset])
    values.update(file_vals)
    for key in _FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = _convert(key, str(flag))
    cfg = RunConfig(**values)
    try:
        cfg.hyper()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.ap_mode not in ("all_points", "eleven_point"):
        raise ConfigError(f"ap_mode must be all_points or eleven_point, got {cfg.ap_mode!r}")
    return cfg


def _require(cfg: RunConfig, *keys: str) -> None:
    for key in keys:
        if not getattr(cfg, key):
            raise ConfigError(f"missing required key {key!r}")


def _snapshot(cfg: RunConfig, path: Path) -> None:
    io.atomic_write_text(path, cfg.dump())


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "features", "labels", "embeddings", "checkpoint")
    dataset = io.load_dataset(cfg.features, cfg.labels, cfg.embeddings)
    in_dim = dataset.X.shape[0]
    try:
        arch = Architecture(feature=cfg.feature, in_dim=in_dim, feature_hidden=cfg.feature_hidden,
                            d=cfg.dict_dim or in_dim, k=dataset.semantic.embedding_dim,
                            ae_hidden=cfg.ae_hidden)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    log.info("training on %d samples, %d classes", dataset.num_samples, dataset.semantic.num_classes)
    if dataset.empty_label_count:
        log.warning("%d samples have no positive labels", dataset.empty_label_count)
    ckpt = apus_train(dataset, hyper=cfg.hyper(), arch=arch)
    out = io.save_checkpoint(ckpt, cfg.checkpoint)
    io.write_curve(ckpt.history, cfg.curve or out / "curve.csv")
    _snapshot(cfg, out / "config.txt")
    if ckpt.history:
        log.info("final epoch L_total %.6f", ckpt.history[-1][-1])
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    _require(cfg, "checkpoint", "features", "labels")
    ckpt = io.load_checkpoint(cfg.checkpoint)
    Y, _ = io.load_labels(cfg.labels, ckpt.class_names)
    X = io.load_features(cfg.features)
    if Y.shape[1] != X.shape[1]:
        raise io.DataError(f"{X.shape[1]} feature rows but {Y.shape[1]} label rows")
    report = metric_report(ckpt.predict(X), Y, ckpt.class_names, topk=cfg.topk,
                           eleven_point=cfg.ap_mode == "eleven_point")
    print(report.to_table())
    if cfg.report:
        io.atomic_write_text(cfg.report, report.to_csv())
        _snapshot(cfg, Path(f"{cfg.report}.config.txt"))
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    _require(cfg, "checkpoint", "features", "out")
    ckpt = io.load_checkpoint(cfg.checkpoint)
    X = io.load_features(cfg.features)
    probs = ckpt.predict(X)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_fmat(probs.T, out / "probs.fmat")
    ids = [str(i) for i in range(X.shape[1])]
    if cfg.labels:
        ids = io.load_labels(cfg.labels)[1]
    io.save_labels(assign_threshold(probs), ids, ckpt.class_names, out / "predicted_labels.csv")
    _snapshot(cfg, out / "config.txt")
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    _require(cfg, "out")
    try:
        planted = io.synth_generate(cfg.d, cfg.c, cfg.n, cfg.seed, cfg.noise, k=cfg.k,
                                    n_holdout=cfg.n_holdout)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    paths = io.write_planted(planted, cfg.out)
    _snapshot(cfg, Path(cfg.out) / "config.txt")
    for name, path in paths.items():
        log.info("wrote %s: %s", name, path)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    report = toy_gradcheck(seed=cfg.seed, grad_mode=cfg.grad_mode)
    print("\n".join(report.lines()))
    return EXIT_OK if report.passed else EXIT_DIVERGED


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsdl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value file")
        p.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
        p.add_argument("-v", "--verbose", action="store_true")
        for key in _FIELDS:
            p.add_argument(f"--{key}", dest=key, default=None, metavar="VALUE")
            if "_" in key:
                p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                               help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)
    try:
        cfg = resolve_config(args)
        log.info("resolved config:\n%s", cfg.dump().rstrip())
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except DivergenceError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    except (OSError, io.DataError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
