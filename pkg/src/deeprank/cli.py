"""Command-line driver: simulate, train, evaluate, select, replicate.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import (
    DataError,
    Dataset,
    SimSpec,
    Standardizer,
    gen_model,
    load_csv,
    save_csv,
    split,
    standardize,
)
from .loss import BaselineLossSpec
from .metrics import MetricsReport, aggregate, c_index, classification_error, prediction_losses, spearman, top_k
from .network import NetworkArchitecture, first_layer_norms, load_checkpoint, save_checkpoint
from .optim import OptimizerConfig
from .surrogate import Surrogate
from .train import (
    FitResult,
    NumericalError,
    TrainConfig,
    classification_threshold,
    fit,
    predict_scores,
    select_variables,
    tune,
)

log = logging.getLogger("deeprank")

SEED_STRIDE = 10007
RANK_LOSSES = ("drelu-rank", "rank-exact-eval")
LOSSES = RANK_LOSSES + ("lse", "lad", "huber", "cauchy")


class ConfigError(ValueError):
    """Invalid run configuration or command-line usage."""


# -- run configuration -----------------------------------------------------------


@dataclass
class DataBlock:
    train: str
    valid: str | None = None
    test: str | None = None
    truth: str | None = None  # sidecar JSON written by ``simulate``
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)


@dataclass
class SimulateBlock:
    model: str = "M1"
    p: int = 15
    rho: float = 0.3
    error: str | None = None
    n_train: int = 1000
    n_valid: int = 1000
    n_test: int = 1000


@dataclass
class ArchBlock:
    hidden_widths: tuple[int, ...] = (64, 32)
    dropout_rate: float = 0.1


@dataclass
class TrainBlock:
    loss: str = "drelu-rank"
    surrogate: str = "drelu"
    omega: float = 2.0
    relative_omega: bool = True
    lam: float = 0.0
    batch_size: int = 100
    max_epochs: int = 200
    omega_grid: list[float] | None = None
    lambda_grid: list[float] | None = None


@dataclass
class MetricsBlock:
    top_k: tuple[int, ...] = (10, 20)


@dataclass
class RunConfig:
    data: DataBlock | None = None
    simulate: SimulateBlock | None = None
    standardize: bool = True
    arch: ArchBlock = field(default_factory=ArchBlock)
    train: TrainBlock = field(default_factory=TrainBlock)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    metrics: MetricsBlock = field(default_factory=MetricsBlock)
    output_dir: str = "runs"
    seed: int = 0
    replicates: int = 1

    def validate(self) -> "RunConfig":
        if (self.data is None) == (self.simulate is None):
            raise ConfigError("config needs exactly one of 'data' or 'simulate'")
        if self.train.loss not in LOSSES:
            raise ConfigError(f"train.loss must be one of {', '.join(LOSSES)}; got {self.train.loss!r}")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        try:
            if self.simulate is not None:
                s = self.simulate
                SimSpec(s.model, n=s.n_train, p=s.p, rho=s.rho, error=s.error, seed=self.seed)
                if min(s.n_train, s.n_valid, s.n_test) < 2:
                    raise ConfigError("simulate sizes must be at least 2")
            self.train_config(self.seed)
            self.architecture(1)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def architecture(self, input_dim: int) -> NetworkArchitecture:
        return NetworkArchitecture(input_dim, tuple(self.arch.hidden_widths), self.arch.dropout_rate)

    def train_config(self, seed: int) -> TrainConfig:
        t = self.train
        loss = "rank" if t.loss in RANK_LOSSES else BaselineLossSpec(t.loss)
        return TrainConfig(
            surrogate=Surrogate(t.surrogate, t.omega),
            relative_omega=t.relative_omega,
            lam=t.lam,
            batch_size=t.batch_size,
            max_epochs=t.max_epochs,
            optimizer=self.optimizer,
            seed=seed,
            loss=loss,
        )

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


_BLOCKS = {"data": DataBlock, "simulate": SimulateBlock, "arch": ArchBlock, "train": TrainBlock,
           "optimizer": OptimizerConfig, "metrics": MetricsBlock}
_TUPLE_FIELDS = {"split", "hidden_widths", "top_k"}


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kw = {k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v for k, v in doc.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    kw = {}
    for key, value in doc.items():
        if key in _BLOCKS:
            if key == "data" and isinstance(value, str):
                value = {"train": value}
            kw[key] = None if value is None else _build(_BLOCKS[key], value, key)
        else:
            kw[key] = value
    return _build(RunConfig, kw, "config").validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return config_from_dict(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


# -- data assembly ---------------------------------------------------------------


@dataclass
class Splits:
    train: Dataset
    valid: Dataset
    test: Dataset | None
    truth: tuple[int, ...] | None
    standardizer: Standardizer | None
    censoring: float | None = None


def simulate_splits(block: SimulateBlock, seed: int) -> Splits:
    """One draw of ``n_train + n_valid + n_test`` rows, cut in that order."""
    n = block.n_train + block.n_valid + block.n_test
    ds = gen_model(SimSpec(block.model, n=n, p=block.p, rho=block.rho, error=block.error, seed=seed))
    a, b = block.n_train, block.n_train + block.n_valid
    parts = [ds.subset(np.arange(lo, hi)) for lo, hi in ((0, a), (a, b), (b, n))]
    censoring = None if ds.delta is None else float(1.0 - ds.delta.mean())
    return Splits(*parts, truth=ds.truth.important, standardizer=None, censoring=censoring)


def _read_truth(path) -> tuple[int, ...]:
    try:
        doc = json.loads(Path(path).read_text())
        return tuple(int(q) for q in doc["important"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read truth sidecar {path}: {exc}") from None


def _read_csv(path) -> Dataset:
    try:
        return load_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def data_splits(block: DataBlock, seed: int) -> Splits:
    train = _read_csv(block.train)
    if block.valid is None:
        train, valid, test = split(train, block.split, seed)
    else:
        valid = _read_csv(block.valid)
        test = _read_csv(block.test) if block.test else None
    for other in (valid, test):
        if other is not None and other.names != train.names:
            raise DataError("train/valid/test column names differ")
    truth = _read_truth(block.truth) if block.truth else None
    return Splits(train, valid, test, truth, None)


def prepare(cfg: RunConfig, seed: int) -> Splits:
    s = simulate_splits(cfg.simulate, seed) if cfg.simulate else data_splits(cfg.data, seed)
    if cfg.standardize:
        others = [d for d in (s.valid, s.test) if d is not None]
        out, st = standardize(s.train, *others)
        s = replace(s, train=out[0], valid=out[1], test=out[2] if s.test is not None else None,
                    standardizer=st)
    return s


# -- fitting and evaluation ------------------------------------------------------


def run_fit(cfg: RunConfig, splits: Splits, seed: int):
    """Fit (or tune when grids are given); returns ``(FitResult, tune table or None)``."""
    arch = cfg.architecture(splits.train.p)
    tc = cfg.train_config(seed)
    t = cfg.train
    if t.omega_grid is None and t.lambda_grid is None:
        return fit(splits.train, splits.valid, arch, tc), None
    out = tune(splits.train, splits.valid, arch, tc,
               omegas=t.omega_grid or [t.omega], lambdas=t.lambda_grid or [t.lam])
    return out.result, out.table


def _is_binary(y) -> bool:
    return bool(np.all((y == 0) | (y == 1))) and np.unique(y).size == 2


def evaluate_dataset(scores, yhat, ds: Dataset, norms=None, truth=None, ks=(), threshold=None) -> MetricsReport:
    """Metrics on one dataset; losses use event rows only when ``delta`` is present."""
    keep = np.ones(ds.n, dtype=bool) if ds.delta is None else ds.delta == 1
    mse, lad, cauchy, huber = prediction_losses(ds.y[keep], yhat[keep])
    rep = MetricsReport(mse=mse, lad=lad, cauchy=cauchy, huber=huber, n_test=ds.n)
    if ds.delta is not None:
        rep.c_index = c_index(ds.y, ds.delta, scores)
    else:
        rep.spearman = spearman(ds.y, scores)
    if norms is not None and truth is not None:
        rep.top_k = {k: top_k(norms, truth, k) for k in ks if k <= len(norms)}
    if threshold is not None and _is_binary(ds.y):
        rep.classification_error = classification_error(ds.y, scores, threshold)
    return rep


def replicate_once(cfg: RunConfig, r: int) -> dict:
    """Generate, fit and evaluate replicate ``r``; a flat dict of numbers."""
    seed = cfg.seed + r * SEED_STRIDE
    try:
        s = prepare(cfg, seed)
        res, _ = run_fit(cfg, s, seed)
    except NumericalError as exc:
        raise NumericalError(f"replicate {r} (seed {seed}): {exc}") from None
    except ValueError as exc:
        raise DataError(f"replicate {r} (seed {seed}): {exc}") from None
    test = s.test if s.test is not None else s.valid
    norms = first_layer_norms(res.best_params)
    rep = evaluate_dataset(predict_scores(res, test.X), res.predict(test.X), test, norms, s.truth,
                           cfg.metrics.top_k)
    row = {"replicate": r, "seed": seed, **rep.to_dict(),
           "selected": len(res.selected), "best_epoch": res.best_epoch,
           "lambda": res.config.lam, "omega": res.config.surrogate.omega}
    if s.truth is not None:
        row["noise_selected"] = len({q for q, _ in res.selected} - set(s.truth))
    if s.censoring is not None:
        row["censoring"] = s.censoring
    return row


def replicate(cfg: RunConfig, jobs: int = 1) -> dict:
    """All replicates then the mean (sd) aggregate; output depends only on ``cfg``."""
    rs = range(cfg.replicates)
    if jobs > 1 and cfg.replicates > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(replicate_once, [cfg] * cfg.replicates, rs))
    else:
        rows = [replicate_once(cfg, r) for r in rs]
    skip = {"replicate", "seed"}
    agg = aggregate([{k: v for k, v in row.items() if k not in skip} for row in rows])
    return {"config": cfg.to_dict(), "aggregate": agg, "replicates": rows}


# -- commands --------------------------------------------------------------------


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def cmd_simulate(args) -> int:
    spec = SimSpec(args.model, n=args.n, p=args.p, rho=args.rho, error=args.error, seed=args.seed)
    ds = gen_model(spec)
    out = Path(args.out) if args.out else Path(args.out_dir) / f"{spec.model}_n{spec.n}_p{spec.p}_s{spec.seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(ds, out)
    _write_json(out.with_suffix(".truth.json"), {
        "important": list(ds.truth.important), "model": spec.model, "seed": spec.seed,
        "n": spec.n, "p": spec.p, "rho": spec.rho, "error": spec.error_kind,
    })
    print(out)
    return 0


def _selection_doc(selected, names):
    return [{"index": q, "name": names[q], "norm": norm} for q, norm in selected]


def cmd_train(args, cfg: RunConfig) -> int:
    s = prepare(cfg, cfg.seed)
    try:
        res, table = run_fit(cfg, s, cfg.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out = Path(cfg.output_dir)
    names = list(s.train.names)
    extra = {
        "calibration": list(res.calibration),
        "names": names,
        "omega": res.omega,
        "lambda": res.config.lam,
        "loss": cfg.train.loss,
        "best_epoch": res.best_epoch,
    }
    if s.standardizer is not None:
        extra["standardizer"] = {"mean": s.standardizer.mean.tolist(), "scale": s.standardizer.scale.tolist()}
    if _is_binary(s.train.y):
        extra["threshold"] = classification_threshold(predict_scores(res, s.train.X), s.train.y)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.json", res.arch, res.best_params, seed=cfg.seed, **extra)
    _write_json(out / "history.json", res.history)
    _write_json(out / "selection.json", _selection_doc(res.selected, names))
    if table is not None:
        _write_json(out / "tune.json", table)
    _write_json(out / "config.json", cfg.to_dict())
    last = res.history[res.best_epoch - 1]
    print(f"best epoch {res.best_epoch}/{res.epochs_run}  valid {last['valid_score']:.4f}  "
          f"selected {len(res.selected)}/{s.train.p}  -> {out}")
    return 0


def _checkpoint(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"bad checkpoint {path}: {exc}") from None


def cmd_evaluate(args) -> int:
    arch, params, doc = _checkpoint(args.checkpoint)
    ds = _read_csv(args.data)
    if ds.p != arch.input_dim:
        raise DataError(f"checkpoint expects {arch.input_dim} columns, data has {ds.p}")
    if "standardizer" in doc:
        st = doc["standardizer"]
        ds = Standardizer(np.array(st["mean"]), np.array(st["scale"])).transform(ds)
    res = FitResult(arch, params, doc.get("best_epoch", 0), 0, [], tuple(doc.get("calibration", (1.0, 0.0))),
                    [], doc.get("omega"), TrainConfig())
    truth = _read_truth(args.truth) if args.truth else None
    rep = evaluate_dataset(predict_scores(res, ds.X), res.predict(ds.X), ds, first_layer_norms(params),
                           truth, tuple(args.top_k), doc.get("threshold"))
    body = rep.to_dict()
    if args.out:
        _write_json(Path(args.out), body)
    print(json.dumps(body, indent=1, sort_keys=True))
    return 0


def cmd_select(args) -> int:
    arch, params, doc = _checkpoint(args.checkpoint)
    names = doc.get("names") or [f"x{j + 1}" for j in range(arch.input_dim)]
    body = _selection_doc(select_variables(params, all_columns=args.all), names)
    if args.out:
        _write_json(Path(args.out), body)
    print(json.dumps(body, indent=1))
    return 0


def cmd_replicate(args, cfg: RunConfig) -> int:
    if cfg.simulate is None:
        raise ConfigError("replicate needs a 'simulate' block")
    body = replicate(cfg, jobs=args.jobs)
    out = Path(cfg.output_dir) / "replicate.json"
    _write_json(out, body)
    for k, v in body["aggregate"].items():
        print(f"{k:>16s}  {v['mean']:.4f} ({v['sd']:.4f})")
    print(f"-> {out}")
    return 0


# -- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


GLOBAL_DEFAULTS = {"config": None, "seed": None, "jobs": 1, "out_dir": None, "verbose": False}


def _global_flags(p):
    # SUPPRESS keeps a subcommand's parser from resetting flags given before it
    sup = argparse.SUPPRESS
    p.add_argument("--config", default=sup, help="run configuration JSON")
    p.add_argument("--seed", type=int, default=sup, help="base seed")
    p.add_argument("--jobs", type=int, default=sup, help="parallel replicates")
    p.add_argument("--out-dir", default=sup, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=sup)


def _train_flags(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", help="training CSV (split into train/valid/test unless --valid is given)")
    g.add_argument("--valid", help="validation CSV")
    g.add_argument("--test", help="test CSV")
    g.add_argument("--truth", help="truth sidecar JSON")
    g.add_argument("--model", help="simulate instead of reading CSV")
    g.add_argument("--p", type=int)
    g.add_argument("--n", type=int, help="rows per simulated split")
    g.add_argument("--error", choices=["normal", "contaminated"])
    g.add_argument("--no-standardize", action="store_true")
    g = p.add_argument_group("model")
    g.add_argument("--hidden", type=int, nargs="*", help="hidden widths (none for a linear index)")
    g.add_argument("--dropout", type=float)
    g.add_argument("--loss", choices=LOSSES)
    g.add_argument("--surrogate", choices=["drelu", "sigmoid", "gausscdf"])
    g.add_argument("--omega", type=float)
    g.add_argument("--absolute-omega", action="store_true", help="do not scale omega by the initial score sd")
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--omega-grid", type=float, nargs="+")
    g.add_argument("--lambda-grid", type=float, nargs="+")
    g.add_argument("--batch-size", type=int)
    g.add_argument("--epochs", type=int)
    g = p.add_argument_group("optimizer")
    g.add_argument("--lr", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--patience", type=int)
    g.add_argument("--lr-decay", type=float)
    g.add_argument("--lr-decay-every", type=int)
    p.add_argument("--replicates", type=int)


def build_parser() -> argparse.ArgumentParser:
    parent = _Parser(add_help=False)
    _global_flags(parent)
    parser = _Parser(prog="deeprank", description="Rank-based deep transformation models.", parents=[parent])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[parent], help="write a simulated dataset")
    p.add_argument("--model", default="M1")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--p", type=int, default=15)
    p.add_argument("--rho", type=float, default=0.3)
    p.add_argument("--error", choices=["normal", "contaminated"])
    p.add_argument("--out", help="CSV path")

    p = sub.add_parser("train", parents=[parent], help="fit one model (or tune over grids)")
    _train_flags(p)
    p = sub.add_parser("replicate", parents=[parent], help="repeat simulate/fit/evaluate and aggregate")
    _train_flags(p)

    p = sub.add_parser("evaluate", parents=[parent], help="metrics of a checkpoint on a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--truth")
    p.add_argument("--top-k", type=int, nargs="*", default=[10, 20])
    p.add_argument("--out")

    p = sub.add_parser("select", parents=[parent], help="selected columns of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--all", action="store_true", help="rank every column, zero norm included")
    p.add_argument("--out")
    return parser


def _override(obj, **kw):
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(obj, **kw) if kw else obj


def resolve_config(args) -> RunConfig:
    """Config file (if any) with command-line flags layered on top."""
    if args.config:
        cfg = load_config(args.config)
        doc = cfg.to_dict()
    else:
        doc = {}
    if args.data or args.model:
        if args.data and args.model:
            raise ConfigError("give either --data or --model, not both")
        doc.pop("data", None)
        doc.pop("simulate", None)
        if args.data:
            doc["data"] = {"train": args.data, "valid": args.valid, "test": args.test, "truth": args.truth}
        else:
            sim = {"model": args.model}
            if args.p is not None:
                sim["p"] = args.p
            if args.error is not None:
                sim["error"] = args.error
            if args.n is not None:
                sim.update(n_train=args.n, n_valid=args.n, n_test=args.n)
            doc["simulate"] = sim
    try:
        cfg = config_from_dict(doc)
        opt = _override(cfg.optimizer, learning_rate=args.lr, weight_decay=args.weight_decay,
                        patience=args.patience, lr_decay_factor=args.lr_decay,
                        lr_decay_every=args.lr_decay_every)
        train = _override(cfg.train, loss=args.loss, surrogate=args.surrogate, omega=args.omega,
                          lam=args.lam, omega_grid=args.omega_grid, lambda_grid=args.lambda_grid,
                          batch_size=args.batch_size, max_epochs=args.epochs,
                          relative_omega=False if args.absolute_omega else None)
        arch = _override(cfg.arch, dropout_rate=args.dropout,
                         hidden_widths=None if args.hidden is None else tuple(args.hidden))
        cfg = _override(cfg, optimizer=opt, train=train, arch=arch, seed=args.seed,
                        output_dir=args.out_dir, replicates=args.replicates,
                        standardize=False if args.no_standardize else None)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.out_dir is None and args.command in ("simulate",):
        args.out_dir = "."
    if args.seed is None and args.command == "simulate":
        args.seed = 0
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "select":
            return cmd_select(args)
        cfg = resolve_config(args)
        return cmd_train(args, cfg) if args.command == "train" else cmd_replicate(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # argument values rejected by the library (bad model name, p < 15, ...)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
