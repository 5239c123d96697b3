"""Command-line front end: train, benchmark, gradcheck, predict.

Configs are JSON; every field is validated (unknown keys rejected) before any
computation starts. Exit codes: 0 success, 1 config error, 2 runtime numeric
failure, 3 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .data import (
    Dataset,
    load_csv,
    make_contaminated_sine,
    normalize_split,
    rmse,
    test_log_likelihood,
    write_csv,
)
from .dgp import init_model, predict
from .divergences import QuantifierSpec
from .exceptions import (
    AlphaOutOfRange,
    ConfigError,
    GvidgpError,
    NonFiniteGradient,
    NonFiniteObjective,
)
from .losses import LossSpec
from .training import (
    ALL_LOSSES,
    ALL_QUANTIFIERS,
    TrainConfig,
    grad_check,
    reference_gradcheck_problem,
    train,
)

OUTPUT_DIR_ENV = "GVIDGP_OUTPUT_DIR"
CORRUPT_GRAD_ENV = "GVIDGP_CORRUPT_GRAD"  # testing hook for the gradcheck negative control

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_GRADCHECK = 3


# ---------------------------------------------------------------------------
# config parsing / validation
# ---------------------------------------------------------------------------


def _require_keys(section: dict, allowed: set, field: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(field, f"unknown key(s) {sorted(unknown)}; allowed: {sorted(allowed)}")


def _loss_from_config(cfg: dict, field: str) -> LossSpec:
    _require_keys(cfg, {"kind", "beta", "gamma", "weight"}, field)
    kind = cfg.get("kind", "nll")
    try:
        if kind == "nll":
            return LossSpec.nll(weight=cfg.get("weight", 1.0))
        if kind == "beta":
            return LossSpec.beta_loss(cfg.get("beta", 1.05), weight=cfg.get("weight", 1.0))
        if kind == "gamma":
            return LossSpec.gamma_loss(cfg.get("gamma", 1.05), weight=cfg.get("weight", 1.0))
    except ValueError as exc:
        raise ConfigError(field, str(exc)) from None
    raise ConfigError(f"{field}.kind", f"unknown loss kind {kind!r}")


def _quantifier_from_config(cfg: dict, field: str) -> QuantifierSpec:
    _require_keys(cfg, {"kind", "w", "alpha"}, field)
    kind = cfg.get("kind", "kld")
    try:
        if kind == "kld":
            return QuantifierSpec.kld()
        if kind == "scaled_kld":
            return QuantifierSpec.scaled_kld(cfg.get("w", 1.0))
        if kind == "renyi":
            return QuantifierSpec.renyi(cfg.get("alpha", 0.5))
    except (ValueError, AlphaOutOfRange) as exc:
        raise ConfigError(field, str(exc)) from None
    raise ConfigError(f"{field}.kind", f"unknown quantifier kind {kind!r}")


def _quantifiers_from_config(cfg, num_layers: int, field: str):
    if isinstance(cfg, dict):
        return tuple([_quantifier_from_config(cfg, field)] * num_layers)
    if isinstance(cfg, list):
        specs = tuple(
            _quantifier_from_config(c, f"{field}[{i}]") for i, c in enumerate(cfg)
        )
        if len(specs) != num_layers:
            raise ConfigError(field, f"got {len(specs)} quantifiers for {num_layers} layer(s)")
        return specs
    raise ConfigError(field, "must be an object or a list of objects")


def _train_config_from_config(cfg: dict, field: str) -> TrainConfig:
    allowed = {
        "learning_rate",
        "iterations",
        "batch_size",
        "seed",
        "n_samples",
        "grad_clip",
        "freeze",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
    }
    _require_keys(cfg, allowed, field)
    kwargs = dict(cfg)
    if "freeze" in kwargs:
        kwargs["freeze"] = tuple(kwargs["freeze"])
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(field, str(exc)) from None


class RunConfig:
    """Validated run configuration; construction performs all checks."""

    TOP_KEYS = {
        "dataset",
        "split",
        "model",
        "loss",
        "quantifiers",
        "train",
        "n_splits",
        "methods",
        "output_dir",
    }

    def __init__(self, raw: dict):
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        _require_keys(raw, self.TOP_KEYS, "<root>")
        self.raw = raw

        dataset = raw.get("dataset")
        if not isinstance(dataset, dict):
            raise ConfigError("dataset", "required object")
        _require_keys(
            dataset, {"path", "target_columns", "has_header", "synthetic"}, "dataset"
        )
        if ("path" in dataset) == ("synthetic" in dataset):
            raise ConfigError("dataset", "provide exactly one of 'path' or 'synthetic'")
        self.dataset_cfg = dataset
        if "synthetic" in dataset:
            syn = dataset["synthetic"]
            _require_keys(
                syn,
                {"kind", "n", "outlier_fraction", "outlier_offset", "noise_std"},
                "dataset.synthetic",
            )
            if syn.get("kind") != "contaminated_sine":
                raise ConfigError("dataset.synthetic.kind", "only 'contaminated_sine' is available")

        split = raw.get("split", {})
        _require_keys(split, {"test_fraction", "seed"}, "split")
        self.test_fraction = split.get("test_fraction", 0.1)
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("split.test_fraction", "must be in the open interval (0, 1)")
        self.split_seed = int(split.get("seed", 0))

        model = raw.get("model", {})
        _require_keys(
            model, {"layers", "num_inducing", "whiten", "hidden_width_cap"}, "model"
        )
        self.num_layers = int(model.get("layers", 1))
        if self.num_layers < 1:
            raise ConfigError("model.layers", "must be >= 1")
        self.num_inducing = int(model.get("num_inducing", 100))
        if self.num_inducing < 1:
            raise ConfigError("model.num_inducing", "must be >= 1")
        self.whiten = bool(model.get("whiten", True))
        self.hidden_width_cap = int(model.get("hidden_width_cap", 30))

        self.loss = _loss_from_config(raw.get("loss", {"kind": "nll"}), "loss")
        self.quantifiers = _quantifiers_from_config(
            raw.get("quantifiers", {"kind": "kld"}), self.num_layers, "quantifiers"
        )
        self.train_cfg = _train_config_from_config(raw.get("train", {}), "train")

        self.n_splits = int(raw.get("n_splits", 1))
        if self.n_splits < 1:
            raise ConfigError("n_splits", "must be >= 1")

        self.methods = []
        for i, method in enumerate(raw.get("methods", [])):
            _require_keys(method, {"name", "loss", "quantifiers"}, f"methods[{i}]")
            loss = _loss_from_config(method.get("loss", {"kind": "nll"}), f"methods[{i}].loss")
            quants = _quantifiers_from_config(
                method.get("quantifiers", {"kind": "kld"}),
                self.num_layers,
                f"methods[{i}].quantifiers",
            )
            self.methods.append((method.get("name", f"method{i}"), loss, quants))
        if not self.methods:
            self.methods = [(self._default_method_name(), self.loss, self.quantifiers)]

        self.output_dir = raw.get("output_dir")

    def _default_method_name(self):
        return self.loss.kind

    def make_dataset(self, split_seed: int) -> Dataset:
        cfg = self.dataset_cfg
        if "synthetic" in cfg:
            syn = cfg["synthetic"]
            return make_contaminated_sine(
                n=int(syn.get("n", 220)),
                test_fraction=self.test_fraction,
                outlier_fraction=float(syn.get("outlier_fraction", 0.05)),
                outlier_offset=float(syn.get("outlier_offset", 8.0)),
                noise_std=float(syn.get("noise_std", 0.1)),
                seed=split_seed,
            )
        try:
            table = load_csv(
                cfg["path"],
                target_columns=cfg.get("target_columns", [-1]),
                has_header=cfg.get("has_header", False),
            )
        except OSError as exc:
            raise ConfigError("dataset.path", str(exc)) from None
        return normalize_split(
            table, cfg.get("target_columns", [-1]), self.test_fraction, split_seed
        )


def _load_config(path, overrides: argparse.Namespace) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("<file>", f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    if getattr(overrides, "seed", None) is not None:
        raw.setdefault("train", {})["seed"] = overrides.seed
    if getattr(overrides, "iterations", None) is not None:
        raw.setdefault("train", {})["iterations"] = overrides.iterations
    if getattr(overrides, "output_dir", None) is not None:
        raw["output_dir"] = overrides.output_dir
    return RunConfig(raw)


def _resolve_output_dir(config: RunConfig) -> Path:
    out = config.output_dir or os.environ.get(OUTPUT_DIR_ENV, "runs")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _loss_columns(loss: LossSpec, quantifiers):
    hyper = {"nll": 0.0, "beta": loss.beta, "gamma": loss.gamma}[loss.kind]
    q = quantifiers[0]
    qname = q.kind if len(set(quantifiers)) == 1 else "mixed"
    return loss.kind, qname, hyper if hyper is not None else 0.0


def _fit_and_score(config: RunConfig, data: Dataset, loss, quantifiers, seed: int):
    x_tr, y_tr = data.train_xy()
    model = init_model(
        x_tr,
        y_tr,
        num_layers=config.num_layers,
        num_inducing=min(config.num_inducing, x_tr.shape[0]),
        whiten=config.whiten,
        hidden_width_cap=config.hidden_width_cap,
        seed=seed,
    )
    cfg = TrainConfig(**{**config.train_cfg.__dict__, "seed": seed})
    model, trace = train(model, data, loss, quantifiers, cfg)
    x_te, y_te = data.test_xy()
    pred_mean, _, log_density = predict(model, x_te, n_samples=100, seed=seed)
    metrics = {
        "rmse": rmse(pred_mean, y_te, data.target_stats),
        "nll": -test_log_likelihood(log_density, y_te, data.target_stats),
        "final_objective": float(trace.objective[-1]),
    }
    return model, trace, metrics


def cmd_train(args) -> int:
    config = _load_config(args.config, args)
    out = _resolve_output_dir(config)
    data = config.make_dataset(config.split_seed)
    seed = config.train_cfg.seed
    model, trace, metrics = _fit_and_score(
        config, data, config.loss, config.quantifiers, seed
    )
    ckpt.save_checkpoint(out / "model.npz", model, seed)
    trace.write_csv(out / "trace.csv")
    record = {
        "loss": config.loss.kind,
        "quantifier": config.quantifiers[0].kind,
        "seed": seed,
        "iterations": config.train_cfg.iterations,
        "metrics": metrics,
        "parameters_sha256": trace.snapshot_id,
    }
    (out / "metrics.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(f"rmse={metrics['rmse']:.6f} nll={metrics['nll']:.6f} -> {out}")
    return EXIT_OK


def _std_error(values: np.ndarray) -> float:
    return float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0


def cmd_benchmark(args) -> int:
    config = _load_config(args.config, args)
    out = _resolve_output_dir(config)
    rows = []  # one row per (split, method)
    for split in range(config.n_splits):
        split_seed = config.split_seed + split
        data = config.make_dataset(split_seed)
        for name, loss, quantifiers in config.methods:
            tic = time.perf_counter()
            _, _, metrics = _fit_and_score(config, data, loss, quantifiers, split_seed)
            seconds = time.perf_counter() - tic
            lname, qname, hyper = _loss_columns(loss, quantifiers)
            rows.append(
                (name, split, split_seed, lname, qname, hyper, metrics["rmse"], metrics["nll"], seconds)
            )

    header = ["split", "seed", "loss", "quantifier", "hyperparam", "rmse", "nll", "seconds"]
    with open(out / "benchmark_splits.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row[1:]) + "\n")

    agg_lines = ["loss,quantifier,hyperparam,mean_rmse,se_rmse,mean_nll,se_nll,n_splits"]
    print(f"{'method':>12} {'rmse':>18} {'nll':>18}")
    for name, loss, quantifiers in config.methods:
        lname, qname, hyper = _loss_columns(loss, quantifiers)
        r_arr = np.array([r[6] for r in rows if r[0] == name])
        n_arr = np.array([r[7] for r in rows if r[0] == name])
        agg_lines.append(
            f"{lname},{qname},{hyper},{float(r_arr.mean())!r},{_std_error(r_arr)!r},"
            f"{float(n_arr.mean())!r},{_std_error(n_arr)!r},{len(r_arr)}"
        )
        print(
            f"{name:>12} {r_arr.mean():>10.4f} ± {_std_error(r_arr):<6.4f}"
            f" {n_arr.mean():>10.4f} ± {_std_error(n_arr):<6.4f}"
        )
    (out / "benchmark_aggregate.csv").write_text("\n".join(agg_lines) + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = _load_config(args.config, args) if args.config else None
    tolerance = 1e-4
    model, batch = reference_gradcheck_problem(seed=0)
    corrupt = os.environ.get(CORRUPT_GRAD_ENV) or None
    worst = (0.0, "", "")
    for loss in ALL_LOSSES:
        for quant in ALL_QUANTIFIERS:
            specs = tuple([quant] * model.num_layers)
            report = grad_check(
                model, batch, loss, specs, tolerance=tolerance, seed=0, corrupt_block=corrupt
            )
            combo = f"{loss.kind}/{quant.kind}"
            status = "ok" if report.passed else "FAIL"
            print(f"{combo:>22}: max rel error {report.max_rel_error:.3e} [{status}]")
            if report.max_rel_error > worst[0]:
                worst = (report.max_rel_error, combo, report.worst_block)
    if worst[0] >= tolerance:
        print(f"gradient check FAILED: {worst[1]} block {worst[2]} at {worst[0]:.3e}")
        return EXIT_GRADCHECK
    print("gradient check passed for all 9 loss x quantifier combinations")
    return EXIT_OK


def cmd_predict(args) -> int:
    config = _load_config(args.config, args)
    out = _resolve_output_dir(config)
    model, header = ckpt.load_checkpoint(args.checkpoint)
    data = config.make_dataset(config.split_seed)
    x_te, y_te = data.test_xy()
    pred_mean, pred_var, log_density = predict(
        model, x_te, n_samples=100, seed=header.get("seed", 0)
    )
    mean_orig = pred_mean * data.target_stats.std + data.target_stats.mean
    var_orig = pred_var * data.target_stats.std**2
    write_csv(
        out / "predictions.csv",
        np.column_stack([mean_orig, var_orig]),
        header=[f"mean_{j}" for j in range(mean_orig.shape[1])]
        + [f"var_{j}" for j in range(var_orig.shape[1])],
    )
    print(f"wrote predictions for {x_te.shape[0]} points -> {out / 'predictions.csv'}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gvidgp",
        description="Robust deep GP regression with generalized variational objectives",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, needs_config in (
        ("train", cmd_train, True),
        ("benchmark", cmd_benchmark, True),
        ("gradcheck", cmd_gradcheck, False),
        ("predict", cmd_predict, True),
    ):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("config", help="JSON run configuration")
        else:
            p.add_argument("config", nargs="?", default=None)
        if name == "predict":
            p.add_argument("checkpoint", help="model checkpoint (.npz)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--output-dir", default=None)
        p.set_defaults(fn=fn)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteObjective, NonFiniteGradient, GvidgpError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
