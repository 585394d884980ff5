"""Command-line driver: ``vmfkit <subcommand> [--config F] [--seed N] [--out DIR] [--threads N] [key=value ...]``.

Settings are resolved as built-in defaults, then the config file, then
positional ``key=value`` overrides, then ``--seed``. The resolved settings
are written to ``<out>/run.log`` before any work starts.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import data as ds
from .checkpoint import (
    atomic_write,
    load_checkpoint,
    load_mixture,
    save_checkpoint,
    save_mixture,
)
from .directional import EPS_NORM, normalize
from .errors import CheckpointError, ConfigError, DegenerateInputError, DivergenceError, VmfkitError
from .evaluation import (
    as_pairs,
    report_text,
    roc_csv,
    score_pairs,
    pair_scores,
    scores_csv,
    verification_report,
)
from .gradcheck import TOLERANCE, run_suite
from .losses import VmfmlHead
from .mixture import fit_em
from .network import (
    DenseNetwork,
    SgdConfig,
    SoftmaxCenterObjective,
    SoftmaxObjective,
    VmfmlObjective,
    extract_features,
    forward,
    train,
)
from .vmf import sample

log = logging.getLogger("vmfkit")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

LOSSES = ("vmfml", "softmax", "vmfml-margin", "softmax+center")

# Every setting with its default; the default's type decides how strings are parsed.
DEFAULTS = {
    "fit-mixture": {
        "input": "",
        "components": 3,
        "max_iter": 200,
        "tol": 1e-6,
        "refine_kappa": False,
    },
    "sample": {
        "checkpoint": "",
        "n": 1000,
    },
    "train": {
        "source": "synthetic-vmf",
        "classes": 10,
        "data_dim": 16,
        "data_kappa": 30.0,
        "per_class": 700,
        "test_size": 2000,
        "images": "",
        "labels": "",
        "test_images": "",
        "test_labels": "",
        "train_csv": "",
        "test_csv": "",
        "loss": "vmfml",
        "kappa": 16.0,
        "kappa_policy": "fixed",
        "margin": 2.0,
        "center_lambda": 0.01,
        "center_lr": 0.5,
        "hidden": "64",
        "feature_dim": 3,
        "activation": "prelu",
        "epochs": 30,
        "learning_rate": 0.03,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "batch_size": 120,
        "schedule": "",
    },
    "gradcheck": {
        "instances": 108,
        "hidden": "6",
        "input_dim": 8,
        "feature_dim": 4,
        "classes": 3,
        "corrupt": "",
    },
    "evaluate": {
        "checkpoint": "",
        "data": "",
        "data_format": "csv",
        "pairs": "",
        "flip": "none",
        "image_height": 0,
        "image_width": 0,
        "far_targets": "0.01,0.001",
    },
}


def _convert(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"setting {key!r}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def resolve_config(command: str, file_cfg: dict, overrides: list[str], seed) -> dict:
    defaults = DEFAULTS[command]
    cfg = dict(defaults, seed=0)
    raw = dict(file_cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    for k, v in raw.items():
        if k not in cfg:
            known = ", ".join(sorted(cfg))
            raise ConfigError(f"unknown setting {k!r} for {command} (known: {known})")
        cfg[k] = _convert(k, v, cfg[k])
    if seed is not None:
        cfg["seed"] = seed
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return cfg


def run_log_text(command: str, cfg: dict) -> str:
    lines = [f"command = {command}"] + [f"{k} = {cfg[k]!r}" if isinstance(cfg[k], str) else f"{k} = {cfg[k]}"
                                        for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def _require(cfg: dict, *keys):
    for k in keys:
        if not cfg[k]:
            raise ConfigError(f"setting {k!r} is required")


def _int_list(key: str, text: str):
    if text.strip().lower() == "none":
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"setting {key!r}: expected comma-separated integers, got {text!r}") from None


def _float_list(key: str, text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"setting {key!r}: expected comma-separated numbers, got {text!r}") from None


def _schedule(text: str):
    """``"0:0.1,24:0.01"`` -> ``[(0, 0.1), (24, 0.01)]``; empty means the default step schedule."""
    if not text.strip():
        return None
    try:
        return [(int(e), float(lr)) for e, lr in (item.split(":") for item in text.split(","))]
    except ValueError:
        raise ConfigError(f"setting 'schedule': expected epoch:lr pairs, got {text!r}") from None


def _unit_rows(x: np.ndarray, source: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(~(norms > EPS_NORM))
    if bad.size:
        # data rows start on line 2, after the d=<dim> header
        raise DegenerateInputError(f"{source}:{bad[0] + 2}: vector has norm <= 1e-12")
    return normalize(x)


# ---------------------------------------------------------------- subcommands

def cmd_fit_mixture(cfg: dict, out: Path) -> int:
    _require(cfg, "input")
    x, _ = ds.read_vectors_csv(cfg["input"])
    if x.shape[0] == 0:
        raise DegenerateInputError(f"{cfg['input']}: no vectors to fit")
    x = _unit_rows(x, cfg["input"])
    model, report = fit_em(x, cfg["components"], max_iter=cfg["max_iter"], tol=cfg["tol"],
                           rng_seed=cfg["seed"], refine=cfg["refine_kappa"])
    atomic_write(out / "mixture.ckpt", save_mixture(model))
    trace = "iteration,log_likelihood\n" + "".join(
        f"{i},{ll!r}\n" for i, ll in enumerate(report.log_likelihood_trace))
    atomic_write(out / "em_trace.csv", trace)
    summary = [f"iterations = {report.iterations}", f"converged = {str(report.converged).lower()}",
               f"reseeds = {report.reseeds}",
               f"final_log_likelihood = {report.log_likelihood_trace[-1]!r}"]
    for j, comp in enumerate(model.components):
        mu = ",".join(repr(float(v)) for v in comp.mu)
        summary.append(f"component{j} = weight {float(model.weights[j])!r} kappa {comp.kappa!r} mu {mu}")
    atomic_write(out / "em_report.txt", "\n".join(summary) + "\n")
    log.info("EM finished after %d iterations (converged=%s)", report.iterations, report.converged)
    return EXIT_OK


def cmd_sample(cfg: dict, out: Path) -> int:
    _require(cfg, "checkpoint")
    if cfg["n"] < 0:
        raise ConfigError("setting 'n' must be >= 0")
    model = load_mixture(Path(cfg["checkpoint"]).read_bytes())
    rng = np.random.default_rng(cfg["seed"])
    counts = rng.multinomial(cfg["n"], model.weights / model.weights.sum())
    xs, ys = [np.zeros((0, model.dim))], [np.zeros(0, dtype=int)]
    for j, (comp, k) in enumerate(zip(model.components, counts)):
        if k:
            xs.append(sample(comp, int(k), rng))
            ys.append(np.full(int(k), j))
    atomic_write(out / "samples.csv", ds.format_vectors_csv(np.vstack(xs), np.concatenate(ys)))
    return EXIT_OK


def _train_data(cfg: dict):
    """Returns ``(train, test or None)`` as ``(x, y)`` tuples."""
    source = cfg["source"]
    if source == "synthetic-vmf":
        return ds.toy_directional_dataset(cfg["seed"], cfg["classes"], cfg["data_dim"], cfg["data_kappa"],
                                          cfg["per_class"], cfg["test_size"])
    if source == "idx":
        _require(cfg, "images", "labels")
        x, y, _ = ds.load_idx_dataset(cfg["images"], cfg["labels"])
        test = None
        if cfg["test_images"]:
            _require(cfg, "test_labels")
            tx, ty, _ = ds.load_idx_dataset(cfg["test_images"], cfg["test_labels"])
            test = (tx, ty)
        return (x, y), test
    if source == "csv":
        _require(cfg, "train_csv")
        x, y = ds.read_vectors_csv(cfg["train_csv"])
        if y is None:
            raise ConfigError(f"{cfg['train_csv']}: training vectors need a label column")
        test = None
        if cfg["test_csv"]:
            tx, ty = ds.read_vectors_csv(cfg["test_csv"])
            if ty is None:
                raise ConfigError(f"{cfg['test_csv']}: test vectors need a label column")
            test = (tx, ty)
        return (x, y), test
    raise ConfigError(f"unknown source {source!r} (use synthetic-vmf, idx or csv)")


def build_model(cfg: dict, input_dim: int, n_classes: int):
    """Network and objective for a train config, initialized from ``seed + 100``."""
    if cfg["loss"] not in LOSSES:
        raise ConfigError(f"unknown loss {cfg['loss']!r} (use one of {', '.join(LOSSES)})")
    rng = np.random.default_rng(cfg["seed"] + 100)
    hidden = _int_list("hidden", cfg["hidden"]) or []
    net = DenseNetwork.init(input_dim, hidden, cfg["feature_dim"], rng, activation=cfg["activation"])
    loss = cfg["loss"]
    if loss in ("vmfml", "vmfml-margin"):
        margin = cfg["margin"] if loss == "vmfml-margin" else 1.0
        kappa = cfg["kappa"] if cfg["kappa_policy"] == "fixed" else None
        head = VmfmlHead.init(n_classes, cfg["feature_dim"], rng, kappa_policy=cfg["kappa_policy"],
                              kappa=kappa, margin=margin)
        objective = VmfmlObjective(head)
    else:
        objective = SoftmaxObjective.init(n_classes, cfg["feature_dim"], rng)
        if loss == "softmax+center":
            objective = SoftmaxCenterObjective(objective.weights, objective.biases, lam=cfg["center_lambda"],
                                               center_lr=cfg["center_lr"])
    return net, objective


def _train_report_csv(report, cfg: SgdConfig) -> str:
    lines = ["epoch,learning_rate,train_loss,train_accuracy,eval_loss,eval_accuracy"]
    for e in range(len(report.train_loss)):
        ev_loss = repr(report.eval_loss[e]) if e < len(report.eval_loss) else ""
        ev_acc = repr(report.eval_accuracy[e]) if e < len(report.eval_accuracy) else ""
        lines.append(f"{e},{cfg.lr_at(e)!r},{report.train_loss[e]!r},{report.train_accuracy[e]!r},"
                     f"{ev_loss},{ev_acc}")
    return "\n".join(lines) + "\n"


def cmd_train(cfg: dict, out: Path) -> int:
    (x, y), test = _train_data(cfg)
    n_classes = int(max(y.max(), test[1].max() if test is not None and test[1].size else 0)) + 1
    net, objective = build_model(cfg, x.shape[1], n_classes)
    sgd = SgdConfig(learning_rate=cfg["learning_rate"], momentum=cfg["momentum"],
                    weight_decay=cfg["weight_decay"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                    schedule=_schedule(cfg["schedule"]), seed=cfg["seed"])
    started = time.perf_counter()
    try:
        report = train(net, objective, (x, y), sgd, eval_data=test)
    except DivergenceError as exc:
        partial = getattr(exc, "report", None)
        if partial is not None:
            atomic_write(out / "train_report.csv", _train_report_csv(partial, sgd))
        raise
    log.info("training took %.2f s", time.perf_counter() - started)
    head = objective.head if isinstance(objective, VmfmlObjective) else objective
    atomic_write(out / "model.ckpt", save_checkpoint(net, head))
    atomic_write(out / "train_report.csv", _train_report_csv(report, sgd))
    if net.feature_dim <= 3:
        fx, fy = test if test is not None else (x, y)
        atomic_write(out / "features.csv", ds.format_vectors_csv(normalize(forward(net, fx)), fy))
    if report.train_loss:
        log.info("final train loss %.6f", report.train_loss[-1])
    return EXIT_OK


def cmd_gradcheck(cfg: dict, out: Path) -> int:
    results = run_suite(seed=cfg["seed"], vmfml_instances=cfg["instances"],
                        hidden=_int_list("hidden", cfg["hidden"]), input_dim=cfg["input_dim"],
                        feature_dim=cfg["feature_dim"], n_classes=cfg["classes"],
                        corrupt=cfg["corrupt"] or None)
    worst: dict[str, float] = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.error)
    failed = sorted(name for name, err in worst.items() if not err < TOLERANCE)
    lines = [f"checks = {len(results)}", f"tolerance = {TOLERANCE!r}"]
    lines += [f"{name} max_rel_error={err:.3e} {'FAIL' if name in failed else 'ok'}"
              for name, err in sorted(worst.items())]
    lines.append(f"result = {'fail' if failed else 'pass'}")
    atomic_write(out / "gradcheck.txt", "\n".join(lines) + "\n")
    if failed:
        log.error("gradient check failed for: %s", ", ".join(failed))
        return EXIT_NUMERICAL
    log.info("gradient check passed (%d checks)", len(results))
    return EXIT_OK


def cmd_evaluate(cfg: dict, out: Path) -> int:
    _require(cfg, "checkpoint", "data", "pairs")
    net, _ = load_checkpoint(Path(cfg["checkpoint"]).read_bytes())
    image_shape = None
    if cfg["data_format"] == "idx":
        x, _, image_shape = ds.load_idx_dataset(cfg["data"])
    elif cfg["data_format"] == "csv":
        x, _ = ds.read_vectors_csv(cfg["data"])
    else:
        raise ConfigError(f"unknown data_format {cfg['data_format']!r} (use csv or idx)")
    if cfg["image_height"] or cfg["image_width"]:
        image_shape = (cfg["image_height"], cfg["image_width"])
    pairs = as_pairs(ds.read_pairs_csv(cfg["pairs"]))
    feats = extract_features(net, x, cfg["flip"], image_shape)
    scores = pair_scores(feats, pairs)
    split = score_pairs(feats, pairs)
    report = verification_report(split, _float_list("far_targets", cfg["far_targets"]))
    atomic_write(out / "scores.csv", scores_csv(pairs, scores))
    atomic_write(out / "roc.csv", roc_csv(report.roc))
    atomic_write(out / "report.txt", report_text(report, split.genuine.size, split.impostor.size))
    log.info("verification accuracy %.4f at threshold %.4f", report.accuracy, report.threshold)
    return EXIT_OK


HELP = {
    "fit-mixture": "fit a vMF mixture to CSV vectors by EM",
    "sample": "draw labelled unit vectors from a mixture checkpoint",
    "train": "train a feature network with vMFML or a baseline loss",
    "gradcheck": "compare analytic gradients with finite differences",
    "evaluate": "score verification pairs with a trained network",
}

COMMANDS = {
    "fit-mixture": cmd_fit_mixture,
    "sample": cmd_sample,
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
    "evaluate": cmd_evaluate,
}


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vmfkit", description="vMF mixture models and vMFML training tools.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="flat key=value settings file")
        p.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
        p.add_argument("-v", "--verbose", action="store_true")
        p.add_argument("overrides", nargs="*", metavar="key=value", help="setting overrides")
    return parser


def _run(args) -> int:
    file_cfg = {}
    if args.config:
        path = Path(args.config)
        file_cfg = ds.parse_config(path.read_text(encoding="utf-8"), str(path))
    cfg = resolve_config(args.command, file_cfg, args.overrides, args.seed)
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "run.log", run_log_text(args.command, cfg))
    if args.threads is None:
        return COMMANDS[args.command](cfg, out)
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=args.threads):
        return COMMANDS[args.command](cfg, out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="vmfkit: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return _run(args)
    except (CheckpointError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (DegenerateInputError, DivergenceError, ArithmeticError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL
    except (ValueError, IndexError, VmfkitError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
