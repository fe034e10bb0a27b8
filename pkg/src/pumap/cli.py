"""``pumap`` command-line front end.

Every failure prints one line ``pumap-error: <code>: <message>`` on stderr
and exits with 2 (configuration), 3 (data) or 4 (numeric failure).
"""
import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import datasets
from ._validation import derive_seeds
from .embed import UMAP
from .exceptions import CapabilityError, DataError, DimensionError, NumericError, ParameterError
from .fuzzy import fit_kernel_params, fuzzy_simplicial_set, write_fuzzy_csv
from .io import (
    emit_plot_data,
    load_dataset,
    read_csv_matrix,
    write_embedding_csv,
    write_loss_history,
)
from .knn import nearest_neighbors
from .metrics import evaluate, format_table
from .parametric import (
    LossWeights,
    ParametricModel,
    ParametricSchedule,
    inverse_transform,
    load_model,
    predict_proba,
    save_model,
    train_parametric,
    transform,
)

COMMANDS = ("fit", "fit-parametric", "transform", "inverse", "metrics", "ssl-train", "benchmark")
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

logger = logging.getLogger("pumap.cli")


class ConfigError(Exception):
    def __init__(self, message, code="config-error"):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    command: str = "fit"
    input: str | None = None
    output: str = "."
    labels: str | None = None
    model: str | None = None
    embedding: str | None = None
    n_neighbors: int = 15
    min_dist: float = 0.1
    dim: int = 2
    epochs: int | None = None
    seed: int = 0
    threads: int = 1
    weight_umap: float = 1.0
    weight_recon: float | None = None
    weight_global: float = 0.0
    weight_classifier: float = 1.0
    decoder: bool = False
    hidden: str = "100,100,100"
    batch_size: int = 256
    learning_rate: float | None = None
    n_samples: int | None = None
    n_labeled: int | None = None
    n_test: int = 10_000
    format: str | None = None

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.n_neighbors < 2:
            raise ConfigError("n_neighbors must be >= 2")
        if self.min_dist < 0:
            raise ConfigError("min_dist must be >= 0")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for name in ("weight_umap", "weight_global", "weight_classifier"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.weight_recon is not None and self.weight_recon < 0:
            raise ConfigError("weight_recon must be >= 0")
        try:
            self.hidden_sizes()
        except ValueError:
            raise ConfigError(f"hidden must be comma-separated widths, got {self.hidden!r}") from None
        return self

    def hidden_sizes(self):
        sizes = tuple(int(s) for s in str(self.hidden).split(",") if s.strip())
        if not sizes or min(sizes) < 1:
            raise ValueError(self.hidden)
        return sizes


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name, value):
    kind = _FIELD_TYPES[name]
    text = str(value).strip()
    if "None" in str(kind) and text.lower() in ("", "none"):
        return None
    try:
        if "bool" in str(kind):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "int" in str(kind):
            return int(text)
        if "float" in str(kind):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def read_config_file(path):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES or key == "command":
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="pumap", description="UMAP and Parametric UMAP embeddings")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--input", help="data CSV / f64le binary, or builtin:moons|blobs|mnist")
        p.add_argument("--output", help="output directory")
        p.add_argument("--labels", help="label file (one integer per row, -1 = unlabeled)")
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--model", help="model blob path (transform, inverse)")
        p.add_argument("--embedding", help="embedding CSV (metrics)")
        p.add_argument("--n-neighbors", type=int)
        p.add_argument("--min-dist", type=float)
        p.add_argument("--dim", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--weight-umap", type=float)
        p.add_argument("--weight-recon", type=float)
        p.add_argument("--weight-global", type=float)
        p.add_argument("--weight-classifier", type=float)
        p.add_argument("--decoder", action="store_const", const=True)
        p.add_argument("--hidden")
        p.add_argument("--batch-size", type=int)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--n-samples", type=int, help="keep the first N rows of the input")
        p.add_argument("--n-labeled", type=int, help="ssl-train: labels kept per class")
        p.add_argument("--n-test", type=int, help="benchmark: held-out rows")
        p.add_argument("--format", choices=("csv", "f64le-binary"))
    return parser


def resolve_config(argv):
    """Merge defaults < config file < command-line flags."""
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for name in _FIELD_TYPES:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    values["command"] = args.command
    if values.get("output") is None:
        values["output"] = "."
    return RunConfig(**values).validate()


# -- data access ---------------------------------------------------------------


def _load_input(cfg, path=None):
    path = path or cfg.input
    if path is None:
        raise ConfigError("--input is required")
    if path.startswith("builtin:"):
        name = path.split(":", 1)[1]
        if name == "moons":
            X, y = load_dataset(Path(str(datasets.bundled_moons_path())))
        elif name == "blobs":
            X, y = datasets.blobs(n_samples=cfg.n_samples or 500, seed=cfg.seed)
        elif name == "mnist":
            X, y = datasets.load_mnist(cfg.n_samples)
        else:
            raise ConfigError(f"unknown builtin dataset {name!r}")
    else:
        X, y = load_dataset(path, cfg.format)
    if cfg.n_samples is not None:
        X = X[: cfg.n_samples]
        y = None if y is None else y[: cfg.n_samples]
    if cfg.labels:
        y = read_labels(cfg.labels, X.shape[0])
    logger.info("loaded %s: %d rows x %d features", path, X.shape[0], X.shape[1])
    return X, y


def read_labels(path, n_rows=None):
    header, arr = read_csv_matrix(path)
    if header is not None and "label" in header:
        col = arr[:, header.index("label")]
    elif arr.shape[1] == 1:
        col = arr[:, 0]
    else:
        raise DataError(f"{path}: expected one label column or a 'label' header")
    if not np.all(col == np.round(col)):
        raise DataError(f"{path}: labels must be integers")
    if n_rows is not None and col.size != n_rows:
        raise DataError(f"{path}: {col.size} labels for {n_rows} rows")
    return col.astype(np.int64)


def write_labels(path, labels, name="label"):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([name])
        writer.writerows([[int(v)] for v in labels])


def _output_dir(cfg):
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit_plot(out, coords, labels, history):
    try:
        emit_plot_data(coords, labels, out / "plot.csv", history)
    except CapabilityError as exc:
        logger.info("scatter data skipped: %s", exc)


def _require_model(cfg):
    if not cfg.model:
        raise ConfigError("--model is required", "missing-model")
    path = Path(cfg.model)
    if not path.exists():
        raise ConfigError(f"{path}: model file not found", "missing-model")
    return load_model(path)


def _loss_weights(cfg, decoder, classifier):
    recon = cfg.weight_recon if cfg.weight_recon is not None else (1.0 if decoder else 0.0)
    return LossWeights(
        cfg.weight_umap, recon, cfg.weight_global, cfg.weight_classifier if classifier else 0.0
    )


def _parametric_schedule(cfg, seed, default_epochs=20, default_lr=1e-2):
    return ParametricSchedule(
        n_epochs=cfg.epochs if cfg.epochs is not None else default_epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate if cfg.learning_rate is not None else default_lr,
        seed=seed,
    )


def _graph(X, cfg, seed):
    if cfg.n_neighbors >= X.shape[0]:
        raise ConfigError(f"n_neighbors must be < number of rows ({X.shape[0]})")
    return fuzzy_simplicial_set(nearest_neighbors(X, cfg.n_neighbors, seed=seed))[0]


# -- subcommands -------------------------------------------------------------


def cmd_fit(cfg):
    X, y = _load_input(cfg)
    est = UMAP(
        n_neighbors=cfg.n_neighbors,
        n_components=cfg.dim,
        min_dist=cfg.min_dist,
        n_epochs=cfg.epochs,
        random_state=cfg.seed,
        n_jobs=cfg.threads,
    )
    if cfg.n_neighbors >= X.shape[0]:
        raise ConfigError(f"n_neighbors must be < number of rows ({X.shape[0]})")
    coords = est.fit_transform(X)
    out = _output_dir(cfg)
    write_embedding_csv(out / "embedding.csv", coords)
    write_fuzzy_csv(est.graph_, out / "graph.csv")
    history = {"loss": est.loss_history_}
    write_loss_history(out / "loss.csv", history)
    _emit_plot(out, coords, y, history)
    return {"embedding": str(out / "embedding.csv"), "graph": str(out / "graph.csv")}


def _train(cfg, X, labels, classifier, seeds):
    graph = _graph(X, cfg, seeds[0])
    n_classes = int(labels.max()) + 1 if classifier else None
    model = ParametricModel.build(
        X.shape[1],
        cfg.dim,
        cfg.hidden_sizes(),
        decoder=cfg.decoder,
        n_classes=n_classes,
        classifier_hidden=(100,),
        seed=seeds[1],
    )
    model.kernel = fit_kernel_params(cfg.min_dist)
    weights = _loss_weights(cfg, cfg.decoder, classifier)
    schedule = _parametric_schedule(cfg, seeds[2])
    result = train_parametric(graph, X, model, weights, schedule, labels if classifier else None)
    return result, graph, weights


def cmd_fit_parametric(cfg):
    X, y = _load_input(cfg)
    seeds = derive_seeds(cfg.seed, 3)
    result, graph, weights = _train(cfg, X, None, False, seeds)
    out = _output_dir(cfg)
    save_model(result.model, out / "model.bin", weights, graph)
    coords = transform(result.model, X)
    write_embedding_csv(out / "embedding.csv", coords)
    write_loss_history(out / "loss.csv", result.loss_history)
    _emit_plot(out, coords, y, result.loss_history)
    return {"model": str(out / "model.bin"), "embedding": str(out / "embedding.csv")}


def cmd_transform(cfg):
    model, _ = _require_model(cfg)
    X, _ = _load_input(cfg)
    coords = transform(model, X)
    out = _output_dir(cfg)
    write_embedding_csv(out / "embedding.csv", coords)
    return {"embedding": str(out / "embedding.csv")}


def cmd_inverse(cfg):
    model, _ = _require_model(cfg)
    Z, _ = _load_input(cfg)
    recon = inverse_transform(model, Z)
    out = _output_dir(cfg)
    write_embedding_csv(out / "reconstruction.csv", recon)
    return {"reconstruction": str(out / "reconstruction.csv")}


def cmd_metrics(cfg):
    X, y = _load_input(cfg)
    if not cfg.embedding:
        raise ConfigError("--embedding is required")
    Z = read_csv_matrix(cfg.embedding)[1]
    if Z.shape[0] != X.shape[0]:
        raise DataError(f"embedding has {Z.shape[0]} rows, data has {X.shape[0]}")
    report = evaluate(X, Z, y, seed=cfg.seed)
    out = _output_dir(cfg)
    (out / "metrics.json").write_text(report.to_json())
    print(format_table({Path(cfg.embedding).stem: report}))
    return {"metrics": str(out / "metrics.json")}


def _mask_labels(y, n_per_class, seed):
    rng = np.random.default_rng(seed)
    keep = np.full(y.shape, -1)
    for c in np.unique(y[y >= 0]):
        idx = np.flatnonzero(y == c)
        chosen = rng.choice(idx, size=min(n_per_class, idx.size), replace=False)
        keep[chosen] = c
    return keep


def cmd_ssl_train(cfg):
    X, y = _load_input(cfg)
    if y is None:
        raise ConfigError("ssl-train needs labels (a label column or --labels)")
    seeds = derive_seeds(cfg.seed, 4)
    train_labels = y if cfg.n_labeled is None else _mask_labels(y, cfg.n_labeled, seeds[3])
    if cfg.weight_classifier <= 0:
        raise ConfigError("ssl-train needs a positive classifier weight")
    result, graph, weights = _train(cfg, X, train_labels, True, seeds)
    out = _output_dir(cfg)
    save_model(result.model, out / "model.bin", weights, graph)
    coords = transform(result.model, X)
    pred = np.argmax(predict_proba(result.model, X), axis=1)
    write_embedding_csv(out / "embedding.csv", coords)
    write_labels(out / "predictions.csv", pred, "prediction")
    write_loss_history(out / "loss.csv", result.loss_history)
    _emit_plot(out, coords, y, result.loss_history)
    labeled = train_labels >= 0
    held = ~labeled & (y >= 0)
    report = {
        "n_labeled": int(labeled.sum()),
        "train_accuracy": float(np.mean(pred[labeled] == y[labeled])),
        "unlabeled_accuracy": float(np.mean(pred[held] == y[held])) if held.any() else None,
        "loss_weights": weights.as_dict(),
    }
    (out / "ssl_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def cmd_benchmark(cfg):
    """Time a parametric transform of held-out rows against a full non-parametric refit."""
    seeds = derive_seeds(cfg.seed, 4)
    if cfg.input:
        X, _ = _load_input(cfg)
    else:
        n_train = cfg.n_samples or 2000
        X, _ = datasets.blobs(n_samples=n_train + cfg.n_test, n_features=50, centers=10, seed=seeds[3])
    if X.shape[0] <= cfg.n_test:
        raise ConfigError(f"need more than n_test={cfg.n_test} rows, have {X.shape[0]}")
    train, test = X[: -cfg.n_test], X[-cfg.n_test :]
    timings = []

    def timed(stage, fn):
        start = time.perf_counter()
        value = fn()
        timings.append((stage, time.perf_counter() - start))
        return value

    result, _, _ = timed("parametric_train", lambda: _train(cfg, train, None, False, seeds))
    model = result.model
    transform(model, test[:10])  # warm-up
    coords = timed("parametric_transform", lambda: transform(model, test))
    refit = UMAP(
        n_neighbors=cfg.n_neighbors,
        n_components=cfg.dim,
        min_dist=cfg.min_dist,
        n_epochs=None,
        random_state=cfg.seed,
        n_jobs=cfg.threads,
    )
    timed("nonparametric_refit", lambda: refit.fit(np.vstack([train, test])))
    out = _output_dir(cfg)
    write_embedding_csv(out / "embedding.csv", coords)
    ratio = dict(timings)["nonparametric_refit"] / max(dict(timings)["parametric_transform"], 1e-12)
    with open(out / "timing.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stage", "rows", "seconds"])
        rows = {"parametric_train": train.shape[0], "parametric_transform": test.shape[0]}
        for stage, secs in timings:
            writer.writerow([stage, rows.get(stage, X.shape[0]), f"{secs:.6f}"])
        writer.writerow(["speedup", test.shape[0], f"{ratio:.3f}"])
    return {"timing": str(out / "timing.csv"), "speedup": ratio}


HANDLERS = {
    "fit": cmd_fit,
    "fit-parametric": cmd_fit_parametric,
    "transform": cmd_transform,
    "inverse": cmd_inverse,
    "metrics": cmd_metrics,
    "ssl-train": cmd_ssl_train,
    "benchmark": cmd_benchmark,
}


def run(cfg):
    """Execute one configured command; returns its summary dict."""
    cfg.validate()
    if cfg.threads > 1:
        return HANDLERS[cfg.command](cfg)
    with threadpool_limits(limits=1):
        return HANDLERS[cfg.command](cfg)


def _fail(code, message, status):
    print(f"pumap-error: {code}: {' '.join(str(message).split())}", file=sys.stderr)
    return status


def main(argv=None):
    level = os.environ.get("PUMAP_LOG", "error").lower()
    level = LOG_LEVELS.get(level, logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("pumap").setLevel(level)
    try:
        cfg = resolve_config(argv)
        summary = run(cfg)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    except ConfigError as exc:
        return _fail(exc.code, exc, EXIT_CONFIG)
    except (ParameterError, CapabilityError) as exc:
        return _fail("config-error", exc, EXIT_CONFIG)
    except NumericError as exc:
        return _fail("numeric-failure", exc, EXIT_NUMERIC)
    except (DataError, DimensionError, FileNotFoundError) as exc:
        return _fail("data-error", exc, EXIT_DATA)
    logger.info("done: %s", summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
