"""``cfkit`` command line.

Commands: ``ingest``, ``train``, ``evaluate``, ``sweep``, ``tune``, ``report``.

Every command that writes output also writes the fully resolved run
configuration (``run_config.txt``, one ``key = value`` per line) next to it;
``--config FILE`` replays such a file, with any explicit flag overriding the
file's value.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run configuration

@dataclass
class RunConfig:
    data: str = ""
    format: str = "u_data_100k"
    features: str = ""
    feature_format: str = "movielens_genres"
    algos: str = "baseline_cf,mf,hybrid,ann"
    sparsity: str = "0.2"
    seeds: str = "1"
    test_fraction: float = 0.2
    k: int = 32
    lam: float = 0.12
    lr: float = 0.005
    epochs: int = 100
    optimizer: str = "sgd"
    init_scale: float = 1.0
    seed: int = 0
    neighbors: int = 40
    n_max: int = 50
    metric: str = "cosine"
    alpha: str = "auto"
    cold_threshold: int = 1
    cf_backend: str = "factorization"
    partitions: int = 4
    sync_rounds: int = 0
    tables: int = 128
    bits: int = 24
    ann_axis: str = "user"
    folds: int = 3
    grid: str = ""
    threads: int = 0
    out_dir: str = ""
    out: str = ""

    # -- parsing ------------------------------------------------------------
    @classmethod
    def field_types(cls):
        return {f.name: f.type for f in fields(cls)}

    def set(self, key: str, value):
        key = key.strip().replace("-", "_")
        if key == "lambda":
            key = "lam"
        types = self.field_types()
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        typ = types[key]
        try:
            if typ in ("int", int):
                value = int(value)
            elif typ in ("float", float):
                value = float(value)
            else:
                value = str(value).strip()
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected {typ}, got {value!r}")
        setattr(self, key, value)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        for no, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{no}: expected 'key = value'")
            key, value = line.split("=", 1)
            try:
                cfg.set(key, value.strip())
            except ConfigError as exc:
                raise ConfigError(f"{path}:{no}: {exc}")
        return cfg

    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def write(self, path):
        Path(path).write_text(self.dumps())

    # -- derived values -------------------------------------------------------
    def sparsity_levels(self) -> list[float]:
        try:
            levels = [float(x) for x in self.sparsity.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"sparsity: not a number list: {self.sparsity!r}")
        if not levels or any(not 0.0 <= s < 1.0 for s in levels):
            raise ConfigError("sparsity: values must lie in [0, 1)")
        return levels

    def seed_list(self) -> list[int]:
        """``"3"`` means three seeds starting at ``seed``; ``"0,5,9"`` is
        an explicit list."""
        text = self.seeds.strip()
        try:
            if "," in text:
                return [int(x) for x in text.split(",") if x.strip()]
            n = int(text)
        except ValueError:
            raise ConfigError(f"seeds: expected a count or a comma list, got {text!r}")
        if n < 1:
            raise ConfigError("seeds: count must be >= 1")
        return list(range(self.seed, self.seed + n))

    def algo_list(self) -> list[str]:
        from .evaluation import ALGORITHMS
        algos = [a.strip() for a in self.algos.split(",") if a.strip()]
        bad = [a for a in algos if a not in ALGORITHMS]
        if bad or not algos:
            raise ConfigError(f"algos: unknown {bad or '(empty)'}; choose from {ALGORITHMS}")
        return algos

    def alpha_value(self):
        if self.alpha in ("", "auto"):
            return None
        try:
            a = float(self.alpha)
        except ValueError:
            raise ConfigError(f"alpha: expected a number or 'auto', got {self.alpha!r}")
        if not 0.0 <= a <= 1.0:
            raise ConfigError("alpha: must lie in [0, 1]")
        return a

    def thread_count(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    def mf_params(self, prefix="") -> dict:
        return {f"{prefix}optimizer": self.optimizer, f"{prefix}k": self.k,
                f"{prefix}lam": self.lam, f"{prefix}learning_rate": self.lr,
                f"{prefix}epochs": self.epochs, f"{prefix}init_scale": self.init_scale}

    def algorithm_params(self, name: str) -> dict:
        if name in ("baseline_cf", "user_cf", "item_cf"):
            return {"k": self.neighbors, "n_max": self.n_max, "metric": self.metric}
        if name == "mf":
            return self.mf_params()
        if name in ("als", "partitioned_als"):
            p = self.mf_params()
            p["optimizer"] = "als"
            if name == "partitioned_als":
                p["partitions"] = self.partitions
                if self.sync_rounds:
                    p["epochs"] = self.sync_rounds
            return p
        if name == "hybrid":
            return {"alpha": self.alpha_value(), "cold_threshold": self.cold_threshold,
                    "cf_backend": self.cf_backend, **self.mf_params("mf_")}
        if name == "ann":
            return {"num_tables": self.tables, "bits_per_table": self.bits,
                    "axis": self.ann_axis, "k": self.neighbors, **self.mf_params("mf_")}
        return {}

    def validate(self, need_data=True):
        if need_data and not self.data:
            raise ConfigError("data: a ratings file is required (--data)")
        from .ingest import FEATURE_FORMATS, RATING_FORMATS
        if self.format not in RATING_FORMATS:
            raise ConfigError(f"format: expected one of {RATING_FORMATS}")
        if self.feature_format not in FEATURE_FORMATS:
            raise ConfigError(f"feature_format: expected one of {FEATURE_FORMATS}")
        if self.optimizer not in ("sgd", "als"):
            raise ConfigError("optimizer: expected sgd or als")
        if self.cf_backend not in ("factorization", "neighborhood"):
            raise ConfigError("cf_backend: expected factorization or neighborhood")
        if self.metric not in ("cosine", "pearson"):
            raise ConfigError("metric: expected cosine or pearson")
        if self.ann_axis not in ("user", "item"):
            raise ConfigError("ann_axis: expected user or item")
        for name, lo in (("k", 1), ("epochs", 0), ("neighbors", 1), ("n_max", 1),
                         ("partitions", 1), ("tables", 1), ("bits", 1), ("folds", 2),
                         ("cold_threshold", 0), ("sync_rounds", 0), ("threads", 0)):
            if getattr(self, name) < lo:
                raise ConfigError(f"{name}: must be >= {lo}")
        if self.lam < 0:
            raise ConfigError("lambda: must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr: must be > 0")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction: must lie in (0, 1)")
        self.alpha_value()


# ---------------------------------------------------------------------------
# argument parsing

_FLAG_KEYS = {f.name for f in fields(RunConfig)}


def _add_common(p, data=True):
    p.add_argument("--config", help="key = value run configuration file")
    if data:
        p.add_argument("--data", help="ratings file")
        p.add_argument("--format", help="dat_1m | csv_latest | u_data_100k")
        p.add_argument("--features", help="item attribute file (for the hybrid model)")
        p.add_argument("--feature-format", dest="feature_format",
                       help="movielens_genres | csv_key_value")
    p.add_argument("--threads", type=int, help="cap on worker threads (default: all cores)")


def _add_model(p):
    g = p.add_argument_group("model hyperparameters")
    g.add_argument("--k", type=int, help="latent dimension")
    g.add_argument("--lambda", dest="lam", type=float, help="regularization weight")
    g.add_argument("--lr", type=float, help="SGD learning rate")
    g.add_argument("--epochs", type=int, help="SGD epochs / ALS sweeps")
    g.add_argument("--optimizer", help="sgd | als")
    g.add_argument("--init-scale", dest="init_scale", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--neighbors", type=int, help="neighbor budget K for memory CF / ANN")
    g.add_argument("--n-max", dest="n_max", type=int, help="neighbor list length")
    g.add_argument("--metric", help="cosine | pearson")
    g.add_argument("--alpha", help="hybrid CF weight in [0,1] or 'auto'")
    g.add_argument("--cold-threshold", dest="cold_threshold", type=int)
    g.add_argument("--cf-backend", dest="cf_backend", help="factorization | neighborhood")
    g.add_argument("--partitions", type=int, help="user partitions for partitioned ALS")
    g.add_argument("--sync-rounds", dest="sync_rounds", type=int)
    g.add_argument("--tables", type=int, help="LSH tables L")
    g.add_argument("--bits", type=int, help="LSH bits per key b")
    g.add_argument("--ann-axis", dest="ann_axis", help="user | item")


def _add_protocol(p):
    p.add_argument("--sparsity", help="comma list of fractions of training ratings removed")
    p.add_argument("--seeds", help="seed count, or comma list of seeds")
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--out-dir", dest="out_dir", help="directory for reports")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cfkit", description="Collaborative filtering experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse a ratings file and print a summary")
    p.add_argument("path", nargs="?")
    _add_common(p)
    p.add_argument("--lenient", action="store_true",
                   help="exit 0 even when invalid lines were skipped")

    p = sub.add_parser("train", help="train a factor model and save it")
    _add_common(p)
    _add_model(p)
    p.add_argument("--algo", dest="algos", help="mf | als | partitioned_als")
    p.add_argument("--out", help="model output file")

    for name, helptext in (("evaluate", "evaluate one algorithm"),
                           ("sweep", "algorithms x sparsity levels x seeds")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_model(p)
        _add_protocol(p)
        if name == "evaluate":
            p.add_argument("--algo", dest="algos")
        else:
            p.add_argument("--algos", help="comma list of algorithms")

    p = sub.add_parser("tune", help="k-fold grid search on the training split")
    _add_common(p)
    _add_model(p)
    _add_protocol(p)
    p.add_argument("--algo", dest="algos")
    p.add_argument("--grid", help="e.g. 'k=16,32;lambda=0.05,0.1'")
    p.add_argument("--folds", type=int)

    p = sub.add_parser("report", help="render a results CSV as a table")
    p.add_argument("csv")
    p.add_argument("--out", help="also write the table to this file")
    return ap


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    for key, value in vars(args).items():
        if key in _FLAG_KEYS and value is not None:
            cfg.set(key, value)
    if getattr(args, "path", None):
        cfg.data = args.path
    return cfg


# ---------------------------------------------------------------------------
# commands

def _load(cfg: RunConfig):
    from .ingest import load_dataset
    name = Path(cfg.data).parent.name or Path(cfg.data).stem
    ds, feats = load_dataset(cfg.data, cfg.format, cfg.features or None, cfg.feature_format)
    return name, ds, feats


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.out_dir:
        raise ConfigError("out_dir: an output directory is required (--out-dir)")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ingest(cfg: RunConfig, lenient=False) -> int:
    from .ingest import parse_movielens
    if not cfg.data:
        raise ConfigError("ingest: a ratings file path is required")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = parse_movielens(cfg.data, cfg.format)
    for no, reason in ds.skipped_lines:
        print(f"{cfg.data}:{no}: {reason}", file=sys.stderr)
    s = ds.summary()
    print(f"{s['users']} users, {s['items']} items, {s['ratings']} ratings, "
          f"density {s['density']:.4%}, rating range [{s['rating_min']:g}, {s['rating_max']:g}]")
    if ds.skipped_lines:
        print(f"{len(ds.skipped_lines)} invalid line(s) skipped", file=sys.stderr)
        return EXIT_OK if lenient else EXIT_RUNTIME
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    from .factorization import TrainConfig, save_model, train
    from .parallel import train_partitioned
    if not cfg.out:
        raise ConfigError("out: a model output path is required (--out)")
    if cfg.algos == RunConfig.algos:
        cfg.algos = "mf"
    algo = cfg.algos if cfg.algos in ("mf", "als", "partitioned_als") else None
    if algo is None:
        raise ConfigError("algo: train supports mf, als or partitioned_als")
    _, ds, _ = _load(cfg)
    opt = "als" if algo != "mf" else cfg.optimizer
    tc = TrainConfig(opt, cfg.epochs, cfg.lr, cfg.lam, cfg.k, cfg.init_scale, cfg.seed)
    if algo == "partitioned_als":
        res = train_partitioned(ds.ratings, cfg.partitions, tc, cfg.sync_rounds or None,
                                cfg.thread_count())
    else:
        res = train(ds.ratings, tc, cfg.thread_count() if opt == "als" else 1)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(res.model, out)
    cfg.write(out.with_name(out.name + ".run_config.txt"))
    print(f"trained {algo}: {res.epochs_run} epochs, final objective {res.trace[-1]:.6g}; "
          f"saved {out}")
    return EXIT_OK


def _specs(cfg: RunConfig):
    from .evaluation import AlgorithmSpec
    return [AlgorithmSpec(a, cfg.algorithm_params(a)) for a in cfg.algo_list()]


def cmd_sweep(cfg: RunConfig, single=False) -> int:
    from .evaluation import run_experiment
    specs = _specs(cfg)
    if single and len(specs) != 1:
        raise ConfigError("evaluate takes exactly one --algo")
    levels, seeds = cfg.sparsity_levels(), cfg.seed_list()
    out = _out_dir(cfg)
    name, ds, feats = _load(cfg)
    if any(s.name == "hybrid" for s in specs) and feats is None:
        raise ConfigError("features: the hybrid model needs --features")

    def progress(row):
        print(f"{row.algorithm:<16} sparsity={row.sparsity:.2f} seed={row.seed} "
              f"rmse={row.rmse:.4f} mae={row.mae:.4f} train={row.train_time_s:.2f}s",
              file=sys.stderr)

    report = run_experiment(ds.ratings, specs, levels, seeds, feats, name,
                            cfg.test_fraction, cfg.thread_count(), progress)
    report.environment["threads"] = cfg.thread_count()
    report.to_csv(out / "results.csv")
    report.to_json(out / "results.json")
    cfg.write(out / "run_config.txt")
    print(report.table())
    print(f"\nwrote {len(report)} rows to {out / 'results.csv'}")
    return EXIT_OK


def parse_grid(text: str) -> dict:
    """``"k=16,32;lambda=0.05,0.1"`` -> ``{"k": [16, 32], "lam": [0.05, 0.1]}``."""
    grid = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        if "=" not in part:
            raise ConfigError(f"grid: expected name=v1,v2 in {part!r}")
        key, values = part.split("=", 1)
        key = {"lambda": "lam", "lr": "learning_rate", "b": "bits_per_table",
               "L": "num_tables"}.get(key.strip(), key.strip())
        vals = []
        for v in values.split(","):
            v = v.strip()
            try:
                vals.append(int(v))
            except ValueError:
                try:
                    vals.append(float(v))
                except ValueError:
                    vals.append(v)
        grid[key] = vals
    if not grid:
        raise ConfigError("grid: empty")
    return grid


def cmd_tune(cfg: RunConfig) -> int:
    import csv
    import json
    from .core import SplitSpec, split
    from .evaluation import AlgorithmSpec, tune
    algos = cfg.algo_list()
    if len(algos) != 1:
        raise ConfigError("tune takes exactly one --algo")
    grid = parse_grid(cfg.grid)
    out = _out_dir(cfg)
    _, ds, feats = _load(cfg)
    train_part, _ = split(ds.ratings, SplitSpec(cfg.test_fraction, cfg.seed, True))
    spec = AlgorithmSpec(algos[0], cfg.algorithm_params(algos[0]))
    res = tune(train_part, spec, grid, cfg.folds, cfg.seed, feats, cfg.thread_count())
    with open(out / "tune.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["params", "mean_rmse", "fold_rmse"])
        for params, score, folds in res.table:
            w.writerow([json.dumps(params, sort_keys=True), repr(score),
                        json.dumps(folds)])
    cfg.write(out / "run_config.txt")
    for params, score, _ in res.table:
        print(f"{json.dumps(params, sort_keys=True):<50} {score:.4f}")
    print(f"best: {json.dumps(res.best, sort_keys=True)} (rmse {res.best_rmse:.4f})")
    return EXIT_OK


def cmd_report(path, out=None) -> int:
    from .evaluation import EvalReport
    text = EvalReport.from_csv(path).table()
    print(text)
    if out:
        Path(out).write_text(text + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.csv, args.out)
        cfg = resolve_config(args)
        if args.command == "ingest":
            return cmd_ingest(cfg, args.lenient)
        cfg.validate()
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_sweep(cfg, single=True)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "tune":
            return cmd_tune(cfg)
    except ConfigError as exc:
        print(f"cfkit: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"cfkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
