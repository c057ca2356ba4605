"""Experiment harness: error metrics, timed train/predict cells, sparsity
sweeps, k-fold tuning and report serialization.

Protocol for one (seed, sparsity) cell: an 8:2 per-user stratified split
(shared by every algorithm for that seed), then the training part is masked
down to ``1 - sparsity`` of its entries (nested across sparsities), the
algorithm is fitted and timed, and the whole test set is scored.  Memory-CF
abstentions are filled with the training mean so every algorithm is scored
on the same pairs.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import platform
import socket
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import RatingsMatrix, SparsityLevel, SplitSpec, mask, retention_order, split
from .factorization import MatrixFactorization, TrainConfig
from .hybrid import HybridConfig, HybridModel, tune_alpha
from .lsh import LshConfig, exact_cosine_index, lsh_neighborhood_index, recall_at_k
from .neighborhood import NeighborhoodCF
from .parallel import PartitionedALS

_logger = logging.getLogger(__name__)


class EmptyInput(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# metrics

def _pairs(predictions, actual=None):
    if actual is None:
        arr = np.asarray(predictions, dtype=np.float64)
        if arr.size == 0:
            raise EmptyInput("no predictions")
        arr = arr.reshape(-1, 2)
        p, a = arr[:, 0], arr[:, 1]
    else:
        p = np.asarray(predictions, dtype=np.float64).ravel()
        a = np.asarray(actual, dtype=np.float64).ravel()
        if p.shape != a.shape:
            raise ValueError("predictions and actual differ in length")
        if p.size == 0:
            raise EmptyInput("no predictions")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(a))):
        raise ValueError("non-finite value in predictions")
    return p, a


def rmse(predictions, actual=None) -> float:
    """Root mean squared error of ``(predicted, actual)`` pairs, or of two
    parallel arrays."""
    p, a = _pairs(predictions, actual)
    d = p - a
    return float(np.sqrt(np.mean(d * d)))


def mae(predictions, actual=None) -> float:
    p, a = _pairs(predictions, actual)
    return float(np.mean(np.abs(p - a)))


# ---------------------------------------------------------------------------
# algorithms

ALGORITHMS = ("baseline_cf", "user_cf", "item_cf", "mf", "als", "partitioned_als",
              "hybrid", "ann")

DEFAULT_PARAMS = {
    "user_cf": {"metric": "cosine", "n_max": 50, "k": 40, "shrinkage": 0.0},
    "item_cf": {"metric": "cosine", "n_max": 50, "k": 40, "shrinkage": 0.0},
    "mf": {"optimizer": "sgd", "k": 32, "lam": 0.12, "learning_rate": 0.005,
           "epochs": 100, "init_scale": 1.0, "convergence_tol": 1e-5},
    "als": {"optimizer": "als", "k": 8, "lam": 5.0, "epochs": 15, "init_scale": 1.0,
            "convergence_tol": 1e-5},
    "partitioned_als": {"optimizer": "als", "k": 8, "lam": 5.0, "epochs": 15,
                        "init_scale": 1.0, "convergence_tol": 1e-5, "partitions": 4},
    "hybrid": {"alpha": None, "cold_threshold": 1, "cf_backend": "factorization",
               "alpha_grid": [0.0, 0.25, 0.5, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0]},
    "ann": {"axis": "user", "num_tables": 128, "bits_per_table": 24, "n_max": 200,
            "k": 40},
}
DEFAULT_PARAMS["baseline_cf"] = DEFAULT_PARAMS["user_cf"]
_TRAIN_KEYS = {f.name for f in TrainConfig.__dataclass_fields__.values()}


@dataclass
class AlgorithmSpec:
    name: str
    params: dict = field(default_factory=dict)
    label: str | None = None

    def __post_init__(self):
        if self.name not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.name!r}; expected one of {ALGORITHMS}")

    @property
    def display(self):
        return self.label or self.name

    def resolved(self) -> dict:
        out = dict(DEFAULT_PARAMS[self.name])
        if self.name in ("hybrid", "ann"):
            out.update({f"mf_{k}": v for k, v in DEFAULT_PARAMS["mf"].items()})
        out.update(self.params)
        return out


def _train_config(params, seed, prefix=""):
    kw = {k[len(prefix):]: v for k, v in params.items()
          if k.startswith(prefix) and k[len(prefix):] in _TRAIN_KEYS}
    kw["seed"] = seed
    return TrainConfig(**kw)


class _Estimator:
    """Uniform fit/predict wrapper; ``extra`` carries per-run diagnostics."""

    def __init__(self, spec: AlgorithmSpec, seed: int, features=None, threads=1):
        self.spec = spec
        self.params = spec.resolved()
        self.seed = seed
        self.features = features
        self.threads = threads
        self.extra = {}
        self.inner = None

    def fit(self, train: RatingsMatrix, validation: RatingsMatrix | None = None):
        p, name = self.params, self.spec.name
        if name in ("baseline_cf", "user_cf", "item_cf"):
            axis = "item" if name == "item_cf" else "user"
            self.inner = NeighborhoodCF(axis, p["metric"], p["n_max"], p["k"],
                                        p.get("shrinkage", 0.0), p.get("min_overlap", 1))
            self.inner.fit(train)
        elif name in ("mf", "als"):
            self.inner = MatrixFactorization(_train_config(p, self.seed), self.threads).fit(train)
            self.extra["epochs_run"] = self.inner.result.epochs_run
        elif name == "partitioned_als":
            self.inner = PartitionedALS(_train_config(p, self.seed), p["partitions"],
                                        threads=self.threads).fit(train)
            self.extra["rounds"] = self.inner.result.epochs_run
        elif name == "hybrid":
            if self.features is None:
                raise ExperimentError("the hybrid model needs item features")
            backend = p["cf_backend"]

            def new_cf():
                if backend == "neighborhood":
                    return NeighborhoodCF("user", "cosine")
                return MatrixFactorization(_train_config(p, self.seed, "mf_"), self.threads)

            cf = new_cf()
            alpha = p["alpha"]
            if alpha is None:
                # pick alpha on a held-out slice of the training data only
                sub, val = split(train, SplitSpec(0.1, self.seed + 7919, True))
                alpha, table = tune_alpha(sub, val, p["alpha_grid"], self.features, cf=cf,
                                          cold_threshold=p["cold_threshold"])
                self.extra["alpha_table"] = table
                cf = new_cf()
            self.extra["alpha"] = alpha
            self.inner = HybridModel(self.features,
                                     HybridConfig(alpha, backend, p["cold_threshold"]),
                                     cf).fit(train)
        elif name == "ann":
            mf = MatrixFactorization(_train_config(p, self.seed, "mf_"), self.threads).fit(train)
            model = mf.model
            axis = p["axis"]
            vecs = model.P.copy() if axis == "user" else model.Q.copy()
            seen = model.user_seen if axis == "user" else model.item_seen
            vecs[~seen] = 0.0
            cfg = LshConfig(p["num_tables"], p["bits_per_table"], self.seed)
            index = lsh_neighborhood_index(vecs, cfg, p["n_max"], axis)
            self.inner = NeighborhoodCF(axis, "cosine", p["n_max"], p["k"]).fit(train, index)
            self.extra["candidate_fraction"] = index.extra["candidate_fraction"]
            self.extra["mean_candidates"] = index.extra["mean_candidates"]
        return self

    def predict(self, users, items) -> np.ndarray:
        if isinstance(self.inner, NeighborhoodCF):
            raw = self.inner.predict_raw(users, items)
            self.extra["abstain_rate"] = float(np.mean(np.isnan(raw))) if len(raw) else 0.0
            return np.where(np.isnan(raw), self.inner.train.global_mean, raw)
        out = self.inner.predict(users, items)
        if isinstance(self.inner, HybridModel):
            self.extra["cold_pairs"] = self.inner.last_cold_count
        return out


def make_estimator(spec: AlgorithmSpec | str, seed: int = 0, features=None, threads=1):
    if isinstance(spec, str):
        spec = AlgorithmSpec(spec)
    return _Estimator(spec, seed, features, threads)


# ---------------------------------------------------------------------------
# reports

CSV_COLUMNS = (
    "algorithm", "dataset", "sparsity", "retained_fraction", "seed", "rmse", "mae",
    "train_time_s", "predict_time_s", "n_train", "n_test", "hyperparameters", "extra",
)


@dataclass
class EvalRow:
    algorithm: str
    dataset: str
    sparsity: float
    retained_fraction: float
    seed: int
    rmse: float
    mae: float
    train_time_s: float
    predict_time_s: float
    n_train: int
    n_test: int
    hyperparameters: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def environment() -> dict:
    return {
        "host": socket.gethostname(),
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
        "threads": int(os.environ.get("CFKIT_THREADS", "0")) or os.cpu_count(),
    }


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_json_default)


class EvalReport:
    """Rows of per-cell results plus the environment they ran in.

    ``sparsity`` is the fraction of training entries removed;
    ``retained_fraction = 1 - sparsity`` is written alongside so both
    conventions are explicit.
    """

    def __init__(self, rows=None, env=None):
        self.rows: list[EvalRow] = list(rows or [])
        self.environment = env if env is not None else environment()

    def __len__(self):
        return len(self.rows)

    def append(self, row: EvalRow):
        if not (row.rmse >= row.mae - 1e-12 >= -1e-12):
            raise ExperimentError(f"invalid metrics rmse={row.rmse} mae={row.mae}")
        if row.train_time_s < 0 or row.predict_time_s < 0:
            raise ExperimentError("negative timing")
        self.rows.append(row)

    def extend(self, other: "EvalReport"):
        for r in other.rows:
            self.append(r)

    def select(self, algorithm=None, sparsity=None):
        return [r for r in self.rows
                if (algorithm is None or r.algorithm == algorithm)
                and (sparsity is None or abs(r.sparsity - sparsity) < 1e-9)]

    def aggregate(self) -> list[dict]:
        """Mean and sample stddev over seeds for every (algorithm, sparsity)."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r.algorithm, r.dataset, r.sparsity), []).append(r)
        out = []
        for (alg, ds, sp), rows in groups.items():
            rec = {"algorithm": alg, "dataset": ds, "sparsity": sp,
                   "retained_fraction": rows[0].retained_fraction, "seeds": len(rows)}
            for col in ("rmse", "mae", "train_time_s", "predict_time_s"):
                vals = np.array([getattr(r, col) for r in rows])
                rec[col] = float(vals.mean())
                rec[col + "_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            out.append(rec)
        return out

    def mean(self, algorithm, sparsity, column="rmse") -> float:
        vals = [getattr(r, column) for r in self.select(algorithm, sparsity)]
        if not vals:
            raise KeyError((algorithm, sparsity))
        return float(np.mean(vals))

    # -- serialization ------------------------------------------------------
    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                d = asdict(r)
                d["hyperparameters"] = _dumps(r.hyperparameters)
                d["extra"] = _dumps(r.extra)
                w.writerow([repr(d[c]) if isinstance(d[c], float) else d[c]
                            for c in CSV_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "EvalReport":
        rows = []
        with open(path, newline="") as fh:
            for d in csv.DictReader(fh):
                rows.append(EvalRow(
                    d["algorithm"], d["dataset"], float(d["sparsity"]),
                    float(d["retained_fraction"]), int(d["seed"]), float(d["rmse"]),
                    float(d["mae"]), float(d["train_time_s"]), float(d["predict_time_s"]),
                    int(d["n_train"]), int(d["n_test"]),
                    json.loads(d["hyperparameters"]), json.loads(d["extra"])))
        return cls(rows, env={})

    def to_json(self, path=None) -> str:
        doc = {"environment": self.environment,
               "columns": list(CSV_COLUMNS),
               "rows": [asdict(r) for r in self.rows],
               "aggregate": self.aggregate()}
        text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def table(self) -> str:
        """Aligned text table with one line per (algorithm, sparsity)."""
        header = ("Algorithm", "Data Sparsity", "Retained", "RMSE", "MAE",
                  "Training Time (s)", "Seeds")
        lines = []
        for a in sorted(self.aggregate(), key=lambda a: (a["sparsity"], a["algorithm"])):
            lines.append((a["algorithm"], f"{a['sparsity']:.0%}",
                          f"{a['retained_fraction']:.0%}",
                          f"{a['rmse']:.4f} ± {a['rmse_std']:.4f}",
                          f"{a['mae']:.4f} ± {a['mae_std']:.4f}",
                          f"{a['train_time_s']:.2f}", str(a["seeds"])))
        widths = [max(len(h), *(len(l[i]) for l in lines)) if lines else len(h)
                  for i, h in enumerate(header)]
        fmt = "  ".join("{:<%d}" % w for w in widths)
        out = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
        out += [fmt.format(*l) for l in lines]
        return "\n".join(out)


# ---------------------------------------------------------------------------
# experiments

_WARM = False


def warm_up():
    """JIT-compile the numeric kernels on a tiny problem so no timed cell
    pays compilation cost."""
    global _WARM
    if _WARM:
        return
    from .core import build_ratings
    from .ingest import FeatureTable
    tiny = build_ratings([(u, i, float(1 + (u * 3 + i) % 5)) for u in range(6)
                          for i in range(5) if (u + i) % 3])
    feats = FeatureTable(np.eye(5, 3), ["a", "b", "c"])
    for name in ("user_cf", "item_cf", "mf", "als", "ann"):
        params = {"epochs": 2} if name in ("mf", "als") else {}
        if name == "ann":
            params = {"num_tables": 2, "bits_per_table": 2, "n_max": 3, "mf_epochs": 2}
        est = make_estimator(AlgorithmSpec(name, params), 0, feats)
        est.fit(tiny).predict(tiny.users, tiny.items)
    for kind in ("pearson",):
        NeighborhoodCF("user", kind).fit(tiny)
    _WARM = True


def run_experiment(matrix: RatingsMatrix, algorithms, sparsities=(0.2,), seeds=(0,),
                   features=None, dataset: str = "dataset", test_fraction: float = 0.2,
                   threads: int = 1, progress=None) -> EvalReport:
    """Evaluate every algorithm at every (sparsity, seed).

    ``sparsities`` are fractions of training entries removed (0.2 keeps
    80%).  Returns an :class:`EvalReport` with one row per
    (seed, sparsity, algorithm).
    """
    specs = [a if isinstance(a, AlgorithmSpec) else AlgorithmSpec(a) for a in algorithms]
    if not seeds:
        raise ValueError("at least one seed is required")
    warm_up()
    report = EvalReport()
    for seed in seeds:
        train_full, test = split(matrix, SplitSpec(test_fraction, seed, True))
        order = retention_order(train_full, seed)
        for s in sparsities:
            level = SparsityLevel.from_sparsity(s)
            train = mask(train_full, level, seed, order)
            for spec in specs:
                try:
                    row = _run_cell(spec, train, test, seed, level, features, dataset, threads)
                except Exception as exc:
                    raise ExperimentError(
                        f"{spec.display} failed at sparsity={s}, seed={seed}: {exc}") from exc
                report.append(row)
                if progress:
                    progress(row)
    return report


def _run_cell(spec, train, test, seed, level, features, dataset, threads):
    est = make_estimator(spec, seed, features, threads)
    t0 = time.perf_counter()
    est.fit(train)
    t1 = time.perf_counter()
    pred = est.predict(test.users, test.items)
    t2 = time.perf_counter()
    return EvalRow(
        algorithm=spec.display, dataset=dataset, sparsity=level.sparsity,
        retained_fraction=level.retained_fraction, seed=seed,
        rmse=rmse(pred, test.ratings), mae=mae(pred, test.ratings),
        train_time_s=t1 - t0, predict_time_s=t2 - t1,
        n_train=train.nnz, n_test=test.nnz,
        hyperparameters=spec.resolved(), extra=dict(est.extra))


# ---------------------------------------------------------------------------
# tuning

def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """Balanced fold labels for ``n`` entries, a pure function of the seed."""
    perm = np.random.default_rng([seed, 17]).permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = np.arange(n) % folds
    return labels


@dataclass
class TuneResult:
    best: dict
    best_rmse: float
    table: list
    """``(params, mean_rmse, per_fold_rmse)`` for every grid cell, in grid order."""


def expand_grid(grid: dict) -> list[dict]:
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def tune(train: RatingsMatrix, algorithm: str | AlgorithmSpec, grid: dict, folds: int = 3,
         seed: int = 0, features=None, threads: int = 1) -> TuneResult:
    """k-fold cross-validated grid search over ``train`` only.

    Each cell's parameters are layered over the algorithm's defaults (and
    over ``algorithm.params`` when a spec is given).  The lowest mean
    validation RMSE wins; ties keep the earlier grid cell.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    cells = expand_grid(grid)
    if not cells:
        raise ValueError("empty grid")
    base = algorithm if isinstance(algorithm, AlgorithmSpec) else AlgorithmSpec(algorithm)
    labels = fold_assignment(train.nnz, folds, seed)
    warm_up()
    table = []
    for cell in cells:
        spec = AlgorithmSpec(base.name, {**base.params, **cell}, base.label)
        scores = []
        for f in range(folds):
            fit_m = train.subset(labels != f)
            val = train.subset(labels == f)
            est = make_estimator(spec, seed, features, threads).fit(fit_m)
            scores.append(rmse(est.predict(val.users, val.items), val.ratings))
        table.append((cell, float(np.mean(scores)), scores))
    best = min(range(len(table)), key=lambda j: (table[j][1], j))
    return TuneResult(table[best][0], table[best][1], table)


@dataclass
class LshTuneResult:
    config: LshConfig | None
    recall: float
    candidate_fraction: float
    table: list


def tune_lsh(vectors: np.ndarray, grid: dict, recall_target: float = 0.8, k: int = 10,
             seed: int = 0, axis: str = "item") -> LshTuneResult:
    """Cheapest (num_tables, bits_per_table) reaching ``recall@k`` against
    exact cosine top-k.  "Cheapest" means the smallest candidate fraction."""
    exact = exact_cosine_index(vectors, k, axis)
    table = []
    for cell in expand_grid(grid):
        cfg = LshConfig(cell["num_tables"], cell["bits_per_table"], seed)
        approx = lsh_neighborhood_index(vectors, cfg, k, axis)
        table.append((cfg, recall_at_k(approx, exact, k), approx.extra["candidate_fraction"]))
    ok = [t for t in table if t[1] >= recall_target]
    if not ok:
        best = max(table, key=lambda t: t[1])
        return LshTuneResult(None, best[1], best[2], table)
    best = min(ok, key=lambda t: (t[2], -t[1]))
    return LshTuneResult(best[0], best[1], best[2], table)
