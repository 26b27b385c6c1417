"""Three-step benchmark pipeline: candidate generation, hyperparameter tuning, final test.

Steps 1 and 2 only ever see a :class:`~pqcsearch.data.TrainView`; the test
split is read once per method in step 3, and every read is logged in the
dataset's leakage audit.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import FLEXIBLE, LAYERED, GaConfig, genetic_search, parse_circuit, random_search, reference_search
from .circuit import MAX_DEPTH, NUM_ACTIONS
from .data import Dataset, TrainView, load_csv, make_synthetic_quantum_regression, make_two_curves, prepare_california
from .evaluation import CircuitEvaluator, top_k
from .learners import (
    C_RANGE,
    CLASSIFICATION,
    LAMBDA_RANGE,
    REGRESSION,
    ModelConfig,
    ScoringError,
    cross_validate,
    fit,
    fixed_folds,
    predict,
    score,
)
from .muzero import MuZeroAgent, MuZeroConfig
from .pqk import FeatureCache, compute_features, gram
from .search_env import CircuitSearchEnv, RewardTable

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

MUZERO = "muzero"
RANDOM_LAYERED = "random-layered"
RANDOM_FLEXIBLE = "random-flexible"
GA = "ga"
REFERENCE = "reference"
CLASSICAL_SVM = "classical-svm"
CLASSICAL_KRR = "classical-krr"
METHODS = (MUZERO, RANDOM_LAYERED, RANDOM_FLEXIBLE, GA, REFERENCE, CLASSICAL_SVM, CLASSICAL_KRR)

# plot categories, in figure order
CATEGORIES = {
    CLASSICAL_SVM: "CML",
    CLASSICAL_KRR: "CML",
    REFERENCE: "reference",
    MUZERO: "MuZero",
    RANDOM_LAYERED: "random-layered",
    RANDOM_FLEXIBLE: "random-flexible",
    GA: "GA",
}
CATEGORY_ORDER = ("CML", "reference", "MuZero", "random-layered", "random-flexible", "GA")

DATASETS = ("two_curves", "synthetic_quantum", "california")

GAMMA_RANGE = (1e-3, 10.0)


class ConfigError(ValueError):
    pass


class StepError(RuntimeError):
    pass


class HyperoptFailedError(RuntimeError):
    pass


class ReportError(OSError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

# section of each config field in the file form
_SECTIONS = {
    "dataset": ("dataset", "dataset_seed", "csv_path", "csv_target"),
    "protocol": ("methods", "seed", "folds", "fold_seed", "top_k", "budget", "hyperopt_trials", "workers"),
    "search": ("search_gamma", "search_reg", "max_depth", "restart_prob", "mcts_simulations", "ga_population", "ga_generations", "reference_layers", "kta_budget"),
    "rewards": ("reward_surpass", "reward_match", "reward_episode_improve", "reward_no_improve", "reward_no_encoding"),
    "output": ("out_dir", "cache_dir"),
}


@dataclass(frozen=True)
class BenchmarkConfig:
    dataset: str = "two_curves"
    dataset_seed: int = 0
    csv_path: str = ""
    csv_target: str = "MedHouseVal"
    methods: tuple = (MUZERO, RANDOM_LAYERED, RANDOM_FLEXIBLE, GA, REFERENCE, CLASSICAL_SVM)
    seed: int = 0
    folds: int = 5
    fold_seed: int = 0
    top_k: int = 5
    budget: int = 3000
    hyperopt_trials: int = 30
    workers: int = 1
    search_gamma: float = 1.0
    search_reg: float = 0.0  # 0 picks the task default
    max_depth: int = MAX_DEPTH
    restart_prob: float = 0.2
    mcts_simulations: int = 50
    ga_population: int = 30
    ga_generations: int = 0  # 0 runs until the budget is spent
    reference_layers: int = 2
    kta_budget: int = 200
    reward_surpass: float = 1.0
    reward_match: float = 0.5
    reward_episode_improve: float = 0.1
    reward_no_improve: float = -0.02
    reward_no_encoding: float = -1.0
    out_dir: str = "runs"
    cache_dir: str = ""

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; expected one of {DATASETS}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if self.budget < self.top_k or self.top_k < 1:
            raise ConfigError("budget must be at least top_k >= 1")
        if self.hyperopt_trials < 1 or self.folds < 2 or self.workers < 1:
            raise ConfigError("hyperopt_trials >= 1, folds >= 2 and workers >= 1 are required")
        if self.dataset == "california" and not self.csv_path:
            raise ConfigError("the california dataset needs csv_path")
        try:
            self.rewards()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def rewards(self) -> RewardTable:
        return RewardTable(
            self.reward_surpass, self.reward_match, self.reward_episode_improve, self.reward_no_improve, self.reward_no_encoding
        )

    def replace(self, **changes) -> "BenchmarkConfig":
        values = asdict(self)
        values.update({k: v for k, v in changes.items() if v is not None})
        return BenchmarkConfig(**values)

    # -- file form ----------------------------------------------------------

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser["meta"] = {"schema_version": str(SCHEMA_VERSION)}
        values = asdict(self)
        for section, keys in _SECTIONS.items():
            parser[section] = {k: _format(values[k]) for k in keys}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "BenchmarkConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        version = parser.get("meta", "schema_version", fallback=None)
        if version is None:
            raise ConfigError("config lacks meta.schema_version")
        if version.strip() != str(SCHEMA_VERSION):
            raise ConfigError(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}")
        defaults = asdict(cls())
        values = {}
        known = {k for keys in _SECTIONS.values() for k in keys}
        for section in parser.sections():
            if section == "meta":
                continue
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser[section].items():
                if key not in known or key not in _SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                values[key] = _parse(raw, defaults[key], key)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "BenchmarkConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_ini(text)

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini(), encoding="utf-8")


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {key}") from None


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def load_dataset(config: BenchmarkConfig) -> Dataset:
    if config.dataset == "two_curves":
        return make_two_curves(seed=config.dataset_seed)
    if config.dataset == "synthetic_quantum":
        return make_synthetic_quantum_regression(seed=config.dataset_seed)
    path = Path(config.csv_path)
    if not path.is_file():
        raise ConfigError(f"california CSV not found: {path}")
    try:
        raw = load_csv(path, config.csv_target, REGRESSION)
        return prepare_california(raw, seed=config.dataset_seed)
    except ValueError as exc:
        raise ConfigError(f"cannot prepare {path}: {exc}") from None


def dataset_task(config: BenchmarkConfig) -> str:
    return CLASSIFICATION if config.dataset == "two_curves" else REGRESSION


def default_search_model(task: str, config: BenchmarkConfig) -> ModelConfig:
    reg = config.search_reg or (10.0 if task == CLASSIFICATION else 1e-3)
    return ModelConfig(task, gamma=config.search_gamma, reg=reg)


# ---------------------------------------------------------------------------
# hyperparameter optimization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dimension:
    low: float
    high: float
    log: bool = True

    def sample(self, rng: np.random.Generator) -> float:
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        return float(rng.uniform(self.low, self.high))


def hyperopt(space: dict, trials: int, objective: Callable[[dict], float], seed: int = 0):
    """Seeded random search; returns ``(best params, best value, history)``.

    Objectives that raise or return NaN count as failed trials. Ties keep the
    earliest trial.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    names = sorted(space)
    best, best_value, history = None, -math.inf, []
    for _ in range(trials):
        params = {name: space[name].sample(rng) for name in names}
        try:
            value = float(objective(params))
        except (ScoringError, ArithmeticError, ValueError) as exc:
            logger.debug("trial %s failed: %s", params, exc)
            value = math.nan
        history.append((params, value))
        if math.isfinite(value) and value > best_value:
            best, best_value = params, value
    if best is None:
        raise HyperoptFailedError(f"all {trials} trials failed")
    return best, best_value, history


def model_space(task: str) -> dict:
    reg = C_RANGE if task == CLASSIFICATION else LAMBDA_RANGE
    return {"gamma": Dimension(*GAMMA_RANGE), "reg": Dimension(*reg)}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class MethodReport:
    method: str
    seed: int
    candidates: list = field(default_factory=list)  # dicts of SearchRecord fields
    chosen_circuit: Optional[str] = None
    hyperparameters: dict = field(default_factory=dict)
    tuned_cv_score: Optional[float] = None
    test_score: Optional[float] = None
    evaluations: int = 0
    wall_time: float = 0.0
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    @property
    def category(self) -> str:
        return CATEGORIES[self.method]


@dataclass
class RunReport:
    dataset: dict
    config: str
    methods: list = field(default_factory=list)
    leakage: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(m.status != "ok" for m in self.methods)

    def to_dict(self, timestamps: bool = True) -> dict:
        out = {"dataset": self.dataset, "config": self.config, "leakage": self.leakage, "methods": []}
        for m in self.methods:
            d = asdict(m)
            if not timestamps:
                d.pop("wall_time")
            out["methods"].append(d)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        methods = [MethodReport(**m) for m in data["methods"]]
        return cls(data["dataset"], data["config"], methods, data.get("leakage", {}))


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.4f}"


def emit_report(report: RunReport, directory) -> dict:
    """Write ``report.json``, ``results.jsonl``, ``summary.txt`` and ``scores.csv``.

    Rows are ordered by figure category, then method and seed, so emitting the
    same report twice gives byte-identical files.
    """
    if not report.methods:
        raise ReportError("report has no methods")
    directory = Path(directory)
    order = {c: i for i, c in enumerate(CATEGORY_ORDER)}
    methods = sorted(report.methods, key=lambda m: (order[m.category], m.method, m.seed))
    files = {}
    try:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "report.json"
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        files["report"] = path

        path = directory / "results.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for m in methods:
                for rank, cand in enumerate(m.candidates):
                    fh.write(json.dumps({"kind": "candidate", "method": m.method, "seed": m.seed, "rank": rank, **cand}, sort_keys=True) + "\n")
                final = {
                    "kind": "final", "method": m.method, "seed": m.seed, "circuit": m.chosen_circuit,
                    "hyperparameters": m.hyperparameters, "tuned_cv_score": m.tuned_cv_score,
                    "test_score": m.test_score, "evaluations": m.evaluations, "status": m.status,
                }
                fh.write(json.dumps(final, sort_keys=True) + "\n")
        files["results"] = path

        path = directory / "scores.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "run", "score"])
            for m in methods:
                if m.test_score is not None:
                    writer.writerow([m.category, m.seed, repr(m.test_score)])
        files["csv"] = path

        lines = [f"dataset: {report.dataset.get('id')} ({report.dataset.get('task')}, N={report.dataset.get('N')}, d={report.dataset.get('d')})"]
        if report.dataset.get("notes"):
            lines.append(f"note: {report.dataset['notes']}")
        lines.append("")
        lines.append(f"{'method':<16} {'seed':>4} {'evals':>6} {'best cv':>8} {'tuned cv':>8} {'test':>8}  status")
        for m in methods:
            best_cv = m.candidates[0]["cv_score"] if m.candidates else None
            lines.append(
                f"{m.method:<16} {m.seed:>4} {m.evaluations:>6} {_fmt(best_cv):>8} {_fmt(m.tuned_cv_score):>8} {_fmt(m.test_score):>8}  {m.status}"
            )
        for m in methods:
            if m.chosen_circuit:
                lines.append(f"{m.method} seed {m.seed}: {m.chosen_circuit}  {m.hyperparameters}")
        if report.leakage:
            lines.append("")
            lines.append(f"test reads before final step: {report.leakage.get('reads_before_final')}")
        path = directory / "summary.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        files["summary"] = path
    except OSError as exc:
        raise ReportError(f"cannot write report to {exc.filename or directory}: {exc.strerror or exc}") from exc
    return files


def load_report(path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def merge_reports(reports: Sequence[RunReport]) -> RunReport:
    if not reports:
        raise ReportError("no reports to merge")
    merged = RunReport(reports[0].dataset, reports[0].config, [], {})
    for r in reports:
        merged.methods.extend(r.methods)
        for k, v in r.leakage.items():
            merged.leakage[k] = merged.leakage.get(k, 0) + v
    return merged


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _run_search(method: str, view: TrainView, config: BenchmarkConfig, seed: int, cache: FeatureCache, log_dir: Optional[Path]):
    """Step 1: returns (candidates, evaluator, extra info)."""
    folds = fixed_folds(view.n, config.folds, config.fold_seed)
    q = view.X.shape[1]
    evaluator = CircuitEvaluator(
        view.X, view.y, folds, default_search_model(view.task, config), view.dataset_id, cache, config.budget, method, seed
    )
    extra = {}
    if method == MUZERO:
        env = CircuitSearchEnv(evaluator, q, config.max_depth, config.restart_prob, config.rewards(), np.random.default_rng(seed))
        agent = MuZeroAgent(MuZeroConfig(observation_size=config.max_depth * NUM_ACTIONS, n_simulations=config.mcts_simulations, seed=seed))
        log = None
        if log_dir is not None:
            log_dir.mkdir(parents=True, exist_ok=True)
            log = (log_dir / f"muzero_seed{seed}.log").open("w", encoding="utf-8")
        try:
            agent.search(env, log)
        finally:
            if log is not None:
                log.close()
        extra = {"episodes": agent.episodes, "train_steps": agent.train_steps}
        candidates = top_k(evaluator.records, config.top_k)
    elif method == RANDOM_LAYERED:
        candidates = random_search(evaluator, q, LAYERED, config.budget, config.top_k, seed, config.max_depth)
    elif method == RANDOM_FLEXIBLE:
        candidates = random_search(evaluator, q, FLEXIBLE, config.budget, config.top_k, seed, config.max_depth)
    elif method == GA:
        ga = GaConfig(population=config.ga_population, generations=config.ga_generations or None)
        result = genetic_search(evaluator, q, ga, seed, config.max_depth, config.top_k)
        candidates = result.top
        extra = {"generations": len(result.best_per_generation)}
    elif method == REFERENCE:
        candidates, kta = reference_search(evaluator, q, config.reference_layers, config.kta_budget, seed)
        candidates = candidates[: config.top_k]
        extra = {"kta": {r.circuit.template: [r.initial_alignment, r.alignment, r.evaluations] for r in kta}}
    else:
        raise ValueError(method)
    if not candidates:
        raise StepError(f"{method}: search produced no valid circuit")
    return candidates, evaluator, extra


def _tune(view: TrainView, features_of: Callable[[Optional[str]], np.ndarray], keys: Sequence[Optional[str]], config: BenchmarkConfig, seed: int):
    """Step 2: random-search (gamma, reg) per candidate, pick the best CV score."""
    folds = fixed_folds(view.n, config.folds, config.fold_seed)
    space = model_space(view.task)

    def tune_one(i_key):
        i, key = i_key
        F = features_of(key)

        def objective(p):
            return cross_validate(F, view.y, folds, ModelConfig(view.task, p["gamma"], p["reg"]))

        try:
            params, value, _ = hyperopt(space, config.hyperopt_trials, objective, seed=seed * 1000 + i)
        except HyperoptFailedError:
            return key, None, -math.inf
        return key, params, value

    items = list(enumerate(keys))
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(tune_one, items))
    else:
        results = [tune_one(item) for item in items]
    best = max(results, key=lambda r: r[2])  # first maximum wins
    if best[1] is None:
        raise HyperoptFailedError("no candidate could be tuned")
    return best


def _run_method(method: str, dataset: Dataset, config: BenchmarkConfig, seed: int, cache: FeatureCache, log_dir: Optional[Path]) -> MethodReport:
    report = MethodReport(method, seed)
    t0 = time.perf_counter()
    audit = dataset.audit
    view = dataset.train_view()
    classical = method in (CLASSICAL_SVM, CLASSICAL_KRR)
    try:
        # step 1
        audit.phase = "search"
        if classical:
            # the learner follows the task: SVC for classification, KRR for regression
            report.extra = {"learner": "svc" if dataset.task == CLASSIFICATION else "krr"}
            keys = [None]
            circuits = {}
        else:
            candidates, evaluator, report.extra = _run_search(method, view, config, seed, cache, log_dir)
            report.candidates = [asdict(c) for c in candidates]
            report.evaluations = evaluator.count
            keys = [c.circuit for c in candidates]
            circuits = {k: parse_circuit(k, config.max_depth) for k in keys}

        def features_of(key):
            if key is None:
                return view.X
            return cache.get_or_compute(circuits[key], view.dataset_id, view.X).values

        # step 2
        audit.phase = "hyperopt"
        key, params, cv = _tune(view, features_of, keys, config, seed)
        report.chosen_circuit = key
        report.hyperparameters = params
        report.tuned_cv_score = cv

        # step 3
        audit.phase = "final"
        model_cfg = ModelConfig(view.task, params["gamma"], params["reg"])
        F_train = features_of(key)
        X_test, y_test = dataset.test_data()
        F_test = X_test if key is None else compute_features(circuits[key], X_test).values
        model = fit(gram(F_train, None, model_cfg.gamma), view.y, model_cfg)
        report.test_score = float(score(view.task, y_test, predict(model, gram(F_test, F_train, model_cfg.gamma))))
    except (StepError, HyperoptFailedError, ScoringError, ArithmeticError) as exc:
        report.status = f"failed in {audit.phase}: {exc}"
        logger.error("%s (seed %d) failed: %s", method, seed, exc)
    finally:
        audit.phase = "idle"
    report.wall_time = time.perf_counter() - t0
    return report


def run_pipeline(config: BenchmarkConfig, methods: Optional[Sequence[str]] = None, seeds: Optional[Sequence[int]] = None, dataset: Optional[Dataset] = None) -> RunReport:
    """Run every requested method through search, tuning and the final test."""
    dataset = dataset if dataset is not None else load_dataset(config)
    methods = tuple(methods or config.methods)
    seeds = tuple(seeds if seeds is not None else (config.seed,))
    cache = FeatureCache(config.cache_dir or None)
    log_dir = Path(config.out_dir) / "logs" if config.out_dir else None
    manifest = dataset.manifest()
    summary = {k: manifest[k] for k in ("id", "task", "N", "d", "seed", "notes")}
    summary["n_train"] = len(manifest["train_idx"])
    summary["n_test"] = len(manifest["test_idx"])
    report = RunReport(summary, config.to_ini())
    for seed in seeds:
        for method in methods:
            logger.info("running %s with seed %d", method, seed)
            report.methods.append(_run_method(method, dataset, config, seed, cache, log_dir))
    report.leakage = {
        "reads_before_final": dataset.audit.reads_during("setup", "search", "hyperopt"),
        "final_reads": dataset.audit.reads_during("final"),
    }
    return report
