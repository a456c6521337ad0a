"""Experiment orchestration: seeded sweeps, DAG perturbation, CSV reports.

A run grid is a pure function of its config: every random choice flows
from the master seed through named, independent substreams (data
sampling, model init, training, DAG variants, query sampling), so adding
a model or reordering jobs never perturbs another run's randomness, and
repeated invocations produce identical numbers.  Jobs are independent and
may execute in parallel; records are sorted by key before writing so
parallelism never changes the output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bn import Dag, DiscreteBayesNet, fit_mle_k2, forward_sample, load_network
from .dsep import IndependenceRelation, enumerate_relations
from .evaluation import BnPredictor, NnPredictor, build_sample_query_set, build_total_query_set, evaluate
from .model import LayoutSpec, init_model
from .training import TrainConfig, train

MODELS = ("BN", "NN", "NN+REG", "NN+COR")
_STRATEGY = {"BN": "exact", "NN": "plain", "NN+REG": "reg", "NN+COR": "cor"}


def _entropy(parts: Iterable) -> list[int]:
    words = []
    for part in parts:
        digest = hashlib.sha256(repr(part).encode()).digest()
        words.append(int.from_bytes(digest[:8], "little"))
    return words


def stream(master_seed: int, *parts) -> np.random.Generator:
    """Independent generator for a named purpose under one master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *_entropy(parts)]))


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 63-bit integer seed for components that take a plain seed."""
    ss = np.random.SeedSequence([int(master_seed), *_entropy(parts)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class ExperimentConfig:
    network: str
    train_sizes: list[int]
    seeds: list[int]
    models: list[str]
    output_dir: str
    epochs: int = 500
    batch_size: int = 16
    learning_rate: float = 0.001
    alpha: float = 10.0
    reg_batch_size: int = 16
    hidden: int = 50
    dag_modes: list[str] = field(default_factory=list)
    variant_count: int = 5
    sample_query_count: int = 1000
    master_seed: int = 1234
    jobs: int = 1

    def __post_init__(self) -> None:
        if not self.train_sizes or any(s < 1 for s in self.train_sizes):
            raise ValueError("train_sizes must be positive")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        unknown = [m for m in self.models if m not in MODELS]
        if unknown:
            raise ValueError(f"unknown models {unknown}; choose from {MODELS}")
        bad_modes = [m for m in self.dag_modes if m not in ("remove", "add")]
        if bad_modes:
            raise ValueError(f"unknown dag modes {bad_modes}")


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    doc = json.loads(Path(path).read_text())
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    return ExperimentConfig(**doc)


@dataclass
class RunRecord:
    model: str
    strategy: str
    train_size: int
    seed: int
    dag_variant: str
    dag_mode: str
    total_mae: float
    sample_mae: float
    fallback_count: int
    runtime_s: float

    def __post_init__(self) -> None:
        for name in ("total_mae", "sample_mae"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value!r} outside [0, 1]")


# ---------------------------------------------------------------------------
# DAG perturbation
# ---------------------------------------------------------------------------

def _has_directed_path(dag: Dag, source: str, sink: str) -> bool:
    frontier = [source]
    seen = {source}
    while frontier:
        node = frontier.pop()
        if node == sink:
            return True
        for child in dag.children(node):
            if child not in seen:
                seen.add(child)
                frontier.append(child)
    return False


def perturb_dag(dag: Dag, mode: str, rng: np.random.Generator) -> Dag:
    """Remove one uniformly chosen edge, or add one uniformly chosen
    absent edge whose insertion keeps the graph acyclic."""
    if mode == "remove":
        if not dag.edges:
            raise ValueError("no edges to remove")
        dropped = dag.edges[int(rng.integers(0, len(dag.edges)))]
        return Dag(dag.variables, [e for e in dag.edges if e != dropped])
    if mode == "add":
        existing = set(dag.edges)
        candidates = []
        for parent in dag.names:
            for child in dag.names:
                if parent == child or (parent, child) in existing:
                    continue
                if _has_directed_path(dag, child, parent):
                    continue  # would close a cycle
                candidates.append((parent, child))
        if not candidates:
            raise ValueError("no legal edge addition exists")
        added = candidates[int(rng.integers(0, len(candidates)))]
        return Dag(dag.variables, [*dag.edges, added])
    raise ValueError(f"unknown perturbation mode {mode!r}")


# ---------------------------------------------------------------------------
# Job execution
# ---------------------------------------------------------------------------

@dataclass
class _Variant:
    variant_id: str
    mode: str
    dag: Dag
    relations: list[IndependenceRelation]


@dataclass
class _Context:
    config: ExperimentConfig
    net: DiscreteBayesNet
    layout: LayoutSpec
    total_queries: list
    sample_queries: list
    variants: dict[str, _Variant]


def _build_context(config: ExperimentConfig, modes: Sequence[str]) -> _Context:
    net = load_network(config.network)
    layout = LayoutSpec.from_variables(net.dag.variables)
    total_queries = build_total_query_set(net)
    sample_queries = build_sample_query_set(
        net, stream(config.master_seed, "sample-queries"), config.sample_query_count
    )
    variants = {"base": _Variant("base", "base", net.dag, enumerate_relations(net.dag))}
    for mode in modes:
        for i in range(config.variant_count):
            vdag = perturb_dag(net.dag, mode, stream(config.master_seed, "dag-variant", mode, i))
            vid = f"{mode}-{i}"
            variants[vid] = _Variant(vid, mode, vdag, enumerate_relations(vdag))
    return _Context(config, net, layout, total_queries, sample_queries, variants)


def _run_single(ctx: _Context, model: str, size: int, seed: int, variant_id: str) -> RunRecord:
    config = ctx.config
    variant = ctx.variants[variant_id]
    started = time.perf_counter()
    dataset = forward_sample(ctx.net, stream(config.master_seed, "data", size, seed), size)
    strategy = _STRATEGY[model]
    if model == "BN":
        predictor = BnPredictor(fit_mle_k2(variant.dag, dataset))
    else:
        params = init_model(ctx.layout, config.hidden,
                            stream(config.master_seed, "init", model, size, seed, variant_id))
        train_config = TrainConfig(
            epochs=config.epochs,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            strategy=strategy,
            alpha=config.alpha,
            reg_batch_size=config.reg_batch_size,
            seed=derive_seed(config.master_seed, "train", model, size, seed, variant_id),
        )
        relations = variant.relations if strategy in ("reg", "cor") else None
        try:
            train(params, dataset, ctx.layout, train_config, relations)
        except Exception as exc:
            raise RuntimeError(
                f"training failed for run ({model}, size={size}, seed={seed}, {variant_id})"
            ) from exc
        predictor = NnPredictor(params, ctx.layout)
    try:
        total = evaluate(predictor, ctx.total_queries)
        sample = evaluate(predictor, ctx.sample_queries)
    except Exception as exc:
        raise RuntimeError(
            f"evaluation failed for run ({model}, size={size}, seed={seed}, {variant_id})"
        ) from exc
    return RunRecord(
        model=model,
        strategy=strategy,
        train_size=size,
        seed=seed,
        dag_variant=variant_id,
        dag_mode=variant.mode,
        total_mae=total.mean,
        sample_mae=sample.mean,
        fallback_count=total.fallback_count + sample.fallback_count,
        runtime_s=time.perf_counter() - started,
    )


_WORKER_CTX: _Context | None = None


def _init_worker(config: ExperimentConfig, modes: tuple[str, ...]) -> None:
    global _WORKER_CTX
    _WORKER_CTX = _build_context(config, modes)


def _worker_run(job: tuple[str, int, int, str]) -> RunRecord:
    assert _WORKER_CTX is not None
    return _run_single(_WORKER_CTX, *job)


def _record_key(record: RunRecord):
    mode_rank = {"base": 0, "remove": 1, "add": 2}[record.dag_mode]
    return (record.train_size, mode_rank, record.dag_variant,
            record.seed, MODELS.index(record.model))


def _execute(config: ExperimentConfig, modes: Sequence[str],
             jobs: list[tuple[str, int, int, str]]) -> list[RunRecord]:
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(
            max_workers=config.jobs, initializer=_init_worker,
            initargs=(config, tuple(modes)),
        ) as pool:
            records = list(pool.map(_worker_run, jobs))
    else:
        ctx = _build_context(config, modes)
        records = [_run_single(ctx, *job) for job in jobs]
    records.sort(key=_record_key)
    return records


def run_sweep(config: ExperimentConfig) -> list[RunRecord]:
    """Fit and score every requested model on every (train size, seed).

    All models for a given (size, seed) see the identical training
    dataset; query sets are built once from the ground truth.
    """
    jobs = [
        (model, size, seed, "base")
        for size in config.train_sizes
        for seed in config.seeds
        for model in config.models
    ]
    return _execute(config, (), jobs)


def run_robustness(config: ExperimentConfig) -> list[RunRecord]:
    """Compare runs under the correct DAG against perturbed-DAG variants.

    Training data always comes from the correct ground truth; only the
    structure handed to the models changes per variant.  The plain NN
    never consumes the DAG, so it runs as a control under "base" only.
    """
    modes = tuple(config.dag_modes) or ("remove", "add")
    variant_ids = ["base"] + [f"{mode}-{i}" for mode in modes for i in range(config.variant_count)]
    jobs = []
    for size in config.train_sizes:
        for variant_id in variant_ids:
            for seed in config.seeds:
                for model in config.models:
                    if model == "NN" and variant_id != "base":
                        continue
                    jobs.append((model, size, seed, variant_id))
    return _execute(config, modes, jobs)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

RUNS_COLUMNS = ("model", "strategy", "train_size", "seed", "dag_variant",
                "dag_mode", "total_mae", "sample_mae", "fallback_count", "runtime_s")


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def emit_reports(records: Sequence[RunRecord], output_dir: str | Path) -> tuple[Path, Path]:
    """Write runs.csv (one row per run) and summary.csv (mean and 95% CI
    per model x size x variant group); returns both paths."""
    if not records:
        raise ValueError("no records to report")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = sorted(records, key=_record_key)

    runs_path = out / "runs.csv"
    with open(runs_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUNS_COLUMNS)
        for r in records:
            writer.writerow([
                r.model, r.strategy, r.train_size, r.seed, r.dag_variant, r.dag_mode,
                _fmt(r.total_mae), _fmt(r.sample_mae), r.fallback_count, f"{r.runtime_s:.3f}",
            ])

    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.train_size, r.dag_mode, r.dag_variant, r.model), []).append(r)

    def ci95(values: list[float]) -> float:
        if len(values) < 2:
            return 0.0
        sd = float(np.std(values, ddof=1))
        return 1.96 * sd / math.sqrt(len(values))

    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "train_size", "dag_variant", "dag_mode", "n",
                         "total_mae_mean", "total_mae_ci95",
                         "sample_mae_mean", "sample_mae_ci95"])
        for key in sorted(groups, key=lambda k: (k[0], {"base": 0, "remove": 1, "add": 2}[k[1]],
                                                 k[2], MODELS.index(k[3]))):
            rows = groups[key]
            totals = [r.total_mae for r in rows]
            samples = [r.sample_mae for r in rows]
            writer.writerow([
                key[3], key[0], key[2], key[1], len(rows),
                _fmt(float(np.mean(totals))), _fmt(ci95(totals)),
                _fmt(float(np.mean(samples))), _fmt(ci95(samples)),
            ])
    return runs_path, summary_path
