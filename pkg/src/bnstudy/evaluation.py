"""Test-query construction and mean-absolute-error scoring.

Two query sets drive all evaluation.  The exhaustive set enumerates every
evidence assignment (every variable subset of size 0..N-1 crossed with
every joint state of that subset); scoring against it gives the "total"
MAE, weighing rare and common evidence equally.  The sampled set draws
full records from the joint distribution and masks them with the same
evidence/target law used in training, so its "sample" MAE weighs evidence
by how often it actually occurs.

Ground truth for every query comes from exact variable elimination on the
generating network.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .bn import (
    Dataset,
    DiscreteBayesNet,
    Distribution,
    _as_rng,
    bn_predict,
    forward_sample,
    variable_elimination,
)
from .model import LayoutSpec, ModelParams, predict_distributions
from .training import sample_mask

PredictFn = Callable[[Mapping[str, int], Sequence[str]], tuple[list[np.ndarray], bool]]


@dataclass
class Query:
    """An evidence assignment with ground-truth target distributions."""

    evidence: dict[str, int]
    targets: tuple[str, ...]
    truth: tuple[Distribution, ...]


@dataclass
class MaeReport:
    per_query: list[float]
    mean: float
    fallback_count: int = 0
    empty_evidence_count: int = 0
    metadata: dict = field(default_factory=dict)


def _truth_for(net: DiscreteBayesNet, evidence: Mapping[str, int],
               targets: Sequence[str]) -> tuple[Distribution, ...]:
    return tuple(variable_elimination(net, evidence, t) for t in targets)


def build_total_query_set(net: DiscreteBayesNet) -> list[Query]:
    """One query per evidence subset per joint assignment of that subset.

    Subsets run over sizes 0..N-1 in declaration order; every query
    targets all remaining variables.  For N all-binary variables this
    yields sum_m C(N,m) * 2^m queries.
    """
    names = net.names
    queries = []
    for m in range(len(names)):
        for subset in itertools.combinations(names, m):
            targets = tuple(n for n in names if n not in subset)
            ranges = [range(net.dag.cardinality(n)) for n in subset]
            for states in itertools.product(*ranges):
                evidence = dict(zip(subset, states))
                queries.append(Query(evidence, targets, _truth_for(net, evidence, targets)))
    return queries


def build_sample_query_set(net: DiscreteBayesNet, rng: np.random.Generator | int,
                           count: int = 1000) -> list[Query]:
    """Queries whose evidence values are drawn from the joint distribution.

    Each query takes one forward sample, masks it with the training-time
    evidence/target law, and keeps the sampled values for the evidence
    variables, so frequently observed evidence dominates the set.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    gen, _ = _as_rng(rng)
    names = net.names
    records = forward_sample(net, gen, count)
    queries = []
    for i in range(count):
        sample = records.assignment(i)
        split = sample_mask(names, gen)
        evidence = {n: sample[n] for n in names if n in split.evidence}
        targets = tuple(n for n in names if n in split.targets)
        queries.append(Query(evidence, targets, _truth_for(net, evidence, targets)))
    return queries


def query_mae(predicted: Sequence[np.ndarray | Distribution],
              truth: Sequence[Distribution]) -> float:
    """Mean over targets of the mean absolute per-state error.

    For a binary target this equals the absolute error on either state.
    """
    if len(predicted) != len(truth):
        raise ValueError(f"{len(predicted)} predictions for {len(truth)} targets")
    per_target = []
    for p, t in zip(predicted, truth):
        if isinstance(p, Distribution):
            if p.variable != t.variable:
                raise ValueError(f"prediction for {p.variable!r} paired with truth for {t.variable!r}")
            p = p.probs
        p = np.asarray(p, dtype=np.float64)
        if p.shape != t.probs.shape:
            raise ValueError(f"state-count mismatch on {t.variable!r}")
        per_target.append(float(np.mean(np.abs(p - t.probs))))
    return float(np.mean(per_target))


def evaluate(predictor: PredictFn, queries: Sequence[Query],
             metadata: dict | None = None) -> MaeReport:
    """Score a predictor over a query set.

    The predictor maps (evidence, targets) to (per-target probability
    vectors, fallback flag).  Any predictor exception aborts with the
    offending query attached.
    """
    per_query = []
    fallbacks = 0
    empties = 0
    for i, query in enumerate(queries):
        try:
            predicted, fallback = predictor(query.evidence, query.targets)
        except Exception as exc:
            raise RuntimeError(
                f"predictor failed on query {i} (evidence={query.evidence})"
            ) from exc
        per_query.append(query_mae(predicted, query.truth))
        fallbacks += bool(fallback)
        empties += not query.evidence
    return MaeReport(
        per_query=per_query,
        mean=float(np.mean(per_query)),
        fallback_count=fallbacks,
        empty_evidence_count=empties,
        metadata=dict(metadata or {}),
    )


class BnPredictor:
    """Adapter: exact inference on a (typically fitted) network."""

    def __init__(self, net: DiscreteBayesNet):
        self.net = net

    def __call__(self, evidence: Mapping[str, int],
                 targets: Sequence[str]) -> tuple[list[np.ndarray], bool]:
        dists, fallback = bn_predict(self.net, evidence, targets)
        return [d.probs for d in dists], fallback


class NnPredictor:
    """Adapter: one forward pass of the masked model per query."""

    def __init__(self, params: ModelParams, layout: LayoutSpec):
        self.params = params
        self.layout = layout

    def __call__(self, evidence: Mapping[str, int],
                 targets: Sequence[str]) -> tuple[list[np.ndarray], bool]:
        return predict_distributions(self.params, self.layout, evidence, targets), False


def save_queries(queries: Sequence[Query], path: str | Path) -> None:
    """JSON lines, one query per line; states are integer indices."""
    with open(path, "w") as fh:
        for q in queries:
            doc = {
                "evidence": q.evidence,
                "targets": list(q.targets),
                "truth": {d.variable: d.probs.tolist() for d in q.truth},
            }
            fh.write(json.dumps(doc) + "\n")


def load_queries(path: str | Path) -> list[Query]:
    queries = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        targets = tuple(doc["targets"])
        truth = tuple(Distribution(t, np.asarray(doc["truth"][t])) for t in targets)
        queries.append(Query({k: int(v) for k, v in doc["evidence"].items()}, targets, truth))
    return queries
