"""Training strategies for the masked model.

All strategies share the same loop: every epoch reshuffles the samples,
every sample gets a fresh random evidence/target split, and batches are
optimized with Adam on the masked cross-entropy.  On top of that:

* ``plain`` trains on the cross-entropy alone;
* ``reg`` adds, per batch, an independence-violation penalty for one
  relation sampled from a given list, weighted by ``alpha``;
* ``cor`` re-samples ("corrupts") evidence values that a matching
  independence relation renders irrelevant for a given target, splitting
  the instance so every other target still trains on the clean values.

The mask law draws the evidence-set size m uniformly from {0..N-1} and
then a uniform subset of that size, so the empty-evidence case (which
trains the marginals) appears with probability 1/N.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .bn import Dataset
from .dsep import IndependenceRelation
from .model import (
    LayoutSpec,
    MaskedInstance,
    ModelParams,
    OptimizerState,
    _backward_arrays,
    _forward_arrays,
    _segment_softmax_backward,
    adam_step,
    loss_and_grads_arrays,
)

STRATEGIES = ("plain", "reg", "cor")


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 16
    learning_rate: float = 0.001
    strategy: str = "plain"
    alpha: float = 10.0
    reg_batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.epochs < 1 or self.batch_size < 1 or self.reg_batch_size < 1:
            raise ValueError("epochs and batch sizes must be positive")


@dataclass(frozen=True)
class MaskSplit:
    """A disjoint evidence/target division of the variables."""

    evidence: frozenset[str]
    targets: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "evidence", frozenset(self.evidence))
        object.__setattr__(self, "targets", frozenset(self.targets))
        if self.evidence & self.targets:
            raise ValueError("evidence and targets must be disjoint")
        if not self.targets:
            raise ValueError("at least one target variable is required")


@dataclass
class TrainHistory:
    """Per-epoch mean losses plus the corruption counter."""

    target_loss: list[float] = field(default_factory=list)
    reg_loss: list[float] = field(default_factory=list)
    corruption_applications: int = 0


def sample_mask(variables: Sequence[str], rng: np.random.Generator) -> MaskSplit:
    """Draw an evidence/target split: size uniform on {0..N-1}, then a
    uniform subset of that size."""
    names = tuple(variables)
    n = len(names)
    if n < 2:
        raise ValueError("need at least 2 variables to split")
    m = int(rng.integers(0, n))
    chosen = rng.choice(n, size=m, replace=False)
    evidence = frozenset(names[i] for i in chosen)
    return MaskSplit(evidence, frozenset(names) - evidence)


def encode(sample: Mapping[str, int], split: MaskSplit, layout: LayoutSpec) -> MaskedInstance:
    """One-hot a full sample and attach the split's masks."""
    missing = [n for n in layout.names if n not in sample]
    if missing:
        raise ValueError(f"sample is missing variables {missing}")
    values = layout.one_hot(sample)
    evidence = np.zeros(layout.n_variables, dtype=bool)
    loss = np.zeros(layout.n_variables, dtype=bool)
    for name in split.evidence:
        evidence[layout.index[name]] = True
    for name in split.targets:
        loss[layout.index[name]] = True
    return MaskedInstance(values, evidence, loss)


def decode_evidence(instance: MaskedInstance, layout: LayoutSpec) -> dict[str, int]:
    """Observed states of the evidence variables (inverse of encode)."""
    states = {}
    for i, name in enumerate(layout.names):
        if instance.evidence[i]:
            slot = instance.values[layout.slot(name)]
            states[name] = int(np.argmax(slot))
    return states


# ---------------------------------------------------------------------------
# Independence-violation regularisation
# ---------------------------------------------------------------------------

def independence_violation(p: np.ndarray, q: np.ndarray) -> float:
    """Mean over states of the squared gap between two predicted
    distributions for the same variable."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must have the same number of states")
    return float(np.mean((p - q) ** 2))


def _draw_reg_pairs(layout: LayoutSpec, relation: IndependenceRelation,
                    rng: np.random.Generator, count: int):
    """Two evidence one-hot batches differing only in the swapped variable.

    The conditioning variables are instantiated uniformly (shared between
    the two passes); the swapped variable takes two distinct uniform
    values per draw.
    """
    for name in (relation.x, relation.y, *relation.conditioning_set):
        if name not in layout.index:
            raise ValueError(f"relation variable {name!r} not in layout")
    yi = layout.index[relation.y]
    wy = int(layout.widths[yi])
    if wy < 2:
        raise ValueError(f"{relation.y!r} has fewer than 2 states")
    cond_idx = sorted(layout.index[c] for c in relation.conditioning_set)

    values_a = np.zeros((count, layout.k))
    rows = np.arange(count)
    for ci in cond_idx:
        states = rng.integers(0, int(layout.widths[ci]), size=count)
        values_a[rows, layout.offsets[ci] + states] = 1.0
    y = rng.integers(0, wy, size=count)
    y_alt = (y + 1 + rng.integers(0, wy - 1, size=count)) % wy
    values_b = values_a.copy()
    values_a[rows, layout.offsets[yi] + y] = 1.0
    values_b[rows, layout.offsets[yi] + y_alt] = 1.0

    evidence = np.zeros(layout.n_variables, dtype=bool)
    evidence[cond_idx] = True
    evidence[yi] = True
    ev_k = np.broadcast_to(layout.expand(evidence), (count, layout.k))
    return values_a, values_b, ev_k


def _reg_forward(params: ModelParams, layout: LayoutSpec,
                 relation: IndependenceRelation, rng: np.random.Generator,
                 count: int):
    values_a, values_b, ev_k = _draw_reg_pairs(layout, relation, rng, count)
    cache_a = _forward_arrays(params, layout, values_a, ev_k)
    cache_b = _forward_arrays(params, layout, values_b, ev_k)
    slot = layout.slot(relation.x)
    pa = cache_a.probs[:, slot]
    pb = cache_b.probs[:, slot]
    value = float(np.mean((pa - pb) ** 2))
    return value, cache_a, cache_b, pa, pb, slot


def reg_term(params: ModelParams, layout: LayoutSpec,
             relation: IndependenceRelation, rng: np.random.Generator,
             reg_batch_size: int = 16) -> float:
    """How strongly the model violates one independence relation.

    Mean, over ``reg_batch_size`` random instantiations, of the mean
    squared difference between the predicted distributions of the first
    variable when the second flips between two distinct values (the
    conditioning set held fixed per draw).  Zero exactly when the
    prediction ignores the swapped variable.
    """
    value, *_ = _reg_forward(params, layout, relation, rng, reg_batch_size)
    return value


def _reg_loss_and_grads(params: ModelParams, layout: LayoutSpec,
                        relation: IndependenceRelation, rng: np.random.Generator,
                        count: int, grads: ModelParams, scale: float) -> float:
    """Accumulate ``scale`` times the violation gradient into ``grads``."""
    value, cache_a, cache_b, pa, pb, slot = _reg_forward(params, layout, relation, rng, count)
    dpair = (2.0 * scale / pa.size) * (pa - pb)
    for cache, sign in ((cache_a, 1.0), (cache_b, -1.0)):
        dprobs = np.zeros_like(cache.probs)
        dprobs[:, slot] = sign * dpair
        dlogits = _segment_softmax_backward(layout, cache.probs, dprobs)
        _backward_arrays(params, layout, cache, dlogits, grads)
    return value


# ---------------------------------------------------------------------------
# Evidence corruption
# ---------------------------------------------------------------------------

def applicable_relations(
    split: MaskSplit, relations: Iterable[IndependenceRelation]
) -> list[tuple[IndependenceRelation, str, str]]:
    """Relations whose conditioning requirement exactly matches the split.

    A relation applies when one of its pair variables plus the whole
    conditioning set *equals* the evidence set; the other pair variable is
    then the protected target whose prediction must ignore the matched
    evidence variable.  Returns (relation, protected target, evidence
    variable to corrupt) triples.
    """
    out = []
    for rel in relations:
        if rel.x in split.targets and split.evidence == rel.conditioning_set | {rel.y}:
            out.append((rel, rel.x, rel.y))
        if rel.y in split.targets and split.evidence == rel.conditioning_set | {rel.x}:
            out.append((rel, rel.y, rel.x))
    return out


def corruption_passes(sample: Mapping[str, int], split: MaskSplit, layout: LayoutSpec,
                      relations: Sequence[IndependenceRelation],
                      rng: np.random.Generator) -> list[MaskedInstance]:
    """Split one sample into instances whose evidence is selectively re-sampled.

    Targets are grouped by the set of evidence variables that matched
    relations mark irrelevant for them.  Each group becomes one instance:
    its marked evidence slots are re-drawn uniformly over their states and
    its loss mask covers exactly that group.  Targets with no match share
    a single clean instance; with no matches at all the sample passes
    through unchanged.
    """
    base = encode(sample, split, layout)
    matches = applicable_relations(split, relations)
    if not matches:
        return [base]

    irrelevant: dict[str, set[str]] = {}
    for _, protect, corrupt in matches:
        irrelevant.setdefault(protect, set()).add(corrupt)

    groups: dict[tuple[int, ...], list[str]] = {}
    for name in sorted(split.targets, key=layout.index.__getitem__):
        marked = irrelevant.get(name)
        key = tuple(sorted(layout.index[c] for c in marked)) if marked else ()
        groups.setdefault(key, []).append(name)

    instances = []
    for key in sorted(groups):  # clean group first, then fixed pattern order
        loss = np.zeros(layout.n_variables, dtype=bool)
        for name in groups[key]:
            loss[layout.index[name]] = True
        if not key:
            instances.append(MaskedInstance(base.values, base.evidence, loss))
            continue
        values = base.values.copy()
        for ci in key:
            width = int(layout.widths[ci])
            offset = int(layout.offsets[ci])
            values[offset:offset + width] = 0.0
            values[offset + int(rng.integers(0, width))] = 1.0
        instances.append(MaskedInstance(values, base.evidence, loss))
    return instances


def _relation_index_pairs(layout: LayoutSpec,
                          relations: Sequence[IndependenceRelation]) -> dict[int, list[tuple[int, int]]]:
    """Evidence-set bitmask -> (protected target index, corrupt index) pairs."""
    table: dict[int, list[tuple[int, int]]] = {}
    for rel in relations:
        xi, yi = layout.index[rel.x], layout.index[rel.y]
        cond_bits = 0
        for c in rel.conditioning_set:
            cond_bits |= 1 << layout.index[c]
        table.setdefault(cond_bits | (1 << yi), []).append((xi, yi))
        table.setdefault(cond_bits | (1 << xi), []).append((yi, xi))
    return table


# ---------------------------------------------------------------------------
# The training loop
# ---------------------------------------------------------------------------

def _layout_aligned_states(dataset: Dataset, layout: LayoutSpec) -> np.ndarray:
    col = {n: i for i, n in enumerate(dataset.columns)}
    missing = [n for n in layout.names if n not in col]
    if missing:
        raise ValueError(f"dataset does not cover variables {missing}")
    return dataset.data[:, [col[n] for n in layout.names]]


def train(model: ModelParams, dataset: Dataset, layout: LayoutSpec,
          config: TrainConfig,
          relations: Sequence[IndependenceRelation] | None = None):
    """Optimize ``model`` in place on the dataset; returns (model, history).

    Deterministic for a fixed (seed, data, config): the seed spawns
    separate streams for shuffling, mask sampling, regularisation draws,
    and corruption draws, in that order.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if config.strategy in ("reg", "cor") and not relations:
        raise ValueError(f"strategy {config.strategy!r} requires a non-empty relation list")

    states = _layout_aligned_states(dataset, layout)
    n_samples, n_vars = states.shape
    batch = config.batch_size
    one_hot_all = np.zeros((n_samples, layout.k))
    one_hot_all[np.arange(n_samples)[:, None], layout.offsets[None, :] + states] = 1.0

    shuffle_rng, mask_rng, reg_rng, cor_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(4)
    )
    opt = OptimizerState.for_params(model, learning_rate=config.learning_rate)
    history = TrainHistory()

    relations = list(relations or [])
    match_table = _relation_index_pairs(layout, relations) if config.strategy == "cor" else {}
    bit_values = 1 << np.arange(n_vars, dtype=np.int64)

    for _ in range(config.epochs):
        perm = shuffle_rng.permutation(n_samples)
        sizes = mask_rng.integers(0, n_vars, size=n_samples)
        keys = mask_rng.random((n_samples, n_vars))
        ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
        evidence_all = ranks < sizes[:, None]

        lt_sum = 0.0
        reg_sum = 0.0
        n_batches = 0
        for start in range(0, n_samples, batch):
            idx = perm[start:start + batch]
            values = one_hot_all[idx]
            evidence = evidence_all[idx]
            grads = model.zeros_like()

            if config.strategy == "cor":
                values, evidence, loss_mask, weights, n_groups, corrupted = _corrupt_batch(
                    values, evidence, states[idx], layout, match_table, bit_values, cor_rng
                )
                history.corruption_applications += corrupted
                loss, _ = loss_and_grads_arrays(
                    model, layout, values, evidence, loss_mask,
                    weights=weights, n_groups=n_groups, grads=grads,
                )
            else:
                loss, _ = loss_and_grads_arrays(
                    model, layout, values, evidence, ~evidence, grads=grads
                )
            if config.strategy == "reg":
                relation = relations[int(reg_rng.integers(0, len(relations)))]
                reg_sum += _reg_loss_and_grads(
                    model, layout, relation, reg_rng, config.reg_batch_size,
                    grads, scale=config.alpha,
                )
            adam_step(opt, model, grads)
            lt_sum += loss
            n_batches += 1

        history.target_loss.append(lt_sum / n_batches)
        if config.strategy == "reg":
            history.reg_loss.append(reg_sum / n_batches)
    return model, history


def _corrupt_batch(values: np.ndarray, evidence: np.ndarray, states: np.ndarray,
                   layout: LayoutSpec, match_table: dict[int, list[tuple[int, int]]],
                   bit_values: np.ndarray, rng: np.random.Generator):
    """Expand a batch with corruption passes; one unit of weight per sample."""
    ev_bits = evidence @ bit_values
    out_values, out_ev, out_loss, out_w = [], [], [], []
    corrupted = 0
    n_vars = evidence.shape[1]
    for j in range(len(values)):
        target_idx = np.flatnonzero(~evidence[j])
        weight = 1.0 / len(target_idx)
        matched = match_table.get(int(ev_bits[j]))
        if not matched:
            out_values.append(values[j])
            out_ev.append(evidence[j])
            out_loss.append(~evidence[j])
            out_w.append(weight)
            continue
        patterns: dict[int, int] = {}
        for protect, corrupt in matched:
            patterns[protect] = patterns.get(protect, 0) | (1 << corrupt)
        groups: dict[int, list[int]] = {}
        for t in target_idx:
            groups.setdefault(patterns.get(int(t), 0), []).append(int(t))
        for key in sorted(groups):
            loss = np.zeros(n_vars, dtype=bool)
            loss[groups[key]] = True
            if key == 0:
                out_values.append(values[j])
            else:
                row = values[j].copy()
                bits = key
                while bits:
                    low = bits & -bits
                    ci = low.bit_length() - 1
                    bits ^= low
                    width = int(layout.widths[ci])
                    offset = int(layout.offsets[ci])
                    row[offset:offset + width] = 0.0
                    row[offset + int(rng.integers(0, width))] = 1.0
                out_values.append(row)
                corrupted += 1
            out_ev.append(evidence[j])
            out_loss.append(loss)
            out_w.append(weight)
    return (np.stack(out_values), np.stack(out_ev), np.stack(out_loss),
            np.array(out_w), len(values), corrupted)
