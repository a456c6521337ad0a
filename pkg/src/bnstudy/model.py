"""Masked feed-forward model over concatenated one-hot slots.

The model answers arbitrary conditional queries over N discrete
variables.  Its input and output are both vectors of width
``k = sum(n_i)``: one slot of width ``n_i`` per variable.  At the input,
slots of unobserved (target) variables are replaced by the matching
slots of a learned substitute vector; the rest carry the observed
one-hots.  The body is a fixed 3-layer tanh MLP.  At the output, logits
are normalized per variable slot by softmax, and evidence slots are
overwritten with their input one-hots, so the remaining slots read as
predicted conditional distributions.

The substitute vector is itself produced by pushing a trainable source
vector of width ``h`` through the (shared) output layer plus the same
per-slot softmax, so it always lives on the probability simplexes and
its gradient reaches the source vector and the output layer.

Everything is float64 numpy with hand-written backpropagation; a
finite-difference checker for the analytic gradients lives at the bottom
of the module.  Parameters sit in one flat vector with named views, so
optimizer updates and gradient checks are plain vector arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

PROB_FLOOR = 1e-12  # clamp inside log() only; probabilities themselves are untouched
SLOT_SUM_TOL = 1e-9


class LayoutSpec:
    """Slot layout of the concatenated one-hot vector.

    Maps each variable to a contiguous `[offset, offset + width)` span;
    spans cover `[0, k)` without gaps or overlap.
    """

    def __init__(self, names: Sequence[str], widths: Sequence[int]):
        if len(names) != len(widths):
            raise ValueError("names and widths must align")
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names in layout")
        if any(w < 2 for w in widths):
            raise ValueError("every variable needs at least 2 states")
        self.names = tuple(names)
        self.widths = np.asarray(widths, dtype=np.int64)
        self.offsets = np.concatenate(([0], np.cumsum(self.widths)[:-1]))
        self.k = int(self.widths.sum())
        self.n_variables = len(self.names)
        self.index = {n: i for i, n in enumerate(self.names)}

    @classmethod
    def from_variables(cls, variables) -> "LayoutSpec":
        """Build from a sequence of objects with .name and .cardinality."""
        return cls([v.name for v in variables], [v.cardinality for v in variables])

    def slot(self, name: str) -> slice:
        i = self.index[name]
        return slice(int(self.offsets[i]), int(self.offsets[i] + self.widths[i]))

    def expand(self, var_mask: np.ndarray) -> np.ndarray:
        """Broadcast a per-variable mask/value to per-slot width."""
        return np.repeat(var_mask, self.widths, axis=-1)

    def one_hot(self, states: Mapping[str, int] | Sequence[int]) -> np.ndarray:
        """Concatenated one-hot encoding of a full assignment."""
        values = np.zeros(self.k)
        if isinstance(states, Mapping):
            items = [(self.index[n], s) for n, s in states.items()]
        else:
            items = list(enumerate(states))
        for i, state in items:
            if not 0 <= state < self.widths[i]:
                raise ValueError(f"state {state} out of range for {self.names[i]!r}")
            values[self.offsets[i] + state] = 1.0
        return values

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LayoutSpec):
            return NotImplemented
        return self.names == other.names and np.array_equal(self.widths, other.widths)


def segment_softmax(layout: LayoutSpec, z: np.ndarray) -> np.ndarray:
    """Softmax applied independently within each variable slot.

    Max-subtracted for stability; works on vectors or batches (last axis
    is the slot axis).
    """
    starts = layout.offsets
    mx = np.maximum.reduceat(z, starts, axis=-1)
    e = np.exp(z - np.repeat(mx, layout.widths, axis=-1))
    s = np.add.reduceat(e, starts, axis=-1)
    return e / np.repeat(s, layout.widths, axis=-1)


def _segment_softmax_backward(layout: LayoutSpec, probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """d(loss)/d(logits) given d(loss)/d(probs), per slot."""
    t = probs * dprobs
    s = np.add.reduceat(t, layout.offsets, axis=-1)
    return t - probs * np.repeat(s, layout.widths, axis=-1)


class ModelParams:
    """All trainable parameters in one flat float64 vector with named views.

    ``w1 (k,h), b1 (h), w2 (h,h), b2 (h), w3 (h,k), b3 (k)`` are the three
    linear layers; ``u (h)`` is the source vector behind the substitute
    input.  The views share memory with ``flat``, so vector arithmetic on
    ``flat`` is arithmetic on every field.
    """

    FIELDS = ("w1", "b1", "w2", "b2", "w3", "b3", "u")

    def __init__(self, k: int, h: int, flat: np.ndarray | None = None):
        if k < 1 or h < 1:
            raise ValueError("k and h must be positive")
        self.k = k
        self.h = h
        shapes = {
            "w1": (k, h), "b1": (h,),
            "w2": (h, h), "b2": (h,),
            "w3": (h, k), "b3": (k,),
            "u": (h,),
        }
        size = sum(int(np.prod(s)) for s in shapes.values())
        if flat is None:
            flat = np.zeros(size)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ValueError(f"flat vector must have {size} entries, got {flat.shape}")
        self.flat = flat
        offset = 0
        for name, shape in shapes.items():
            width = int(np.prod(shape))
            setattr(self, name, self.flat[offset:offset + width].reshape(shape))
            offset += width

    @property
    def linear_parameter_count(self) -> int:
        """Weights and biases of the three linear layers (excludes the source vector)."""
        k, h = self.k, self.h
        return k * h + h + h * h + h + h * k + k

    @property
    def source_parameter_count(self) -> int:
        return self.h

    def copy(self) -> "ModelParams":
        return ModelParams(self.k, self.h, self.flat.copy())

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.k, self.h)

    def __repr__(self) -> str:
        return f"ModelParams(k={self.k}, h={self.h}, {self.flat.size} parameters)"


def init_model(layout: LayoutSpec, h: int, rng: np.random.Generator) -> ModelParams:
    """Fan-scaled uniform weights, zero biases, small uniform source vector.

    Weight ranges are +-sqrt(6 / (fan_in + fan_out)), the usual choice for
    tanh layers; the source vector starts in [-0.1, 0.1] so the initial
    substitute input is near-uniform.
    """
    params = ModelParams(layout.k, h)
    k = layout.k

    def limit(fan_in: int, fan_out: int) -> float:
        return float(np.sqrt(6.0 / (fan_in + fan_out)))

    params.w1[...] = rng.uniform(-limit(k, h), limit(k, h), size=(k, h))
    params.w2[...] = rng.uniform(-limit(h, h), limit(h, h), size=(h, h))
    params.w3[...] = rng.uniform(-limit(h, k), limit(h, k), size=(h, k))
    params.u[...] = rng.uniform(-0.1, 0.1, size=h)
    return params


def compute_v0(params: ModelParams, layout: LayoutSpec) -> np.ndarray:
    """The substitute vector: output layer applied to the source vector.

    Recomputed from live parameters on every call; it is input-independent
    but not constant during training.
    """
    return segment_softmax(layout, params.u @ params.w3 + params.b3)


@dataclass
class MaskedInstance:
    """One training/query instance.

    ``values`` is the full one-hot encoding; ``evidence`` marks observed
    variables (their slots pass through), and ``loss`` marks which target
    variables this instance scores.  Loss variables are always a subset of
    the non-evidence variables.
    """

    values: np.ndarray
    evidence: np.ndarray
    loss: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.evidence = np.asarray(self.evidence, dtype=bool)
        self.loss = np.asarray(self.loss, dtype=bool)
        if np.any(self.loss & self.evidence):
            raise ValueError("loss mask must not overlap the evidence mask")


@dataclass
class _ForwardCache:
    values: np.ndarray   # (B, k)
    ev_k: np.ndarray     # (B, k) bool
    v0: np.ndarray       # (k,)
    xin: np.ndarray      # (B, k)
    h1: np.ndarray       # (B, h)
    h2: np.ndarray       # (B, h)
    probs: np.ndarray    # (B, k)


def _forward_arrays(params: ModelParams, layout: LayoutSpec,
                    values: np.ndarray, ev_k: np.ndarray) -> _ForwardCache:
    v0 = compute_v0(params, layout)
    xin = np.where(ev_k, values, v0)
    h1 = np.tanh(xin @ params.w1 + params.b1)
    h2 = np.tanh(h1 @ params.w2 + params.b2)
    probs = segment_softmax(layout, h2 @ params.w3 + params.b3)
    return _ForwardCache(values, ev_k, v0, xin, h1, h2, probs)


def _backward_arrays(params: ModelParams, layout: LayoutSpec,
                     cache: _ForwardCache, dlogits: np.ndarray,
                     grads: ModelParams) -> None:
    """Accumulate gradients for a batch given d(loss)/d(logits)."""
    grads.w3 += cache.h2.T @ dlogits
    grads.b3 += dlogits.sum(axis=0)
    dh2 = dlogits @ params.w3.T
    da2 = dh2 * (1.0 - cache.h2 * cache.h2)
    grads.w2 += cache.h1.T @ da2
    grads.b2 += da2.sum(axis=0)
    dh1 = da2 @ params.w2.T
    da1 = dh1 * (1.0 - cache.h1 * cache.h1)
    grads.w1 += cache.xin.T @ da1
    grads.b1 += da1.sum(axis=0)
    # Substitute-vector path: xin uses v0 wherever evidence is absent, and
    # v0 itself is a softmax of the output layer applied to the source.
    dxin = da1 @ params.w1.T
    dv0 = np.where(cache.ev_k, 0.0, dxin).sum(axis=0)
    dz0 = _segment_softmax_backward(layout, cache.v0, dv0)
    grads.b3 += dz0
    grads.w3 += np.outer(params.u, dz0)
    grads.u += params.w3 @ dz0


def forward(params: ModelParams, layout: LayoutSpec, instance: MaskedInstance) -> np.ndarray:
    """Full output vector for one instance.

    Non-evidence slots hold per-variable predicted distributions; evidence
    slots are the input one-hots, passed through untouched.
    """
    ev_k = layout.expand(instance.evidence)
    cache = _forward_arrays(params, layout, instance.values[None, :], ev_k[None, :])
    return np.where(ev_k, instance.values, cache.probs[0])


def predict_distributions(params: ModelParams, layout: LayoutSpec,
                          evidence: Mapping[str, int],
                          targets: Sequence[str]) -> list[np.ndarray]:
    """Predicted distribution per target variable given the evidence."""
    values = np.zeros(layout.k)
    ev = np.zeros(layout.n_variables, dtype=bool)
    for name, state in evidence.items():
        i = layout.index[name]
        if not 0 <= state < layout.widths[i]:
            raise ValueError(f"state {state} out of range for {name!r}")
        values[layout.offsets[i] + state] = 1.0
        ev[i] = True
    ev_k = layout.expand(ev)
    cache = _forward_arrays(params, layout, values[None, :], ev_k[None, :])
    return [cache.probs[0, layout.slot(t)].copy() for t in targets]


def _stack_instances(layout: LayoutSpec, instances: Sequence[MaskedInstance]):
    values = np.stack([inst.values for inst in instances])
    ev = np.stack([inst.evidence for inst in instances])
    loss = np.stack([inst.loss for inst in instances])
    return values, ev, loss


def _loss_coefficients(loss_mask: np.ndarray, weights, n_groups) -> np.ndarray:
    n_targets = loss_mask.sum(axis=1)
    if np.any(n_targets == 0):
        raise ValueError("every instance needs at least one loss-mask variable")
    if weights is None:
        weights = 1.0 / n_targets
    else:
        weights = np.asarray(weights, dtype=np.float64)
    if n_groups is None:
        n_groups = loss_mask.shape[0]
    return weights / float(n_groups)


def _ce_from_cache(layout: LayoutSpec, cache: _ForwardCache,
                   loss_mask: np.ndarray, coeff: np.ndarray) -> float:
    lm_k = layout.expand(loss_mask)
    picked = lm_k & (cache.values > 0.5)
    logp = np.log(np.maximum(cache.probs, PROB_FLOOR))
    per_instance = -(logp * picked).sum(axis=1)
    return float(per_instance @ coeff)


def batch_loss_arrays(params: ModelParams, layout: LayoutSpec,
                      values: np.ndarray, evidence: np.ndarray,
                      loss_mask: np.ndarray,
                      weights: Sequence[float] | None = None,
                      n_groups: int | None = None) -> float:
    """Cross-entropy objective only, on pre-stacked batch arrays."""
    coeff = _loss_coefficients(loss_mask, weights, n_groups)
    cache = _forward_arrays(params, layout, values, layout.expand(evidence))
    return _ce_from_cache(layout, cache, loss_mask, coeff)


def loss_and_grads_arrays(params: ModelParams, layout: LayoutSpec,
                          values: np.ndarray, evidence: np.ndarray,
                          loss_mask: np.ndarray,
                          weights: Sequence[float] | None = None,
                          n_groups: int | None = None,
                          grads: ModelParams | None = None):
    """Array-level core of :func:`loss_and_grads`; accumulates into ``grads``."""
    coeff = _loss_coefficients(loss_mask, weights, n_groups)
    cache = _forward_arrays(params, layout, values, layout.expand(evidence))
    loss = _ce_from_cache(layout, cache, loss_mask, coeff)
    if grads is None:
        grads = params.zeros_like()
    lm_k = layout.expand(loss_mask)
    dlogits = (cache.probs - values) * lm_k * coeff[:, None]
    _backward_arrays(params, layout, cache, dlogits, grads)
    return loss, grads


def batch_loss(params: ModelParams, layout: LayoutSpec,
               instances: Sequence[MaskedInstance],
               weights: Sequence[float] | None = None,
               n_groups: int | None = None) -> float:
    """Cross-entropy objective only (shares the definition in loss_and_grads)."""
    values, ev, loss_mask = _stack_instances(layout, instances)
    return batch_loss_arrays(params, layout, values, ev, loss_mask, weights, n_groups)


def loss_and_grads(params: ModelParams, layout: LayoutSpec,
                   instances: Sequence[MaskedInstance],
                   weights: Sequence[float] | None = None,
                   n_groups: int | None = None):
    """Average cross-entropy over loss-masked targets, with exact gradients.

    Per instance the loss is the weighted sum over its loss-mask variables
    of -log(predicted probability of the observed state); by default the
    weight is 1/(number of loss variables) and the batch divides by the
    instance count, giving the plain mean-over-targets, mean-over-batch
    objective.  ``weights``/``n_groups`` let callers that expand one
    observed sample into several instances keep unit weight per sample.

    Returns ``(loss, grads)`` with ``grads`` a ModelParams of the same
    shape.  Gradients are analytic; probabilities are clamped at 1e-12
    inside the log only.
    """
    values, ev, loss_mask = _stack_instances(layout, instances)
    return loss_and_grads_arrays(params, layout, values, ev, loss_mask, weights, n_groups)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Adam accumulators, flat like the parameters they update."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams, learning_rate: float = 0.001,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls(m=np.zeros_like(params.flat), v=np.zeros_like(params.flat),
                   learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: OptimizerState, params: ModelParams, grads: ModelParams):
    """One bias-corrected Adam update, in place; returns (params, state)."""
    if grads.flat.shape != params.flat.shape:
        raise ValueError("gradient shape does not match parameters")
    state.step += 1
    g = grads.flat
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    params.flat -= state.learning_rate * (state.m / bc1) / (np.sqrt(state.v / bc2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def finite_difference_check(params: ModelParams, layout: LayoutSpec,
                            instances: Sequence[MaskedInstance],
                            weights: Sequence[float] | None = None,
                            n_groups: int | None = None,
                            step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Perturbs every coordinate of the flat parameter vector.  The relative
    error denominator is floored at 1e-6 so coordinates whose gradient is
    legitimately (near) zero do not divide noise by noise.
    """
    _, grads = loss_and_grads(params, layout, instances, weights, n_groups)
    flat = params.flat
    fd = np.empty_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        up = batch_loss(params, layout, instances, weights, n_groups)
        flat[i] = original - step
        down = batch_loss(params, layout, instances, weights, n_groups)
        flat[i] = original
        fd[i] = (up - down) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(grads.flat), np.abs(fd)), 1e-6)
    return float(np.max(np.abs(grads.flat - fd) / denom))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_model(params: ModelParams, layout: LayoutSpec, path: str | Path,
               seed: int | None = None, config: dict | None = None) -> None:
    """JSON checkpoint; float64 values round-trip exactly through repr."""
    doc = {
        "layout": {"names": list(layout.names), "widths": [int(w) for w in layout.widths]},
        "h": params.h,
        "params": {name: getattr(params, name).ravel().tolist() for name in ModelParams.FIELDS},
        "seed": seed,
        "config": config or {},
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path: str | Path) -> tuple[ModelParams, LayoutSpec, dict]:
    doc = json.loads(Path(path).read_text())
    layout = LayoutSpec(doc["layout"]["names"], doc["layout"]["widths"])
    params = ModelParams(layout.k, int(doc["h"]))
    for name in ModelParams.FIELDS:
        view = getattr(params, name)
        view[...] = np.asarray(doc["params"][name], dtype=np.float64).reshape(view.shape)
    meta = {"seed": doc.get("seed"), "config": doc.get("config", {})}
    return params, layout, meta
