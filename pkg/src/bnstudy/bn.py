"""Discrete Bayesian networks: representation, exact inference, fitting.

A network is a DAG over named discrete variables plus one conditional
probability table (CPT) per variable, factorizing the joint distribution
as the product of per-variable conditionals.  This module provides

* validated construction (:func:`build_network`) and JSON round-tripping,
* ancestral forward sampling,
* exact conditional queries via variable elimination,
* maximum-likelihood CPT fitting with add-one (K2 / Dirichlet(1)) smoothing,
* a query front-end (:func:`bn_predict`) that falls back to the
  unconditional marginal when the evidence has zero probability.

CPT row convention: rows are ordered lexicographically over parent state
indices, parents in declaration order, the last parent varying fastest.
Equivalently, ``table.reshape(*parent_cards, n_states)`` indexes rows by
parent states directly (C order).
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ROW_SUM_TOL = 1e-9

Assignment = dict[str, int]
"""Map from variable name to state index."""


class NetworkError(ValueError):
    """A network definition violates a structural invariant."""


class ZeroEvidenceError(RuntimeError):
    """The queried evidence has probability zero under the network."""


@dataclass(frozen=True)
class VariableSpec:
    """A named discrete variable with an ordered set of state labels."""

    name: str
    states: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", tuple(self.states))
        if len(self.states) < 2:
            raise NetworkError(f"variable {self.name!r} needs at least 2 states")
        if len(set(self.states)) != len(self.states):
            raise NetworkError(f"variable {self.name!r} has duplicate state labels")

    @property
    def cardinality(self) -> int:
        return len(self.states)


class Dag:
    """Directed acyclic graph over declared variables.

    Variables keep their declaration order; parent and child lists are
    ordered by declaration index so every traversal is deterministic.
    Construction fails on self-loops, undeclared endpoints, duplicate
    variable names, and cycles.
    """

    def __init__(self, variables: Sequence[VariableSpec], edges: Iterable[tuple[str, str]]):
        names = [v.name for v in variables]
        if len(set(names)) != len(names):
            raise NetworkError("duplicate variable names in declaration")
        self.variables: tuple[VariableSpec, ...] = tuple(variables)
        self.names: tuple[str, ...] = tuple(names)
        self.index: dict[str, int] = {n: i for i, n in enumerate(names)}

        seen: set[tuple[str, str]] = set()
        for parent, child in edges:
            if parent not in self.index:
                raise NetworkError(f"edge ({parent!r}, {child!r}) references undeclared variable {parent!r}")
            if child not in self.index:
                raise NetworkError(f"edge ({parent!r}, {child!r}) references undeclared variable {child!r}")
            if parent == child:
                raise NetworkError(f"self-loop on {parent!r}")
            seen.add((parent, child))
        self.edges: tuple[tuple[str, str], ...] = tuple(
            sorted(seen, key=lambda e: (self.index[e[0]], self.index[e[1]]))
        )

        parents: dict[str, list[str]] = {n: [] for n in names}
        children: dict[str, list[str]] = {n: [] for n in names}
        for parent, child in self.edges:
            parents[child].append(parent)
            children[parent].append(child)
        key = self.index.__getitem__
        self._parents = {n: tuple(sorted(ps, key=key)) for n, ps in parents.items()}
        self._children = {n: tuple(sorted(cs, key=key)) for n, cs in children.items()}
        self._topo = self._toposort()

    def parents(self, name: str) -> tuple[str, ...]:
        return self._parents[name]

    def children(self, name: str) -> tuple[str, ...]:
        return self._children[name]

    def cardinality(self, name: str) -> int:
        return self.variables[self.index[name]].cardinality

    def _toposort(self) -> tuple[str, ...]:
        indegree = {n: len(self._parents[n]) for n in self.names}
        ready = [n for n in self.names if indegree[n] == 0]
        order: list[str] = []
        while ready:
            # Smallest declaration index first keeps the order deterministic.
            ready.sort(key=self.index.__getitem__)
            node = ready.pop(0)
            order.append(node)
            for child in self._children[node]:
                indegree[child] -= 1
                if indegree[child] == 0:
                    ready.append(child)
        if len(order) != len(self.names):
            stuck = [n for n in self.names if indegree[n] > 0]
            raise NetworkError(f"cycle detected involving {stuck}")
        return tuple(order)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dag):
            return NotImplemented
        return self.variables == other.variables and self.edges == other.edges

    def __repr__(self) -> str:
        return f"Dag({len(self.names)} variables, {len(self.edges)} edges)"


def topological_order(dag: Dag) -> tuple[str, ...]:
    """Variable names with every parent preceding its children.

    Ties are broken by declaration order, so the result is a pure function
    of the DAG.
    """
    return dag._topo


@dataclass
class Cpt:
    """Conditional probability table for one variable.

    ``table`` has one row per parent-state combination (see the module
    docstring for the row convention) and one column per state.
    """

    variable: str
    parents: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self) -> None:
        self.parents = tuple(self.parents)
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 2:
            raise NetworkError(f"CPT for {self.variable!r} must be two-dimensional")


class DiscreteBayesNet:
    """A DAG plus one validated CPT per variable.

    Immutable after construction; safe to share across concurrent readers.
    """

    def __init__(self, dag: Dag, cpts: Iterable[Cpt], metadata: dict | None = None):
        self.dag = dag
        self.metadata = dict(metadata or {})
        by_name = {}
        for cpt in cpts:
            if cpt.variable not in dag.index:
                raise NetworkError(f"CPT for undeclared variable {cpt.variable!r}")
            if cpt.variable in by_name:
                raise NetworkError(f"duplicate CPT for {cpt.variable!r}")
            by_name[cpt.variable] = cpt
        missing = [n for n in dag.names if n not in by_name]
        if missing:
            raise NetworkError(f"missing CPTs for {missing}")
        self.cpts: dict[str, Cpt] = {n: by_name[n] for n in dag.names}
        for name in dag.names:
            self._validate_cpt(self.cpts[name])

    def _validate_cpt(self, cpt: Cpt) -> None:
        expected_parents = self.dag.parents(cpt.variable)
        if cpt.parents != expected_parents:
            raise NetworkError(
                f"CPT parents for {cpt.variable!r} are {cpt.parents}, "
                f"DAG requires {expected_parents}"
            )
        cards = [self.dag.cardinality(p) for p in cpt.parents]
        n_rows = int(np.prod(cards)) if cards else 1
        n_states = self.dag.cardinality(cpt.variable)
        if cpt.table.shape != (n_rows, n_states):
            raise NetworkError(
                f"CPT for {cpt.variable!r} has shape {cpt.table.shape}, "
                f"expected {(n_rows, n_states)}"
            )
        if np.any(cpt.table < 0.0) or np.any(cpt.table > 1.0):
            raise NetworkError(f"CPT for {cpt.variable!r} has entries outside [0, 1]")
        sums = cpt.table.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise NetworkError(
                f"CPT row {bad} for {cpt.variable!r} sums to {sums[bad]!r}, not 1"
            )

    @property
    def names(self) -> tuple[str, ...]:
        return self.dag.names

    def row_index(self, variable: str, assignment: Mapping[str, int]) -> int:
        """CPT row selected by the parent states in ``assignment``."""
        row = 0
        for parent in self.dag.parents(variable):
            row = row * self.dag.cardinality(parent) + assignment[parent]
        return row

    def __repr__(self) -> str:
        return f"DiscreteBayesNet({len(self.names)} variables, {len(self.dag.edges)} edges)"


@dataclass
class Distribution:
    """A probability vector over one variable's states."""

    variable: str
    probs: np.ndarray

    def __post_init__(self) -> None:
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 1:
            raise ValueError(f"distribution over {self.variable!r} must be a vector")
        if abs(float(self.probs.sum()) - 1.0) > ROW_SUM_TOL:
            raise ValueError(
                f"distribution over {self.variable!r} sums to {self.probs.sum()!r}"
            )


@dataclass
class Dataset:
    """Complete samples as an integer state matrix, one row per record."""

    columns: tuple[str, ...]
    data: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        self.columns = tuple(self.columns)
        self.data = np.asarray(self.data, dtype=np.int64)
        if self.data.ndim != 2 or self.data.shape[1] != len(self.columns):
            raise ValueError("dataset matrix shape does not match its columns")

    def __len__(self) -> int:
        return int(self.data.shape[0])

    def assignment(self, i: int) -> Assignment:
        return {name: int(s) for name, s in zip(self.columns, self.data[i])}


def build_network(
    variables: Sequence[VariableSpec],
    edges: Iterable[tuple[str, str]],
    cpts: Iterable[Cpt],
    metadata: dict | None = None,
) -> DiscreteBayesNet:
    """Construct and fully validate a network from its parts."""
    return DiscreteBayesNet(Dag(variables, edges), cpts, metadata=metadata)


def free_parameter_count(net: DiscreteBayesNet) -> int:
    """Number of free CPT parameters: rows times (states - 1), summed."""
    total = 0
    for name in net.names:
        cpt = net.cpts[name]
        total += cpt.table.shape[0] * (cpt.table.shape[1] - 1)
    return total


def joint_probability(net: DiscreteBayesNet, assignment: Mapping[str, int]) -> float:
    """Probability of a full assignment: the product of CPT lookups.

    Serves as the brute-force building block that exact inference is
    checked against.
    """
    missing = [n for n in net.names if n not in assignment]
    if missing:
        raise ValueError(f"assignment is missing variables {missing}")
    p = 1.0
    for name in net.names:
        state = assignment[name]
        if not 0 <= state < net.dag.cardinality(name):
            raise ValueError(f"state {state} out of range for {name!r}")
        p *= float(net.cpts[name].table[net.row_index(name, assignment), state])
    return p


def all_assignments(net: DiscreteBayesNet) -> Iterable[Assignment]:
    """Every full assignment, last declared variable varying fastest."""
    ranges = [range(net.dag.cardinality(n)) for n in net.names]
    for states in itertools.product(*ranges):
        yield dict(zip(net.names, states))


def _as_rng(rng: np.random.Generator | int) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    seed = int(rng)
    return np.random.default_rng(seed), seed


def forward_sample(
    net: DiscreteBayesNet, rng: np.random.Generator | int, count: int
) -> Dataset:
    """Draw ``count`` ancestral samples, one variable at a time in
    topological order.

    Accepts either a Generator or an integer seed; a seed is recorded as
    the dataset's provenance.  Identical seeds produce identical datasets.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    gen, seed = _as_rng(rng)
    names = net.names
    col = {n: i for i, n in enumerate(names)}
    data = np.zeros((count, len(names)), dtype=np.int64)
    for name in topological_order(net.dag):
        cpt = net.cpts[name]
        cards = [net.dag.cardinality(p) for p in cpt.parents]
        rows = np.zeros(count, dtype=np.int64)
        for parent, card in zip(cpt.parents, cards):
            rows = rows * card + data[:, col[parent]]
        cdf = np.cumsum(cpt.table, axis=1)[rows]
        u = gen.random(count)
        data[:, col[name]] = (u[:, None] > cdf[:, :-1]).sum(axis=1)
    return Dataset(columns=names, data=data, seed=seed)


# ---------------------------------------------------------------------------
# Variable elimination
# ---------------------------------------------------------------------------

@dataclass
class _Factor:
    """A table over a sorted tuple of variable indices."""

    vars: tuple[int, ...]
    table: np.ndarray


def _restricted_factors(net: DiscreteBayesNet, evidence: Mapping[str, int]) -> list[_Factor]:
    """One factor per CPT, with evidence variables sliced out of the scope."""
    idx = net.dag.index
    factors = []
    for name in net.names:
        cpt = net.cpts[name]
        scope = [idx[p] for p in cpt.parents] + [idx[name]]
        cards = [net.dag.cardinality(net.names[i]) for i in scope]
        table = cpt.table.reshape(cards)
        order = np.argsort(scope, kind="stable")
        scope_sorted = [scope[i] for i in order]
        table = np.transpose(table, order)
        keep, slicer = [], []
        for v in scope_sorted:
            vname = net.names[v]
            if vname in evidence:
                slicer.append(int(evidence[vname]))
            else:
                slicer.append(slice(None))
                keep.append(v)
        factors.append(_Factor(tuple(keep), table[tuple(slicer)]))
    return factors


def _multiply(a: _Factor, b: _Factor) -> _Factor:
    merged = tuple(sorted(set(a.vars) | set(b.vars)))
    pos = {v: i for i, v in enumerate(merged)}

    def expand(f: _Factor) -> np.ndarray:
        shape = [1] * len(merged)
        for v, size in zip(f.vars, f.table.shape):
            shape[pos[v]] = size
        return f.table.reshape(shape)

    return _Factor(merged, expand(a) * expand(b))


def _elimination_order(factors: list[_Factor], keep: set[int]) -> list[int]:
    """Min-degree ordering over the factor interaction graph.

    Deterministic: ties break toward the smaller variable index.  ``keep``
    variables are never eliminated but do count toward degrees.
    """
    adjacency: dict[int, set[int]] = {}
    for f in factors:
        for v in f.vars:
            adjacency.setdefault(v, set()).update(u for u in f.vars if u != v)
    to_eliminate = {v for v in adjacency if v not in keep}
    order = []
    while to_eliminate:
        v = min(to_eliminate, key=lambda w: (len(adjacency[w]), w))
        order.append(v)
        neighbors = adjacency.pop(v)
        for u in neighbors:
            adjacency[u].discard(v)
        for u, w in itertools.combinations(sorted(neighbors), 2):
            adjacency[u].add(w)
            adjacency[w].add(u)
        to_eliminate.discard(v)
    return order


def variable_elimination(
    net: DiscreteBayesNet, evidence: Mapping[str, int], target: str
) -> Distribution:
    """Exact ``P(target | evidence)`` by summing out all other variables.

    Raises :class:`ZeroEvidenceError` when the evidence has probability
    zero, so callers can decide how to fall back.
    """
    if target not in net.dag.index:
        raise ValueError(f"unknown target variable {target!r}")
    if target in evidence:
        raise ValueError(f"target {target!r} appears in the evidence")
    for name, state in evidence.items():
        if name not in net.dag.index:
            raise ValueError(f"unknown evidence variable {name!r}")
        if not 0 <= state < net.dag.cardinality(name):
            raise ValueError(f"state {state} out of range for {name!r}")

    factors = _restricted_factors(net, evidence)
    target_idx = net.dag.index[target]
    for v in _elimination_order(factors, keep={target_idx}):
        touching = [f for f in factors if v in f.vars]
        rest = [f for f in factors if v not in f.vars]
        product = touching[0]
        for f in touching[1:]:
            product = _multiply(product, f)
        axis = product.vars.index(v)
        summed = _Factor(
            tuple(u for u in product.vars if u != v),
            product.table.sum(axis=axis),
        )
        factors = rest + [summed]

    result = factors[0]
    for f in factors[1:]:
        result = _multiply(result, f)
    # Only the target may remain in scope; everything else was evidence or
    # eliminated, so stray scalars have already been folded in.
    table = result.table.reshape(-1) if result.vars == (target_idx,) else np.atleast_1d(result.table)
    z = float(table.sum())
    if z <= 0.0:
        raise ZeroEvidenceError(f"evidence {dict(evidence)} has probability zero")
    return Distribution(target, table / z)


def bn_predict(
    net: DiscreteBayesNet, evidence: Mapping[str, int], targets: Sequence[str]
) -> tuple[list[Distribution], bool]:
    """Per-target conditional distributions, with the zero-evidence fallback.

    When the evidence has zero probability the evidence is discarded and
    each target gets its unconditional marginal instead; the returned flag
    reports whether that fallback fired.
    """
    overlap = [t for t in targets if t in evidence]
    if overlap:
        raise ValueError(f"targets {overlap} appear in the evidence")
    try:
        return [variable_elimination(net, evidence, t) for t in targets], False
    except ZeroEvidenceError:
        return [variable_elimination(net, {}, t) for t in targets], True


# ---------------------------------------------------------------------------
# Parameter fitting
# ---------------------------------------------------------------------------

def fit_mle_k2(dag: Dag, dataset: Dataset) -> DiscreteBayesNet:
    """Maximum-likelihood CPTs with add-one (Dirichlet(1), "K2") smoothing.

    Every cell becomes ``(count + 1) / (row_total + n_states)``; an empty
    dataset therefore yields uniform rows, flagged in the network metadata.
    """
    col = {n: i for i, n in enumerate(dataset.columns)}
    missing = [n for n in dag.names if n not in col]
    if missing:
        raise ValueError(f"dataset does not cover variables {missing}")
    n_records = len(dataset)
    cpts = []
    for name in dag.names:
        parents = dag.parents(name)
        cards = [dag.cardinality(p) for p in parents]
        n_rows = int(np.prod(cards)) if cards else 1
        n_states = dag.cardinality(name)
        if n_records == 0:
            counts = np.zeros((n_rows, n_states))
        else:
            rows = np.zeros(n_records, dtype=np.int64)
            for parent, card in zip(parents, cards):
                rows = rows * card + dataset.data[:, col[parent]]
            flat = rows * n_states + dataset.data[:, col[name]]
            counts = np.bincount(flat, minlength=n_rows * n_states).reshape(n_rows, n_states)
        table = (counts + 1.0) / (counts.sum(axis=1, keepdims=True) + n_states)
        cpts.append(Cpt(name, parents, table))
    metadata = {"fitted_from_records": n_records}
    if n_records == 0:
        metadata["empty_dataset"] = True
    return DiscreteBayesNet(dag, cpts, metadata=metadata)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def network_to_dict(net: DiscreteBayesNet) -> dict:
    return {
        "variables": [{"name": v.name, "states": list(v.states)} for v in net.dag.variables],
        "edges": [[p, c] for p, c in net.dag.edges],
        "cpts": [
            {
                "variable": name,
                "parents": list(net.cpts[name].parents),
                "rows": net.cpts[name].table.tolist(),
            }
            for name in net.names
        ],
    }


def network_from_dict(doc: Mapping) -> DiscreteBayesNet:
    variables = [VariableSpec(v["name"], tuple(v["states"])) for v in doc["variables"]]
    edges = [(p, c) for p, c in doc["edges"]]
    cpts = [
        Cpt(c["variable"], tuple(c["parents"]), np.array(c["rows"], dtype=np.float64))
        for c in doc["cpts"]
    ]
    return build_network(variables, edges, cpts)


def save_network(net: DiscreteBayesNet, path: str | Path) -> None:
    import json

    Path(path).write_text(json.dumps(network_to_dict(net), indent=2) + "\n")


def load_network(path: str | Path) -> DiscreteBayesNet:
    import json

    return network_from_dict(json.loads(Path(path).read_text()))


def save_dataset_csv(dataset: Dataset, net: DiscreteBayesNet, path: str | Path) -> None:
    """Write records as CSV with state labels, columns in declaration order."""
    labels = {n: net.dag.variables[net.dag.index[n]].states for n in dataset.columns}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.columns)
        for row in dataset.data:
            writer.writerow([labels[n][s] for n, s in zip(dataset.columns, row)])


def load_dataset_csv(net: DiscreteBayesNet, path: str | Path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        unknown = [n for n in header if n not in net.dag.index]
        if unknown:
            raise ValueError(f"CSV columns {unknown} are not network variables")
        state_index = {
            n: {label: i for i, label in enumerate(net.dag.variables[net.dag.index[n]].states)}
            for n in header
        }
        rows = []
        for record in reader:
            rows.append([state_index[n][cell] for n, cell in zip(header, record)])
    data = np.array(rows, dtype=np.int64).reshape(len(rows), len(header))
    return Dataset(columns=tuple(header), data=data)
