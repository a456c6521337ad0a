"""D-separation queries and exhaustive independence-relation enumeration.

Two variables X and Y are d-separated given a conditioning set A when
every undirected path between them is blocked: a chain or fork node
blocks when it is observed, a collider blocks unless it or one of its
descendants is observed.  :func:`is_d_separated` decides single queries
with the linear-time reachability algorithm (rather than path
enumeration, which is kept as a test-only reference);
:func:`enumerate_relations` scans all variable pairs and all
conditioning subsets, including the empty set.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .bn import Dag


@dataclass(frozen=True)
class IndependenceRelation:
    """An unordered pair (x, y) declared independent given a conditioning set."""

    x: str
    y: str
    conditioning_set: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "conditioning_set", frozenset(self.conditioning_set))
        if self.x == self.y:
            raise ValueError(f"relation requires two distinct variables, got {self.x!r} twice")
        if self.x in self.conditioning_set or self.y in self.conditioning_set:
            raise ValueError(
                f"conditioning set of ({self.x!r}, {self.y!r}) must not contain either variable"
            )


def canonical_relation(dag: Dag, x: str, y: str, conditioning_set: Iterable[str]) -> IndependenceRelation:
    """Relation with (x, y) ordered by declaration so the pair is unordered."""
    if dag.index[x] > dag.index[y]:
        x, y = y, x
    return IndependenceRelation(x, y, frozenset(conditioning_set))


def is_d_separated(dag: Dag, x: str, y: str, conditioning_set: Iterable[str]) -> bool:
    """Whether every path between ``x`` and ``y`` is blocked given the set.

    Reachability formulation: walk the graph from ``x``, tracking whether
    each node is entered along an incoming or outgoing edge, and extend
    the walk only through active trail segments.  ``y`` is d-separated
    exactly when it is never reached.
    """
    observed = frozenset(conditioning_set)
    for name in (x, y, *observed):
        if name not in dag.index:
            raise ValueError(f"unknown variable {name!r}")
    if x == y:
        raise ValueError("x and y must be distinct")
    if x in observed or y in observed:
        raise ValueError("conditioning set must exclude x and y")

    # Observed nodes and their ancestors: the set where a collider may be
    # traversed upward.
    anc = set(observed)
    frontier = deque(observed)
    while frontier:
        node = frontier.popleft()
        for parent in dag.parents(node):
            if parent not in anc:
                anc.add(parent)
                frontier.append(parent)

    UP, DOWN = 0, 1  # entered from a child / from a parent
    queue = deque([(x, UP)])
    visited = {(x, UP)}
    while queue:
        node, direction = queue.popleft()
        if node == y:
            return False
        moves = []
        if direction == UP and node not in observed:
            moves.extend((p, UP) for p in dag.parents(node))
            moves.extend((c, DOWN) for c in dag.children(node))
        elif direction == DOWN:
            if node not in observed:
                moves.extend((c, DOWN) for c in dag.children(node))
            if node in anc:  # collider with an observed descendant (or observed itself)
                moves.extend((p, UP) for p in dag.parents(node))
        for move in moves:
            if move not in visited:
                visited.add(move)
                queue.append(move)
    return True


def enumerate_relations(dag: Dag) -> list[IndependenceRelation]:
    """All d-separation relations the DAG implies, in a fixed order.

    Iterates unordered pairs in declaration order, and for each pair all
    conditioning subsets of the remaining variables ordered by size then
    lexicographically; examines C(N, 2) * 2^(N-2) candidates in total.
    """
    names = dag.names
    relations = []
    for xi, yi in itertools.combinations(range(len(names)), 2):
        x, y = names[xi], names[yi]
        rest = [n for n in names if n != x and n != y]
        for size in range(len(rest) + 1):
            for subset in itertools.combinations(rest, size):
                if is_d_separated(dag, x, y, subset):
                    relations.append(IndependenceRelation(x, y, frozenset(subset)))
    return relations


# ---------------------------------------------------------------------------
# Relation list file format: one relation per line, "X _|_ Y | A1,A2"
# ---------------------------------------------------------------------------

def format_relation(relation: IndependenceRelation) -> str:
    cond = ",".join(sorted(relation.conditioning_set))
    return f"{relation.x} _|_ {relation.y} | {cond}"


def parse_relation(line: str) -> IndependenceRelation:
    head, sep, tail = line.partition(" _|_ ")
    if not sep:
        raise ValueError(f"cannot parse relation line {line!r}")
    y_part, sep, cond_part = tail.partition("|")
    if not sep:
        raise ValueError(f"cannot parse relation line {line!r}")
    names = [n.strip() for n in cond_part.split(",") if n.strip()]
    return IndependenceRelation(head.strip(), y_part.strip(), frozenset(names))


def save_relations(relations: Sequence[IndependenceRelation], path: str | Path) -> None:
    Path(path).write_text("".join(format_relation(r) + "\n" for r in relations))


def load_relations(path: str | Path) -> list[IndependenceRelation]:
    lines = Path(path).read_text().splitlines()
    return [parse_relation(line) for line in lines if line.strip()]
