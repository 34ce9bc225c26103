"""Rooted spin-network graphs: classes, XY Hamiltonians and symmetries.

Node 1 is the accessible (measured) spin. Two graphs are in the same class
when a relabelling of nodes 2..n maps one onto the other; non-root
components are invisible from node 1 and are pruned.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from math import comb

import numpy as np

N_MAX_LIMIT = 6
COUPLING_TOL = 1e-12


class SymmetryError(ValueError):
    """Raised when a permutation is not a root-fixing automorphism."""


@dataclass(frozen=True)
class RootedGraph:
    """Undirected weighted graph with distinguished root node 1.

    ``edges`` are sorted pairs ``(j, k)`` with ``j < k`` and ``couplings[i]``
    is the strength of ``edges[i]`` in units of the measurement rate.
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...] = ()
    couplings: tuple[float, ...] = ()

    @classmethod
    def from_edges(cls, edges, couplings=None, *, n_nodes=None, coupling=1.0, prune=True):
        pairs = []
        for e in edges:
            j, k = (int(x) for x in e)
            if j == k or j < 1 or k < 1:
                raise ValueError(f"invalid edge {e!r}")
            pairs.append((min(j, k), max(j, k)))
        if couplings is None:
            couplings = [coupling] * len(pairs)
        couplings = [float(c) for c in couplings]
        if len(couplings) != len(pairs):
            raise ValueError("couplings and edges differ in length")
        if len(set(pairs)) != len(pairs):
            raise ValueError("duplicate edge")
        if any(c <= 0 for c in couplings):
            raise ValueError("couplings must be strictly positive")
        top = max([k for _, k in pairs], default=1)
        n = top if n_nodes is None else int(n_nodes)
        if n < top:
            raise ValueError(f"edge endpoint {top} exceeds n_nodes={n}")
        order = sorted(range(len(pairs)), key=lambda i: pairs[i])
        g = cls(n, tuple(pairs[i] for i in order), tuple(couplings[i] for i in order))
        return g.pruned() if prune else g

    @property
    def coupling_map(self) -> dict[tuple[int, int], float]:
        return dict(zip(self.edges, self.couplings))

    def root_component(self) -> set[int]:
        adj: dict[int, set[int]] = {v: set() for v in range(1, self.n_nodes + 1)}
        for j, k in self.edges:
            adj[j].add(k)
            adj[k].add(j)
        seen, stack = {1}, [1]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return seen

    def pruned(self) -> RootedGraph:
        """Drop nodes unreachable from node 1, relabelling the rest in order."""
        keep = sorted(self.root_component())
        if len(keep) == self.n_nodes:
            return self
        relabel = {old: new for new, old in enumerate(keep, start=1)}
        edges, coup = [], []
        for (j, k), c in zip(self.edges, self.couplings):
            if j in relabel and k in relabel:
                edges.append((relabel[j], relabel[k]))
                coup.append(c)
        return RootedGraph(len(keep), tuple(edges), tuple(coup))

    def relabelled(self, perm) -> RootedGraph:
        """Apply ``perm`` (1-based tuple, ``perm[j-1]`` is the image of node j)."""
        edges = [(perm[j - 1], perm[k - 1]) for j, k in self.edges]
        return RootedGraph.from_edges(edges, self.couplings, n_nodes=self.n_nodes, prune=False)

    def with_coupling(self, lam: float) -> RootedGraph:
        return RootedGraph(self.n_nodes, self.edges, (float(lam),) * len(self.edges))

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "edges": [list(e) for e in self.edges],
            "couplings": list(self.couplings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RootedGraph:
        return cls.from_edges(d.get("edges", []), d.get("couplings"), n_nodes=d.get("n_nodes"))


def _pair_list(n: int) -> list[tuple[int, int]]:
    return [(j, k) for j in range(1, n + 1) for k in range(j + 1, n + 1)]


def _root_fixing_perms(n: int):
    for tail in itertools.permutations(range(2, n + 1)):
        yield (1,) + tail


def canonical_form(g: RootedGraph) -> str:
    """Lexicographically smallest upper-triangle adjacency string over all
    relabellings of nodes 2..n. Couplings are ignored."""
    g = g.pruned()
    pairs = _pair_list(g.n_nodes)
    best = None
    for perm in _root_fixing_perms(g.n_nodes):
        image = {tuple(sorted((perm[j - 1], perm[k - 1]))) for j, k in g.edges}
        key = "".join("1" if p in image else "0" for p in pairs)
        if best is None or key < best:
            best = key
    return best


def graph_from_key(key: str, coupling: float = 1.0) -> RootedGraph:
    n = 1
    while comb(n, 2) < len(key):
        n += 1
    if comb(n, 2) != len(key):
        raise ValueError(f"key length {len(key)} is not n choose 2")
    edges = [p for p, b in zip(_pair_list(n), key) if b == "1"]
    return RootedGraph.from_edges(edges, n_nodes=n, coupling=coupling, prune=False)


def bfs_relabelled(g: RootedGraph) -> RootedGraph:
    """Same graph with nodes renumbered in breadth-first order from node 1
    (neighbours visited in ascending label order). Readable representative:
    the chain class comes out as 1-2-3 rather than 1-3-2."""
    adj: dict[int, list[int]] = {v: [] for v in range(1, g.n_nodes + 1)}
    for j, k in g.edges:
        adj[j].append(k)
        adj[k].append(j)
    order, seen = [1], {1}
    for v in order:
        for w in sorted(adj[v]):
            if w not in seen:
                seen.add(w)
                order.append(w)
    order += [v for v in range(1, g.n_nodes + 1) if v not in seen]
    perm = [0] * g.n_nodes
    for new, old in enumerate(order, start=1):
        perm[old - 1] = new
    return g.relabelled(tuple(perm))


def _connected_canonical_keys(n: int) -> set[int]:
    """Canonical integer keys of all root-connected graphs on exactly n nodes.

    Edge sets are bit masks with pair 0 as the most significant bit, so
    integer order equals lexicographic string order.
    """
    pairs = _pair_list(n)
    n_pairs = len(pairs)
    masks = np.arange(2**n_pairs, dtype=np.int64)
    bit = {p: n_pairs - 1 - i for i, p in enumerate(pairs)}
    has = {p: (masks >> bit[p]) & 1 for p in pairs}

    # reachability from node 1, as a node bitmask per edge set
    reach = np.full_like(masks, 1)
    for _ in range(n):
        new = reach.copy()
        for (j, k), h in has.items():
            rj = (reach >> (j - 1)) & 1
            rk = (reach >> (k - 1)) & 1
            new |= (h & rk) << (j - 1)
            new |= (h & rj) << (k - 1)
        reach = new
    masks = masks[reach == (1 << n) - 1]

    best = masks.copy()
    for perm in _root_fixing_perms(n):
        img = np.zeros_like(masks)
        for p in pairs:
            q = tuple(sorted((perm[p[0] - 1], perm[p[1] - 1])))
            img |= ((masks >> bit[p]) & 1) << bit[q]
        np.minimum(best, img, out=best)
    return set(int(b) for b in np.unique(best))


@dataclass(frozen=True)
class GraphCatalog:
    n_max: int
    classes: tuple[RootedGraph, ...]
    keys: tuple[str, ...]
    _index: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def m(self) -> int:
        return len(self.classes)

    def class_id(self, g: RootedGraph) -> int:
        """1-based class id of ``g`` (topology only)."""
        if not self._index:
            self._index.update({k: i + 1 for i, k in enumerate(self.keys)})
        key = canonical_form(g)
        if key not in self._index:
            raise KeyError(f"graph with key {key!r} not in catalog (n_max={self.n_max})")
        return self._index[key]

    def to_json_obj(self) -> list[dict]:
        return [
            {"class_id": i + 1, "n_nodes": g.n_nodes, "edges": [list(e) for e in g.edges]}
            for i, g in enumerate(self.classes)
        ]

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=1)


def enumerate_graphs(n_max: int) -> GraphCatalog:
    """All distinguishable root-connected graph classes with at most ``n_max`` nodes.

    Ordered by node count, then canonical key.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if n_max > N_MAX_LIMIT:
        raise ValueError(f"n_max={n_max} exceeds the canonicalisation budget ({N_MAX_LIMIT})")
    keys: list[str] = []
    for n in range(1, n_max + 1):
        width = comb(n, 2)
        keys.extend(format(k, f"0{width}b") if width else "" for k in sorted(_connected_canonical_keys(n)))
    classes = tuple(bfs_relabelled(graph_from_key(k)) for k in keys)
    return GraphCatalog(n_max, classes, tuple(keys))


def build_hamiltonian(g: RootedGraph, n_spins: int) -> np.ndarray:
    """XY Hamiltonian ``sum lambda_jk (X_j X_k + Y_j Y_k)`` on ``n_spins`` spins.

    ``X X + Y Y`` maps ``|01> <-> |10>`` with amplitude 2 and kills ``|00>``,
    ``|11>``, so the matrix is assembled directly from bit flips.
    """
    if g.n_nodes > n_spins:
        raise ValueError(f"graph has {g.n_nodes} nodes but only {n_spins} spins")
    d = 2**n_spins
    h = np.zeros((d, d), dtype=complex)
    idx = np.arange(d)
    for (j, k), lam in zip(g.edges, g.couplings):
        bj, bk = n_spins - j, n_spins - k
        differ = ((idx >> bj) & 1) != ((idx >> bk) & 1)
        src = idx[differ]
        h[src ^ ((1 << bj) | (1 << bk)), src] += 2.0 * lam
    return h


def root_fixing_automorphisms(g: RootedGraph, tol: float = COUPLING_TOL) -> list[tuple[int, ...]]:
    """All node permutations fixing node 1 that preserve edges and couplings.

    Each permutation is a 1-based tuple: ``perm[j-1]`` is the image of node j.
    The identity is always first.
    """
    cmap = g.coupling_map
    out = []
    for perm in _root_fixing_perms(g.n_nodes):
        ok = True
        for (j, k), lam in cmap.items():
            q = tuple(sorted((perm[j - 1], perm[k - 1])))
            if q not in cmap or abs(cmap[q] - lam) > tol:
                ok = False
                break
        if ok:
            out.append(perm)
    return out


def is_automorphism(g: RootedGraph, perm, tol: float = COUPLING_TOL) -> bool:
    perm = tuple(perm)
    if len(perm) != g.n_nodes or perm[0] != 1 or sorted(perm) != list(range(1, g.n_nodes + 1)):
        return False
    return perm in root_fixing_automorphisms(g, tol)


def permutation_operator(perm, n_spins: int) -> np.ndarray:
    """Unitary moving the state of spin j to spin ``perm[j-1]``.

    Spins beyond ``len(perm)`` are left in place.
    """
    perm = tuple(perm) + tuple(range(len(perm) + 1, n_spins + 1))
    d = 2**n_spins
    p = np.zeros((d, d), dtype=complex)
    for i in range(d):
        out = 0
        for j in range(1, n_spins + 1):
            if (i >> (n_spins - j)) & 1:
                out |= 1 << (n_spins - perm[j - 1])
        p[out, i] = 1.0
    return p


def chain(couplings, n_nodes=None) -> RootedGraph:
    """Path 1-2-...-n with the given couplings."""
    couplings = list(couplings)
    edges = [(j, j + 1) for j in range(1, len(couplings) + 1)]
    return RootedGraph.from_edges(edges, couplings, n_nodes=n_nodes)


# Graphs used in the reference experiments. Weights are in units of gamma.
PENTAGON_SYMMETRIC = RootedGraph.from_edges(
    [(1, 2), (2, 3), (3, 4), (4, 5), (1, 5)], [1.0, 1.2, 0.9, 1.2, 1.0]
)
CHAIN5_INIT = chain([1.0, 1.2, 0.9, 1.2])
CHAIN5_IDENT = chain([1.2, 0.8, 1.1, 0.9])
