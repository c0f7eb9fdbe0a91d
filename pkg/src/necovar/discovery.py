"""Contemporaneous causal-structure discovery on the latent panel.

Implements the order-independent (stable) variant of the PC algorithm:
skeleton search with per-level frozen adjacency sets, v-structure
orientation from separation sets, and completion with the four Meek
orientation rules. Conditional independence is tested with the Fisher-z
partial-correlation test, which is exact for the Gaussian scores produced
by the marginal transform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import InsufficientData, NumericalError

__all__ = [
    "CausalGraph",
    "CITestConfig",
    "CITestResult",
    "Skeleton",
    "fisher_z_ci_test",
    "pc_stable_skeleton",
    "orient_cpdag",
    "enumerate_parent_sets",
    "discover_graph",
    "graph_to_json",
    "graph_from_json",
]


@dataclass(frozen=True)
class CITestConfig:
    """Tuning of the conditional-independence tests in skeleton search."""

    alpha_ci: float = 0.01
    max_cond_size: int | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha_ci < 1.0:
            raise ValueError(f"alpha_ci must lie in (0,1), got {self.alpha_ci}")


@dataclass(frozen=True)
class CITestResult:
    independent: bool
    statistic: float
    pvalue: float
    partial_corr: float


@dataclass(frozen=True)
class Skeleton:
    """Undirected skeleton plus the separation sets that removed each pair."""

    p: int
    edges: frozenset
    sepsets: dict
    labels: tuple[str, ...] | None = None


@dataclass(frozen=True)
class CausalGraph:
    """CPDAG over p nodes: directed edges (src, dst), undirected pairs {a, b}.

    ``sepsets`` maps removed (unordered) pairs to the conditioning set used;
    ``diagnostics`` records orientation conflicts that were downgraded to
    undirected edges.
    """

    p: int
    directed_edges: frozenset
    undirected_edges: frozenset
    sepsets: dict = field(default_factory=dict)
    labels: tuple[str, ...] | None = None
    diagnostics: tuple = ()

    def __post_init__(self):
        directed = frozenset((int(a), int(b)) for a, b in self.directed_edges)
        undirected = frozenset(tuple(sorted((int(a), int(b)))) for a, b in self.undirected_edges)
        object.__setattr__(self, "directed_edges", directed)
        object.__setattr__(self, "undirected_edges", undirected)
        for a, b in directed | undirected:
            if a == b:
                raise ValueError(f"self-loop at node {a}")
            if not (0 <= a < self.p and 0 <= b < self.p):
                raise ValueError(f"edge ({a},{b}) outside 0..{self.p - 1}")
        for a, b in directed:
            if (min(a, b), max(a, b)) in undirected:
                raise ValueError(f"edge ({a},{b}) is both directed and undirected")
        if _has_cycle(self.p, directed):
            raise ValueError("directed subgraph contains a cycle")

    def parents(self, node: int) -> frozenset:
        return frozenset(a for a, b in self.directed_edges if b == node)

    def children(self, node: int) -> frozenset:
        return frozenset(b for a, b in self.directed_edges if a == node)

    def undirected_neighbors(self, node: int) -> frozenset:
        return frozenset(a if b == node else b for a, b in self.undirected_edges if node in (a, b))

    def adjacent(self, a: int, b: int) -> bool:
        return (
            (a, b) in self.directed_edges
            or (b, a) in self.directed_edges
            or tuple(sorted((a, b))) in self.undirected_edges
        )

    @property
    def n_edges(self) -> int:
        return len(self.directed_edges) + len(self.undirected_edges)

    @property
    def density(self) -> float:
        """Achieved edge density: edges over node pairs."""
        pairs = self.p * (self.p - 1) // 2
        return self.n_edges / pairs if pairs else 0.0

    def is_fully_directed(self) -> bool:
        return not self.undirected_edges


def fisher_z_ci_test(corr, i: int, j: int, s, n: int, alpha_ci: float) -> CITestResult:
    """Fisher-z test of partial correlation between nodes i and j given s.

    The partial correlation is read off the inverse of the correlation
    submatrix over {i, j} union s; the test statistic is
    sqrt(n - |s| - 3) * |atanh(r)| compared against the two-sided normal
    critical value at level ``alpha_ci``.

    Raises
    ------
    InsufficientData
        If n - |s| - 3 < 1.
    NumericalError
        Singular or indefinite correlation submatrix.
    """
    s = tuple(int(k) for k in s)
    if i == j or i in s or j in s:
        raise ValueError("test nodes must be distinct from the conditioning set")
    dof = n - len(s) - 3
    if dof < 1:
        raise InsufficientData(f"need n - |S| - 3 >= 1, got {dof}")
    corr = np.asarray(corr, dtype=float)
    if not s:
        r = corr[i, j]
    else:
        idx = [i, j, *s]
        sub = corr[np.ix_(idx, idx)]
        try:
            prec = np.linalg.inv(sub)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular correlation submatrix for ({i},{j})|{s}") from exc
        denom = prec[0, 0] * prec[1, 1]
        if denom <= 0.0 or not np.isfinite(denom):
            raise NumericalError(f"indefinite correlation submatrix for ({i},{j})|{s}")
        r = -prec[0, 1] / np.sqrt(denom)
    if abs(r) >= 1.0:
        statistic = np.inf
    else:
        statistic = np.sqrt(dof) * abs(0.5 * np.log((1.0 + r) / (1.0 - r)))
    pvalue = 2.0 * (1.0 - ndtr(statistic)) if np.isfinite(statistic) else 0.0
    critical = ndtri(1.0 - alpha_ci / 2.0)
    return CITestResult(bool(statistic <= critical), float(statistic), float(pvalue), float(r))


def pc_stable_skeleton(latent, cfg: CITestConfig = CITestConfig()) -> Skeleton:
    """Skeleton search with per-level frozen adjacency sets.

    All conditional-independence tests at level L draw their candidate
    conditioning sets from the adjacency sets frozen at the start of that
    level, so the output does not depend on variable ordering.

    Raises
    ------
    InsufficientData
        If N <= p + 3, where the level-0 test already lacks degrees of freedom.
    """
    values = latent.values
    n, p = values.shape
    if n <= p + 3:
        raise InsufficientData(f"PC-stable needs N > p + 3, got N={n}, p={p}")
    labels = tuple(latent.instruments)
    if p == 1:
        return Skeleton(1, frozenset(), {}, labels)
    stds = values.std(axis=0)
    if np.any(stds == 0.0):
        bad = labels[int(np.argmax(stds == 0.0))]
        raise NumericalError(f"column {bad!r} is constant; correlations are undefined")
    corr = np.corrcoef(values.T)
    adj = {i: set(range(p)) - {i} for i in range(p)}
    sepsets: dict = {}
    level = 0
    while True:
        if cfg.max_cond_size is not None and level > cfg.max_cond_size:
            break
        frozen = {i: tuple(sorted(adj[i])) for i in range(p)}
        any_candidates = False
        for i in range(p):
            for j in frozen[i]:
                if j not in adj[i]:
                    continue
                candidates = [k for k in frozen[i] if k != j]
                if len(candidates) < level:
                    continue
                any_candidates = True
                for cond in combinations(candidates, level):
                    res = fisher_z_ci_test(corr, i, j, cond, n, cfg.alpha_ci)
                    if res.independent:
                        adj[i].discard(j)
                        adj[j].discard(i)
                        sepsets[(min(i, j), max(i, j))] = tuple(cond)
                        break
        if not any_candidates:
            break
        level += 1
    edges = frozenset((i, j) for i in range(p) for j in adj[i] if i < j)
    return Skeleton(p, edges, dict(sepsets), labels)


def orient_cpdag(skeleton: Skeleton) -> CausalGraph:
    """Orient a skeleton into a CPDAG: v-structures, then Meek rules 1-4.

    Conflicting v-structure demands on the same edge are downgraded to an
    undirected edge and recorded in the graph's diagnostics.
    """
    p = skeleton.p
    und = {tuple(sorted(e)) for e in skeleton.edges}
    adj = {i: set() for i in range(p)}
    for a, b in und:
        adj[a].add(b)
        adj[b].add(a)
    sepsets = skeleton.sepsets

    # v-structures: for every unshielded triple i - k - j with k outside
    # sepset(i, j), demand i -> k and j -> k; apply non-conflicting demands.
    demands: set = set()
    for k in range(p):
        for i, j in combinations(sorted(adj[k]), 2):
            if j in adj[i]:
                continue
            if k not in sepsets.get((min(i, j), max(i, j)), ()):
                demands.add((i, k))
                demands.add((j, k))
    directed: set = set()
    diagnostics: list = []
    for a, b in sorted(demands):
        if (b, a) in demands:
            if a < b:
                diagnostics.append(("conflict", a, b))
            continue
        directed.add((a, b))
        und.discard((min(a, b), max(a, b)))

    directed, und, more = _meek_closure(p, directed, und)
    diagnostics.extend(more)

    # Safety net: statistical errors can in principle leave a directed cycle;
    # downgrade edges along any cycle rather than failing the pipeline.
    while _has_cycle(p, directed):
        cycle = _find_cycle(p, directed)
        a, b = cycle[0]
        directed.discard((a, b))
        und.add((min(a, b), max(a, b)))
        diagnostics.append(("cycle_downgrade", a, b))

    return CausalGraph(
        p,
        frozenset(directed),
        frozenset(und),
        dict(sepsets),
        skeleton.labels,
        tuple(diagnostics),
    )


def _meek_closure(p, directed, und):
    """Apply Meek rules 1-4 until no undirected edge can be oriented."""
    directed = set(directed)
    und = set(und)
    diagnostics = []

    def adjacent(a, b):
        return (a, b) in directed or (b, a) in directed or (min(a, b), max(a, b)) in und

    def wants(a, b):
        # R1: c -> a, a - b, c and b non-adjacent.
        for c, t in directed:
            if t == a and c != b and not adjacent(c, b):
                return True
        # R2: a -> c -> b.
        for c in range(p):
            if (a, c) in directed and (c, b) in directed:
                return True
        # R3: a - c, a - d, c -> b, d -> b, c and d non-adjacent.
        sibs = [c for c in range(p) if (min(a, c), max(a, c)) in und and c != b]
        for c, d in combinations(sibs, 2):
            if (c, b) in directed and (d, b) in directed and not adjacent(c, d):
                return True
        # R4: a - c, c -> d, d -> b, a and d adjacent, c and b non-adjacent.
        for c in sibs:
            for d in range(p):
                if (c, d) in directed and (d, b) in directed and adjacent(a, d) and not adjacent(c, b):
                    return True
        return False

    changed = True
    while changed:
        changed = False
        for a, b in sorted(und):
            fwd = wants(a, b)
            rev = wants(b, a)
            if fwd and rev:
                diagnostics.append(("conflict", a, b))
                continue
            if fwd or rev:
                und.discard((a, b))
                directed.add((a, b) if fwd else (b, a))
                changed = True
    return directed, und, diagnostics


def enumerate_parent_sets(graph: CausalGraph, node: int) -> list[frozenset]:
    """All locally valid parent sets of a node in a CPDAG.

    Each undirected neighbor is treated as either a parent or a child;
    orientations that would create a new v-structure at the node (two
    non-adjacent parents, at least one newly oriented) are dropped. A fully
    directed node yields a single parent set.
    """
    pa = sorted(graph.parents(node))
    sibs = sorted(graph.undirected_neighbors(node))
    out = []
    for r in range(len(sibs) + 1):
        for chosen in combinations(sibs, r):
            ok = True
            for u in chosen:
                for w in list(chosen) + pa:
                    if u == w:
                        continue
                    if not graph.adjacent(u, w):
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                out.append(frozenset(pa) | frozenset(chosen))
    return out


def discover_graph(latent, cfg: CITestConfig = CITestConfig()) -> CausalGraph:
    """Convenience wrapper: skeleton search followed by CPDAG orientation."""
    return orient_cpdag(pc_stable_skeleton(latent, cfg))


def graph_to_json(graph: CausalGraph) -> str:
    payload = {
        "p": graph.p,
        "labels": list(graph.labels) if graph.labels else None,
        "directed": sorted([a, b] for a, b in graph.directed_edges),
        "undirected": sorted([a, b] for a, b in graph.undirected_edges),
    }
    return json.dumps(payload, indent=2)


def graph_from_json(text: str) -> CausalGraph:
    payload = json.loads(text)
    return CausalGraph(
        int(payload["p"]),
        frozenset(tuple(e) for e in payload["directed"]),
        frozenset(tuple(e) for e in payload["undirected"]),
        labels=tuple(payload["labels"]) if payload.get("labels") else None,
    )


def _has_cycle(p: int, directed) -> bool:
    return _find_cycle(p, directed) is not None


def _find_cycle(p: int, directed):
    children = {i: sorted(b for a, b in directed if a == i) for i in range(p)}
    WHITE, GRAY, BLACK = 0, 1, 2
    color = [WHITE] * p
    stack_edges: list = []

    def dfs(u):
        color[u] = GRAY
        for v in children[u]:
            if color[v] == GRAY:
                idx = next(k for k, (a, _) in enumerate(stack_edges) if a == v)
                return stack_edges[idx:] + [(u, v)]
            if color[v] == WHITE:
                stack_edges.append((u, v))
                found = dfs(v)
                stack_edges.pop()
                if found:
                    return found
        color[u] = BLACK
        return None

    for start in range(p):
        if color[start] == WHITE:
            found = dfs(start)
            if found:
                return found
    return None
