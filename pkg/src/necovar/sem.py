"""Structural equation model estimation on the latent scale.

Each node is regressed on an intercept, its own lags and its contemporaneous
causal parents with ordinary least squares. When the graph leaves edges
undirected, one model is fitted per DAG consistent with the equivalence
class (capped), giving a range of coefficient estimates. The conditional
one-step distribution and the contagion share of variance (NECOF) follow
from the fitted (I - B)^{-1} representation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .discovery import CausalGraph, enumerate_parent_sets
from .errors import InsufficientData, NumericalError

__all__ = [
    "SemModel",
    "ModelEnsemble",
    "LagCandidate",
    "LagSelection",
    "fit_sem",
    "select_lags",
    "conditional_distribution",
    "necof",
    "model_to_json",
    "model_from_json",
]


@dataclass(frozen=True)
class SemModel:
    """Fitted coefficients of the contagion SEM.

    ``B[i, j]`` is the contemporaneous effect of node j on node i, nonzero
    only along directed edges j -> i of ``graph``; ``A[i, l]`` is node i's
    own coefficient at lag l+1.
    """

    alpha0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    sigma2: np.ndarray
    L: int
    graph: CausalGraph

    def __post_init__(self):
        alpha0 = np.asarray(self.alpha0, dtype=float)
        p = alpha0.shape[0]
        A = np.asarray(self.A, dtype=float).reshape(p, self.L)
        B = np.asarray(self.B, dtype=float)
        sigma2 = np.asarray(self.sigma2, dtype=float)
        object.__setattr__(self, "alpha0", alpha0)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "sigma2", sigma2)
        if B.shape != (p, p):
            raise ValueError(f"B must be {p}x{p}, got {B.shape}")
        if np.any(np.diag(B) != 0.0):
            raise ValueError("B must have a zero diagonal")
        if np.any(sigma2 <= 0.0):
            raise ValueError("noise variances must be strictly positive")
        support = {(j, i) for i in range(p) for j in range(p) if B[i, j] != 0.0}
        if not support <= self.graph.directed_edges:
            extra = sorted(support - self.graph.directed_edges)
            raise ValueError(f"B support outside the graph's directed edges: {extra}")

    @property
    def p(self) -> int:
        return self.alpha0.shape[0]


@dataclass(frozen=True)
class ModelEnsemble:
    """One SEM per consistent orientation of the graph's undirected edges."""

    models: tuple[SemModel, ...]
    primary_index: int
    truncated: bool = False

    def __post_init__(self):
        if not self.models:
            raise ValueError("ensemble must contain at least one model")

    @property
    def primary(self) -> SemModel:
        return self.models[self.primary_index]


@dataclass(frozen=True)
class LagCandidate:
    L: int
    k: int
    loglik: float
    aic: float


@dataclass(frozen=True)
class LagSelection:
    candidates: tuple[LagCandidate, ...]
    chosen_L: int


def fit_sem(latent, graph: CausalGraph, L: int = 0, max_models: int = 64) -> ModelEnsemble:
    """Least-squares fit of the SEM for every DAG consistent with ``graph``.

    Returns an ensemble with one model per consistent orientation of the
    undirected edges (all of them when their count is within ``max_models``,
    a deterministic truncation otherwise). The primary model is the most
    conservative one: largest total conditional variance.

    Raises
    ------
    InsufficientData
        Too few rows for the widest regression.
    NumericalError
        Rank-deficient design matrix, reported with the node index.
    """
    values = np.asarray(latent.values, dtype=float)
    return _fit_sem_values(values, graph, L, max_models, start_row=L)[0]


def _fit_sem_values(values, graph, L, max_models, start_row):
    n, p = values.shape
    start = max(int(start_row), L)
    n_eff = n - start
    if n_eff < 2:
        raise InsufficientData(f"need at least 2 usable rows, got {n_eff}")

    cache: dict = {}

    def node_fit(i, parents):
        key = (i, tuple(sorted(parents)))
        if key in cache:
            return cache[key]
        cols = [np.ones(n_eff)]
        for lag in range(1, L + 1):
            cols.append(values[start - lag : n - lag, i])
        for j in sorted(parents):
            cols.append(values[start:n, j])
        X = np.column_stack(cols)
        y = values[start:n, i]
        k = X.shape[1]
        if n_eff <= k:
            raise InsufficientData(f"node {i}: {n_eff} rows for {k} coefficients")
        coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
        if rank < k:
            raise NumericalError(f"rank-deficient regressor matrix at node {i}")
        resid = y - X @ coef
        rss = float(resid @ resid)
        out = (coef, rss, k)
        cache[key] = out
        return out

    allowed = {i: [frozenset(s) for s in enumerate_parent_sets(graph, i)] for i in range(p)}
    extensions, truncated = _consistent_extensions(graph, allowed, max_models)

    models = []
    rss_tables = []
    for parent_map in extensions:
        alpha0 = np.zeros(p)
        A = np.zeros((p, L))
        B = np.zeros((p, p))
        sigma2 = np.zeros(p)
        rss_row = np.zeros(p)
        for i in range(p):
            parents = sorted(parent_map[i])
            coef, rss, k = node_fit(i, parents)
            alpha0[i] = coef[0]
            A[i, :] = coef[1 : 1 + L]
            for slot, j in enumerate(parents):
                B[i, j] = coef[1 + L + slot]
            dof = n_eff - k
            sigma2[i] = max(rss / dof, 1e-300)
            rss_row[i] = rss
        directed = graph.directed_edges | {
            (j, i) for i in range(p) for j in parent_map[i] if (j, i) not in graph.directed_edges
        }
        member_graph = CausalGraph(p, frozenset(directed), frozenset(), dict(graph.sepsets), graph.labels)
        models.append(SemModel(alpha0, A, B, sigma2, L, member_graph))
        rss_tables.append(rss_row)

    primary = max(
        range(len(models)),
        key=lambda m: (np.trace(_total_covariance(models[m])), -m),
    )
    ensemble = ModelEnsemble(tuple(models), int(primary), truncated)
    return ensemble, (n_eff, np.asarray(rss_tables))


def _consistent_extensions(graph, allowed, max_models):
    """Orientations of the undirected edges that keep every node's parent set
    locally valid and the directed support acyclic."""
    p = graph.p
    und = sorted(graph.undirected_edges)
    base_parents = {i: set(graph.parents(i)) for i in range(p)}
    if not und:
        return [base_parents], False

    product = 1
    for i in range(p):
        product *= max(len(allowed[i]), 1)
    budget = max_models if product > max_models else product

    results: list = []
    edges_acc: list = []

    def valid_partial(i, parents):
        # A partial parent set must still be extendable to an allowed one.
        return any(parents <= full for full in allowed[i])

    def acyclic_with(extra):
        directed = set(graph.directed_edges) | set(extra)
        children = {i: [] for i in range(p)}
        indeg = {i: 0 for i in range(p)}
        for a, b in directed:
            children[a].append(b)
            indeg[b] += 1
        queue = [i for i in range(p) if indeg[i] == 0]
        seen = 0
        while queue:
            u = queue.pop()
            seen += 1
            for v in children[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    queue.append(v)
        return seen == p

    def rec(idx, parents):
        if len(results) >= budget:
            return
        if idx == len(und):
            if all(frozenset(parents[i]) in allowed[i] for i in range(p)):
                results.append({i: set(parents[i]) for i in range(p)})
            return
        a, b = und[idx]
        for src, dst in ((a, b), (b, a)):
            parents[dst].add(src)
            edges_acc.append((src, dst))
            if valid_partial(dst, parents[dst]) and acyclic_with(edges_acc):
                rec(idx + 1, parents)
            edges_acc.pop()
            parents[dst].discard(src)

    rec(0, {i: set(base_parents[i]) for i in range(p)})
    if not results:
        # Degenerate input (not a true CPDAG): fall back to one acyclic
        # orientation chosen edge by edge, ignoring local validity.
        parents = {i: set(base_parents[i]) for i in range(p)}
        chosen: list = []
        for a, b in und:
            if acyclic_with(chosen + [(a, b)]):
                chosen.append((a, b))
                parents[b].add(a)
            else:
                chosen.append((b, a))
                parents[a].add(b)
        return [parents], True
    return results, len(results) >= budget and product > max_models


def select_lags(latent, graph: CausalGraph, l_max: int, max_models: int = 64) -> LagSelection:
    """Choose the autoregressive order by AIC over a common sample.

    All candidate orders are fitted on rows ``l_max..N`` so their likelihoods
    are comparable; ``k`` counts intercepts, fitted lag and contagion
    coefficients, and noise variances. Ties go to the smaller order.
    """
    if l_max < 0:
        raise ValueError("l_max must be nonnegative")
    values = np.asarray(latent.values, dtype=float)
    p = values.shape[1]
    candidates = []
    best = None
    for lag in range(l_max + 1):
        ensemble, (n_eff, rss_tables) = _fit_sem_values(
            values, graph, lag, max_models, start_row=l_max
        )
        model = ensemble.primary
        rss = rss_tables[ensemble.primary_index]
        s2_mle = np.maximum(rss / n_eff, 1e-300)
        loglik = float(-0.5 * n_eff * np.sum(np.log(2.0 * np.pi * s2_mle) + 1.0))
        n_parents = sum(len(model.graph.parents(i)) for i in range(p))
        k = p * (lag + 2) + n_parents
        aic = 2.0 * k - 2.0 * loglik
        candidates.append(LagCandidate(lag, k, loglik, aic))
        if best is None or aic < best[0]:
            best = (aic, lag)
    return LagSelection(tuple(candidates), best[1])


def conditional_distribution(model: SemModel, history=None, unit_noise: bool = False):
    """One-step conditional mean and covariance given the last L rows.

    ``history`` holds the most recent observations in time order (oldest
    first, shape (L, p)); with ``unit_noise`` the fitted noise variances are
    replaced by ones.
    """
    p = model.p
    if model.L == 0:
        contrib = np.zeros(p)
    else:
        hist = np.asarray(history, dtype=float).reshape(model.L, p)
        # Row L-1 is the most recent observation, i.e. lag 1.
        contrib = np.einsum("il,li->i", model.A, hist[::-1])
    eye = np.eye(p)
    mean = np.linalg.solve(eye - model.B, model.alpha0 + contrib)
    m_inv = np.linalg.inv(eye - model.B)
    noise = np.ones(p) if unit_noise else model.sigma2
    cov = m_inv @ np.diag(noise) @ m_inv.T
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def necof(model: SemModel) -> dict:
    """Share of conditional variance attributable to contagion.

    Per node: 1 - sigma_i^2 / V_ii; for the market: 1 - tr(Sigma) / tr(V),
    with V the conditional covariance implied by the contagion matrix. Both
    are zero when B is zero and lie in [0, 1) for acyclic B.
    """
    total = _total_covariance(model)
    per_node = 1.0 - model.sigma2 / np.diag(total)
    market = 1.0 - float(np.sum(model.sigma2)) / float(np.trace(total))
    return {"per_node": per_node, "market": market}


def _total_covariance(model: SemModel) -> np.ndarray:
    m_inv = np.linalg.inv(np.eye(model.p) - model.B)
    return m_inv @ np.diag(model.sigma2) @ m_inv.T


def model_to_json(model: SemModel, labels=None) -> str:
    payload = {
        "labels": list(labels) if labels else (list(model.graph.labels) if model.graph.labels else None),
        "L": model.L,
        "alpha0": model.alpha0.tolist(),
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "sigma2": model.sigma2.tolist(),
    }
    return json.dumps(payload, indent=2)


def model_from_json(text: str) -> SemModel:
    payload = json.loads(text)
    B = np.asarray(payload["B"], dtype=float)
    p = B.shape[0]
    directed = frozenset((j, i) for i in range(p) for j in range(p) if B[i, j] != 0.0)
    labels = tuple(payload["labels"]) if payload.get("labels") else None
    graph = CausalGraph(p, directed, frozenset(), labels=labels)
    return SemModel(
        np.asarray(payload["alpha0"], dtype=float),
        np.asarray(payload["A"], dtype=float).reshape(p, int(payload["L"])),
        B,
        np.asarray(payload["sigma2"], dtype=float),
        int(payload["L"]),
        graph,
    )
