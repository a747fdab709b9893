"""Graph construction: directed small-world generators and the Granger prior.

The prior graph is estimated from context windows only, by pairwise lagged
regressions: for every ordered pair (source -> target) the score is the log
ratio of residual sums of squares between a target-only autoregression and
one augmented with the source's lags, floored at zero. Each node keeps its
top-k strongest incoming edges.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, WindowTooShortError

_RSS_FLOOR = 1e-12


@dataclass(frozen=True)
class BrainGraph:
    """Directed graph shared by the simulator, the prior, and the sheaf."""

    n_nodes: int
    edges: tuple
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 1:
            raise InvalidParameterError("n_nodes must be positive")
        seen = set()
        for s, d in self.edges:
            if not (0 <= s < self.n_nodes and 0 <= d < self.n_nodes):
                raise InvalidParameterError(f"edge ({s},{d}) out of range")
            if s == d:
                raise InvalidParameterError(f"self-loop at node {s}")
            if (s, d) in seen:
                raise InvalidParameterError(f"duplicate edge ({s},{d})")
            seen.add((s, d))
        object.__setattr__(self, "edges", tuple((int(s), int(d)) for s, d in self.edges))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_array(self) -> np.ndarray:
        return np.array(self.edges, dtype=np.intp).reshape(-1, 2)

    def adjacency(self) -> np.ndarray:
        """Dense (dst, src) 0/1 matrix."""
        adj = np.zeros((self.n_nodes, self.n_nodes))
        for s, d in self.edges:
            adj[d, s] = 1.0
        return adj


@dataclass
class PriorGraph:
    """Granger-derived directed edge set with per-edge strengths."""

    edges: tuple
    scores: tuple
    lag_order: int
    top_k: int
    n_nodes: int = 0

    def __post_init__(self):
        self.edges = tuple((int(s), int(d)) for s, d in self.edges)
        self.scores = tuple(float(s) for s in self.scores)
        if len(self.edges) != len(self.scores):
            raise InvalidParameterError("edges and scores must align")
        if any(s < 0 for s in self.scores):
            raise InvalidParameterError("scores must be nonnegative")
        if any(s == d for s, d in self.edges):
            raise InvalidParameterError("prior contains a self-loop")
        indeg = {}
        for _, d in self.edges:
            indeg[d] = indeg.get(d, 0) + 1
        if indeg and max(indeg.values()) > self.top_k:
            raise InvalidParameterError("in-degree exceeds top_k")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_array(self) -> np.ndarray:
        return np.array(self.edges, dtype=np.intp).reshape(-1, 2)

    def edge_set(self) -> frozenset:
        return frozenset(self.edges)


def generate_small_world(n: int, k: int, beta: float, seed: int) -> BrainGraph:
    """Directed small-world graph: ring lattice plus random rewiring.

    Each node points at its k/2 nearest successors on a ring; every such
    edge is independently rewired with probability `beta` to a uniformly
    drawn non-self, non-duplicate target. Total edge count is always n*k/2.
    """
    if k % 2 != 0:
        raise InvalidParameterError("k must be even")
    if not k >= 2:
        raise InvalidParameterError("k must be >= 2")
    if k >= n:
        raise InvalidParameterError("need n > k")
    if not 0.0 <= beta <= 1.0:
        raise InvalidParameterError("beta must lie in [0, 1]")

    rng = np.random.default_rng(seed)
    half = k // 2
    out_targets = [set((i + j) % n for j in range(1, half + 1)) for i in range(n)]
    edges = []
    for i in range(n):
        for j in range(1, half + 1):
            target = (i + j) % n
            if rng.random() < beta:
                out_targets[i].discard(target)
                while True:
                    candidate = int(rng.integers(0, n))
                    if candidate != i and candidate not in out_targets[i]:
                        break
                out_targets[i].add(candidate)
                target = candidate
            edges.append((i, target))
    return BrainGraph(n_nodes=n, edges=tuple(edges), seed=seed)


def _standardize_rows(context: np.ndarray) -> np.ndarray:
    mean = context.mean(axis=1, keepdims=True)
    std = context.std(axis=1, keepdims=True)
    out = np.zeros_like(context, dtype=np.float64)
    ok = std[:, 0] > 1e-12
    out[ok] = (context[ok] - mean[ok]) / std[ok]
    return out


def _lag_matrix(x: np.ndarray, p: int) -> np.ndarray:
    """Columns are lags 1..p of x, aligned to targets x[p:]."""
    t_len = len(x)
    return np.column_stack([x[p - l:t_len - l] for l in range(1, p + 1)])


def _ridge_rss(design: np.ndarray, y: np.ndarray, ridge: float) -> float:
    gram = design.T @ design + ridge * np.eye(design.shape[1])
    beta = np.linalg.solve(gram, design.T @ y)
    resid = y - design @ beta
    return float(resid @ resid)


def granger_prior(context: np.ndarray, lag_order: int = 3, top_k: int = 8,
                  ridge: float = 1e-6, n_jobs: int = 1) -> PriorGraph:
    """Pairwise Granger prior over a context block (never sees the horizon).

    Channels are standardized internally, which makes the scores invariant
    under per-channel affine rescaling and lets constant channels degrade
    to a zero score instead of a singular solve.
    """
    scores = granger_score_matrix(context, lag_order, ridge, n_jobs=n_jobs)
    return prior_from_scores(scores, lag_order=lag_order, top_k=top_k)


def granger_score_matrix(context: np.ndarray, lag_order: int = 3,
                         ridge: float = 1e-6, n_jobs: int = 1) -> np.ndarray:
    """Matrix S with S[source, target] = Granger score of source -> target."""
    context = np.asarray(context, dtype=np.float64)
    if context.ndim != 2:
        raise InvalidParameterError("context must be a 2-D (nodes x time) matrix")
    n, t_len = context.shape
    p = int(lag_order)
    if p < 1:
        raise InvalidParameterError("lag_order must be positive")
    if ridge < 0:
        raise InvalidParameterError("ridge must be nonnegative")
    if t_len <= 2 * p + 2:
        raise WindowTooShortError(
            f"context length {t_len} needs at least {2 * p + 3} samples for p={p}")
    if not np.all(np.isfinite(context)):
        raise InvalidParameterError("context contains non-finite values")

    z = _standardize_rows(context)
    lags = [_lag_matrix(z[i], p) for i in range(n)]
    targets = [z[i][p:] for i in range(n)]

    def score_target(i: int) -> np.ndarray:
        row = np.zeros(n)
        rss_r = max(_ridge_rss(lags[i], targets[i], ridge), _RSS_FLOOR)
        for j in range(n):
            if j == i:
                continue
            full = np.column_stack([lags[i], lags[j]])
            rss_f = max(_ridge_rss(full, targets[i], ridge), _RSS_FLOOR)
            row[j] = max(0.0, np.log(rss_r / rss_f))
        return row

    scores = np.zeros((n, n))
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            for i, row in enumerate(pool.map(score_target, range(n))):
                scores[:, i] = row
    else:
        for i in range(n):
            scores[:, i] = score_target(i)
    return scores


def prior_from_scores(scores: np.ndarray, lag_order: int, top_k: int) -> PriorGraph:
    """Keep the top-k strongest incoming edges per node (deterministic ties)."""
    if top_k < 1:
        raise InvalidParameterError("top_k must be positive")
    n = scores.shape[0]
    edges, strengths = [], []
    for target in range(n):
        incoming = [(s, target) for s in range(n) if s != target]
        incoming.sort(key=lambda e: (-scores[e[0], target], e[0]))
        for s, d in incoming[:top_k]:
            edges.append((s, d))
            strengths.append(float(scores[s, d]))
    order = sorted(range(len(edges)), key=lambda i: edges[i])
    return PriorGraph(edges=tuple(edges[i] for i in order),
                      scores=tuple(strengths[i] for i in order),
                      lag_order=lag_order, top_k=top_k, n_nodes=n)


# ----------------------------------------------------------------------
# CSV interchange: header `src,dst` (plus `score` for priors), 0-based ids
# ----------------------------------------------------------------------
def save_edges_csv(path, graph: BrainGraph) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst"])
        for s, d in graph.edges:
            writer.writerow([s, d])


def load_edges_csv(path, n_nodes: int, seed: int = 0) -> BrainGraph:
    edges = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            edges.append((int(row["src"]), int(row["dst"])))
    return BrainGraph(n_nodes=n_nodes, edges=tuple(edges), seed=seed)


def save_prior_csv(path, prior: PriorGraph) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "score"])
        for (s, d), sc in zip(prior.edges, prior.scores):
            writer.writerow([s, d, repr(sc)])


def load_prior_csv(path, lag_order: int, top_k: int, n_nodes: int = 0) -> PriorGraph:
    edges, scores = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            edges.append((int(row["src"]), int(row["dst"])))
            scores.append(float(row["score"]))
    return PriorGraph(edges=tuple(edges), scores=tuple(scores),
                      lag_order=lag_order, top_k=top_k, n_nodes=n_nodes)
