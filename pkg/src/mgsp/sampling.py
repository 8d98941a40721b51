"""Centrality-driven selection sampling and neighborhood pooling.

A plan fixes one centrality ranking of the original multigraph, relabels
nodes so higher-ranked nodes come first, and keeps the top N_ℓ nodes at
layer ℓ. After that relabeling the selection matrices D_ℓ (N_ℓ × N_{ℓ−1})
and E_ℓ (N_ℓ × N) are identity blocks, sampling a signal is taking its
first N_ℓ rows, and sampling a shift is taking its leading principal
submatrix.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .multigraph import Multigraph, MultigraphError, Permutation, permute_multigraph

CENTRALITY_METHODS = ("degree", "pagerank")
AGGREGATIONS = ("mean", "median", "max")

PAGERANK_DAMPING = 0.85
PAGERANK_TOL = 1e-9
PAGERANK_MAX_ITERS = 10_000


def degree_centrality(graph):
    """Per-node sum of absolute edge weights across all layers."""
    scores = np.zeros(graph.num_nodes)
    for shift in graph.shifts:
        scores += np.asarray(np.abs(shift.matrix).sum(axis=1)).ravel()
    return scores


def pagerank_centrality(graph, damping=PAGERANK_DAMPING, tol=PAGERANK_TOL,
                        max_iters=PAGERANK_MAX_ITERS):
    """PageRank on the layer-averaged, column-normalized adjacency."""
    n = graph.num_nodes
    avg = sum(np.abs(s.matrix) for s in graph.shifts).toarray() / graph.num_shifts
    col_sums = avg.sum(axis=0)
    dangling = col_sums == 0.0
    transition = np.divide(avg, np.where(dangling, 1.0, col_sums), where=~dangling)
    transition[:, dangling] = 1.0 / n
    rank = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        new = damping * (transition @ rank) + (1.0 - damping) / n
        if np.abs(new - rank).sum() < tol:
            return new
        rank = new
    raise RuntimeError("pagerank power iteration did not converge")


def compute_centrality(graph, method="degree"):
    if method == "degree":
        return degree_centrality(graph)
    if method == "pagerank":
        return pagerank_centrality(graph)
    raise ValueError(f"unknown centrality method {method!r}")


@dataclass(frozen=True)
class SamplingMatrices:
    """Binary D_ℓ/E_ℓ selection matrices, identity blocks after relabeling."""

    node_counts: tuple

    def d(self, layer):
        """N_ℓ × N_{ℓ−1} sampler between consecutive layers (layer ≥ 1)."""
        n_cur, n_prev = self.node_counts[layer], self.node_counts[layer - 1]
        return np.eye(n_cur, n_prev)

    def e(self, layer):
        """N_ℓ × N sampler back to the original node set (layer ≥ 0)."""
        return np.eye(self.node_counts[layer], self.node_counts[0])


@dataclass(frozen=True)
class SamplingPlan:
    """Nested per-layer node selections plus the global relabeling."""

    node_counts: tuple          # N_0 .. N_L
    radii: tuple                # α_1 .. α_L
    selected: tuple             # per layer, original node labels, selection order
    relabel: tuple              # original label at each relabeled position
    centrality_method: str
    aggregation: str

    @property
    def num_layers(self):
        return len(self.node_counts) - 1

    @property
    def matrices(self):
        return SamplingMatrices(self.node_counts)

    def permutation(self):
        return Permutation(np.asarray(self.relabel))

    def to_dict(self):
        return {
            "node_counts": list(self.node_counts),
            "radii": list(self.radii),
            "selected": [list(v) for v in self.selected],
            "relabel": list(self.relabel),
            "centrality_method": self.centrality_method,
            "aggregation": self.aggregation,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            tuple(doc["node_counts"]),
            tuple(doc["radii"]),
            tuple(tuple(v) for v in doc["selected"]),
            tuple(doc["relabel"]),
            doc["centrality_method"],
            doc["aggregation"],
        )


def build_plan(graph, node_counts, radii, method="degree", aggregation="max"):
    """Select top-N_ℓ nodes by one fixed centrality ranking; nesting by construction.

    Ties in centrality break toward the lower original node index. Returns
    the plan, its sampling matrices, and the relabeling permutation that
    puts selected nodes first.
    """
    node_counts = tuple(int(c) for c in node_counts)
    radii = tuple(int(a) for a in radii)
    if node_counts[0] != graph.num_nodes:
        raise MultigraphError("node_counts[0] must equal the multigraph size")
    if any(c <= 0 for c in node_counts):
        raise MultigraphError("node counts must be positive")
    if any(b > a for a, b in zip(node_counts, node_counts[1:])):
        raise MultigraphError("node counts must be non-increasing")
    if len(radii) != len(node_counts) - 1:
        raise MultigraphError("one neighborhood radius per layer required")
    if any(a < 0 for a in radii):
        raise MultigraphError("radii must be nonnegative")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    scores = compute_centrality(graph, method)
    # Stable sort on (-score, index): descending score, lower index wins ties.
    order = np.lexsort((np.arange(graph.num_nodes), -scores))
    selected = tuple(tuple(int(v) for v in order[:count]) for count in node_counts)
    plan = SamplingPlan(
        node_counts=node_counts,
        radii=radii,
        selected=selected,
        relabel=tuple(int(v) for v in order),
        centrality_method=method,
        aggregation=aggregation,
    )
    return plan, plan.matrices, plan.permutation()


def sample_shift(plan, layer, shift_prev):
    """D_ℓ S_{ℓ−1} D_ℓᵀ: leading principal submatrix at the layer-ℓ size."""
    n_cur, n_prev = plan.node_counts[layer], plan.node_counts[layer - 1]
    if shift_prev.num_nodes != n_prev:
        raise MultigraphError(
            f"shift has {shift_prev.num_nodes} nodes, plan expects {n_prev} at layer {layer - 1}"
        )
    return shift_prev.submatrix(np.arange(n_cur))


def sample_signal(plan, layer, values):
    """Restrict a relabeled signal to the layer-ℓ selected nodes (D_ℓ x)."""
    values = np.asarray(values, dtype=float)
    n_cur, n_prev = plan.node_counts[layer], plan.node_counts[layer - 1]
    if values.shape[0] != n_prev:
        raise MultigraphError(
            f"signal has {values.shape[0]} rows, plan expects {n_prev} at layer {layer - 1}"
        )
    return values[:n_cur]


def _bfs_reach(adjacency, start, max_depth):
    """Nodes reachable from start within max_depth hops (start included)."""
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if depth == max_depth:
            continue
        for nxt in adjacency[node]:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, depth + 1))
    return seen


def neighborhoods(relabeled_graph, plan, layer, graph_index, radius=None):
    """Per selected node, the α_ℓ-step reachable set on one graph layer.

    Traverses the nonzero pattern of the full relabeled shift by BFS
    (matching the nonzero pattern of its powers) and keeps candidates
    selected at layer ℓ−1. Candidates are returned as sorted arrays of
    layer-(ℓ−1) relabeled indices.
    """
    if radius is None:
        radius = plan.radii[layer - 1]
    shift = relabeled_graph.shifts[graph_index]
    csr = shift.matrix
    adjacency = [csr.indices[csr.indptr[i]:csr.indptr[i + 1]] for i in range(csr.shape[0])]
    n_cur, n_prev = plan.node_counts[layer], plan.node_counts[layer - 1]
    result = []
    for i in range(n_cur):
        reach = _bfs_reach(adjacency, i, radius)
        result.append(np.array(sorted(v for v in reach if v < n_prev), dtype=int))
    return result


def multigraph_neighborhood(per_graph_sets):
    """Union of per-graph neighborhoods, per node."""
    per_graph_sets = list(per_graph_sets)
    merged = []
    for sets in zip(*per_graph_sets):
        merged.append(np.unique(np.concatenate([np.asarray(s, dtype=int) for s in sets])))
    return merged


def pool(values, neighborhood_sets, aggregation):
    """Aggregate features over each selected node's multigraph neighborhood."""
    out, _ = pool_forward(values, neighborhood_sets, aggregation)
    return out


def pool_forward(values, neighborhood_sets, aggregation):
    """Pooling with a cache for gradient routing.

    ``values`` is (B, N_prev, F) or (N_prev, F); output has one row per
    neighborhood set. Max routes the gradient to the argmax winner (ties to
    the lowest node index); mean splits uniformly; median gives the middle
    element (odd count) or half to each of the two middle elements (even).
    """
    values = np.asarray(values, dtype=float)
    single = values.ndim == 2
    if single:
        values = values[None]
    b, _, f = values.shape
    n_out = len(neighborhood_sets)
    out = np.empty((b, n_out, f))
    cache = {"kind": aggregation, "sets": neighborhood_sets, "routes": []}
    for i, members in enumerate(neighborhood_sets):
        if len(members) == 0:
            raise RuntimeError("internal error: empty pooling neighborhood")
        block = values[:, members, :]  # (B, |n_i|, F)
        if aggregation == "max":
            pick = np.argmax(block, axis=1)  # first occurrence = lowest index
            out[:, i, :] = np.take_along_axis(block, pick[:, None, :], axis=1)[:, 0, :]
            cache["routes"].append(pick)
        elif aggregation == "mean":
            out[:, i, :] = block.mean(axis=1)
            cache["routes"].append(None)
        elif aggregation == "median":
            order = np.argsort(block, axis=1, kind="stable")
            k = len(members)
            if k % 2:
                mid = np.take_along_axis(order, np.full((b, 1, f), k // 2), axis=1)
                out[:, i, :] = np.take_along_axis(block, mid, axis=1)[:, 0, :]
                cache["routes"].append((mid, None))
            else:
                lo = np.take_along_axis(order, np.full((b, 1, f), k // 2 - 1), axis=1)
                hi = np.take_along_axis(order, np.full((b, 1, f), k // 2), axis=1)
                lo_vals = np.take_along_axis(block, lo, axis=1)[:, 0, :]
                hi_vals = np.take_along_axis(block, hi, axis=1)[:, 0, :]
                out[:, i, :] = 0.5 * (lo_vals + hi_vals)
                cache["routes"].append((lo, hi))
        else:
            raise ValueError(f"unknown aggregation {aggregation!r}")
    if single:
        return out[0], cache
    return out, cache


def pool_backward(grad_out, cache, n_prev):
    """Route pooled-output gradients back onto the pre-pooling nodes."""
    grad_out = np.asarray(grad_out, dtype=float)
    single = grad_out.ndim == 2
    if single:
        grad_out = grad_out[None]
    b, _, f = grad_out.shape
    grad_in = np.zeros((b, n_prev, f))
    kind = cache["kind"]
    for i, members in enumerate(cache["sets"]):
        g = grad_out[:, i, :]  # (B, F)
        if kind == "max":
            pick = cache["routes"][i]  # (B, F) positions within members
            for bi in range(b):
                np.add.at(grad_in[bi], (members[pick[bi]], np.arange(f)), g[bi])
        elif kind == "mean":
            grad_in[:, members, :] += g[:, None, :] / len(members)
        elif kind == "median":
            lo, hi = cache["routes"][i]
            if hi is None:
                for bi in range(b):
                    np.add.at(grad_in[bi], (members[lo[bi, 0]], np.arange(f)), g[bi])
            else:
                for bi in range(b):
                    np.add.at(grad_in[bi], (members[lo[bi, 0]], np.arange(f)), 0.5 * g[bi])
                    np.add.at(grad_in[bi], (members[hi[bi, 0]], np.arange(f)), 0.5 * g[bi])
    return grad_in[0] if single else grad_in


def relabel_multigraph(graph, plan):
    """Apply the plan's relabeling permutation to the multigraph."""
    return permute_multigraph(plan.permutation(), graph)
