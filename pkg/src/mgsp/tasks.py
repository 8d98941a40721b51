"""Synthetic benchmark tasks: multigraph generators, source localization,
planted-filter regression, and interference-channel power allocation."""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .filters import MultigraphFilter, apply_filter
from .multigraph import (
    Multigraph,
    MultigraphError,
    SparseShift,
    build_multigraph,
    commutator_norm,
    normalize_shift,
)
from .words import enumerate_monomials

TASK_KINDS = ("source_localization", "power_allocation", "planted_filter")
GENERATION_RETRY_CAP = 50


@dataclass
class TaskSpec:
    """Everything needed to regenerate a dataset deterministically."""

    kind: str
    num_nodes: int
    num_layers: int
    edge_models: list            # one spec string per layer, e.g. "erdos_renyi:0.3"
    seed: int
    train_size: int = 128
    val_size: int = 32
    test_size: int = 64
    knobs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if min(self.train_size, self.val_size, self.test_size) <= 0:
            raise ValueError("dataset sizes must be positive")
        if len(self.edge_models) != self.num_layers:
            raise ValueError("one edge model per layer required")

    def to_dict(self):
        return {
            "kind": self.kind,
            "num_nodes": self.num_nodes,
            "num_layers": self.num_layers,
            "edge_models": list(self.edge_models),
            "seed": self.seed,
            "train_size": self.train_size,
            "val_size": self.val_size,
            "test_size": self.test_size,
            "knobs": dict(self.knobs),
        }

    @classmethod
    def from_dict(cls, doc):
        missing = [k for k in ("kind", "num_nodes", "num_layers", "edge_models", "seed")
                   if k not in doc]
        if missing:
            raise ValueError(f"task spec missing required field(s): {', '.join(missing)}")
        return cls(
            kind=doc["kind"],
            num_nodes=doc["num_nodes"],
            num_layers=doc["num_layers"],
            edge_models=list(doc["edge_models"]),
            seed=doc["seed"],
            train_size=doc.get("train_size", 128),
            val_size=doc.get("val_size", 32),
            test_size=doc.get("test_size", 64),
            knobs=dict(doc.get("knobs", {})),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- edge models ---------------------------------------------------------------


def _symmetrize(edges):
    out = {}
    for u, v, w in edges:
        out[(u, v)] = w
        out[(v, u)] = w
    return [(u, v, w) for (u, v), w in sorted(out.items())]


def erdos_renyi_edges(n, p, rng):
    edges = [(i, j, 1.0) for i in range(n) for j in range(i + 1, n)
             if rng.random() < p]
    return _symmetrize(edges)


def ring_plus_random_edges(n, k, p, rng):
    edges = [(i, (i + d) % n, 1.0) for i in range(n) for d in range(1, k + 1)]
    edges += [(i, j, 1.0) for i in range(n) for j in range(i + 1, n)
              if rng.random() < p]
    return _symmetrize(edges)


def geometric_edges(n, radius, rng):
    points = rng.random((n, 2))
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(points[i] - points[j]) <= radius:
                edges.append((i, j, 1.0))
    return _symmetrize(edges)


def parse_edge_model(spec):
    """'erdos_renyi:0.3' | 'ring_plus_random:2,0.1' | 'geometric:0.4' → callable."""
    name, _, args = spec.partition(":")
    params = [float(a) for a in args.split(",")] if args else []
    if name == "erdos_renyi" and len(params) == 1:
        return lambda n, rng: erdos_renyi_edges(n, params[0], rng)
    if name == "ring_plus_random" and len(params) == 2:
        return lambda n, rng: ring_plus_random_edges(n, int(params[0]), params[1], rng)
    if name == "geometric" and len(params) == 1:
        return lambda n, rng: geometric_edges(n, params[0], rng)
    raise ValueError(f"unknown edge model spec {spec!r}")


def _is_connected(n, edges):
    if n == 1:
        return True
    adjacency = [[] for _ in range(n)]
    for u, v, _ in edges:
        adjacency[u].append(v)
    seen = {0}
    stack = [0]
    while stack:
        for nxt in adjacency[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == n


def generate_multigraph(num_nodes, edge_model_specs, seed, require_connected=False,
                        near_commuting_eps=None, normalize=True):
    """Deterministic random multigraph; optional near-commuting second layer.

    With ``near_commuting_eps`` the second layer is the first plus a sparse
    perturbation, rescaled until the measured commutator norm of the two
    normalized shifts lands at (or just below) the target.
    """
    rng = np.random.default_rng(seed)
    models = [parse_edge_model(s) for s in edge_model_specs]
    edge_lists = []
    for model in models:
        for attempt in range(GENERATION_RETRY_CAP):
            edges = model(num_nodes, rng)
            if not require_connected or _is_connected(num_nodes, edges):
                break
        else:
            raise RuntimeError(
                f"failed to generate a connected layer in {GENERATION_RETRY_CAP} tries"
            )
        edge_lists.append(edges)
    graph = build_multigraph(edge_lists, num_nodes, normalize=normalize)
    if near_commuting_eps is not None:
        if len(edge_lists) < 2:
            raise ValueError("near-commuting construction needs at least two layers")
        shifts = list(graph.shifts)
        shifts[1] = _near_commuting_partner(shifts[0], near_commuting_eps, rng)
        graph = Multigraph(shifts, layer_names=graph.layer_names)
    return graph


def _near_commuting_partner(base, target_eps, rng, num_extra=None):
    """S₂ = normalize(S₁ + Δ) with the Δ scale tuned to the target commutator."""
    n = base.num_nodes
    if num_extra is None:
        num_extra = max(2, n // 2)
    rows = rng.integers(0, n, size=num_extra)
    cols = rng.integers(0, n, size=num_extra)
    vals = rng.standard_normal(num_extra)
    delta = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    scale = target_eps
    partner = None
    for _ in range(40):
        candidate = SparseShift(base.matrix + scale * delta)
        if candidate.nnz == 0:
            scale *= 2.0
            continue
        candidate = normalize_shift(candidate)
        measured = commutator_norm(base, candidate)
        if measured == 0.0:
            scale *= 2.0
            continue
        partner = candidate
        if 0.9 * target_eps <= measured <= target_eps:
            return partner
        scale *= 0.95 * target_eps / measured
    if partner is None:
        raise RuntimeError("could not construct a near-commuting shift pair")
    return partner


def _graph_from_spec(spec):
    knobs = spec.knobs
    return generate_multigraph(
        spec.num_nodes,
        spec.edge_models,
        seed=spec.seed,
        require_connected=bool(knobs.get("require_connected", False)),
        near_commuting_eps=knobs.get("near_commuting_eps"),
    )


# -- source localization -------------------------------------------------------


def planted_partition_multigraph(num_nodes, num_communities, layer_probs, seed):
    """One layer per (p_in, p_out) pair, all sharing the same planted partition."""
    rng = np.random.default_rng(seed)
    communities = np.arange(num_nodes) % num_communities
    edge_lists = []
    for p_in, p_out in layer_probs:
        edges = []
        for i in range(num_nodes):
            for j in range(i + 1, num_nodes):
                p = p_in if communities[i] == communities[j] else p_out
                if rng.random() < p:
                    edges.append((i, j, 1.0))
        edge_lists.append(_symmetrize(edges))
    return build_multigraph(edge_lists, num_nodes), communities


def make_source_localization(spec):
    """Delta signals diffused by randomly chosen layers; label = source community.

    Returns (graph, communities, train, val, test); samples are (x, label).
    """
    knobs = spec.knobs
    num_communities = int(knobs.get("num_communities", 4))
    t_max = int(knobs.get("t_max", 8))
    layer_probs = knobs.get("layer_probs")
    if layer_probs is None:
        # Layer 1 carries no community signal; the structure lives in the
        # other layers, so cross-layer diffusions are what a classifier needs.
        layer_probs = [[0.15, 0.15]] + [[0.8, 0.02]] * (spec.num_layers - 1)
    graph, communities = planted_partition_multigraph(
        spec.num_nodes, num_communities, layer_probs, spec.seed
    )
    rng = np.random.default_rng(spec.seed + 1)

    def sample():
        source = int(rng.integers(spec.num_nodes))
        steps = int(rng.integers(0, t_max + 1))
        x = np.zeros((spec.num_nodes, 1))
        x[source, 0] = 1.0
        for _ in range(steps):
            layer = int(rng.integers(graph.num_shifts))
            x = graph.shifts[layer].apply(x)
        # Diffusion under unit-norm shifts shrinks deltas fast; rescale so
        # samples share a common magnitude regardless of step count.
        norm = np.linalg.norm(x)
        if norm > 0:
            x = x / norm
        return x, int(communities[source])

    splits = [
        [sample() for _ in range(size)]
        for size in (spec.train_size, spec.val_size, spec.test_size)
    ]
    return graph, communities, splits[0], splits[1], splits[2]


# -- planted filter --------------------------------------------------------------


def make_planted_filter(spec):
    """Regression targets from a fixed scalar filter, optionally noisy.

    Returns (graph, planted coefficient map, train, val, test).
    """
    knobs = spec.knobs
    depth = int(knobs.get("depth", 2))
    noise_std = float(knobs.get("noise_std", 0.0))
    planted = {
        tuple(int(g) for g in word): float(coeff)
        for word, coeff in knobs.get(
            "planted", [[[1], 0.5], [[2, 1], 0.25]]
        )
    }
    graph = _graph_from_spec(spec)
    basis = enumerate_monomials(graph.num_shifts, depth)
    filt = MultigraphFilter.from_scalars(basis, planted)
    rng = np.random.default_rng(spec.seed + 1)

    def sample():
        x = rng.standard_normal((spec.num_nodes, 1))
        y = apply_filter(filt, graph, x)
        if noise_std:
            y = y + noise_std * rng.standard_normal(y.shape)
        return x, y

    splits = [
        [sample() for _ in range(size)]
        for size in (spec.train_size, spec.val_size, spec.test_size)
    ]
    return graph, planted, splits[0], splits[1], splits[2]


# -- power allocation ------------------------------------------------------------


def sum_rate(powers, gains, noise):
    """Σ_i Σ_g log(1 + SINR_ig) in nats.

    ``gains`` is one N×N matrix per channel: diagonal = direct link gain,
    off-diagonal (i, j) = interference received at i from transmitter j.
    """
    powers = np.asarray(powers, dtype=float).ravel()
    total = 0.0
    for g in gains:
        direct = np.diag(g) * powers
        interference = g @ powers - np.diag(g) * powers
        total += float(np.sum(np.log1p(direct / (noise + interference))))
    return total


def project_budget(scores, budget):
    """Map raw per-node scores onto the scaled simplex: budget · softmax."""
    scores = np.asarray(scores, dtype=float).ravel()
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    return budget * exp / exp.sum()


class SumRateObjective:
    """Differentiable negated sum-rate through the budget projection.

    The model emits one raw score per node; powers are budget·softmax(scores).
    Targets carry the per-sample channel gain matrices.
    """

    def __init__(self, budget, noise):
        if budget <= 0:
            raise ValueError("power budget must be positive")
        self.budget = budget
        self.noise = noise

    def value_and_grad(self, pred, target):
        gains = target["gains"]
        scores = np.asarray(pred, dtype=float).ravel()
        n = scores.shape[0]
        shifted = scores - scores.max()
        exp = np.exp(shifted)
        soft = exp / exp.sum()
        powers = self.budget * soft
        rate = 0.0
        grad_p = np.zeros(n)
        for g in gains:
            diag = np.diag(g)
            direct = diag * powers
            interference = g @ powers - diag * powers
            den = self.noise + interference
            gamma = direct / den
            rate += float(np.sum(np.log1p(gamma)))
            common = 1.0 / (1.0 + gamma)
            # ∂γ_i/∂p_i = g_ii/den_i; ∂γ_i/∂p_j = −g_ij γ_i/den_i (j ≠ i)
            grad_p += common * diag / den
            off = g - np.diag(diag)
            grad_p -= off.T @ (common * gamma / den)
        # through p = budget·softmax(s): J_softmax = diag(soft) − soft softᵀ
        grad_s = self.budget * (soft * grad_p - soft * float(soft @ grad_p))
        return -rate, (-grad_s).reshape(np.asarray(pred).shape)


def make_power_allocation(spec, budget=None, noise=None):
    """Geometric interference channels with per-sample fading.

    Samples are (features, {"gains": …}); features hold each node's direct
    gain per channel. Returns (graph, objective, train, val, test).
    """
    knobs = spec.knobs
    budget = float(budget if budget is not None else knobs.get("budget", 50e-3))
    noise = float(noise if noise is not None else knobs.get("noise", 1e-3))
    interference_scale = float(knobs.get("interference_scale", 0.3))
    fading_std = float(knobs.get("fading_std", 0.4))
    gain_spread = float(knobs.get("gain_spread", 1.0))
    graph = _graph_from_spec(spec)
    rng = np.random.default_rng(spec.seed + 2)
    n, m = spec.num_nodes, spec.num_layers
    # Static per-channel base gains: heterogeneous direct links, interference
    # only along each channel's graph edges.
    base = []
    for shift in graph.shifts:
        direct = np.exp(gain_spread * rng.standard_normal(n))
        pattern = (np.abs(shift.to_dense()) > 0).astype(float)
        inter = interference_scale * pattern * rng.random((n, n))
        base.append(inter + np.diag(direct))

    def sample():
        gains = []
        feats = np.empty((n, m))
        for g_idx, g0 in enumerate(base):
            fading = np.exp(fading_std * rng.standard_normal((n, n)))
            g = g0 * fading
            gains.append(g)
            feats[:, g_idx] = np.log(np.diag(g))
        return feats, {"gains": gains}

    objective = SumRateObjective(budget, noise)
    splits = [
        [sample() for _ in range(size)]
        for size in (spec.train_size, spec.val_size, spec.test_size)
    ]
    return graph, objective, splits[0], splits[1], splits[2]


def uniform_allocation_rate(dataset, budget, noise):
    """Mean sum-rate of the equal-power baseline over a dataset."""
    total = 0.0
    for feats, target in dataset:
        n = np.asarray(feats).shape[0]
        powers = np.full(n, budget / n)
        total += sum_rate(powers, target["gains"], noise)
    return total / len(dataset)


def model_allocation_rate(model, dataset, budget, noise):
    """Mean sum-rate of a trained model's projected allocations."""
    total = 0.0
    for feats, target in dataset:
        out, _ = model.forward(np.asarray(feats, dtype=float))
        powers = project_budget(out, budget)
        total += sum_rate(powers, target["gains"], noise)
    return total / len(dataset)


# -- baseline bases ---------------------------------------------------------------


def single_graph_basis(num_generators, depth, generator=1):
    """Words over one generator only: the classical graph-filter basis."""
    full = enumerate_monomials(num_generators, depth)
    words = tuple(w for w in full.words if all(g == generator for g in w))
    return type(full)(num_generators, depth, words)


def independent_graphs_basis(num_generators, depth):
    """Unary words of every generator: per-graph filters with summed outputs."""
    full = enumerate_monomials(num_generators, depth)
    words = tuple(w for w in full.words if len(set(w)) <= 1)
    return type(full)(num_generators, depth, words)
