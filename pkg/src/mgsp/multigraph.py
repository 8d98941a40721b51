"""Multigraphs: one vertex set carrying several sparse shift operators.

Signals are N×F real matrices (F=1 gives per-node scalars). All types are
immutable after construction; every operation here is a pure function.
"""

import json

import numpy as np
import scipy.sparse as sp

from .linalg import DEFAULT_TOL, matrix_norm

FORMAT_VERSION = 1


class MultigraphError(ValueError):
    """Invalid multigraph, shift, signal or permutation input."""


class SparseShift:
    """One edge set's N×N shift operator, stored in CSR form."""

    def __init__(self, matrix):
        matrix = sp.csr_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise MultigraphError(f"shift operator must be square, got {matrix.shape}")
        matrix.sum_duplicates()
        matrix.eliminate_zeros()
        if matrix.nnz and not np.all(np.isfinite(matrix.data)):
            raise MultigraphError("shift operator has non-finite weights")
        matrix.data.setflags(write=False)
        self._matrix = matrix

    @classmethod
    def from_entries(cls, num_nodes, entries):
        """Build from (row, col, weight) triples; conflicting duplicates are an error."""
        seen = {}
        for row, col, weight in entries:
            row, col, weight = int(row), int(col), float(weight)
            if not (0 <= row < num_nodes and 0 <= col < num_nodes):
                raise MultigraphError(
                    f"entry ({row}, {col}) out of range for {num_nodes} nodes"
                )
            if not np.isfinite(weight) or weight == 0.0:
                raise MultigraphError(f"entry ({row}, {col}) has invalid weight {weight}")
            if (row, col) in seen and seen[(row, col)] != weight:
                raise MultigraphError(
                    f"duplicate entry ({row}, {col}) with conflicting weights"
                )
            seen[(row, col)] = weight
        if seen:
            rows, cols = zip(*seen.keys())
            data = [seen[rc] for rc in seen]
        else:
            rows, cols, data = (), (), ()
        matrix = sp.csr_matrix(
            (np.asarray(data, dtype=float), (rows, cols)),
            shape=(num_nodes, num_nodes),
        )
        return cls(matrix)

    @property
    def num_nodes(self):
        return self._matrix.shape[0]

    @property
    def nnz(self):
        return self._matrix.nnz

    @property
    def matrix(self):
        return self._matrix

    def entries(self):
        coo = self._matrix.tocoo()
        return [(int(r), int(c), float(w)) for r, c, w in zip(coo.row, coo.col, coo.data)]

    def to_dense(self):
        return self._matrix.toarray()

    def transpose(self):
        return SparseShift(self._matrix.T.tocsr())

    def apply(self, values):
        """Shift a signal: S @ values, O(nnz · F)."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.num_nodes:
            raise MultigraphError(
                f"signal has {values.shape[0]} rows, shift expects {self.num_nodes}"
            )
        return self._matrix @ values

    def spectral_norm(self, tol=DEFAULT_TOL, seed=0):
        if self._matrix.nnz == 0:
            return 0.0
        return matrix_norm(self._matrix, tol=tol, seed=seed)

    def scaled(self, factor):
        return SparseShift(self._matrix * factor)

    def submatrix(self, keep):
        """Principal submatrix on the given node indices (in the given order)."""
        keep = np.asarray(keep, dtype=int)
        return SparseShift(self._matrix[keep][:, keep].tocsr())

    def __eq__(self, other):
        if not isinstance(other, SparseShift):
            return NotImplemented
        return (self._matrix != other._matrix).nnz == 0

    def __repr__(self):
        return f"SparseShift(n={self.num_nodes}, nnz={self.nnz})"


class Multigraph:
    """A shared node set plus an ordered list of m shift operators."""

    def __init__(self, shifts, layer_names=None):
        shifts = tuple(shifts)
        if not shifts:
            raise MultigraphError("a multigraph needs at least one shift operator")
        n = shifts[0].num_nodes
        for s in shifts:
            if s.num_nodes != n:
                raise MultigraphError("all shift operators must share the node set")
        if layer_names is None:
            layer_names = tuple(f"layer{i + 1}" for i in range(len(shifts)))
        self.shifts = shifts
        self.layer_names = tuple(layer_names)
        self.num_nodes = n

    @property
    def num_shifts(self):
        return len(self.shifts)

    def __repr__(self):
        return f"Multigraph(N={self.num_nodes}, m={self.num_shifts})"


def build_multigraph(adjacency_lists, num_nodes, variant="adjacency",
                     normalize=True, tol_norm=DEFAULT_TOL, layer_names=None):
    """Assemble a multigraph from per-layer weighted edge lists.

    ``variant`` selects the shift operator flavor per layer ("adjacency" or
    "laplacian"); the choice is independent across layers, so a list of
    flavors (one per layer) is also accepted. With ``normalize`` each shift
    is scaled to unit spectral norm.
    """
    if num_nodes <= 0:
        raise MultigraphError("num_nodes must be positive")
    adjacency_lists = list(adjacency_lists)
    if not adjacency_lists:
        raise MultigraphError("need at least one edge list")
    if isinstance(variant, str):
        variants = [variant] * len(adjacency_lists)
    else:
        variants = list(variant)
        if len(variants) != len(adjacency_lists):
            raise MultigraphError("one variant per edge list required")
    shifts = []
    for edges, flavor in zip(adjacency_lists, variants):
        shift = SparseShift.from_entries(num_nodes, edges)
        if flavor == "laplacian":
            dense = shift.matrix
            degrees = np.asarray(np.abs(dense).sum(axis=1)).ravel()
            shift = SparseShift(sp.diags(degrees) - dense)
        elif flavor != "adjacency":
            raise MultigraphError(f"unknown shift variant {flavor!r}")
        if normalize and shift.nnz:
            shift = normalize_shift(shift, tol_norm)
        shifts.append(shift)
    return Multigraph(shifts, layer_names=layer_names)


def shift_apply(shift, values):
    """Apply one shift operator to a signal (alias for SparseShift.apply)."""
    return shift.apply(values)


def normalize_shift(shift, tol_norm=DEFAULT_TOL):
    """Scale a shift to unit spectral norm (power-iteration estimate)."""
    if shift.nnz == 0:
        raise MultigraphError("cannot normalize an all-zero shift operator")
    sigma = shift.spectral_norm(tol=tol_norm)
    if sigma == 0.0:
        raise MultigraphError("cannot normalize an all-zero shift operator")
    return shift.scaled(1.0 / sigma)


def commutator_norm(shift_i, shift_j, tol_norm=DEFAULT_TOL):
    """Estimated spectral norm of S_i S_j − S_j S_i.

    Returns exactly 0.0 when the sparse difference has no nonzeros.
    """
    if shift_i.num_nodes != shift_j.num_nodes:
        raise MultigraphError("commutator requires equal dimensions")
    a, b = shift_i.matrix, shift_j.matrix
    comm = (a @ b - b @ a).tocsr()
    comm.eliminate_zeros()
    if comm.nnz == 0:
        return 0.0
    return matrix_norm(comm, tol=tol_norm)


class Permutation:
    """A relabeling of [0, N): position k of the output takes input node perm[k].

    Realizes the permutation-matrix action Pᵀx via ``x[perm]`` and PᵀSP via
    simultaneous row/column reindexing.
    """

    def __init__(self, mapping):
        mapping = np.asarray(mapping, dtype=int)
        n = mapping.shape[0]
        if mapping.ndim != 1 or sorted(mapping.tolist()) != list(range(n)):
            raise MultigraphError("permutation must be a bijection on [0, N)")
        mapping.setflags(write=False)
        self.mapping = mapping
        self.size = n

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    @classmethod
    def random(cls, n, rng):
        return cls(rng.permutation(n))

    def inverse(self):
        inv = np.empty(self.size, dtype=int)
        inv[self.mapping] = np.arange(self.size)
        return Permutation(inv)


def permute_signal(perm, values):
    """Pᵀx: reorder signal rows by the permutation."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != perm.size:
        raise MultigraphError("permutation size does not match signal")
    return values[perm.mapping]


def permute_shift(perm, shift):
    if shift.num_nodes != perm.size:
        raise MultigraphError("permutation size does not match shift")
    return shift.submatrix(perm.mapping)


def permute_multigraph(perm, graph):
    """PᵀS_iP for every shift, preserving layer names."""
    return Multigraph(
        [permute_shift(perm, s) for s in graph.shifts],
        layer_names=graph.layer_names,
    )


def save_multigraph(graph, path):
    """Write the versioned JSON multigraph document."""
    doc = {
        "version": FORMAT_VERSION,
        "num_nodes": graph.num_nodes,
        "layers": [
            {"name": name, "edges": [[r, c, w] for r, c, w in shift.entries()]}
            for name, shift in zip(graph.layer_names, graph.shifts)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_multigraph(path):
    """Read a multigraph JSON document; unknown versions are rejected."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != FORMAT_VERSION:
        raise MultigraphError(f"unsupported multigraph format version {doc.get('version')!r}")
    n = doc["num_nodes"]
    shifts = [SparseShift.from_entries(n, layer["edges"]) for layer in doc["layers"]]
    names = [layer.get("name", f"layer{i + 1}") for i, layer in enumerate(doc["layers"])]
    return Multigraph(shifts, layer_names=names)
