"""Multigraph filters: coefficient-weighted sums over the diffusion tree.

A filter maps a word w to an F_in×F_out coefficient block C_w; applying it
computes Σ_w (S_w x) C_w. Diffusions are shared along the tree: the word's
first generator is applied to the diffusion of the remaining letters, so no
word operator is ever materialized as a matrix.
"""

import numpy as np

from .multigraph import MultigraphError
from .words import MonomialBasis, word_sort_key


class FilterError(ValueError):
    """Filter/basis/signal shape mismatch."""


class MultigraphFilter:
    """A monomial basis plus one coefficient block per basis word."""

    def __init__(self, basis, coefficients):
        if set(coefficients) != set(basis.words):
            raise FilterError("coefficients must cover exactly the basis words")
        shapes = {np.asarray(c).shape for c in coefficients.values()}
        if len(shapes) != 1:
            raise FilterError("all coefficient blocks must share one shape")
        (shape,) = shapes
        if len(shape) != 2:
            raise FilterError("coefficient blocks must be F_in × F_out matrices")
        self.basis = basis
        self.coefficients = {
            w: np.asarray(coefficients[w], dtype=float) for w in basis.words
        }
        self.f_in, self.f_out = shape

    @classmethod
    def from_scalars(cls, basis, scalars):
        """Scalar filter (F_in = F_out = 1) from a word → float mapping."""
        coeffs = {w: np.array([[scalars.get(w, 0.0)]]) for w in basis.words}
        return cls(basis, coeffs)

    @classmethod
    def zeros(cls, basis, f_in, f_out):
        return cls(basis, {w: np.zeros((f_in, f_out)) for w in basis.words})

    @classmethod
    def random(cls, basis, f_in, f_out, rng):
        # Fan-in scaled init keeps layer output variance order one.
        bound = 1.0 / np.sqrt(f_in * len(basis))
        return cls(
            basis,
            {w: rng.uniform(-bound, bound, size=(f_in, f_out)) for w in basis.words},
        )

    def num_parameters(self):
        return len(self.basis) * self.f_in * self.f_out

    def copy(self):
        return MultigraphFilter(self.basis, {w: c.copy() for w, c in self.coefficients.items()})


def _as_batch(x, f_expected, what):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        batched = False
        x = x[None]
    elif x.ndim == 3:
        batched = True
    else:
        raise FilterError(f"{what} must be (N, F) or (B, N, F), got shape {x.shape}")
    if x.shape[2] != f_expected:
        raise FilterError(f"{what} has {x.shape[2]} features, expected {f_expected}")
    return x, batched


def _shift_batch(shift, x):
    # x: (B, N, F) → S applied per batch item.
    b, n, f = x.shape
    flat = x.transpose(1, 0, 2).reshape(n, b * f)
    out = shift.apply(flat)
    return out.reshape(n, b, f).transpose(1, 0, 2)


def diffusion_table(shifts, x, words):
    """Diffusions S_w x for every word, keyed by word, via tree recursion.

    Requires the word set to be closed under dropping the first letter
    (true for enumerated and pruned bases).
    """
    table = {}
    for w in sorted(words, key=word_sort_key):
        if not w:
            table[w] = x
        else:
            rest = w[1:]
            if rest not in table:
                raise FilterError(f"word set not closure-complete: missing {rest}")
            table[w] = _shift_batch(shifts[w[0] - 1], table[rest])
    return table


def _check_generators(filt, shifts):
    if len(shifts) != filt.basis.num_generators:
        raise FilterError(
            f"filter expects {filt.basis.num_generators} shift operators, got {len(shifts)}"
        )


def apply_filter(filt, graph_or_shifts, x):
    """y = Σ_w (S_w x) C_w without materializing any word operator."""
    shifts = getattr(graph_or_shifts, "shifts", graph_or_shifts)
    _check_generators(filt, shifts)
    x, batched = _as_batch(x, filt.f_in, "input signal")
    if x.shape[1] != shifts[0].num_nodes:
        raise MultigraphError(
            f"signal has {x.shape[1]} nodes, shifts expect {shifts[0].num_nodes}"
        )
    table = diffusion_table(shifts, x, filt.basis.words)
    out = np.zeros((x.shape[0], x.shape[1], filt.f_out))
    for w in filt.basis.words:
        out += table[w] @ filt.coefficients[w]
    return out if batched else out[0]


def adjoint_words(basis):
    """Reversed basis words, closure-completed, in canonical order."""
    reversed_words = {tuple(reversed(w)) for w in basis.words}
    closed = set(reversed_words)
    for w in reversed_words:
        for k in range(len(w)):
            closed.add(w[k:])
    return tuple(sorted(closed, key=word_sort_key))


def filter_adjoint_apply(filt, graph_or_shifts, u):
    """Adjoint action Σ_w (S_wᵀ u) C_wᵀ; S_wᵀ is the reversed word over Sᵀ.

    Satisfies ⟨apply_filter(h, g, x), u⟩ = ⟨x, filter_adjoint_apply(h, g, u)⟩.
    """
    shifts = getattr(graph_or_shifts, "shifts", graph_or_shifts)
    _check_generators(filt, shifts)
    u, batched = _as_batch(u, filt.f_out, "adjoint input")
    if u.shape[1] != shifts[0].num_nodes:
        raise MultigraphError(
            f"signal has {u.shape[1]} nodes, shifts expect {shifts[0].num_nodes}"
        )
    transposed = [s.transpose() for s in shifts]
    table = diffusion_table(transposed, u, adjoint_words(filt.basis))
    out = np.zeros((u.shape[0], u.shape[1], filt.f_in))
    for w in filt.basis.words:
        out += table[tuple(reversed(w))] @ filt.coefficients[w].T
    return out if batched else out[0]
