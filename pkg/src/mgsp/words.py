"""Free-algebra word machinery: monomial enumeration and commutator pruning.

A word (i1, …, ir) over generators {1..m} names the monomial S_{i1}⋯S_{ir};
the empty word is the identity. Words are ordered by length, then
lexicographically — the single tie-breaking rule used everywhere.
"""

from dataclasses import dataclass, field
from itertools import product

from .linalg import DEFAULT_TOL, operator_norm
from .multigraph import MultigraphError, commutator_norm

import numpy as np

DEFAULT_WORD_CAP = 100_000


def word_sort_key(word):
    return (len(word), word)


def unpruned_size(m, depth):
    """Number of words of length 0..depth over m generators."""
    if m == 1:
        return depth + 1
    return (m ** (depth + 1) - 1) // (m - 1)


@dataclass(frozen=True)
class MonomialBasis:
    """An ordered, prefix-closed set of words up to a maximum depth."""

    num_generators: int
    depth: int
    words: tuple
    pruned_pairs: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "_index", {w: k for k, w in enumerate(self.words)})

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._index

    def index(self, word):
        return self._index[word]

    def is_prefix_closed(self):
        return all(w[:-1] in self._index for w in self.words if w)

    def is_suffix_closed(self):
        return all(w[1:] in self._index for w in self.words if w)


def enumerate_monomials(num_generators, depth, cap=DEFAULT_WORD_CAP):
    """All words of length 0..depth in canonical order (the diffusion tree)."""
    if num_generators < 1:
        raise ValueError("need at least one generator")
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    total = unpruned_size(num_generators, depth)
    if total > cap:
        raise ValueError(
            f"basis would have {total} words, exceeding the cap of {cap}"
        )
    alphabet = range(1, num_generators + 1)
    words = []
    for length in range(depth + 1):
        words.extend(product(alphabet, repeat=length))
    return MonomialBasis(num_generators, depth, tuple(words))


def _contains_adjacent(word, first, second):
    return any(word[k] == first and word[k + 1] == second for k in range(len(word) - 1))


def prune_basis(basis, shifts, epsilon, tol_norm=DEFAULT_TOL):
    """Drop words with an adjacent descending factor of a near-commuting pair.

    For every generator pair i < j whose shifts have commutator norm at most
    ``epsilon``, words containing the adjacent factor (j, i) are removed; the
    canonical representative with the factor swapped to (i, j) survives.
    Removal cannot break prefix closure: every substring of a retained word
    is itself pattern-free, hence retained.
    """
    if len(shifts) != basis.num_generators:
        raise ValueError("one shift per generator required")
    if not epsilon < 0.5:
        raise ValueError("epsilon must be well below 1 (got >= 0.5)")
    for k, s in enumerate(shifts):
        norm = s.spectral_norm(tol=tol_norm)
        if norm > 1.0 + 1e-6:
            raise MultigraphError(
                f"shift {k + 1} is not normalized (estimated norm {norm:.6g})"
            )
    pruned_pairs = []
    for i in range(1, basis.num_generators + 1):
        for j in range(i + 1, basis.num_generators + 1):
            measured = float(commutator_norm(shifts[i - 1], shifts[j - 1], tol_norm))
            if measured <= epsilon:
                pruned_pairs.append((i, j, measured))
    words = [
        w
        for w in basis.words
        if not any(_contains_adjacent(w, j, i) for i, j, _ in pruned_pairs)
    ]
    return MonomialBasis(
        basis.num_generators,
        basis.depth,
        tuple(words),
        tuple(pruned_pairs),
    )


def _word_matvec(shifts, word, vec):
    # S_{i1}⋯S_{ir} v: rightmost factor acts first.
    for g in reversed(word):
        vec = shifts[g - 1].apply(vec)
    return vec


def _word_rmatvec(shifts, word, vec):
    for g in word:
        vec = shifts[g - 1].matrix.T @ vec
    return vec


def check_pruning_bound(shifts, i, j, trials, depth, seed=0, tol_norm=DEFAULT_TOL):
    """Max of ‖S_{w1}[S_i,S_j]S_{w2}‖₂ over random surrounding word pairs.

    With all shifts at unit norm this never exceeds the commutator norm of
    the (i, j) pair, which is the executable content of the pruning bound.
    """
    m = len(shifts)
    if not (1 <= i <= m and 1 <= j <= m):
        raise ValueError("generator indices out of range")
    n = shifts[0].num_nodes
    si, sj = shifts[i - 1], shifts[j - 1]
    comm = (si.matrix @ sj.matrix - sj.matrix @ si.matrix).tocsr()
    comm.eliminate_zeros()
    if comm.nnz == 0:
        return 0.0
    comm_t = comm.T.tocsr()
    rng = np.random.default_rng(seed)
    best = 0.0
    for trial in range(trials):
        lengths = rng.integers(0, depth + 1, size=2)
        w1 = tuple(int(g) for g in rng.integers(1, m + 1, size=lengths[0]))
        w2 = tuple(int(g) for g in rng.integers(1, m + 1, size=lengths[1]))

        def matvec(v, w1=w1, w2=w2):
            return _word_matvec(shifts, w1, comm @ _word_matvec(shifts, w2, v))

        def rmatvec(v, w1=w1, w2=w2):
            return _word_rmatvec(shifts, w2, comm_t @ _word_rmatvec(shifts, w1, v))

        norm = operator_norm(matvec, rmatvec, n, tol=tol_norm, seed=seed + trial + 1)
        best = max(best, norm)
    return best
