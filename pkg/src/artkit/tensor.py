"""Symmetric tensor algebra and tensor-valued grid fields.

A symmetric rank-m tensor over R^3 is stored compactly: one complex value per
sorted multi-index (i1 <= ... <= im, entries in {0, 1, 2}), which is C(m+2, 2)
components, together with a multiplicity table counting how many of the 3^m
index permutations collapse onto each slot. Contractions over all index
tuples then reduce to multiplicity-weighted sums over the compact storage.

Covariant and contravariant components coincide (Euclidean metric,
rectangular coordinates), so no index placement is tracked.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb, factorial

import numpy as np

__all__ = [
    "SymTensor",
    "GridField",
    "num_components",
    "multi_indices",
    "multiplicities",
    "component_position",
    "contract_direction",
    "sym_inner",
    "convolve_tensor",
    "divergence",
    "monomial_matrix",
    "xi_power",
]


def num_components(rank):
    """Number of independent components of a symmetric rank-m tensor: C(m+2, 2)."""
    return comb(rank + 2, 2)


@lru_cache(maxsize=None)
def multi_indices(rank):
    """Sorted multi-indices (i1 <= ... <= im) with entries in {0, 1, 2}."""
    return tuple(combinations_with_replacement(range(3), rank))


@lru_cache(maxsize=None)
def multiplicities(rank):
    """Permutation count m!/(c0! c1! c2!) for each sorted multi-index."""
    mult = []
    for idx in multi_indices(rank):
        c = [idx.count(a) for a in range(3)]
        mult.append(factorial(rank) // (factorial(c[0]) * factorial(c[1]) * factorial(c[2])))
    return np.array(mult, dtype=float)


@lru_cache(maxsize=None)
def component_position(rank):
    """Map sorted multi-index tuple -> position in the component vector."""
    return {idx: n for n, idx in enumerate(multi_indices(rank))}


@dataclass(frozen=True)
class SymTensor:
    """Symmetric tensor of rank m with compact component storage."""

    rank: int
    comps: np.ndarray  # complex, length C(m+2, 2)

    def __post_init__(self):
        comps = np.asarray(self.comps, dtype=complex)
        if comps.shape != (num_components(self.rank),):
            raise ValueError(
                f"rank-{self.rank} tensor needs {num_components(self.rank)} components, "
                f"got shape {comps.shape}"
            )
        object.__setattr__(self, "comps", comps)

    @classmethod
    def zeros(cls, rank):
        return cls(rank, np.zeros(num_components(rank), dtype=complex))

    @classmethod
    def from_components(cls, rank, mapping):
        """Build from {multi-index tuple: value}; indices are sorted for you."""
        comps = np.zeros(num_components(rank), dtype=complex)
        pos = component_position(rank)
        for idx, val in mapping.items():
            comps[pos[tuple(sorted(idx))]] = val
        return cls(rank, comps)

    @classmethod
    def identity2(cls):
        """The Kronecker delta as a rank-2 symmetric tensor."""
        return cls.from_components(2, {(0, 0): 1.0, (1, 1): 1.0, (2, 2): 1.0})

    def __getitem__(self, idx):
        return self.comps[component_position(self.rank)[tuple(sorted(idx))]]

    def __add__(self, other):
        if self.rank != other.rank:
            raise ValueError("rank mismatch")
        return SymTensor(self.rank, self.comps + other.comps)

    def __sub__(self, other):
        if self.rank != other.rank:
            raise ValueError("rank mismatch")
        return SymTensor(self.rank, self.comps - other.comps)

    def __mul__(self, scalar):
        return SymTensor(self.rank, self.comps * scalar)

    __rmul__ = __mul__


def xi_power(xi, rank):
    """Symmetrized m-fold tensor power of a direction: components xi^{i1}...xi^{im}."""
    xi = np.asarray(xi, dtype=float)
    comps = np.array([np.prod(xi[list(idx)]) for idx in multi_indices(rank)], dtype=complex)
    return SymTensor(rank, comps)


def monomial_matrix(directions, rank):
    """Monomial values xi^{i1}...xi^{im} for many directions at once.

    Returns (ndirs, C(m+2,2)) float array; row d holds the sorted-index
    monomials of direction d. Used to assemble moment tensors as a single
    matrix product.
    """
    dirs = np.asarray(directions, dtype=float)
    cols = [np.prod(dirs[:, list(idx)], axis=1) if rank > 0 else np.ones(len(dirs))
            for idx in multi_indices(rank)]
    return np.stack(cols, axis=1)


def contract_direction(w, xi):
    """Full contraction w_{i1...im} xi^{i1}...xi^{im} (rank 0: the scalar itself)."""
    if w.rank == 0:
        return complex(w.comps[0])
    mono = monomial_matrix(np.asarray(xi, dtype=float)[None, :], w.rank)[0]
    return complex(np.sum(multiplicities(w.rank) * w.comps * mono))


def sym_inner(u, v):
    """Scalar product u_{i1...im} v^{i1...im} summed over all 3^m index tuples."""
    if u.rank != v.rank:
        raise ValueError(f"rank mismatch: {u.rank} vs {v.rank}")
    return complex(np.sum(multiplicities(u.rank) * u.comps * v.comps))


def convolve_tensor(Q, E):
    """Contract the first rank(Q) indices of E against Q.

    For Q of rank r and E of rank r + (p-1) the result has rank p-1 with
    components Q_{l1...lr} E^{l1...lr j1...j_{p-1}}.
    """
    r = Q.rank
    out_rank = E.rank - r
    if out_rank < 0:
        raise ValueError(f"cannot contract rank-{r} against rank-{E.rank}")
    pos_e = component_position(E.rank)
    mult_q = multiplicities(r)
    out = np.zeros(num_components(out_rank), dtype=complex)
    for n_out, idx_out in enumerate(multi_indices(out_rank)):
        acc = 0.0 + 0.0j
        for n_q, idx_q in enumerate(multi_indices(r)):
            acc += mult_q[n_q] * Q.comps[n_q] * E.comps[pos_e[tuple(sorted(idx_q + idx_out))]]
        out[n_out] = acc
    return SymTensor(out_rank, out)


@dataclass
class GridField:
    """Symmetric tensor field sampled on a uniform node-centered Cartesian grid.

    data is complex with shape (ncomp, nx, ny, nz) for stationary fields and
    (ncomp, nt, nx, ny, nz) when nt > 0. Node coordinates along each axis are
    box_min + index * spacing; endpoints lie on the box faces.
    """

    rank: int
    box: np.ndarray  # (2, 3): [min, max] corners
    data: np.ndarray
    nt: int = 0
    dt: float = 0.0

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=float).reshape(2, 3)
        self.data = np.asarray(self.data, dtype=complex)
        exp_lead = (num_components(self.rank),) if self.nt == 0 else (num_components(self.rank), self.nt)
        if self.data.shape[: len(exp_lead)] != exp_lead or self.data.ndim != len(exp_lead) + 3:
            raise ValueError(f"data shape {self.data.shape} inconsistent with rank/nt")
        if min(self.dims) < 2:
            raise ValueError("grids need at least 2 nodes per axis")
        if np.any(self.box[1] <= self.box[0]):
            raise ValueError("degenerate bounding box")

    @property
    def dims(self):
        return self.data.shape[-3:]

    @property
    def spacing(self):
        return (self.box[1] - self.box[0]) / (np.array(self.dims) - 1)

    def axes(self):
        return [np.linspace(self.box[0][a], self.box[1][a], self.dims[a]) for a in range(3)]

    def points(self):
        """All node coordinates as an (nx*ny*nz, 3) array in C (z-fastest) order."""
        ax = self.axes()
        g = np.meshgrid(*ax, indexing="ij")
        return np.stack([gi.ravel() for gi in g], axis=1)

    def at_time(self, it):
        if self.nt == 0:
            raise ValueError("stationary field has no time axis")
        return GridField(self.rank, self.box.copy(), self.data[:, it])

    @classmethod
    def zeros(cls, rank, dims, box, nt=0, dt=0.0):
        shape = (num_components(rank),) + ((nt,) if nt else ()) + tuple(dims)
        return cls(rank, np.asarray(box, dtype=float), np.zeros(shape, dtype=complex), nt, dt)


def divergence(f):
    """Discrete divergence contracting the last tensor index with the gradient.

    (div w)_{j1...j_{m-1}} = sum_p d w_{j1...j_{m-1} p} / d x^p, realized with
    second-order central differences in the interior and second-order
    one-sided stencils at the faces. Identity checks should restrict to
    interior nodes.
    """
    if f.rank < 1:
        raise ValueError("divergence needs a field of rank >= 1")
    if f.nt != 0:
        raise ValueError("divergence acts on stationary fields; select a time slice")
    if min(f.dims) < 3:
        raise ValueError("divergence needs at least 3 nodes per axis")
    pos_in = component_position(f.rank)
    h = f.spacing
    out = GridField.zeros(f.rank - 1, f.dims, f.box)
    for n_out, idx_out in enumerate(multi_indices(f.rank - 1)):
        acc = np.zeros(f.dims, dtype=complex)
        for p in range(3):
            comp = f.data[pos_in[tuple(sorted(idx_out + (p,)))]]
            acc += np.gradient(comp, h[p], axis=p, edge_order=2)
        out.data[n_out] = acc
    return out
