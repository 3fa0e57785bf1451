"""Isotropic Smolyak interpolation and quadrature on nested Clenshaw-Curtis nodes.

The sparse rule of level nu on [-1,1]^N is a signed combination of tensor
products of one-dimensional rules whose levels i satisfy
max(0, nu-N+1) <= |i-1| <= nu.  Node counts follow m_1 = 1 and
m_i = 2^(i-1)+1 so that the one-dimensional node sets are nested; as a
result every point of the level-nu grid appears again at level nu+1.

Points are identified by their dyadic labels: the 1D node with label
f in [0,1] sits at -cos(pi*f), and the label does not depend on the rule
level containing the node.  An N-dimensional point id is the tuple of its
per-dimension labels.  Ids are exact binary floats, so dictionary lookup
and ordering are reliable.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

SQRT3 = math.sqrt(3.0)


def rule_size(i):
    """Node count m_i of the 1D rule at level i >= 1."""
    if i < 1:
        raise ValueError(f"rule level must be >= 1, got {i}")
    return 1 if i == 1 else 2 ** (i - 1) + 1


def node_from_fraction(f):
    """Clenshaw-Curtis node -cos(pi*f), evaluated antisymmetrically.

    Computing the node from min(f, 1-f) keeps the node set exactly
    symmetric about 0 and pins f = 0, 1/2, 1 to -1, 0, 1.
    """
    if f == 0.5:
        return 0.0
    if f < 0.5:
        return -math.cos(math.pi * f)
    return math.cos(math.pi * (1.0 - f))


@dataclass(frozen=True)
class OneDimRule:
    """Nested 1D Clenshaw-Curtis rule: level, nodes and their dyadic labels."""

    level: int
    nodes: tuple
    fractions: tuple

    @property
    def size(self):
        return len(self.nodes)


@lru_cache(maxsize=None)
def nodes_1d(i):
    """1D rule of level i: the single node 0 for i = 1, else the
    2^(i-1)+1 Clenshaw-Curtis nodes in ascending order."""
    m = rule_size(i)
    if m == 1:
        fracs = (0.5,)
    else:
        fracs = tuple(j / (m - 1) for j in range(m))
    nodes = tuple(node_from_fraction(f) for f in fracs)
    return OneDimRule(level=i, nodes=nodes, fractions=fracs)


@lru_cache(maxsize=None)
def _bary_weights(i):
    """Barycentric weights of the level-i Clenshaw-Curtis nodes.

    Chebyshev extrema admit the closed form w_j = (-1)^j * delta_j with
    delta halved at the endpoints (Berrut & Trefethen 2004, eq. 5.4);
    any common factor cancels in the barycentric quotient.
    """
    m = rule_size(i)
    if m == 1:
        return np.ones(1)
    w = np.ones(m)
    w[1::2] = -1.0
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _basis_values(i, t):
    """Values of all Lagrange basis polynomials of rule i at scalar t."""
    rule = nodes_1d(i)
    x = np.asarray(rule.nodes)
    if rule.size == 1:
        return np.ones(1)
    diff = t - x
    hit = diff == 0.0
    if hit.any():
        out = np.zeros(rule.size)
        out[hit] = 1.0
        return out
    w = _bary_weights(i)
    q = w / diff
    return q / q.sum()


@lru_cache(maxsize=None)
def quad_weights_1d(i):
    """Uniform-density quadrature weights of rule i on [-1,1].

    Each weight is the exact integral of the corresponding Lagrange basis
    polynomial against the density 1/2, computed with a Gauss-Legendre
    rule of sufficient order.  Weights sum to 1.
    """
    rule = nodes_1d(i)
    if rule.size == 1:
        return np.ones(1)
    gx, gw = np.polynomial.legendre.leggauss(rule.size)
    basis = np.column_stack([_basis_values(i, t) for t in gx])
    return 0.5 * basis @ gw


def smolyak_terms(N, nu):
    """Active multi-indices and signed binomial coefficients of the
    level-nu Smolyak combination in N dimensions.

    Indices i >= 1 with max(0, nu-N+1) <= |i-1| <= nu enter with
    coefficient (-1)^(nu+N-|i|) * C(N-1, nu+N-|i|).
    """
    if N < 1:
        raise ValueError(f"dimension must be >= 1, got {N}")
    if nu < 0:
        raise ValueError(f"grid level must be >= 0, got {nu}")
    lo = max(0, nu - N + 1)
    terms = []
    for idx in product(range(1, nu + 2), repeat=N):
        d = sum(idx) - N
        if lo <= d <= nu:
            coeff = (-1) ** (nu - d) * math.comb(N - 1, nu - d)
            terms.append((idx, coeff))
    return terms


@dataclass(frozen=True)
class SmolyakGrid:
    """Sparse grid: unique points with level-independent ids, the active
    combination terms, and uniform-density quadrature weights.

    ids are sorted ascending; `weights[k]` belongs to `ids[k]`.
    `term_point_indices[t]` maps the tensor points of term t (laid out in
    C order over the per-dimension node lists) into the sorted id array.
    """

    dim: int
    level: int
    ids: tuple
    weights: np.ndarray
    terms: tuple
    term_point_indices: tuple

    @property
    def size(self):
        return len(self.ids)

    def points(self):
        """Coordinates of the unique points, row k matching ids[k]."""
        return np.array([[node_from_fraction(f) for f in pid] for pid in self.ids])


@lru_cache(maxsize=None)
def build_grid(N, nu):
    """Assemble the level-nu Smolyak grid in N dimensions.

    The point set is the deduplicated union of the active tensor grids;
    the quadrature weight of a point accumulates coefficient times the
    product of 1D weights over every term containing it.  Grids are
    immutable and memoized.
    """
    terms = smolyak_terms(N, nu)
    weight_acc = {}
    term_fracs = []
    for idx, coeff in terms:
        rules = [nodes_1d(i) for i in idx]
        w1d = [quad_weights_1d(i) for i in idx]
        fracs = [r.fractions for r in rules]
        term_fracs.append(fracs)
        for combo, wprod in zip(
            product(*fracs), (math.prod(ws) for ws in product(*w1d))
        ):
            weight_acc[combo] = weight_acc.get(combo, 0.0) + coeff * wprod
    ids = tuple(sorted(weight_acc))
    pos = {pid: k for k, pid in enumerate(ids)}
    weights = np.array([weight_acc[pid] for pid in ids])
    indices = tuple(
        np.array([pos[combo] for combo in product(*fracs)], dtype=np.intp)
        for fracs in term_fracs
    )
    return SmolyakGrid(
        dim=N,
        level=nu,
        ids=ids,
        weights=weights,
        terms=tuple(terms),
        term_point_indices=indices,
    )


def _require_values(grid, values):
    missing = [pid for pid in grid.ids if pid not in values]
    if missing:
        raise ValueError(
            f"values missing for {len(missing)} grid point(s), first {missing[0]}"
        )


def combination_weights(grid, t):
    """Effective interpolation weight of every grid point at query t.

    Entry k is the sum over active terms of the term coefficient times
    the tensor-product Lagrange basis value of point ids[k] at t.
    Interpolation and quadrature both reduce to a weighted sum against
    these per-point weights.
    """
    t = np.asarray(t, dtype=float)
    if t.shape != (grid.dim,):
        raise ValueError(f"query point must have shape ({grid.dim},), got {t.shape}")
    w_eff = np.zeros(grid.size)
    for (idx, coeff), pt_index in zip(grid.terms, grid.term_point_indices):
        basis = [_basis_values(i, t[n]) for n, i in enumerate(idx)]
        tensor = basis[0]
        for b in basis[1:]:
            tensor = np.multiply.outer(tensor, b)
        w_eff[pt_index] += coeff * tensor.ravel()
    return w_eff


def _weighted_sum(ids, weights, values):
    """Sum weights[k]*values[ids[k]] in ascending id order; values may be
    scalars or numpy arrays (accumulated componentwise)."""
    total = None
    for pid, w in zip(ids, weights):
        contrib = w * values[pid]
        total = contrib if total is None else total + contrib
    return total


def interpolate(grid, values, t):
    """Evaluate the Smolyak interpolant of `values` (map id -> scalar or
    array) at t in [-1,1]^N.  Reproduces stored values at grid points."""
    _require_values(grid, values)
    return _weighted_sum(grid.ids, combination_weights(grid, t), values)


def integrate(grid, values):
    """Uniform-density integral of the Smolyak interpolant: the weighted
    sum of values against the grid's quadrature weights."""
    _require_values(grid, values)
    return _weighted_sum(grid.ids, grid.weights, values)


def tensor_ids(levels):
    """Ids of the full tensor grid with per-dimension rule levels, in C order."""
    fracs = [nodes_1d(i).fractions for i in levels]
    return [combo for combo in product(*fracs)]


def full_tensor_interpolate(levels, values, t):
    """Full tensor-product Lagrange interpolation (small-N oracle).

    `values` must hold an entry for every id of `tensor_ids(levels)`.
    """
    t = np.asarray(t, dtype=float)
    ids = tensor_ids(levels)
    missing = [pid for pid in ids if pid not in values]
    if missing:
        raise ValueError(
            f"values missing for {len(missing)} tensor point(s), first {missing[0]}"
        )
    basis = [_basis_values(i, t[n]) for n, i in enumerate(levels)]
    tensor = basis[0]
    for b in basis[1:]:
        tensor = np.multiply.outer(tensor, b)
    return _weighted_sum(ids, tensor.ravel(), values)


def map_point(t):
    """Affine map from the reference cube [-1,1]^N to the parameter
    domain [-sqrt(3), sqrt(3)]^N: y = sqrt(3)*t."""
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0):
        raise ValueError("reference point outside [-1,1]^N")
    return SQRT3 * t
