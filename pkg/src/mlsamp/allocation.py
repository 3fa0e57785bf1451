"""Optimal per-level sample sizes for multilevel estimators.

The sampling error of level ell with M samples is modeled as
phi[ell] * log(M)^mu1 * M^(-mu2), at cost M * C[ell].  Minimizing total
cost subject to a total sampling error of eps/2 admits closed-form
continuum solutions: a Lagrange-multiplier formula when mu1 = 0, and a
ceiling formula driven by the same multiplier when mu1 > 0.  Continuum
sizes are then rounded to admissible sizes (sparse-grid point counts, or
integers for Monte Carlo) by a cheapest-upgrade-first binning pass that
preserves feasibility.

The leading error constant of the generic model multiplies every level
identically and is therefore absorbed into the per-level phi values.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ErrorModel:
    """Per-level sampling-error constants and costs.

    mu1 >= 0 and mu2 > 0 are the log and algebraic error exponents;
    phi[ell] > 0 scales the level-ell error; cost[ell] > 0 is the cost of
    one level-ell sample (combined fine+coarse solve cost for ell >= 1).
    """

    mu1: float
    mu2: float
    phi: tuple
    cost: tuple

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(float(p) for p in self.phi))
        object.__setattr__(self, "cost", tuple(float(c) for c in self.cost))
        if self.mu1 < 0:
            raise ValueError("mu1 must be >= 0")
        if self.mu2 <= 0:
            raise ValueError("mu2 must be positive")
        if len(self.phi) != len(self.cost):
            raise ValueError("phi and cost must have equal length")
        if not self.phi:
            raise ValueError("model must have at least one level")
        if any(p <= 0 for p in self.phi) or any(c <= 0 for c in self.cost):
            raise ValueError("phi and cost entries must be positive")

    @property
    def num_levels(self):
        return len(self.phi)


def _check_eps(eps):
    if not 0.0 < eps < 1.0:
        raise ValueError(f"tolerance must lie in (0,1), got {eps}")


def _multiplier_sum(model):
    m2 = model.mu2
    return sum(
        (c**m2 * p) ** (1.0 / (m2 + 1.0)) for c, p in zip(model.cost, model.phi)
    )


def optimal_sizes_algebraic(eps, model):
    """Continuum cost-minimizing sizes for the log-free model (mu1 = 0):

        M_ell = (2/eps)^(1/mu2) * S^(1/mu2) * (phi_ell/C_ell)^(1/(mu2+1)),
        S = sum_l (C_l^mu2 phi_l)^(1/(mu2+1)).

    The error constraint sum phi_ell M_ell^(-mu2) = eps/2 is active.
    """
    _check_eps(eps)
    if model.mu1 != 0:
        raise ValueError("algebraic sizes require mu1 = 0")
    m2 = model.mu2
    pref = (2.0 / eps) ** (1.0 / m2) * _multiplier_sum(model) ** (1.0 / m2)
    return np.array(
        [
            pref * (p / c) ** (1.0 / (m2 + 1.0))
            for c, p in zip(model.cost, model.phi)
        ]
    )


def predicted_cost_algebraic(eps, model):
    """Total cost sum C_ell M_ell at the continuum optimum:
    (2/eps)^(1/mu2) * S^((mu2+1)/mu2)."""
    _check_eps(eps)
    m2 = model.mu2
    return (2.0 / eps) ** (1.0 / m2) * _multiplier_sum(model) ** ((m2 + 1.0) / m2)


def k1_scaling(mu1, mu2, mu1_t, mu2_t):
    """Tolerance shrink factor that turns the ceiling formula's guarantee
    M^(-mu2) log(M)^mu1 <= (1 + 1/mu2_t + mu1_t/mu2)^mu1 * eps^(mu2/mu2_t)
    into a clean eps^(mu2/mu2_t) bound."""
    base = 1.0 + 1.0 / mu2_t + mu1_t / mu2
    return base ** (-mu1 * mu2_t / mu2)


def lemma_sample_size(eps, mu1, mu2, mu1_t, mu2_t, apply_k1=False):
    """Smallest guaranteed sample size for a log-polluted error decay:

        M = ceil(eps^(-1/mu2_t) * log(1/eps)^(mu1_t/mu2)),

    which satisfies M^(-mu2) log(M)^mu1 <= (1+1/mu2_t+mu1_t/mu2)^mu1
    * eps^(mu2/mu2_t).  With `apply_k1` the tolerance is pre-scaled by
    k1_scaling so the bound becomes eps^(mu2/mu2_t) itself.
    """
    _check_eps(eps)
    if mu2 <= 0 or mu2_t <= 0:
        raise ValueError("mu2 and mu2_t must be positive")
    if mu1 < 0 or mu1_t < mu1:
        raise ValueError("need 0 <= mu1 <= mu1_t")
    if apply_k1:
        eps = k1_scaling(mu1, mu2, mu1_t, mu2_t) * eps
    log_factor = 1.0 if mu1_t == 0 else math.log(1.0 / eps) ** (mu1_t / mu2)
    return max(1, math.ceil(eps ** (-1.0 / mu2_t) * log_factor))


def optimal_sizes_log(eps, model):
    """Integer sizes for the model with a logarithmic error term (mu1 > 0).

    With lambda = ((2/eps) * S)^((mu2+1)/mu2) the per-level tolerances
    eps_ell = C_ell/(lambda*phi_ell) are < 1, and the ceiling formula with
    exponents (mu2+1, mu1) and K1 scaling yields sizes whose total modeled
    sampling error is at most eps/2.

    Requires eps/2 <= phi[0]: a tolerance coarser than the level-0
    variability admits no meaningful allocation.
    """
    _check_eps(eps)
    if model.mu1 <= 0:
        raise ValueError("log-model sizes require mu1 > 0")
    if eps / 2.0 > model.phi[0]:
        raise ValueError(
            f"precondition violated: eps/2 = {eps / 2.0} exceeds phi[0] = "
            f"{model.phi[0]} (tolerance coarser than level-0 variability)"
        )
    m2 = model.mu2
    lam = ((2.0 / eps) * _multiplier_sum(model)) ** ((m2 + 1.0) / m2)
    sizes = []
    for c, p in zip(model.cost, model.phi):
        eps_l = c / (lam * p)
        if eps_l >= 1.0:
            raise ValueError(
                f"per-level tolerance {eps_l} >= 1; model violates the "
                "multiplier bound"
            )
        sizes.append(
            lemma_sample_size(eps_l, model.mu1, m2, model.mu1, m2 + 1.0, True)
        )
    return np.array(sizes, dtype=int)


def constraint_residual(sizes, model, eps):
    """Modeled total sampling error minus eps/2; <= 0 means feasible."""
    sizes = np.asarray(sizes, dtype=float)
    if np.any(sizes < 1):
        raise ValueError("sizes must be >= 1")
    if model.mu1 == 0:
        logs = np.ones_like(sizes)
    else:
        logs = np.log(sizes) ** model.mu1
    err = float(np.sum(np.array(model.phi) * logs * sizes**-model.mu2))
    return err - eps / 2.0


def bin_sizes(sizes, admissible, model, eps):
    """Round continuum sizes to admissible ones, cheapest upgrades first.

    Every level starts rounded down; levels are then rounded up one at a
    time in ascending order of upgrade cost (M_next - M_prev) * C_ell
    (ties broken by lower level) until the modeled sampling error is
    within eps/2.  If rounding every level up is still infeasible, the
    level with the cheapest further increment moves up one admissible
    size and the scan repeats.
    """
    sizes = np.asarray(sizes, dtype=float)
    admissible = sorted(int(a) for a in admissible)
    if not admissible:
        raise ValueError("admissible size set is empty")
    if len(sizes) != model.num_levels:
        raise ValueError("sizes length does not match model levels")

    def slot_down(m):
        k = int(np.searchsorted(admissible, m, side="right")) - 1
        return max(k, 0)

    def slot_up(m):
        k = int(np.searchsorted(admissible, m, side="left"))
        if k >= len(admissible):
            raise ValueError(
                f"target size {m} exceeds the largest admissible size "
                f"{admissible[-1]}"
            )
        return k

    down = [slot_down(m) for m in sizes]
    up = [slot_up(m) for m in sizes]
    current = list(down)

    def feasible():
        vals = [admissible[k] for k in current]
        return constraint_residual(vals, model, eps) <= 0.0

    upgrade_cost = [
        ((admissible[u] - admissible[d]) * c, ell)
        for ell, (u, d, c) in enumerate(zip(up, down, model.cost))
    ]
    for _, ell in sorted(upgrade_cost):
        if feasible():
            break
        current[ell] = up[ell]
    while not feasible():
        # everything is rounded up already: bump the cheapest increment
        candidates = [
            ((admissible[k + 1] - admissible[k]) * model.cost[ell], ell)
            for ell, k in enumerate(current)
            if k + 1 < len(admissible)
        ]
        if not candidates:
            raise ValueError("admissible sizes exhausted before feasibility")
        _, ell = min(candidates)
        current[ell] += 1
    return np.array([admissible[k] for k in current], dtype=int)


@dataclass(frozen=True)
class AllocationResult:
    """Continuum and rounded sizes with the model's error/cost predictions."""

    real_sizes: np.ndarray
    sizes: np.ndarray
    predicted_error: float
    predicted_cost: float


def allocate(eps, model, admissible=None):
    """Closed-form sizes (algebraic or log path per mu1), rounded to the
    admissible set when given (sparse grids) or up to integers (MC)."""
    if model.mu1 == 0:
        real = optimal_sizes_algebraic(eps, model)
    else:
        real = optimal_sizes_log(eps, model).astype(float)
    if admissible is not None:
        sizes = bin_sizes(real, admissible, model, eps)
    else:
        sizes = np.maximum(np.ceil(real).astype(int), 1)
    err = constraint_residual(sizes, model, eps) + eps / 2.0
    cost = float(np.dot(model.cost, sizes))
    return AllocationResult(
        real_sizes=real, sizes=sizes, predicted_error=err, predicted_cost=cost
    )
