"""Online estimation of the convergence rates and error constants that
drive the sample-size optimization.

Collocation convergence rates depend on analyticity radii that cannot be
computed a priori, so they are estimated during the run: a pilot sample on
the coarsest level fits the sampling-error exponent mu2, and one pilot per
newly added correction term supplies its error constant.  Monte Carlo
needs no mu2 fit (the rate is 1/2); its constants come from pointwise
sample variances.  The log exponent mu1 is configured, not fitted: 0 for
integrands with analytic parameter dependence, (k+2)(N-1)+1 for the
mixed-regularity model of order k.

Spatial accuracy (alpha), correction decay (beta) and cost growth (gamma)
come from log-log least squares over the visited levels, with theoretical
fallbacks until two data points exist.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import estimators, mesh_fem, sparse_grid

PILOT_STREAM_BASE = 10_000  # keeps pilot draws off the estimator streams


def fit_rate(pairs):
    """Least-squares power-law fit v ~ c * x^rate through (x, v) pairs.

    Returns (rate, c); rate is the log-log slope, positive when v grows
    with x.  Requires at least two pairs with positive entries.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("rate fit needs at least two (scale, value) pairs")
    if any(x <= 0 or v <= 0 for x, v in pairs):
        raise ValueError("rate fit needs positive scales and values")
    lx = np.log([x for x, _ in pairs])
    lv = np.log([v for _, v in pairs])
    rate, logc = np.polyfit(lx, lv, 1)
    return float(rate), float(math.exp(logc))


def mixed_regularity_mu1(k, N):
    """Log exponent (k+2)(N-1)+1 of the order-k mixed-smoothness model."""
    return (k + 2) * (N - 1) + 1


@dataclass
class RateParameters:
    """Fitted rates and per-level error constants.

    phi[ell] is the sampling-error constant of the level-ell term
    (the level-0 solution for ell = 0, corrections above); unvisited
    levels extrapolate through phi ~ c4 * h^beta.
    """

    alpha: float
    beta: float
    gamma: float
    mu2: float
    mu1: float
    phi: dict
    c4: float
    correction_norms: dict = field(default_factory=dict)
    degenerate: bool = False
    alpha_fitted: bool = False

    def phi_at(self, level, h):
        if level in self.phi:
            return self.phi[level]
        return self.c4 * h**self.beta


def _phi_from_error(err, M, mu2, mu1):
    """Invert the generic model err = phi * log(M)^mu1 * M^(-mu2)."""
    log_term = 1.0 if mu1 == 0 else math.log(M) ** mu1
    return err * M**mu2 / log_term


def _sc_pilot(setup, cache, mu1, max_level, pilot_nus, corr_nu, workers):
    N = setup.field.dimension
    sizes = {nu: sparse_grid.build_grid(N, nu).size for nu in range(max(pilot_nus) + 1)}
    diffs = []
    for nu in pilot_nus:
        e = estimators.sampling_error_estimate(setup, 0, nu, cache, workers)
        diffs.append((sizes[nu - 1], e))  # attribute to the coarser rule
    positive = [(m, e) for m, e in diffs if e > 0]
    if len(positive) < 2:
        return None, diffs  # flagged degenerate by the caller
    slope, _ = fit_rate(positive)
    mu2 = max(-slope, 1e-6)
    m_obs, e_obs = max(positive)
    phi = {0: _phi_from_error(e_obs, m_obs, mu2, mu1)}
    corr_norms = {}
    grid0, vals0 = estimators.sc_values(setup, 0, max(pilot_nus), cache, workers)
    corr_norms[0] = mesh_fem.norm(sparse_grid.integrate(grid0, vals0), "l2")
    for lvl in range(1, max_level + 1):
        e = estimators.sampling_error_estimate(
            setup, lvl, corr_nu, cache, workers, correction=True
        )
        m_attr = sizes.get(corr_nu - 1) or sparse_grid.build_grid(N, corr_nu - 1).size
        phi[lvl] = _phi_from_error(max(e, 1e-300), m_attr, mu2, mu1)
        grid, vals = estimators.sc_values(
            setup, lvl, corr_nu, cache, workers, correction=True
        )
        corr_norms[lvl] = mesh_fem.norm(sparse_grid.integrate(grid, vals), "l2")
    return (mu2, phi, corr_norms), diffs


def _mc_pilot(setup, cache, max_level, mc_pilot, mc_pilot_corr, seed, workers, memo):
    phi, corr_norms = {}, {}
    for lvl in range(max_level + 1):
        key = ("mc-pilot", lvl)
        if key not in memo:
            M = mc_pilot if lvl == 0 else mc_pilot_corr
            mean, std = estimators.mc_term(
                setup,
                lvl,
                M,
                seed,
                cache,
                workers,
                correction=lvl > 0,
                stream=PILOT_STREAM_BASE + lvl,
            )
            memo[key] = (mesh_fem.norm(mean, "l2"), mesh_fem.norm(std, "l2"))
        corr_norms[lvl], phi[lvl] = memo[key]
    return phi, corr_norms


def pilot_diagnostics(
    setup,
    cache,
    sampler="sc",
    mu1=0.0,
    max_level=0,
    pilot_nus=(1, 2, 3),
    corr_nu=2,
    mc_pilot=64,
    mc_pilot_corr=32,
    seed=0,
    workers=1,
    cost_per_solve=None,
    memo=None,
):
    """Estimate all model parameters from pilot samples on levels
    0..max_level.  Intended to be re-run after each refinement; sparse-grid
    pilots are then nearly free because solves are memoized, Monte Carlo
    pilot statistics are memoized in `memo`.
    """
    if sampler not in ("sc", "mc"):
        raise ValueError(f"sampler must be 'sc' or 'mc', got {sampler}")
    if sampler == "sc" and (len(pilot_nus) < 2 or min(pilot_nus) < 1):
        raise ValueError("SC pilots need at least two quadrature levels >= 1")
    if sampler == "mc" and mc_pilot < 32:
        raise ValueError("MC pilots need at least 32 draws on level 0")
    memo = {} if memo is None else memo
    hs = [setup.h0 * float(setup.s) ** -lvl for lvl in range(max_level + 1)]

    degenerate = False
    if sampler == "sc":
        fitted, _ = _sc_pilot(
            setup, cache, mu1, max_level, tuple(pilot_nus), corr_nu, workers
        )
        if fitted is None:
            degenerate = True
            mu2, phi, corr_norms = 1.0, {lvl: 1e-300 for lvl in range(max_level + 1)}, {
                lvl: 0.0 for lvl in range(max_level + 1)
            }
        else:
            mu2, phi, corr_norms = fitted
    else:
        mu2 = 0.5
        phi, corr_norms = _mc_pilot(
            setup, cache, max_level, mc_pilot, mc_pilot_corr, seed, workers, memo
        )
        if phi[0] <= 0:
            degenerate = True
            phi = {lvl: 1e-300 for lvl in phi}

    # spatial rate from the decay of the correction means
    alpha_pairs = [
        (hs[lvl], corr_norms[lvl])
        for lvl in range(1, max_level + 1)
        if corr_norms.get(lvl, 0.0) > 0
    ]
    alpha_fitted = len(alpha_pairs) >= 2
    if alpha_fitted:
        alpha = max(fit_rate(alpha_pairs)[0], 0.1)
    else:
        alpha = float(setup.degree + 1)  # L2-norm theory fallback

    # correction-constant decay for extrapolating phi to unvisited levels
    beta_pairs = [
        (hs[lvl], phi[lvl]) for lvl in range(1, max_level + 1) if phi[lvl] > 1e-290
    ]
    if len(beta_pairs) >= 2:
        beta, c4 = fit_rate(beta_pairs)
        beta = max(beta, 0.1)
    else:
        beta = alpha
        if beta_pairs:
            h1, p1 = beta_pairs[0]
            c4 = p1 / h1**beta
        else:
            c4 = phi[0] / hs[0] ** beta

    if cost_per_solve is None:
        cost_per_solve = lambda lvl: float(cache.space(lvl).n_dof)
    gamma_pairs = [(hs[lvl], cost_per_solve(lvl)) for lvl in range(max_level + 1)]
    if len(gamma_pairs) >= 2:
        gamma = max(-fit_rate(gamma_pairs)[0], 0.1)
    else:
        gamma = float(setup.dim)  # one solve ~ dof count fallback

    return RateParameters(
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        mu2=mu2,
        mu1=float(mu1),
        phi=phi,
        c4=c4,
        correction_norms=corr_norms,
        degenerate=degenerate,
        alpha_fitted=alpha_fitted,
    )
