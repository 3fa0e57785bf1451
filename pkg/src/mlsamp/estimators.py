"""Monte Carlo, sparse-grid collocation and multilevel estimators of the
mean solution field, plus the spatial- and sampling-error estimators.

All estimators return the estimated mean as a grid function on the finest
mesh they touch.  Sampling is deterministic given a seed: parameter draws
happen up front in a fixed order, PDE solves may then run on a thread
pool, and reductions are performed in draw/point-id order after all
solves complete, so results are bit-identical for any worker count.

Sparse-grid solves are memoized by (mesh level, point id); nested grids
therefore reuse solves both across quadrature levels and between the
fine part of one correction term and the coarse part of the next.
Monte Carlo draws are independent across levels and are not cached.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import mesh_fem, random_field, sparse_grid


@dataclass
class LevelPlan:
    """Per-level sample sizes for levels 0..L; quadrature levels for SC."""

    sizes: tuple
    nus: tuple = None

    def __post_init__(self):
        self.sizes = tuple(int(m) for m in self.sizes)
        if any(m < 1 for m in self.sizes):
            raise ValueError("sample sizes must be >= 1")
        if self.nus is not None:
            self.nus = tuple(int(v) for v in self.nus)
            if len(self.nus) != len(self.sizes):
                raise ValueError("nus and sizes must have equal length")

    @property
    def max_level(self):
        return len(self.sizes) - 1


@dataclass
class Estimate:
    """Estimated mean field with sampling metadata."""

    value: mesh_fem.GridFunction
    level: int
    sizes: tuple
    std_field: mesh_fem.GridFunction = None


def _run_tasks(tasks, workers):
    """Evaluate thunks, in order, optionally on a thread pool."""
    if workers <= 1 or len(tasks) <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda t: t(), tasks))


def _solve_grid_points(setup, level, grid, cache, workers):
    """Cached solutions at all mapped points of a sparse grid."""
    pts = grid.points()
    missing = [
        (pid, sparse_grid.map_point(pts[k]))
        for k, pid in enumerate(grid.ids)
        if cache.lookup(level, pid) is None
    ]
    tasks = [
        (lambda y=y, pid=pid: mesh_fem.fem_solution(setup, level, y, cache, pid))
        for pid, y in missing
    ]
    _run_tasks(tasks, workers)
    return {pid: cache.lookup(level, pid) for pid in grid.ids}


def sc_values(setup, level, nu, cache, workers=1, correction=False):
    """Map point id -> solution (or correction u_l - P u_{l-1}) at every
    point of the level-nu sparse grid, all on the level mesh."""
    grid = sparse_grid.build_grid(setup.field.dimension, nu)
    fine = _solve_grid_points(setup, level, grid, cache, workers)
    if not correction:
        return grid, fine
    if level < 1:
        raise ValueError("corrections require level >= 1")
    coarse = _solve_grid_points(setup, level - 1, grid, cache, workers)
    space = cache.space(level)
    return grid, {
        pid: fine[pid] - mesh_fem.prolongate(coarse[pid], space) for pid in grid.ids
    }


def sc_estimate(setup, level, nu, cache, workers=1):
    """Single-level sparse-grid collocation estimate of the mean field."""
    grid, values = sc_values(setup, level, nu, cache, workers)
    mean = sparse_grid.integrate(grid, values)
    return Estimate(value=mean, level=level, sizes=(grid.size,))


def _mc_draws(setup, M, seed, stream):
    rng = np.random.default_rng([seed, stream])
    return [random_field.draw_parameters(rng, setup.field.dimension) for _ in range(M)]


def mc_term(setup, level, M, seed, cache, workers=1, correction=False, stream=0):
    """Mean and pointwise std of M independent samples of the level-`level`
    solution (or correction).  Distinct (seed, stream) pairs give
    independent draw sequences."""
    ys = _mc_draws(setup, M, seed, stream)
    space = cache.space(level)
    if correction:
        tasks = [
            (lambda y=y: correction_sample(setup, level, y, cache)) for y in ys
        ]
    else:
        tasks = [
            (lambda y=y: mesh_fem.fem_solution(setup, level, y, cache)) for y in ys
        ]
    samples = _run_tasks(tasks, workers)
    acc = np.zeros(space.n_dof)
    for g in samples:
        acc = acc + g.coeffs
    mean = acc / M
    sq = np.zeros(space.n_dof)
    for g in samples:
        sq = sq + (g.coeffs - mean) ** 2
    std = np.sqrt(sq / (M - 1)) if M > 1 else np.zeros(space.n_dof)
    return (
        mesh_fem.GridFunction(space, mean),
        mesh_fem.GridFunction(space, std),
    )


def mc_estimate(setup, level, M, seed, cache, workers=1, stream=None):
    """Plain Monte Carlo estimate of the mean field at one level, with the
    pointwise sample standard deviation attached for RMSE estimation."""
    if M < 1:
        raise ValueError("M must be >= 1")
    stream = level if stream is None else stream
    mean, std = mc_term(setup, level, M, seed, cache, workers, stream=stream)
    return Estimate(value=mean, level=level, sizes=(M,), std_field=std)


def correction_sample(setup, level, y, cache, key=None):
    """One sample of the telescoping correction u_l - P u_{l-1} on mesh l."""
    if level < 1:
        raise ValueError("corrections require level >= 1")
    fine = mesh_fem.fem_solution(setup, level, y, cache, key)
    coarse = mesh_fem.fem_solution(setup, level - 1, y, cache, key)
    return fine - mesh_fem.prolongate(coarse, cache.space(level))


def ml_estimate(setup, plan, sampler, seed, cache, workers=1):
    """Multilevel estimate: level-0 term plus telescoping corrections, each
    sampled with its own size, prolonged to the finest mesh and summed.

    sampler 'sc' integrates each term on its own nested sparse grid
    (sharing solves through the cache); 'mc' averages independent draws
    per level.  Terms accumulate in ascending level order.
    """
    if sampler not in ("sc", "mc"):
        raise ValueError(f"sampler must be 'sc' or 'mc', got {sampler}")
    L = plan.max_level
    fine_space = cache.space(L)
    total = None
    term_means = []
    for lvl in range(L + 1):
        if sampler == "sc":
            if plan.nus is None:
                raise ValueError("SC plans need quadrature levels")
            grid, values = sc_values(
                setup, lvl, plan.nus[lvl], cache, workers, correction=lvl > 0
            )
            term = sparse_grid.integrate(grid, values)
        else:
            term, _ = mc_term(
                setup,
                lvl,
                plan.sizes[lvl],
                seed,
                cache,
                workers,
                correction=lvl > 0,
                stream=lvl,
            )
        term_means.append(term)
        lifted = term if lvl == L else mesh_fem.prolongate(term, fine_space)
        total = lifted if total is None else total + lifted
    est = Estimate(value=total, level=L, sizes=plan.sizes)
    est.term_means = term_means
    return est


def sampling_error_estimate(setup, level, nu, cache, workers=1, correction=False):
    """Spatial L2 norm of the difference between the level-nu and
    level-(nu-1) sparse-grid quadratures of the same integrand.

    Nested grids make the coarser quadrature free: its points are a
    subset of the finer grid's, so all solves are shared.
    """
    if nu < 1:
        raise ValueError("successive-difference estimate needs nu >= 1")
    grid, values = sc_values(setup, level, nu, cache, workers, correction)
    coarse_grid = sparse_grid.build_grid(setup.field.dimension, nu - 1)
    fine_q = sparse_grid.integrate(grid, values)
    coarse_q = sparse_grid.integrate(coarse_grid, values)
    return mesh_fem.norm(fine_q - coarse_q, "l2")


def spatial_error_estimate(correction_mean_norm, alpha_hat, s):
    """Geometric-tail extrapolation of the remaining spatial error from
    the newest correction's mean: ||E[du_L]|| / (s^alpha - 1)."""
    if s <= 1:
        raise ValueError("refinement factor must exceed 1")
    if alpha_hat <= 0:
        raise ValueError("spatial rate must be positive")
    if correction_mean_norm < 0:
        raise ValueError("norm must be non-negative")
    return correction_mean_norm / (float(s) ** alpha_hat - 1.0)
