"""Experiment orchestration: the adaptive multilevel loop, single-level
baselines, epsilon-cost accounting and report emission.

A run refines the mesh hierarchy until the estimated spatial error drops
below eps/2 while per-level sample sizes keep the modeled sampling error
below eps/2, so the reported total error bound is eps.  Costs are tracked
in two currencies: wall-clock seconds, and a deterministic model unit
(interior DOF count raised to a solver exponent) that makes cost
comparisons machine-independent.  Under the model cost metric the emitted
reports are byte-reproducible; wall columns are then written as zero.
"""

import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import allocation, estimators, mesh_fem, random_field, rates, sparse_grid

MODEL_COST_EXPONENT = {1: 1.0, 2: 1.5}
WORKERS_ENV_VAR = "MLSAMP_WORKERS"


class ToleranceError(RuntimeError):
    """The requested tolerance cannot be reached within the configured
    level / grid / DOF budgets."""


def _default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV_VAR, "1")))
    except ValueError:
        return 1


@dataclass
class ExperimentConfig:
    """One experiment: problem, discretization hierarchy and budgets.

    h0 and s default per spatial dimension: 1D starts at h0 = 1/8 with
    s = 4, 2D at h0 = 1/4 with s = 2.
    """

    dim: int = 1
    h0: float = None
    s: int = None
    degree: int = 1
    epsilon: float = 1e-3
    sampler: str = "sc"
    mode: str = "multilevel"
    n_params: int = 5
    corr_length: float = 0.25
    seed: int = 0
    workers: int = None
    max_levels: int = 8
    max_nu: int = 6
    pilot_nus: tuple = (1, 2, 3)
    corr_nu: int = 2
    initial_nu: int = 2
    mc_initial: int = 64
    mc_pilot: int = 64
    mc_pilot_corr: int = 32
    mu1_model: str = "analytic"
    mixed_k: int = 2
    cost_metric: str = "model"
    dof_limit: int = 200_000

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.h0 is None:
            self.h0 = 0.125 if self.dim == 1 else 0.25
        if self.s is None:
            self.s = 4 if self.dim == 1 else 2
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0,1)")
        if self.sampler not in ("sc", "mc"):
            raise ValueError(f"sampler must be 'sc' or 'mc', got {self.sampler}")
        if self.mode not in ("single", "multilevel"):
            raise ValueError(f"mode must be 'single' or 'multilevel', got {self.mode}")
        if self.mu1_model not in ("analytic", "mixed"):
            raise ValueError("mu1_model must be 'analytic' or 'mixed'")
        if self.cost_metric not in ("model", "wall"):
            raise ValueError("cost_metric must be 'model' or 'wall'")
        if self.workers is None:
            self.workers = _default_workers()
        self.pilot_nus = tuple(self.pilot_nus)

    @property
    def mu1(self):
        if self.mu1_model == "analytic":
            return 0.0
        return float(rates.mixed_regularity_mu1(self.mixed_k, self.n_params))

    def setup(self):
        return mesh_fem.ProblemSetup(
            dim=self.dim,
            h0=self.h0,
            s=self.s,
            degree=self.degree,
            field=random_field.FieldConfig(
                correlation_length=self.corr_length, dimension=self.n_params
            ),
        )


@dataclass
class LevelRow:
    """Per-level diagnostics of a finished run."""

    level: int
    h: float
    M: int
    nu: int  # -1 for Monte Carlo sampling
    cost_wall_s: float
    cost_model: float
    err_space: float
    err_sample: float


@dataclass
class RunReport:
    """Full record of one experiment.

    total_cost_* sum every solve performed, pilots included;
    plan_cost_model is the cost functional sum_l M_l * C_l of the executed
    sampling plan alone (M * C_L for single-level runs).
    """

    config: ExperimentConfig
    rows: list
    err_space: float
    err_sample: float
    total_cost_model: float
    total_cost_wall: float
    plan_cost_model: float
    rates: rates.RateParameters
    estimate: mesh_fem.GridFunction
    solve_counts: dict = field(default_factory=dict)


class _Run:
    """Shared machinery of the single- and multilevel drivers."""

    def __init__(self, config):
        self.config = config
        self.setup = config.setup()
        self.cache = mesh_fem.SolveCache(self.setup)
        self.memo = {}
        self.params = None

    # ---- costs

    def dof(self, level):
        n = int(round(1.0 / self.setup.h0)) * self.setup.s**level
        if self.setup.dim == 1:
            return n * self.setup.degree - 1
        return (n - 1) ** 2

    def model_cost_per_solve(self, level):
        return float(self.dof(level)) ** MODEL_COST_EXPONENT[self.setup.dim]

    def per_solve_cost(self, level):
        """Per-solve cost in the configured allocation currency."""
        if self.config.cost_metric == "model":
            return self.model_cost_per_solve(level)
        count = self.cache.solve_count.get(level, 0)
        if count == 0:
            return self.model_cost_per_solve(level)  # no wall data yet
        return self.cache.wall_seconds[level] / count

    def level_costs(self, L):
        """Combined fine+coarse sample cost per level of the telescope."""
        costs = [self.per_solve_cost(0)]
        for lvl in range(1, L + 1):
            costs.append(self.per_solve_cost(lvl) + self.per_solve_cost(lvl - 1))
        return costs

    def check_budget(self, level):
        if level > self.config.max_levels:
            raise ToleranceError(
                f"tolerance {self.config.epsilon} unreachable within "
                f"{self.config.max_levels} refinements"
            )
        if self.dof(level) > self.config.dof_limit:
            raise ToleranceError(
                f"level {level} needs {self.dof(level)} DOFs, over the limit "
                f"{self.config.dof_limit}"
            )

    # ---- pilots and error estimates

    def refresh_rates(self, max_level):
        cfg = self.config
        self.params = rates.pilot_diagnostics(
            self.setup,
            self.cache,
            sampler=cfg.sampler,
            mu1=cfg.mu1,
            max_level=max_level,
            pilot_nus=cfg.pilot_nus,
            corr_nu=cfg.corr_nu,
            mc_pilot=cfg.mc_pilot,
            mc_pilot_corr=cfg.mc_pilot_corr,
            seed=cfg.seed,
            workers=cfg.workers,
            cost_per_solve=self.model_cost_per_solve,
            memo=self.memo,
        )
        return self.params

    def spatial_error_at(self, level):
        """Estimated spatial error of the level-`level` discretization,
        extrapolated from the newest pilot correction."""
        s, alpha = self.setup.s, self.params.alpha
        if level == 0:
            # probe: the level-1 correction bounds the tail from above it
            norm1 = self.params.correction_norms.get(1, 0.0)
            return norm1 * float(s) ** alpha / (float(s) ** alpha - 1.0)
        return estimators.spatial_error_estimate(
            self.params.correction_norms[level], alpha, s
        )

    # ---- allocation

    def admissible_sizes(self):
        N = self.config.n_params
        return [sparse_grid.build_grid(N, nu).size for nu in range(self.config.max_nu + 1)]

    def error_model(self, L):
        hs = [self.setup.h0 * float(self.setup.s) ** -lvl for lvl in range(L + 1)]
        phi = [self.params.phi_at(lvl, hs[lvl]) for lvl in range(L + 1)]
        return allocation.ErrorModel(
            mu1=self.config.mu1,
            mu2=self.params.mu2,
            phi=phi,
            cost=self.level_costs(L),
        )

    def allocate_plan(self, L):
        """Sample sizes for levels 0..L meeting the eps/2 sampling budget."""
        cfg = self.config
        if self.params.degenerate:
            # no observable sampling error: minimal sizes
            if cfg.sampler == "sc":
                return estimators.LevelPlan(sizes=(1,) * (L + 1), nus=(0,) * (L + 1)), 0.0
            return estimators.LevelPlan(sizes=(1,) * (L + 1)), 0.0
        model = self.error_model(L)
        try:
            if cfg.sampler == "sc":
                admissible = self.admissible_sizes()
                result = allocation.allocate(cfg.epsilon, model, admissible)
                nus = tuple(admissible.index(m) for m in result.sizes)
                plan = estimators.LevelPlan(sizes=tuple(result.sizes), nus=nus)
            else:
                result = allocation.allocate(cfg.epsilon, model)
                plan = estimators.LevelPlan(sizes=tuple(result.sizes))
        except ValueError as exc:
            raise ToleranceError(f"sample allocation failed: {exc}") from exc
        return plan, result.predicted_error

    def per_level_sample_errors(self, plan):
        if self.params.degenerate:
            return [0.0] * len(plan.sizes)
        model = self.error_model(plan.max_level)
        out = []
        for lvl, m in enumerate(plan.sizes):
            logs = 1.0 if model.mu1 == 0 else math.log(m) ** model.mu1
            out.append(model.phi[lvl] * logs * float(m) ** -model.mu2)
        return out

    # ---- bookkeeping

    def build_rows(self, plan, spatial_history, err_sample_rows):
        rows = []
        for lvl in range(plan.max_level + 1):
            h = self.setup.h0 * float(self.setup.s) ** -lvl
            rows.append(
                LevelRow(
                    level=lvl,
                    h=h,
                    M=int(plan.sizes[lvl]),
                    nu=int(plan.nus[lvl]) if plan.nus is not None else -1,
                    cost_wall_s=self.cache.wall_seconds.get(lvl, 0.0),
                    cost_model=self.cache.solve_count.get(lvl, 0)
                    * self.model_cost_per_solve(lvl),
                    err_space=spatial_history[lvl],
                    err_sample=err_sample_rows[lvl],
                )
            )
        return rows

    def totals(self):
        model = sum(
            cnt * self.model_cost_per_solve(lvl)
            for lvl, cnt in self.cache.solve_count.items()
        )
        wall = sum(self.cache.wall_seconds.values())
        return model, wall

    def plan_cost_model(self, plan):
        """Paper-style cost functional of the executed multilevel plan:
        level-0 samples cost one coarse solve, correction samples one fine
        plus one coarse solve."""
        total = plan.sizes[0] * self.model_cost_per_solve(0)
        for lvl in range(1, plan.max_level + 1):
            total += plan.sizes[lvl] * (
                self.model_cost_per_solve(lvl) + self.model_cost_per_solve(lvl - 1)
            )
        return total


def run_multilevel(config):
    """Adaptive multilevel estimation (refine while the spatial error
    estimate exceeds eps/2, re-optimizing sample sizes each round)."""
    run = _Run(config)
    cfg = config
    eps = cfg.epsilon

    run.refresh_rates(max_level=0)
    # initial estimate on the coarsest level (Algorithm line 2)
    if cfg.sampler == "sc":
        nu0 = min(cfg.initial_nu, cfg.max_nu)
        plan = estimators.LevelPlan(
            sizes=(sparse_grid.build_grid(cfg.n_params, nu0).size,), nus=(nu0,)
        )
    else:
        plan = estimators.LevelPlan(sizes=(cfg.mc_initial,))
    estimators.ml_estimate(
        run.setup, plan, cfg.sampler, cfg.seed, run.cache, cfg.workers
    )

    run.check_budget(1)
    run.refresh_rates(max_level=1)  # probe correction for the L=0 error
    e_space = run.spatial_error_at(0)
    spatial_history = [e_space]

    L = 0
    while e_space > eps / 2.0:
        L += 1
        run.check_budget(L)
        run.refresh_rates(max_level=L)
        plan, err_sample = run.allocate_plan(L)
        estimate = estimators.ml_estimate(
            run.setup, plan, cfg.sampler, cfg.seed, run.cache, cfg.workers
        )
        e_space = run.spatial_error_at(L)
        spatial_history.append(e_space)
    if L == 0:
        # tolerance met at the coarsest level: size the level-0 term alone
        plan, err_sample = run.allocate_plan(0)
        estimate = estimators.ml_estimate(
            run.setup, plan, cfg.sampler, cfg.seed, run.cache, cfg.workers
        )

    err_rows = run.per_level_sample_errors(plan)
    rows = run.build_rows(plan, spatial_history, err_rows)
    total_model, total_wall = run.totals()
    return RunReport(
        config=cfg,
        rows=rows,
        err_space=e_space,
        err_sample=err_sample,
        total_cost_model=total_model,
        total_cost_wall=total_wall,
        plan_cost_model=run.plan_cost_model(plan),
        rates=run.params,
        estimate=estimate.value,
        solve_counts=dict(sorted(run.cache.solve_count.items())),
    )


def run_single_level(config):
    """Single-level baseline: refine until the spatial error estimate is
    within eps/2, then sample only at the final level."""
    run = _Run(config)
    cfg = config
    eps = cfg.epsilon

    run.check_budget(1)
    run.refresh_rates(max_level=1)
    e_space = run.spatial_error_at(0)
    spatial_history = [e_space]
    L = 0
    while e_space > eps / 2.0:
        L += 1
        run.check_budget(L)
        run.refresh_rates(max_level=L)
        e_space = run.spatial_error_at(L)
        spatial_history.append(e_space)

    params = run.params
    phi0 = params.phi[0]
    if params.degenerate:
        M_real = 1.0
        err_sample = 0.0
    else:
        if eps / 2.0 > phi0:
            M_real = 1.0
        elif cfg.mu1 == 0:
            M_real = (2.0 * phi0 / eps) ** (1.0 / params.mu2)
        else:
            M_real = float(
                allocation.lemma_sample_size(
                    eps / (2.0 * phi0),
                    cfg.mu1,
                    params.mu2,
                    cfg.mu1,
                    params.mu2,
                    apply_k1=True,
                )
            )
    if cfg.sampler == "sc":
        admissible = run.admissible_sizes()
        idx = int(np.searchsorted(admissible, M_real, side="left"))
        if idx >= len(admissible):
            raise ToleranceError(
                f"single-level size {M_real:.1f} exceeds the largest sparse "
                f"grid ({admissible[-1]} points at nu = {cfg.max_nu})"
            )
        nu_L, M = idx, admissible[idx]
        estimate = estimators.sc_estimate(run.setup, L, nu_L, run.cache, cfg.workers)
    else:
        M = max(int(math.ceil(M_real)), 1)
        nu_L = -1
        estimate = estimators.mc_estimate(
            run.setup, L, M, cfg.seed, run.cache, cfg.workers
        )
    if not params.degenerate:
        logs = 1.0 if cfg.mu1 == 0 else math.log(M) ** cfg.mu1
        err_sample = phi0 * logs * float(M) ** -params.mu2

    # rows: pilot-only levels carry M = 0
    rows = []
    for lvl in range(L + 1):
        h = run.setup.h0 * float(run.setup.s) ** -lvl
        rows.append(
            LevelRow(
                level=lvl,
                h=h,
                M=M if lvl == L else 0,
                nu=nu_L if lvl == L else (-1 if cfg.sampler == "mc" else 0),
                cost_wall_s=run.cache.wall_seconds.get(lvl, 0.0),
                cost_model=run.cache.solve_count.get(lvl, 0)
                * run.model_cost_per_solve(lvl),
                err_space=spatial_history[lvl],
                err_sample=err_sample if lvl == L else 0.0,
            )
        )
    total_model, total_wall = run.totals()
    return RunReport(
        config=cfg,
        rows=rows,
        err_space=e_space,
        err_sample=err_sample,
        total_cost_model=total_model,
        total_cost_wall=total_wall,
        plan_cost_model=M * run.model_cost_per_solve(L),
        rates=params,
        estimate=estimate.value,
        solve_counts=dict(sorted(run.cache.solve_count.items())),
    )


def run_experiment(config):
    if config.mode == "multilevel":
        return run_multilevel(config)
    return run_single_level(config)


# ---------------------------------------------------------------- reporting

LEVELS_HEADER = "level,h,M,nu,cost_wall_s,cost_model,err_space,err_sample"


def _fmt(x):
    """17 significant digits, enough to round-trip a float exactly."""
    return format(float(x), ".17g")


def emit_report(report, out_dir):
    """Write levels.csv, summary.json and estimate.csv (UTF-8, LF).

    Under the model cost metric wall-clock fields are written as zero so
    that reports are byte-identical across machines and worker counts.
    """
    os.makedirs(out_dir, exist_ok=True)
    hide_wall = report.config.cost_metric == "model"

    def wall(x):
        return 0.0 if hide_wall else x

    lines = [LEVELS_HEADER]
    for r in report.rows:
        lines.append(
            ",".join(
                [
                    str(r.level),
                    _fmt(r.h),
                    str(r.M),
                    str(r.nu),
                    _fmt(wall(r.cost_wall_s)),
                    _fmt(r.cost_model),
                    _fmt(r.err_space),
                    _fmt(r.err_sample),
                ]
            )
        )
    _write_text(os.path.join(out_dir, "levels.csv"), "\n".join(lines) + "\n")

    p = report.rates
    config_echo = asdict(report.config)
    # execution details that cannot influence results stay out of the echo
    config_echo.pop("workers")
    summary = {
        "config": config_echo,
        "err_space": report.err_space,
        "err_sample": report.err_sample,
        "err_total_bound": report.err_space + report.err_sample,
        "total_cost_model": report.total_cost_model,
        "total_cost_wall_s": wall(report.total_cost_wall),
        "plan_cost_model": report.plan_cost_model,
        "solve_counts": {str(k): v for k, v in report.solve_counts.items()},
        "rates": {
            "alpha": p.alpha,
            "beta": p.beta,
            "gamma": p.gamma,
            "mu1": p.mu1,
            "mu2": p.mu2,
            "c4": p.c4,
            "phi": {str(k): v for k, v in sorted(p.phi.items())},
            "degenerate": p.degenerate,
        },
    }
    _write_text(
        os.path.join(out_dir, "summary.json"),
        json.dumps(summary, indent=2, sort_keys=True) + "\n",
    )

    est = report.estimate
    verts = est.space.mesh.vertices()
    vals = est.vertex_values()
    if report.config.dim == 1:
        rows = ["x,value"] + [
            f"{_fmt(x)},{_fmt(v)}" for x, v in zip(verts, vals)
        ]
    else:
        rows = ["x1,x2,value"] + [
            f"{_fmt(xy[0])},{_fmt(xy[1])},{_fmt(v)}" for xy, v in zip(verts, vals)
        ]
    _write_text(os.path.join(out_dir, "estimate.csv"), "\n".join(rows) + "\n")


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"failed writing report file {path}: {exc}") from exc
