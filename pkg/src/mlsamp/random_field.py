"""Finite-noise random diffusion coefficient, forcing term and parameter domain.

The diffusion coefficient is a shifted lognormal field that varies only in
the first spatial coordinate,

    a(x, y) = shift + exp(g(x1, y)),
    g(x1, y) = mean_offset + sqrt(sqrt(pi)*L/2) * y_1 + sum_{n=2}^N b_n(x1) y_n,

with

    b_n(x1) = sqrt(sqrt(pi)*L) * exp(-(k_n*pi*L)^2 / 8)
              * { sin(k_n*pi*x1/L)   n even
                { cos(k_n*pi*x1/L)   n odd,      k_n = floor(n/2),

and parameters y_n independent uniform on [-sqrt(3), sqrt(3)] (unit
variance).  Truncated at N terms, the log-field covariance approximates
exp(-(x1-x1')^2/L^2).
"""

import math
from dataclasses import dataclass

import numpy as np

PARAM_BOUND = math.sqrt(3.0)


@dataclass(frozen=True)
class FieldConfig:
    """Random-field parameters: correlation length L and stochastic dimension N."""

    correlation_length: float = 0.25
    dimension: int = 5
    shift: float = 0.5
    mean_offset: float = 1.0

    def __post_init__(self):
        if self.correlation_length <= 0:
            raise ValueError("correlation_length must be positive")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")


def _check_params(cfg, y):
    y = np.asarray(y, dtype=float)
    if y.shape != (cfg.dimension,):
        raise ValueError(
            f"parameter vector has shape {y.shape}, expected ({cfg.dimension},)"
        )
    return y


def basis_1d(cfg, n, x1):
    """Expansion basis b_n(x1) for n >= 2; vectorized in x1."""
    L = cfg.correlation_length
    k = n // 2
    amp = math.sqrt(math.sqrt(math.pi) * L) * math.exp(-((k * math.pi * L) ** 2) / 8.0)
    arg = k * math.pi * np.asarray(x1, dtype=float) / L
    return amp * (np.sin(arg) if n % 2 == 0 else np.cos(arg))


def eval_log_field(cfg, x1, y):
    """Log of the shifted coefficient at x1 in [0,1]; vectorized in x1."""
    y = _check_params(cfg, y)
    L = cfg.correlation_length
    g = cfg.mean_offset + math.sqrt(math.sqrt(math.pi) * L / 2.0) * y[0]
    g = g + np.zeros_like(np.asarray(x1, dtype=float))
    for n in range(2, cfg.dimension + 1):
        g = g + basis_1d(cfg, n, x1) * y[n - 1]
    return g


def eval_coefficient(cfg, x, y):
    """Diffusion coefficient a = shift + exp(g(x1, y)) > shift.

    In 2D the field depends on the first coordinate only; `x` may be a
    scalar, a point, or an array of points with coordinates in the last
    axis.
    """
    x = np.asarray(x, dtype=float)
    x1 = x if x.ndim == 0 else x[..., 0]
    return cfg.shift + np.exp(eval_log_field(cfg, x1, y))


def truncated_covariance(cfg, x1, x1p):
    """Covariance of the log field truncated at N terms (unit-variance y)."""
    c = math.sqrt(math.pi) * cfg.correlation_length / 2.0
    for n in range(2, cfg.dimension + 1):
        c += float(basis_1d(cfg, n, x1) * basis_1d(cfg, n, x1p))
    return c


def eval_forcing(dim, x):
    """Deterministic forcing: cos(x1) in 1D, cos(x1)*sin(x2) in 2D.

    In 1D `x` is the coordinate itself (scalar or array); in 2D the last
    axis holds the two coordinates.
    """
    x = np.asarray(x, dtype=float)
    if dim == 1:
        return np.cos(x)
    if dim == 2:
        return np.cos(x[..., 0]) * np.sin(x[..., 1])
    raise ValueError(f"dim must be 1 or 2, got {dim}")


def draw_parameters(rng, N):
    """One parameter vector, components iid uniform on [-sqrt(3), sqrt(3)]."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    return rng.uniform(-PARAM_BOUND, PARAM_BOUND, size=N)
