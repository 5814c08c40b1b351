"""Empirical Bayes hyperparameter estimation: grid scans and Nelder-Mead.

An objective is any callable ``objective(theta, rank, seed) -> float`` where
``theta`` maps parameter names to values. :class:`EbProblem` is the
marginal-likelihood objective for a Matérn prior on a pixel grid.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize as sopt

from .covkernel import HyperParams, assemble_prior
from .errors import ConfigError, LowRankEBError, NumericalError
from .linop import GridGeometry, LinearOperator, as_operator
from .marglik import (
    GaussLinModel,
    MargLikValue,
    compute_z,
    lowrank_update,
    marglik_dense,
    marglik_lowrank,
    noise_terms,
)
from .rsvd import RsvdConfig
from .sqrtm import ChebConfig

__all__ = [
    "ParamSpec",
    "SearchSpace",
    "EbResult",
    "EbProblem",
    "derive_seed",
    "grid_scan",
    "optimize",
]

log = logging.getLogger(__name__)

LOG_SCALE_DEFAULT = {"sigma", "rho", "rho1", "rho2", "noise_var"}
GRID_GUARD = 10**5


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lower: float
    upper: float
    scale: str | None = None
    grid_points: int | None = None

    def __post_init__(self):
        if self.scale is None:
            object.__setattr__(self, "scale", "log" if self.name in LOG_SCALE_DEFAULT else "linear")
        if self.scale not in ("log", "linear"):
            raise ConfigError(f"{self.name}: scale must be 'log' or 'linear'")
        if not self.lower < self.upper:
            raise ConfigError(f"{self.name}: need lower < upper")
        if self.scale == "log" and self.lower <= 0:
            raise ConfigError(f"{self.name}: log scale needs lower > 0")
        if self.grid_points is not None and self.grid_points < 1:
            raise ConfigError(f"{self.name}: grid_points must be >= 1")

    def to_t(self, x):
        return np.log(x) if self.scale == "log" else np.asarray(x, float)

    def from_t(self, u):
        return np.exp(u) if self.scale == "log" else np.asarray(u, float)

    @property
    def t_bounds(self) -> tuple[float, float]:
        return float(self.to_t(self.lower)), float(self.to_t(self.upper))

    def grid(self) -> np.ndarray:
        k = self.grid_points or 1
        if k == 1:
            # a single point sits at the (transformed) centre
            return self.from_t(np.array([0.5 * sum(self.t_bounds)]))
        pts = self.from_t(np.linspace(*self.t_bounds, k))
        pts[0], pts[-1] = self.lower, self.upper
        return pts


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[ParamSpec, ...]
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        names = self.names
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in search space")
        clash = set(names) & set(self.fixed)
        if clash:
            raise ConfigError(f"parameters both free and fixed: {sorted(clash)}")

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def dim(self) -> int:
        return len(self.params)

    def grid(self) -> list[dict]:
        """Cartesian product in lexicographic order (first parameter outermost)."""
        axes = [p.grid() for p in self.params]
        return [dict(zip(self.names, map(float, combo))) for combo in itertools.product(*axes)]

    def grid_size(self) -> int:
        return math.prod(p.grid_points or 1 for p in self.params)

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        params = [ParamSpec(**p) for p in d.get("params", [])]
        return cls(tuple(params), dict(d.get("fixed", {})))


@dataclass
class EbResult:
    theta_opt: dict
    objective_opt: float
    trace: list = field(repr=False)  # [(theta dict, value)], NaN marks a failed point
    rank_used: int | None
    seed: int
    status: str = "ok"
    converged: bool = True
    fixed: dict = field(default_factory=dict)

    @property
    def hyperparams(self) -> HyperParams:
        return HyperParams.from_dict({**self.fixed, **self.theta_opt})


def derive_seed(base: int, index: int) -> int:
    """Per-point seed, deterministic in ``(base, index)``."""
    return int(np.random.SeedSequence([int(base), int(index)]).generate_state(1)[0])


class EbProblem:
    """Negative log marginal likelihood of a Matérn-prior inverse problem.

    Parameters
    ----------
    G : forward operator (or matrix) on ``grid``.
    y : data vector.
    grid : reconstruction grid carrying the prior.
    noise_var : fixed noise variance; ``None`` means ``noise_var`` must be
        supplied through ``theta`` (free parameter).
    fixed : hyperparameters held constant (merged under ``theta``).
    full : include the noise terms. Defaults to ``True`` exactly when the
        noise variance is free.
    log_hyperprior : optional ``theta -> log p(theta)``, subtracted from the
        objective.
    """

    def __init__(
        self,
        G,
        y,
        grid: GridGeometry,
        noise_var: float | None = None,
        fixed: dict | None = None,
        cheb: ChebConfig | None = None,
        oversample: int = 10,
        power_iters: int = 0,
        full: bool | None = None,
        log_hyperprior: Callable[[dict], float] | None = None,
    ):
        self.G: LinearOperator = as_operator(G)
        self.y = np.asarray(y, dtype=float)
        self.grid = grid
        if self.G.cols != grid.n or self.G.rows != self.y.size:
            raise ConfigError("forward operator, grid and data sizes disagree")
        self.noise_var = noise_var
        self.fixed = dict(fixed or {})
        self.cheb = cheb or ChebConfig()
        self.oversample = oversample
        self.power_iters = power_iters
        self.full = full
        self.log_hyperprior = log_hyperprior

    def hyperparams(self, theta: dict) -> HyperParams:
        return HyperParams.from_dict({**self.fixed, **theta})

    def model(self, hp: HyperParams) -> GaussLinModel:
        var = hp.noise_var if hp.noise_var is not None else self.noise_var
        if var is None:
            raise ConfigError("noise variance is neither fixed nor a parameter")
        prior = assemble_prior(self.grid, hp, check=False)
        return GaussLinModel(self.G, prior, np.full(self.G.rows, float(var)))

    def evaluate(self, theta: dict, rank: int | str | None, seed: int) -> MargLikValue:
        hp = self.hyperparams(theta)
        model = self.model(hp)
        full = self.full if self.full is not None else hp.noise_var is not None
        if rank is None or rank == "dense":
            val = marglik_dense(model, self.y, full=full)
        else:
            z = compute_z(model, self.y)
            cfg = RsvdConfig(int(rank), int(seed), self.oversample, self.power_iters)
            update = lowrank_update(model, cfg, self.cheb)
            val = marglik_lowrank(update, model.prior, z, noise_terms(model, self.y) if full else None)
        if self.log_hyperprior is not None:
            pen = -float(self.log_hyperprior(theta))
            val.breakdown["hyperprior_term"] = pen
            val.value += pen
        return val

    def __call__(self, theta: dict, rank, seed: int) -> float:
        return self.evaluate(theta, rank, seed).value


_RECOVERABLE = (LowRankEBError, np.linalg.LinAlgError, FloatingPointError, ValueError)


def grid_scan(objective, space: SearchSpace, rank, seed: int, max_points: int = GRID_GUARD) -> EbResult:
    """Evaluate ``objective`` on every grid point; ties go to the first point."""
    size = space.grid_size()
    if size > max_points:
        raise ConfigError(f"grid has {size} points, guard is {max_points}")
    trace = []
    for idx, theta in enumerate(space.grid()):
        try:
            val = float(objective(theta, rank, derive_seed(seed, idx)))
            if not math.isfinite(val):
                raise NumericalError("non-finite objective")
        except ConfigError:
            raise
        except _RECOVERABLE as exc:
            log.warning("grid point %d %s failed: %s", idx, theta, exc)
            val = math.nan
        trace.append((theta, val))
    vals = np.array([v for _, v in trace])
    if np.all(np.isnan(vals)):
        raise NumericalError("every grid point failed")
    best = int(np.nanargmin(vals))
    rank_used = None if rank in (None, "dense") else int(rank)
    return EbResult(dict(trace[best][0]), float(vals[best]), trace, rank_used, seed, fixed=dict(space.fixed))


def _fold(u: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Reflect ``u`` back into ``[lo, hi]`` (triangle wave), coordinate-wise."""
    w = hi - lo
    v = np.mod(u - lo, 2 * w)
    return lo + np.where(v > w, 2 * w - v, v)


def optimize(
    objective,
    space: SearchSpace,
    rank,
    seed: int,
    max_iters: int = 500,
    x_tol: float = 1e-4,
    f_tol: float = 1e-8,
    start: dict | None = None,
    initial_step: float = 0.1,
) -> EbResult:
    """Nelder-Mead on transformed coordinates with reflection at the bounds.

    Log-scaled parameters are optimized in ``log`` space. Every evaluation uses
    the same ``seed`` so the randomized objective is a fixed function of
    ``theta`` during the run. ``x_tol`` applies to transformed coordinates,
    ``f_tol`` is relative to the objective at the start point.
    """
    if space.dim == 0:
        raise ConfigError("nothing to optimize: search space has no free parameters")
    if space.dim > 8:
        raise ConfigError("optimize supports at most 8 free parameters")
    lo = np.array([p.t_bounds[0] for p in space.params])
    hi = np.array([p.t_bounds[1] for p in space.params])
    if start is None:
        u0 = 0.5 * (lo + hi)
    else:
        missing = set(space.names) - set(start)
        if missing:
            raise ConfigError(f"start point lacks {sorted(missing)}")
        u0 = np.array([float(p.to_t(start[p.name])) for p in space.params])
        u0 = np.clip(u0, lo, hi)

    trace: list = []
    memo: dict = {}

    def theta_of(u):
        x = _fold(np.asarray(u, float), lo, hi)
        return {p.name: float(p.from_t(xi)) for p, xi in zip(space.params, x)}

    def f(u):
        theta = theta_of(u)
        key = tuple(theta[n] for n in space.names)
        if key in memo:
            return memo[key]
        try:
            val = float(objective(theta, rank, seed))
            if not math.isfinite(val):
                raise NumericalError("non-finite objective")
        except ConfigError:
            raise
        except _RECOVERABLE as exc:
            log.warning("evaluation at %s failed: %s", theta, exc)
            val = math.inf
        memo[key] = val
        trace.append((theta, val if math.isfinite(val) else math.nan))
        return val

    f0 = f(u0)
    if not math.isfinite(f0):
        raise NumericalError(f"objective fails at the start point {theta_of(u0)}")
    simplex = [u0]
    for i in range(space.dim):
        step = initial_step * (hi[i] - lo[i])
        v = u0.copy()
        v[i] = v[i] + step if v[i] + step <= hi[i] else v[i] - step
        simplex.append(v)
    res = sopt.minimize(
        f,
        u0,
        method="Nelder-Mead",
        options={
            "maxiter": max_iters,
            "xatol": x_tol,
            "fatol": f_tol * max(1.0, abs(f0)),
            "initial_simplex": np.array(simplex),
        },
    )
    # the best vertex is never discarded, but guard against memo ties anyway
    vals = np.array([v for _, v in trace], dtype=float)
    best = int(np.nanargmin(vals))
    theta_best, f_best = trace[best]
    if res.fun <= f_best:
        theta_best, f_best = theta_of(res.x), float(res.fun)
    rank_used = None if rank in (None, "dense") else int(rank)
    return EbResult(
        dict(theta_best),
        float(f_best),
        trace,
        rank_used,
        seed,
        status=str(res.message),
        converged=bool(res.success),
        fixed=dict(space.fixed),
    )
