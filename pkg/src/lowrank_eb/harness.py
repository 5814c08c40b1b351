"""Experiment pipeline behind the command line: generate, scan, optimize, reconstruct.

A configuration is a JSON document validated against ``config_schema.json``.
Everything an experiment writes goes to one output directory, which the
``LOWRANK_EB_OUTPUT_DIR`` environment variable overrides.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy import interpolate

from .covkernel import HyperParams, assemble_prior
from .eb import EbProblem, EbResult, ParamSpec, SearchSpace, derive_seed, grid_scan, optimize
from .errors import ConfigError, LowRankEBError
from .fileio import read_json, read_raw, write_csv, write_json, write_pgm, write_raw
from .linop import (
    BlurSpec,
    GridGeometry,
    LinearOperator,
    RadonSpec,
    blur_operator,
    from_matrix,
    identity,
    radon_operator,
    zero,
)
from .marglik import GaussLinModel, compute_z, lowrank_update
from .posterior import PosteriorSummary, posterior_dense, posterior_lowrank, psnr
from .rsvd import RsvdConfig
from .sqrtm import ChebConfig, ChebyshevSqrt

__all__ = [
    "ExperimentConfig",
    "Dataset",
    "DataError",
    "load_config",
    "ellipse_phantom",
    "draw_prior_samples",
    "generate",
    "load_dataset",
    "build_problem",
    "run_scan",
    "run_optimize",
    "run_reconstruct",
    "OUTPUT_DIR_ENV",
]

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "LOWRANK_EB_OUTPUT_DIR"
HP_KEYS = ("sigma", "nu", "rho", "rho1", "rho2")


class DataError(LowRankEBError, OSError):
    """Missing or unreadable experiment files."""


def _schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


def _grid(d: dict | None) -> GridGeometry | None:
    if d is None:
        return None
    return GridGeometry(d["nx"], d["ny"], tuple(d.get("domain", (-1.0, 1.0, -1.0, 1.0))))


@dataclass
class ExperimentConfig:
    raw: dict
    problem: str
    truth_grid: GridGeometry
    obs_grid: GridGeometry | None
    recon_grid: GridGeometry
    forward: dict
    truth_kind: str
    truth_hp: dict
    sampler: str
    noise: dict
    space: SearchSpace
    ranks: list
    data_seed: int
    rsvd_seed: int
    cheb: ChebConfig
    oversample: int
    power_iters: int
    opt: dict
    recon: dict
    output_dir: Path
    base_dir: Path = field(default_factory=Path.cwd)

    def forward_operator(self, grid: GridGeometry) -> LinearOperator:
        if self.problem == "deblur":
            return blur_operator(BlurSpec(self.forward["t"], self.obs_grid), grid)
        if self.problem == "ct":
            angles = self.forward.get("angles")
            spec = RadonSpec(self.forward["n_angles"], self.forward["n_offsets"], tuple(angles) if angles else None)
            return radon_operator(spec, grid)
        kind = self.forward["matrix"]
        if kind == "identity":
            return identity(grid.n)
        if kind.startswith("zero"):
            m = int(kind.partition(":")[2] or grid.n)
            return zero(m, grid.n)
        path = Path(kind)
        if not path.is_absolute():
            path = self.base_dir / path
        try:
            M = np.load(path)
        except OSError as exc:
            raise DataError(f"cannot read forward matrix {path}: {exc}") from exc
        if M.ndim != 2 or M.shape[1] != grid.n:
            raise ConfigError(f"forward.matrix has shape {M.shape}, grid has {grid.n} pixels")
        return from_matrix(M)

    def data_shape(self, m: int) -> tuple:
        if self.problem == "deblur":
            return (self.obs_grid.ny, self.obs_grid.nx)
        if self.problem == "ct":
            return (self.forward["n_angles"], self.forward["n_offsets"])
        return (m,)


def _fail(path: str, msg: str):
    raise ConfigError(f"config at {path}: {msg}")


def load_config(source, env=None, base_dir=None) -> ExperimentConfig:
    """Validate a configuration (a path or an already parsed dict)."""
    env = os.environ if env is None else env
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        base_dir = base_dir or path.parent
    else:
        raw = dict(source)
    base_dir = Path(base_dir or Path.cwd())
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config at {where}: {exc.message}") from exc

    problem = raw["problem"]
    grids = raw["grids"]
    truth_grid = _grid(grids["truth"])
    recon_grid = _grid(grids.get("reconstruction")) or truth_grid
    obs_grid = _grid(grids.get("observation"))
    fwd = raw["forward"]
    if problem == "deblur":
        if "t" not in fwd:
            _fail("forward/t", "deblurring needs the PSF width t")
        if obs_grid is None:
            _fail("grids/observation", "deblurring needs an observation grid")
    elif problem == "ct":
        for k in ("n_angles", "n_offsets"):
            if k not in fwd:
                _fail(f"forward/{k}", "required for ct")
    elif "matrix" not in fwd:
        _fail("forward/matrix", "custom-dense needs 'identity', 'zero[:m]' or a .npy path")

    truth = raw["truth"]
    kind = truth.get("kind", "phantom" if problem == "ct" else "prior")
    truth_hp = dict(truth.get("hyperparams", {}))
    if kind == "prior":
        try:
            HyperParams.from_dict({k: v for k, v in truth_hp.items() if k != "noise_var"})
        except (ConfigError, TypeError) as exc:
            _fail("truth/hyperparams", f"prior draw needs complete hyperparameters ({exc})")

    noise = dict(raw["noise"])
    if ("std" in noise) == ("snr_percent" in noise):
        _fail("noise", "give exactly one of std and snr_percent")

    search = raw.get("search", {})
    params = [ParamSpec(**p) for p in search.get("params", [])]
    free = {p.name for p in params}
    fixed = dict(search.get("fixed", {}))
    # hyperparameters neither free nor fixed default to the data-generating ones
    aniso_free = bool(free & {"rho1", "rho2"}) or bool(set(fixed) & {"rho1", "rho2"})
    iso_free = "rho" in free or "rho" in fixed
    for k in HP_KEYS:
        if k in free or k in fixed or k not in truth_hp:
            continue
        if (k == "rho" and aniso_free) or (k in ("rho1", "rho2") and iso_free):
            continue
        fixed[k] = truth_hp[k]
    try:
        space = SearchSpace(tuple(params), fixed)
    except ConfigError as exc:
        _fail("search", str(exc))

    ranks = list(raw.get("ranks", ["dense"]))
    seeds = raw.get("seeds", {})
    cheb_raw = raw.get("chebyshev", {})
    cheb = ChebConfig(
        k=cheb_raw.get("k", 60),
        lanczos_steps=cheb_raw.get("lanczos_steps", 30),
        safety=cheb_raw.get("safety", 1.05),
    )
    oversample = raw.get("oversample", 10)
    opt = dict(raw.get("optimize", {}))
    recon = dict(raw.get("reconstruct", {}))
    out = env.get(OUTPUT_DIR_ENV) or raw.get("output_dir", "out")
    out = Path(out)
    if not out.is_absolute():
        out = base_dir / out

    cfg = ExperimentConfig(
        raw=raw,
        problem=problem,
        truth_grid=truth_grid,
        obs_grid=obs_grid,
        recon_grid=recon_grid,
        forward=fwd,
        truth_kind=kind,
        truth_hp=truth_hp,
        sampler=truth.get("sampler", "cholesky"),
        noise=noise,
        space=space,
        ranks=ranks,
        data_seed=seeds.get("data", 0),
        rsvd_seed=seeds.get("rsvd", 0),
        cheb=cheb,
        oversample=oversample,
        power_iters=raw.get("power_iters", 0),
        opt=opt,
        recon=recon,
        output_dir=out,
        base_dir=base_dir,
    )
    n = recon_grid.n
    for where, rs in (("ranks", ranks), ("optimize/rank", [opt.get("rank", "dense")]), ("reconstruct/ranks", recon.get("ranks", []))):
        for r in rs:
            if r != "dense" and r + oversample > n:
                _fail(where, f"rank {r} plus oversampling {oversample} exceeds n = {n}")
    if problem == "custom-dense" and fwd["matrix"] == "identity" and recon_grid.n != truth_grid.n:
        _fail("grids/reconstruction", "identity forward map needs matching grids")
    return cfg


# -- synthetic truth ---------------------------------------------------------

# (intensity, semi-axis a, semi-axis b, centre x, centre y, angle in degrees):
# the modified Shepp-Logan head phantom
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def ellipse_phantom(grid: GridGeometry, ellipses=_SHEPP_LOGAN) -> np.ndarray:
    """Sum of constant-intensity ellipses sampled at the pixel centres."""
    pts = grid.points()
    img = np.zeros(grid.n)
    for val, a, b, cx, cy, deg in ellipses:
        th = math.radians(deg)
        dx, dy = pts[:, 0] - cx, pts[:, 1] - cy
        u = dx * math.cos(th) + dy * math.sin(th)
        v = -dx * math.sin(th) + dy * math.cos(th)
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += val
    return img


def draw_prior_samples(
    grid: GridGeometry, hp: HyperParams, rng: np.random.Generator, n_draws: int = 1, sampler: str = "cholesky", cheb=None
) -> np.ndarray:
    """``n_draws`` columns distributed as ``N(0, Gamma_pr(hp))``."""
    prior = assemble_prior(grid, hp)
    xi = rng.standard_normal((grid.n, n_draws))
    if sampler == "cholesky":
        return np.linalg.cholesky(prior) @ xi
    if sampler == "chebyshev":
        return ChebyshevSqrt(prior, cheb)(xi)
    raise ConfigError(f"unknown sampler {sampler!r}")


@dataclass
class Dataset:
    y: np.ndarray
    truth: np.ndarray  # on the truth grid, flattened
    noise_var: float
    meta: dict


def _sha256(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def generate(cfg: ExperimentConfig, write: bool = True) -> Dataset:
    """Draw (or build) the truth, apply the forward map, add noise."""
    rng = np.random.default_rng(cfg.data_seed)
    grid = cfg.truth_grid
    if cfg.truth_kind == "prior":
        hp = HyperParams.from_dict({k: v for k, v in cfg.truth_hp.items() if k != "noise_var"})
        x = draw_prior_samples(grid, hp, rng, 1, cfg.sampler, cfg.cheb)[:, 0]
    else:
        x = ellipse_phantom(grid)
    G = cfg.forward_operator(grid)
    clean = G @ x
    if "std" in cfg.noise:
        std = float(cfg.noise["std"])
    else:
        ref = cfg.noise.get("reference", "rms")
        scale = math.sqrt(float(np.mean(clean**2))) if ref == "rms" else float(np.max(np.abs(clean)))
        std = cfg.noise["snr_percent"] / 100.0 * scale
    y = clean + std * rng.standard_normal(clean.shape)
    noise_var = std**2
    meta = {
        "problem": cfg.problem,
        "truth_kind": cfg.truth_kind,
        "truth_hyperparams": cfg.truth_hp,
        "truth_sha256": _sha256(x),
        "truth_shape": [grid.ny, grid.nx],
        "data_shape": list(cfg.data_shape(y.size)),
        "noise_std": std,
        "noise_var": noise_var,
        "data_seed": cfg.data_seed,
    }
    ds = Dataset(y, x, noise_var, meta)
    if write:
        out = cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        img = x.reshape(grid.ny, grid.nx)
        write_raw(out / "truth.bin", img, what="truth")
        write_pgm(out / "truth.pgm", img, what="truth")
        data = y.reshape(cfg.data_shape(y.size))
        write_raw(out / "data.bin", data, what="data")
        if data.ndim == 2:
            write_pgm(out / "data.pgm", data, what="data")
        write_json(out / "dataset.json", meta)
    return ds


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    out = cfg.output_dir
    try:
        meta = read_json(out / "dataset.json")
        y = read_raw(out / "data.bin").ravel()
        x = read_raw(out / "truth.bin").ravel()
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"no dataset in {out}; run 'gen' first ({exc})") from exc
    return Dataset(y, x, float(meta["noise_var"]), meta)


# -- inference ---------------------------------------------------------------


def build_problem(cfg: ExperimentConfig, ds: Dataset) -> EbProblem:
    free = set(cfg.space.names) | set(cfg.space.fixed)
    noise_var = None if "noise_var" in free else ds.noise_var
    return EbProblem(
        cfg.forward_operator(cfg.recon_grid),
        ds.y,
        cfg.recon_grid,
        noise_var=noise_var,
        fixed=cfg.space.fixed,
        cheb=cfg.cheb,
        oversample=cfg.oversample,
        power_iters=cfg.power_iters,
    )


def _rank_label(r) -> str:
    return "dense" if r in (None, "dense") else str(int(r))


def run_scan(cfg: ExperimentConfig, write: bool = True) -> list[list]:
    """Objective on the search grid for every configured rank.

    Rows are ordered by grid index, then by rank as listed in the config.
    Wall times go to a separate file so the table itself is reproducible.
    """
    if not cfg.ranks:
        raise ConfigError("config at ranks: empty rank list")
    if cfg.space.dim == 0:
        raise ConfigError("config at search/params: nothing to scan")
    ds = load_dataset(cfg)
    prob = build_problem(cfg, ds)
    names = cfg.space.names
    points = cfg.space.grid()
    values = {}
    timing = []
    for r in cfg.ranks:
        times = []

        def timed(theta, rank, seed):
            t0 = time.perf_counter()
            try:
                return prob(theta, rank, seed)
            finally:
                times.append(time.perf_counter() - t0)

        res = grid_scan(timed, cfg.space, r, cfg.rsvd_seed)
        values[_rank_label(r)] = [v for _, v in res.trace]
        timing.append(times)
    rows = []
    time_rows = []
    for idx, theta in enumerate(points):
        for j, r in enumerate(cfg.ranks):
            lab = _rank_label(r)
            rows.append([idx, *[theta[n] for n in names], lab, values[lab][idx]])
            time_rows.append([idx, lab, timing[j][idx]])
    if write:
        out = cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "scan.csv", ["index", *names, "rank", "objective"], rows)
        write_csv(out / "scan_timing.csv", ["index", "rank", "wall_time_s"], time_rows)
        summary = {}
        for r in cfg.ranks:
            lab = _rank_label(r)
            vals = np.array(values[lab], dtype=float)
            best = int(np.nanargmin(vals))
            summary[lab] = {"index": best, "theta": points[best], "objective": float(vals[best])}
        write_json(out / "scan_summary.json", summary)
    return rows


def _start_point(cfg: ExperimentConfig, ds: Dataset) -> dict | None:
    start = cfg.opt.get("start", "center")
    if start == "center":
        return None
    if start == "truth":
        ref = {**cfg.truth_hp}
        ref.setdefault("noise_var", ds.noise_var)
    else:
        ref = dict(start)
    missing = [n for n in cfg.space.names if n not in ref]
    if missing:
        raise ConfigError(f"config at optimize/start: no value for {missing}")
    return {n: ref[n] for n in cfg.space.names}


def run_optimize(cfg: ExperimentConfig, write: bool = True) -> EbResult:
    if cfg.space.dim == 0:
        raise ConfigError("config at search/params: nothing to optimize")
    ds = load_dataset(cfg)
    prob = build_problem(cfg, ds)
    rank = cfg.opt.get("rank", "dense")
    start = _start_point(cfg, ds)
    res = optimize(
        prob,
        cfg.space,
        rank,
        cfg.rsvd_seed,
        max_iters=cfg.opt.get("max_iters", 500),
        x_tol=cfg.opt.get("x_tol", 1e-4),
        f_tol=cfg.opt.get("f_tol", 1e-8),
        start=start,
        initial_step=cfg.opt.get("initial_step", 0.1),
    )
    if write:
        out = cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        start_val = prob(start, rank, cfg.rsvd_seed) if start is not None else None
        write_json(
            out / "optimize.json",
            {
                "theta_opt": res.theta_opt,
                "fixed": res.fixed,
                "objective_opt": res.objective_opt,
                "start": start,
                "objective_start": start_val,
                "rank": _rank_label(rank),
                "seed": res.seed,
                "converged": res.converged,
                "status": res.status,
                "n_evaluations": len(res.trace),
            },
        )
        names = cfg.space.names
        write_csv(
            out / "optimize_trace.csv",
            ["eval", *names, "objective"],
            [[i, *[t[n] for n in names], v] for i, (t, v) in enumerate(res.trace)],
        )
    return res


def _resample(img: np.ndarray, src: GridGeometry, dst: GridGeometry) -> np.ndarray:
    """Bilinear resampling between pixel-centre grids (edge values held)."""
    if (src.nx, src.ny, src.domain) == (dst.nx, dst.ny, dst.domain):
        return img
    f = interpolate.RegularGridInterpolator(
        (src.y_centers, src.x_centers), img.reshape(src.ny, src.nx), bounds_error=False, fill_value=None
    )
    pts = dst.points()
    q = np.column_stack(
        [np.clip(pts[:, 1], src.y_centers[0], src.y_centers[-1]), np.clip(pts[:, 0], src.x_centers[0], src.x_centers[-1])]
    )
    return f(q)


def _read_theta(cfg: ExperimentConfig, theta) -> dict:
    if theta is None:
        path = cfg.output_dir / "optimize.json"
        if not path.exists():
            raise DataError(f"no theta given and no {path}; run 'optimize' or pass --theta")
        theta = path
    if isinstance(theta, (str, Path)):
        try:
            theta = read_json(theta)
        except OSError as exc:
            raise DataError(f"cannot read theta file {theta}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"theta file {theta} is not valid JSON: {exc}") from exc
    if "theta_opt" in theta:
        theta = {**theta.get("fixed", {}), **theta["theta_opt"]}
    return {**cfg.space.fixed, **theta}


def posterior_at(cfg: ExperimentConfig, ds: Dataset, theta: dict, rank) -> PosteriorSummary:
    theta = dict(theta)
    var = theta.pop("noise_var", None)
    hp = HyperParams.from_dict(theta)
    G = cfg.forward_operator(cfg.recon_grid)
    prior = assemble_prior(cfg.recon_grid, hp)
    model = GaussLinModel(G, prior, np.full(G.rows, float(var if var is not None else ds.noise_var)))
    if rank in (None, "dense"):
        return posterior_dense(model, ds.y)
    update = lowrank_update(model, RsvdConfig(int(rank), cfg.rsvd_seed, cfg.oversample, cfg.power_iters), cfg.cheb)
    return posterior_lowrank(update, prior, compute_z(model, ds.y))


def run_reconstruct(cfg: ExperimentConfig, theta=None, label: str | None = None, write: bool = True) -> list[list]:
    """Posterior mean and variance at ``theta`` for each configured rank.

    ``theta`` is a dict, a JSON file (a plain hyperparameter dict or the
    ``optimize.json`` of an earlier run) or ``None`` for the latter in the
    output directory. One report row per rank is appended to
    ``reconstruct_report.csv``.
    """
    ds = load_dataset(cfg)
    th = _read_theta(cfg, theta)
    label = label or cfg.recon.get("label", "theta")
    ranks = cfg.recon.get("ranks", ["dense"])
    g = cfg.recon_grid
    ref = _resample(ds.truth, cfg.truth_grid, g)
    rows = []
    out = cfg.output_dir
    for r in ranks:
        post = posterior_at(cfg, ds, th, r)
        lab = _rank_label(r)
        try:
            p = psnr(ref, post.mean)
        except ValueError:
            p = math.nan
        rows.append([label, lab, json.dumps(th, sort_keys=True), p])
        if write:
            out.mkdir(parents=True, exist_ok=True)
            stem = f"{label}_r{lab}"
            mean_img = post.mean.reshape(g.ny, g.nx)
            var_img = post.variance.reshape(g.ny, g.nx)
            write_raw(out / f"mean_{stem}.bin", mean_img, what="posterior mean", theta=th, rank=lab)
            write_pgm(out / f"mean_{stem}.pgm", mean_img, what="posterior mean", theta=th, rank=lab)
            write_raw(out / f"var_{stem}.bin", var_img, what="posterior variance", theta=th, rank=lab)
            write_pgm(out / f"var_{stem}.pgm", var_img, what="posterior variance", theta=th, rank=lab)
    if write:
        write_csv(out / "reconstruct_report.csv", ["label", "rank", "theta", "psnr_mean_db"], rows, append=True)
    return rows
