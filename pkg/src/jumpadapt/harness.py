"""Monte Carlo experiment engine.

Convergence mode couples every scheme to a fine reference solution: per
path, one fine-grid Wiener source and one jump schedule are built from
the path's streams, the adaptive scheme runs once per h_max on that
source, the reference (projected Milstein at spacing h_ref on the grid
superposed with the jump times) runs once, and the fixed-step comparator
schemes re-run on an identically reconstructed source using the mean
realized non-jump step

    h_mean = (1/M) sum_m T / (N_m - Nbar_m)

of the adaptive runs (jump counts are subtracted because jump times are
superposed on the comparator meshes again).  Root-mean-square endpoint
errors and fitted log2-log2 slopes land in an :class:`ErrorTable`.

Efficiency mode re-runs every scheme with independent on-demand noise
and no reference, recording wall-clock stepping time per path.  Backstop
mode sweeps rho and reports the empirical frequency of steps at or below
h_min.

Results are deterministic functions of (config, master_seed): paths are
keyed by index, so any worker count produces identical tables.
"""

import contextlib
import dataclasses
import math
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import rng as streams
from .maps import MapError, MapPair, make_map
from .noise import WienerSource, sample_jump_schedule
from .problems import get_problem, PROBLEM_IDS
from .stepping import PathAborted, StepParams, run_fixed_mesh, march, simulate_path

ADAPTIVE_SCHEME = "ja-amm"
FIXED_SCHEMES = ("pmil", "ssbm", "tmil")
REFERENCE_MAP = "pmil"


class ExperimentError(RuntimeError):
    """A path failed inside an experiment; names the path and scheme."""


@contextlib.contextmanager
def _path_context(path, scheme):
    try:
        yield
    except (PathAborted, MapError) as exc:
        raise ExperimentError(f"path {path}, scheme {scheme}: {exc}") from exc


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Plain-data description of one experiment (picklable for workers)."""

    problem: str
    h_max_list: tuple
    h_ref: float
    n_paths: int
    sigma: float = 0.2
    intensity: float = None          # None = problem default
    initial_state: tuple = None
    schemes: tuple = (ADAPTIVE_SCHEME,) + FIXED_SCHEMES
    main_map: str = "milstein"
    backstop_map: str = "pmil"
    rho: float = 2.0**7
    kappa: float = 1.0
    master_seed: int = 12345
    mode: str = "convergence"
    workers: int = 1
    literal_backstop: bool = True
    levy_terms: int = None
    projection_scale: float = 0.25
    rho_list: tuple = None           # backstop mode only

    def validate(self):
        if self.problem not in PROBLEM_IDS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if not self.h_max_list:
            raise ValueError("h_max_list must be non-empty")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.schemes:
            raise ValueError("schemes must be non-empty")
        known = (ADAPTIVE_SCHEME,) + FIXED_SCHEMES
        for s in self.schemes:
            if s not in known:
                raise ValueError(f"unknown scheme {s!r}; known: {', '.join(known)}")
        if self.h_ref > min(self.h_max_list) / 4.0:
            raise ValueError("h_ref must be <= min(h_max)/4")
        if self.mode not in ("convergence", "efficiency", "backstop"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "backstop" and not self.rho_list:
            raise ValueError("backstop mode needs rho_list")
        return self

    def build_problem(self):
        return get_problem(
            self.problem,
            sigma=self.sigma,
            intensity=self.intensity,
            initial_state=self.initial_state,
        )

    def map_pair(self):
        return MapPair(main=self._map(self.main_map), backstop=self._map(self.backstop_map))

    def _map(self, map_id):
        if map_id == "pmil":
            return make_map("pmil", theta=self.projection_scale)
        return make_map(map_id)

    def step_params(self, h_max, rho=None):
        return StepParams(h_max=h_max, rho=rho if rho is not None else self.rho,
                          kappa=self.kappa, levy_terms=self.levy_terms)


@dataclasses.dataclass
class ErrorRow:
    h_max: float
    scheme: str
    h_mean: float
    rms_error: float = None
    stderr: float = None
    backstop_freq: float = None
    jump_trunc_freq: float = None
    mean_steps: float = None
    mean_cpu_s: float = None


@dataclasses.dataclass
class ErrorTable:
    """Rows plus fitted convergence slopes.

    ``slopes`` fits log2 rms against log2 h_mean (the plotting axis, where
    comparators actually run); ``slopes_h_max`` fits against log2 h_max
    (the axis of the order-delta error bound).  The two agree while
    h_mean tracks h_max, and separate once jumps dominate the mesh
    (lambda * h_max near 1), where T/(N - Nbar) rides above h_max.
    """

    rows: list
    slopes: dict = dataclasses.field(default_factory=dict)
    slopes_h_max: dict = dataclasses.field(default_factory=dict)

    def rows_for(self, scheme):
        return [r for r in self.rows if r.scheme == scheme]

    def slope_for(self, scheme, axis="h_mean"):
        table = self.slopes if axis == "h_mean" else self.slopes_h_max
        return table.get(scheme, (math.nan, math.nan, math.nan))[0]


def _fit(xs, ys):
    x = np.log2(xs)
    y = np.log2(ys)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), float(intercept), resid


def fit_slopes(table):
    """Least-squares slopes per scheme on both step-size axes."""
    for scheme in sorted({r.scheme for r in table.rows}):
        rows = [r for r in table.rows_for(scheme) if r.rms_error and r.rms_error > 0]
        if len(rows) < 2:
            continue
        errs = [r.rms_error for r in rows]
        table.slopes[scheme] = _fit([r.h_mean for r in rows], errs)
        table.slopes_h_max[scheme] = _fit([r.h_max for r in rows], errs)
    return table


def _rms_and_stderr(sq_errors):
    """RMS of vector errors plus a delta-method standard error of the RMS."""
    mse = float(np.mean(sq_errors))
    rms = math.sqrt(mse)
    if rms == 0.0 or len(sq_errors) < 2:
        return rms, 0.0
    se_mse = float(np.std(sq_errors, ddof=1)) / math.sqrt(len(sq_errors))
    return rms, se_mse / (2.0 * rms)


def path_noise(cfg, problem, path_index, coupled, salt=0, schedule=None):
    """Build the (schedule, source) pair of one path from its streams."""
    if schedule is None:
        schedule = sample_jump_schedule(
            problem.intensity, problem.horizon, problem.mark_sampler,
            streams.jump_stream(cfg.master_seed, path_index, salt=salt),
        )
    wrng = streams.wiener_stream(cfg.master_seed, path_index, salt=salt)
    if coupled:
        source = WienerSource.fine_grid(
            problem.drivers, problem.horizon, cfg.h_ref, wrng,
            split_times=schedule.times,
            levy_areas=problem.noise_class.needs_levy_areas,
            levy_terms=cfg.levy_terms,
        )
    else:
        source = WienerSource.on_demand(problem.drivers, wrng)
    return schedule, source


def run_reference(problem, schedule, noise, h_ref, map_id=REFERENCE_MAP, theta=0.25):
    """Fixed-step reference endpoint on the fine grid superposed with jumps."""
    if noise.mode != WienerSource.FINE_GRID:
        raise ValueError("reference run needs a fine-grid source")
    if not math.isclose(noise.h_ref, h_ref, rel_tol=1e-12):
        raise ValueError("h_ref does not match the source spacing")
    one_map = make_map(map_id, theta=theta) if map_id == "pmil" else make_map(map_id)
    record = march(problem, noise.refined_times(), noise, schedule, one_map)
    return record.endpoint


def reference_self_check(cfg, n_paths=None):
    """Self-consistency ratio of the reference integrator (diagnostic).

    Couples reference runs at spacings 2*h_ref and h_ref to one at h_ref/4
    and returns mean|Y_{2h} - Y_h| / mean|Y_h - Y_{h/4}|, which sits near 2
    when the reference converges at order one in its operating regime.
    """
    problem = cfg.build_problem()
    n = min(cfg.n_paths, 50) if n_paths is None else n_paths
    fine_h = cfg.h_ref / 4.0
    pmil = make_map(REFERENCE_MAP, theta=cfg.projection_scale)
    coarse, mid = [], []
    for path in range(n):
        schedule = sample_jump_schedule(
            problem.intensity, problem.horizon, problem.mark_sampler,
            streams.jump_stream(cfg.master_seed, path),
        )
        source = WienerSource.fine_grid(
            problem.drivers, problem.horizon, fine_h,
            streams.wiener_stream(cfg.master_seed, path),
            split_times=schedule.times,
            levy_areas=problem.noise_class.needs_levy_areas,
            levy_terms=cfg.levy_terms,
        )
        ends = {
            h: run_fixed_mesh(problem, h, source, schedule, pmil,
                              levy_terms=cfg.levy_terms).endpoint
            for h in (2.0 * cfg.h_ref, cfg.h_ref)
        }
        fine = run_reference(problem, schedule, source, fine_h,
                             theta=cfg.projection_scale)
        coarse.append(np.linalg.norm(ends[2.0 * cfg.h_ref] - ends[cfg.h_ref]))
        mid.append(np.linalg.norm(ends[cfg.h_ref] - fine))
    denom = float(np.mean(mid))
    return float(np.mean(coarse)) / denom if denom > 0 else math.inf


# -- worker-pool plumbing --------------------------------------------------


def _chunks(n_paths, workers):
    size = max(1, math.ceil(n_paths / (workers * 4)))
    return [range(lo, min(lo + size, n_paths)) for lo in range(0, n_paths, size)]


def _map_paths(cfg, worker, extra=()):
    """Run ``worker(cfg, indices, *extra)`` over all paths, possibly in parallel.

    Results are stitched back in path order, so the output is identical
    for any worker count.
    """
    if cfg.workers <= 1:
        return worker(cfg, range(cfg.n_paths), *extra)
    parts = []
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [
            pool.submit(worker, cfg, indices, *extra)
            for indices in _chunks(cfg.n_paths, cfg.workers)
        ]
        parts = [f.result() for f in futures]
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


def _pass1_worker(cfg, indices, h_list):
    """Per path: reference endpoint plus one adaptive run per h_max."""
    problem = cfg.build_problem()
    maps = cfg.map_pair()
    n = len(indices)
    d = problem.dim
    out = {
        "ref": np.empty((n, d)),
        "amm": np.empty((n, len(h_list), d)),
        "steps": np.empty((n, len(h_list))),
        "jumps": np.empty((n, len(h_list))),
        "backstop": np.empty((n, len(h_list))),
        "trunc": np.empty((n, len(h_list))),
    }
    for row, path in enumerate(indices):
        schedule, source = path_noise(cfg, problem, path, coupled=True)
        with _path_context(path, "reference"):
            out["ref"][row] = run_reference(
                problem, schedule, source, cfg.h_ref, theta=cfg.projection_scale
            )
        for k, h_max in enumerate(h_list):
            with _path_context(path, ADAPTIVE_SCHEME):
                rec = simulate_path(
                    problem, cfg.step_params(h_max), source, schedule, maps,
                    literal_backstop=cfg.literal_backstop, record_nodes=False,
                )
            out["amm"][row, k] = rec.endpoint
            out["steps"][row, k] = rec.n_steps
            out["jumps"][row, k] = rec.n_jumps
            out["backstop"][row, k] = rec.n_backstop
            out["trunc"][row, k] = rec.n_backstop_jump_truncated
    return out


def _pass2_worker(cfg, indices, scheme, h_mean_list):
    """Per path: fixed-step comparator endpoints at each h_mean."""
    problem = cfg.build_problem()
    one_map = cfg._map(scheme)
    n = len(indices)
    out = {"end": np.empty((n, len(h_mean_list), problem.dim))}
    for row, path in enumerate(indices):
        schedule, source = path_noise(cfg, problem, path, coupled=True)
        for k, h_step in enumerate(h_mean_list):
            with _path_context(path, scheme):
                out["end"][row, k] = run_fixed_mesh(
                    problem, h_step, source, schedule, one_map,
                    levy_terms=cfg.levy_terms,
                ).endpoint
    return out


def convergence_experiment(cfg):
    """Coupled strong-error study over cfg.h_max_list; returns an ErrorTable."""
    cfg.validate()
    problem = cfg.build_problem()
    h_list = tuple(cfg.h_max_list)
    res = _map_paths(cfg, _pass1_worker, extra=(h_list,))

    horizon = problem.horizon
    h_mean = {}
    rows = []
    for k, h_max in enumerate(h_list):
        eff_steps = np.maximum(res["steps"][:, k] - res["jumps"][:, k], 1.0)
        h_mean[h_max] = float(np.mean(horizon / eff_steps))
        sq = np.sum((res["amm"][:, k] - res["ref"]) ** 2, axis=1)
        rms, se = _rms_and_stderr(sq)
        total = float(np.sum(res["steps"][:, k]))
        rows.append(ErrorRow(
            h_max=h_max,
            scheme=ADAPTIVE_SCHEME,
            h_mean=h_mean[h_max],
            rms_error=rms,
            stderr=se,
            backstop_freq=float(np.sum(res["backstop"][:, k])) / total,
            jump_trunc_freq=float(np.sum(res["trunc"][:, k])) / total,
            mean_steps=float(np.mean(res["steps"][:, k])),
        ))

    h_mean_list = tuple(h_mean[h] for h in h_list)
    for scheme in cfg.schemes:
        if scheme == ADAPTIVE_SCHEME:
            continue
        res2 = _map_paths(cfg, _pass2_worker, extra=(scheme, h_mean_list))
        for k, h_max in enumerate(h_list):
            sq = np.sum((res2["end"][:, k] - res["ref"]) ** 2, axis=1)
            rms, se = _rms_and_stderr(sq)
            rows.append(ErrorRow(
                h_max=h_max,
                scheme=scheme,
                h_mean=h_mean_list[k],
                rms_error=rms,
                stderr=se,
                mean_steps=float(horizon / h_mean_list[k]) + float(np.mean(res["jumps"][:, k])),
            ))

    table = ErrorTable(rows=[r for r in rows if r.scheme in cfg.schemes])
    return fit_slopes(table)


def _efficiency_adaptive_worker(cfg, indices, h_list):
    problem = cfg.build_problem()
    maps = cfg.map_pair()
    n = len(indices)
    out = {
        "steps": np.empty((n, len(h_list))),
        "jumps": np.empty((n, len(h_list))),
        "cpu": np.empty((n, len(h_list))),
    }
    for row, path in enumerate(indices):
        for k, h_max in enumerate(h_list):
            schedule, source = path_noise(cfg, problem, path, coupled=False, salt=k)
            tic = time.perf_counter()
            with _path_context(path, ADAPTIVE_SCHEME):
                rec = simulate_path(
                    problem, cfg.step_params(h_max), source, schedule, maps,
                    literal_backstop=cfg.literal_backstop, record_nodes=False,
                )
            out["cpu"][row, k] = time.perf_counter() - tic
            out["steps"][row, k] = rec.n_steps
            out["jumps"][row, k] = rec.n_jumps
    return out


def _efficiency_fixed_worker(cfg, indices, scheme, scheme_salt, h_mean_list):
    problem = cfg.build_problem()
    one_map = cfg._map(scheme)
    n = len(indices)
    out = {"cpu": np.empty((n, len(h_mean_list))), "steps": np.empty((n, len(h_mean_list)))}
    for row, path in enumerate(indices):
        for k, h_step in enumerate(h_mean_list):
            salt = (scheme_salt + 1) * len(h_mean_list) + k
            schedule, source = path_noise(cfg, problem, path, coupled=False, salt=salt)
            tic = time.perf_counter()
            with _path_context(path, scheme):
                rec = run_fixed_mesh(problem, h_step, source, schedule, one_map,
                                     levy_terms=cfg.levy_terms)
            out["cpu"][row, k] = time.perf_counter() - tic
            out["steps"][row, k] = rec.n_steps
    return out


def efficiency_experiment(cfg):
    """Uncoupled timing study; wall-clock covers stepping only."""
    cfg.validate()
    problem = cfg.build_problem()
    h_list = tuple(cfg.h_max_list)
    res = _map_paths(cfg, _efficiency_adaptive_worker, extra=(h_list,))

    rows = []
    h_mean_list = []
    for k, h_max in enumerate(h_list):
        eff_steps = np.maximum(res["steps"][:, k] - res["jumps"][:, k], 1.0)
        h_mean_list.append(float(np.mean(problem.horizon / eff_steps)))
        rows.append(ErrorRow(
            h_max=h_max,
            scheme=ADAPTIVE_SCHEME,
            h_mean=h_mean_list[k],
            mean_steps=float(np.mean(res["steps"][:, k])),
            mean_cpu_s=float(np.mean(res["cpu"][:, k])),
        ))
    for si, scheme in enumerate(cfg.schemes):
        if scheme == ADAPTIVE_SCHEME:
            continue
        res2 = _map_paths(cfg, _efficiency_fixed_worker,
                          extra=(scheme, si, tuple(h_mean_list)))
        for k, h_max in enumerate(h_list):
            rows.append(ErrorRow(
                h_max=h_max,
                scheme=scheme,
                h_mean=h_mean_list[k],
                mean_steps=float(np.mean(res2["steps"][:, k])),
                mean_cpu_s=float(np.mean(res2["cpu"][:, k])),
            ))
    return ErrorTable(rows=[r for r in rows if r.scheme in cfg.schemes])


def _backstop_worker(cfg, indices, rho_list, h_max):
    problem = cfg.build_problem()
    maps = cfg.map_pair()
    n = len(indices)
    out = {
        "steps": np.zeros((n, len(rho_list))),
        "backstop": np.zeros((n, len(rho_list))),
        "trunc": np.zeros((n, len(rho_list))),
    }
    for row, path in enumerate(indices):
        for k, rho in enumerate(rho_list):
            schedule, source = path_noise(cfg, problem, path, coupled=False)
            with _path_context(path, ADAPTIVE_SCHEME):
                rec = simulate_path(
                    problem, cfg.step_params(h_max, rho=rho), source, schedule, maps,
                    literal_backstop=cfg.literal_backstop, record_nodes=False,
                )
            out["steps"][row, k] = rec.n_steps
            out["backstop"][row, k] = rec.n_backstop
            out["trunc"][row, k] = rec.n_backstop_jump_truncated
    return out


@dataclasses.dataclass
class BackstopRow:
    rho: float
    h_min: float
    freq: float
    freq_norm: float
    freq_jump_trunc: float
    jump_term_bound: float


def backstop_experiment(cfg):
    """Empirical P[h <= h_min] per rho, with the jump-term reference bound."""
    cfg.validate()
    if cfg.kappa < 1:
        raise ValueError("backstop experiment expects kappa >= 1")
    problem = cfg.build_problem()
    h_max = max(cfg.h_max_list)
    rho_list = tuple(cfg.rho_list)
    res = _map_paths(cfg, _backstop_worker, extra=(rho_list, h_max))
    rows = []
    for k, rho in enumerate(rho_list):
        total = float(np.sum(res["steps"][:, k]))
        freq = float(np.sum(res["backstop"][:, k])) / total
        trunc = float(np.sum(res["trunc"][:, k])) / total
        rows.append(BackstopRow(
            rho=rho,
            h_min=h_max / rho,
            freq=freq,
            freq_norm=freq - trunc,
            freq_jump_trunc=trunc,
            jump_term_bound=1.0 - math.exp(-problem.intensity * h_max / rho),
        ))
    return rows
