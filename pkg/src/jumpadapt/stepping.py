"""Jump-adapted adaptive stepping.

The mesh superposes procedurally generated adaptive nodes with the jump
times, which are always hit exactly; the final node is always the
horizon T.  The step proposal clamps h_max / ||y||^(1/kappa) to
[h_min, h_max] with h_min = h_max / rho and truncates to the next jump
time and to T.  While the un-truncated candidate stays above h_min the
pre-step state is guaranteed inside the ball of radius rho**kappa, which
is what the main map's one-step error bound needs; when the candidate
collapses to h_min the backstop map is used instead.  By default any
realized step of length <= h_min runs the backstop ("literal" rule) and
steps that got there purely through jump/horizon truncation are counted
separately; set ``literal_backstop=False`` to restrict the backstop to
norm-collapsed steps.

In coupled error-measurement mode (fine-grid noise) proposed endpoints
are quantized down to the reference grid, with a minimum progress of one
grid cell, so that only jump times and T are off-grid and every consumed
interval is a union of refined cells.
"""

import dataclasses
import math

import numpy as np

from .maps import MapPair
from .noise import WienerSource


class PathAborted(RuntimeError):
    """Step budget exceeded; indicates a runaway configuration."""


@dataclasses.dataclass(frozen=True)
class StepParams:
    """Adaptive step-rule parameters.

    h_min is h_max / rho; the implied path bound for main-map steps is
    R = rho**kappa.
    """

    h_max: float
    rho: float = 2.0**7
    kappa: float = 1.0
    levy_terms: int = None

    def __post_init__(self):
        if not self.rho > 1:
            raise ValueError("rho must exceed 1")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if not 0 < self.h_min <= self.h_max <= 1:
            raise ValueError("need 0 < h_min <= h_max <= 1")

    @property
    def h_min(self):
        return self.h_max / self.rho

    @property
    def path_bound(self):
        return self.rho**self.kappa


@dataclasses.dataclass(frozen=True)
class StepOutcome:
    t_next: float
    state_before_jump: np.ndarray
    state_after_jump: np.ndarray
    h_used: float
    used_backstop: bool
    jump_applied: bool


@dataclasses.dataclass
class PathRecord:
    """One simulated trajectory: endpoint, counters, optional node log."""

    endpoint: np.ndarray
    n_steps: int
    n_jumps: int
    n_backstop: int
    n_backstop_jump_truncated: int
    nodes: list = dataclasses.field(default_factory=list)

    @property
    def times(self):
        return np.array([node.t_next for node in self.nodes])


def adaptive_candidate(y, params):
    """Un-truncated step candidate and whether it collapsed to h_min.

    Returns (clamp(h_max/||y||^(1/kappa), h_min, h_max), collapsed); the
    collapse flag is what routes the step to the backstop map.
    """
    norm = float(y @ y) ** 0.5
    if not math.isfinite(norm):
        raw = 0.0
    else:
        denom = norm ** (1.0 / params.kappa)
        raw = params.h_max if denom == 0.0 else params.h_max / denom
    collapsed = raw <= params.h_min
    return (params.h_min if collapsed else min(raw, params.h_max)), collapsed


def propose_step(y, t, params, next_jump, horizon):
    """Step length from the adaptive rule, truncated to jumps and horizon.

    Returns (h, use_backstop); use_backstop is True iff the adaptive
    candidate collapsed to h_min through the norm clamp.  Truncation by a
    jump time or by the horizon does not by itself trigger the backstop
    here (the stepping loop applies the literal sub-h_min rule on top).
    """
    if t >= horizon:
        raise ValueError("step proposed at or beyond the horizon")
    h, collapsed = adaptive_candidate(y, params)
    if next_jump is not None:
        h = min(h, next_jump - t)
    return min(h, horizon - t), collapsed


def advance(problem, y, t, h, use_backstop, noise, schedule, maps,
            t_next=None, jump_index=None, levy_terms=None):
    """Apply one hybrid step and, if t_next is a jump time, the jump.

    ``t_next`` defaults to t + h; the stepping loop passes the exact node
    time so jump times match without floating-point comparisons.  When
    ``jump_index`` is None the schedule is searched for an exact match.
    """
    if h <= 0:
        raise ValueError("step length must be positive")
    if t_next is None:
        t_next = t + h
    xi = noise.iterated(t, t_next, problem.noise_class, levy_terms=levy_terms)
    mapper = maps.backstop if use_backstop else maps.main
    before = mapper(y, h, xi, problem)
    if jump_index is None and len(schedule):
        k = int(np.searchsorted(schedule.times, t_next))
        if k < len(schedule) and schedule.times[k] == t_next:
            jump_index = k
    if jump_index is not None:
        after = before + problem.jump_coeff(schedule.marks[jump_index], before)
        applied = True
    else:
        after, applied = before, False
    return StepOutcome(
        t_next=t_next,
        state_before_jump=before,
        state_after_jump=after,
        h_used=h,
        used_backstop=use_backstop,
        jump_applied=applied,
    )


def _grid_floor(t, h_ref):
    return math.floor(t / h_ref + 1e-9) * h_ref


def simulate_path(problem, params, noise, schedule, maps=None, *,
                  quantize=None, literal_backstop=True, record_nodes=True,
                  trace=None):
    """Run the jump-adapted adaptive hybrid scheme from 0 to the horizon.

    Args:
      problem: the :class:`~jumpadapt.problems.SjdeProblem` to integrate.
      params: :class:`StepParams`.
      noise: a :class:`~jumpadapt.noise.WienerSource` owned by this path.
      schedule: the path's precomputed :class:`~jumpadapt.noise.JumpSchedule`.
      maps: :class:`~jumpadapt.maps.MapPair` (default Milstein + projected
        Milstein backstop).
      quantize: quantize proposed endpoints down to the source's grid;
        None means "iff the source is fine-grid coupled".
      literal_backstop: apply the backstop to every step of length
        <= h_min, not only to norm-collapsed ones.
      record_nodes: keep the full per-step log in the returned record.
      trace: optional callable(t_next, h, norm_y, used_backstop,
        jump_applied) invoked per step.

    Returns:
      :class:`PathRecord`; every jump time appears as a node and the last
      node is exactly the horizon.
    """
    if maps is None:
        maps = MapPair.default()
    if quantize is None:
        quantize = noise.mode == WienerSource.FINE_GRID
    h_ref = noise.h_ref if quantize else None

    horizon = problem.horizon
    jump_times = schedule.times
    t = 0.0
    y = problem.initial_state.copy()
    ji = 0
    n_steps = n_backstop = n_trunc = 0
    budget = math.ceil(horizon / params.h_min) + 2 * len(jump_times) + 2
    nodes = []

    while t < horizon:
        if n_steps >= budget:
            raise PathAborted(
                f"exceeded step budget {budget} at t={t} (h_min={params.h_min})"
            )
        h_cand, collapsed = adaptive_candidate(y, params)
        if h_ref is not None:
            target = _grid_floor(t + h_cand, h_ref)
            min_progress = _grid_floor(t, h_ref) + h_ref
            t_next = max(target, min_progress)
        else:
            t_next = t + h_cand
        jump_hit = ji < len(jump_times) and jump_times[ji] <= t_next
        if jump_hit:
            t_next = jump_times[ji]
        if t_next >= horizon and not jump_hit:
            t_next = horizon
        h_used = t_next - t
        use_backstop = collapsed or (literal_backstop and h_used <= params.h_min)
        out = advance(
            problem, y, t, h_used, use_backstop, noise, schedule, maps,
            t_next=t_next, jump_index=ji if jump_hit else None,
            levy_terms=params.levy_terms,
        )
        n_steps += 1
        n_backstop += use_backstop
        n_trunc += use_backstop and not collapsed
        if record_nodes:
            nodes.append(out)
        if trace is not None:
            trace(t_next, h_used, float(np.linalg.norm(out.state_after_jump)),
                  use_backstop, out.jump_applied)
        t = t_next
        y = out.state_after_jump
        ji += jump_hit

    return PathRecord(
        endpoint=y,
        n_steps=n_steps,
        n_jumps=ji,
        n_backstop=n_backstop,
        n_backstop_jump_truncated=n_trunc,
        nodes=nodes,
    )


def fixed_mesh_times(horizon, h_step, jump_times, quantize_h=None):
    """Node times of a jump-adapted fixed-step mesh.

    Multiples of h_step (optionally quantized down to a reference grid so
    coupled runs stay node-aligned) superposed with the jump times and the
    horizon.
    """
    n = int(math.floor(horizon / h_step + 1e-9))
    nodes = np.arange(1, n + 1) * h_step
    if quantize_h is not None:
        nodes = np.floor(nodes / quantize_h + 1e-9) * quantize_h
    nodes = np.concatenate([[0.0], nodes, np.asarray(jump_times, dtype=float), [horizon]])
    nodes = np.unique(nodes)
    return nodes[(nodes >= 0.0) & (nodes <= horizon)]


def run_fixed_mesh(problem, h_step, noise, schedule, one_map, *,
                   quantize=None, levy_terms=None):
    """March a single one-step map over a jump-adapted fixed mesh."""
    if quantize is None:
        quantize = noise.mode == WienerSource.FINE_GRID
    times = fixed_mesh_times(
        problem.horizon, h_step, schedule.times,
        quantize_h=noise.h_ref if quantize else None,
    )
    return march(problem, times, noise, schedule, one_map, levy_terms=levy_terms)


def march(problem, times, noise, schedule, one_map, levy_terms=None):
    """Apply ``one_map`` over consecutive nodes, applying jumps at their times.

    ``times`` must be strictly increasing from 0 to the horizon and contain
    every jump time exactly.
    """
    jump_at = {float(tau): k for k, tau in enumerate(schedule.times)}
    y = problem.initial_state.copy()
    n_jumps = 0
    steps = noise.step_integrals(times, problem.noise_class, levy_terms=levy_terms)
    for b, xi in zip(times[1:], steps):
        y = one_map(y, xi.h, xi, problem)
        k = jump_at.get(float(b))
        if k is not None:
            y = y + problem.jump_coeff(schedule.marks[k], y)
            n_jumps += 1
    return PathRecord(
        endpoint=y,
        n_steps=len(times) - 1,
        n_jumps=n_jumps,
        n_backstop=0,
        n_backstop_jump_truncated=0,
    )
