import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpadapt import rng as streams
from jumpadapt.maps import MapPair, make_map
from jumpadapt.noise import JumpSchedule, WienerSource, sample_jump_schedule
from jumpadapt.problems import NoiseClass, SjdeProblem, gaussian_marks, get_problem
from jumpadapt.stepping import (
    StepParams,
    advance,
    adaptive_candidate,
    fixed_mesh_times,
    propose_step,
    run_fixed_mesh,
    simulate_path,
)


def pure_jump_problem(intensity=5.0, x0=0.5):
    zero = lambda *a: np.zeros(1)
    return SjdeProblem(
        dim=1, drivers=1,
        drift=zero,
        diffusion_col=lambda i, x: np.zeros(1),
        diffusion_correction=lambda i, j, x: np.zeros(1),
        jump_coeff=lambda z, x: z[0] * x,
        mark_sampler=gaussian_marks(0.1),
        intensity=intensity,
        initial_state=np.array([x0]),
        horizon=1.0,
        noise_class=NoiseClass.ADDITIVE,
    )


def empty_schedule(horizon=1.0):
    return JumpSchedule(np.empty(0), np.empty((0, 1)), horizon)


def test_step_params_validation():
    p = StepParams(h_max=2.0**-5, rho=2.0**7, kappa=1.0)
    assert p.h_min == 2.0**-12
    assert p.path_bound == 2.0**7
    with pytest.raises(ValueError):
        StepParams(h_max=2.0**-5, rho=0.5)
    with pytest.raises(ValueError):
        StepParams(h_max=2.0, rho=4.0)
    with pytest.raises(ValueError):
        StepParams(h_max=0.25, rho=4.0, kappa=0.0)


def test_propose_step_unit_norm_gives_h_max():
    params = StepParams(h_max=2.0**-5, rho=2.0**7)
    h, backstop = propose_step(np.array([1.0]), 0.0, params, None, 1.0)
    assert h == params.h_max and not backstop


def test_propose_step_norm_collapse_triggers_backstop():
    params = StepParams(h_max=2.0**-5, rho=2.0**7, kappa=1.0)
    h, backstop = propose_step(np.array([2.0**8]), 0.0, params, None, 1.0)
    assert h == params.h_min and backstop


def test_propose_step_jump_truncation_keeps_main_map():
    params = StepParams(h_max=2.0**-5, rho=2.0**7)
    t, jump = 0.25, 0.25 + 2.0**-7
    h, backstop = propose_step(np.array([0.5]), t, params, jump, 1.0)
    assert h == pytest.approx(jump - t)
    assert not backstop


def test_propose_step_final_truncation():
    params = StepParams(h_max=2.0**-3, rho=2.0**3)
    h, backstop = propose_step(np.array([0.5]), 0.95, params, None, 1.0)
    assert h == pytest.approx(0.05) and not backstop
    with pytest.raises(ValueError):
        propose_step(np.array([0.5]), 1.0, params, None, 1.0)


@settings(max_examples=200, deadline=None)
@given(
    norm=st.floats(min_value=0.0, max_value=1e6, allow_nan=False),
    log2rho=st.integers(min_value=1, max_value=10),
    kappa=st.floats(min_value=0.25, max_value=4.0),
)
def test_candidate_bounds_and_gate_property(norm, log2rho, kappa):
    params = StepParams(h_max=2.0**-4, rho=2.0**log2rho, kappa=kappa)
    h, collapsed = adaptive_candidate(np.array([norm]), params)
    assert params.h_min <= h <= params.h_max
    if not collapsed:
        # main-map gate: un-collapsed candidates certify ||y|| < rho**kappa
        assert norm < params.path_bound


def test_advance_zero_gamma_keeps_states_equal():
    p = get_problem("1d-mult", intensity=0.0)
    src = WienerSource.on_demand(1, streams.wiener_stream(0, 0))
    out = advance(p, p.initial_state, 0.0, 0.01, False, src, empty_schedule(), MapPair.default())
    assert np.array_equal(out.state_before_jump, out.state_after_jump)
    assert not out.jump_applied


def test_advance_pure_jump_action():
    p = pure_jump_problem()
    sched = JumpSchedule(np.array([0.5]), np.array([[0.25]]), 1.0)
    src = WienerSource.on_demand(1, streams.wiener_stream(0, 0))
    out = advance(p, np.array([2.0]), 0.25, 0.25, False, src, sched, MapPair.default())
    assert out.state_before_jump[0] == 2.0  # Milstein reduces to identity
    assert out.state_after_jump[0] == pytest.approx(2.0 * 1.25, rel=1e-15)
    assert out.jump_applied


def test_advance_rejects_nonpositive_step():
    p = pure_jump_problem()
    src = WienerSource.on_demand(1, streams.wiener_stream(0, 0))
    with pytest.raises(ValueError):
        advance(p, np.array([1.0]), 0.0, 0.0, False, src, empty_schedule(), MapPair.default())


def test_deterministic_no_jump_path_step_count():
    p = pure_jump_problem(intensity=0.0)
    src = WienerSource.on_demand(1, streams.wiener_stream(1, 0))
    rec = simulate_path(p, StepParams(h_max=2.0**-5, rho=2.0**5), src, empty_schedule())
    assert rec.endpoint[0] == 0.5
    assert rec.n_steps in (32, 33)
    assert rec.nodes[-1].t_next == 1.0
    assert rec.n_backstop == 0


def test_pure_jump_product_closed_form():
    p = pure_jump_problem(intensity=8.0)
    for path in range(50):
        sched = sample_jump_schedule(8.0, 1.0, p.mark_sampler, streams.jump_stream(3, path))
        src = WienerSource.on_demand(1, streams.wiener_stream(3, path))
        rec = simulate_path(p, StepParams(h_max=2.0**-4, rho=2.0**4), src, sched)
        expected = 0.5 * np.prod(1.0 + sched.marks[:, 0])
        assert rec.endpoint[0] == pytest.approx(expected, rel=1e-13)
        assert rec.n_jumps == len(sched)


def test_mesh_contains_jumps_sums_to_horizon():
    p = get_problem("1d-mult", intensity=6.0)
    for path in range(30):
        sched = sample_jump_schedule(6.0, 1.0, p.mark_sampler, streams.jump_stream(4, path))
        src = WienerSource.on_demand(1, streams.wiener_stream(4, path))
        params = StepParams(h_max=2.0**-5, rho=2.0**7)
        rec = simulate_path(p, params, src, sched)
        times = rec.times
        assert set(sched.times.tolist()) <= set(times.tolist())
        assert times[-1] == 1.0
        assert np.all(np.diff(np.concatenate([[0.0], times])) > 0)
        h_used = np.array([n.h_used for n in rec.nodes])
        assert abs(h_used.sum() - 1.0) <= 1e-12
        assert np.all(h_used <= params.h_max * (1 + 1e-12))


def test_main_map_gate_along_paths():
    p = get_problem("1d-mult", intensity=4.0)
    params = StepParams(h_max=2.0**-4, rho=2.0**3, kappa=1.0)
    for path in range(10):
        sched = sample_jump_schedule(4.0, 1.0, p.mark_sampler, streams.jump_stream(5, path))
        src = WienerSource.on_demand(1, streams.wiener_stream(5, path))
        rec = simulate_path(p, params, src, sched)
        state = p.initial_state
        for node in rec.nodes:
            if not node.used_backstop:
                assert float(np.linalg.norm(state)) < params.path_bound
            state = node.state_after_jump


def test_literal_backstop_switch():
    # a jump closer than h_min forces a sub-h_min step: backstop under the
    # literal rule, main map when the switch is off
    p = pure_jump_problem(intensity=0.0)
    params = StepParams(h_max=2.0**-3, rho=2.0**2)  # h_min = 2^-5
    tau = float(params.h_min / 4.0)
    sched = JumpSchedule(np.array([tau]), np.array([[0.1]]), 1.0)
    src = WienerSource.on_demand(1, streams.wiener_stream(6, 0))
    rec = simulate_path(p, params, src, sched, literal_backstop=True)
    assert rec.n_backstop >= 1
    assert rec.n_backstop_jump_truncated >= 1
    assert rec.nodes[0].used_backstop and rec.nodes[0].h_used == tau
    src = WienerSource.on_demand(1, streams.wiener_stream(6, 0))
    rec2 = simulate_path(p, params, src, sched, literal_backstop=False)
    assert rec2.n_backstop == 0


def test_lambda_zero_reduction_matches_plain_adaptive_loop():
    # independent re-implementation of the gamma == 0 adaptive Milstein loop
    p = get_problem("1d-mult", intensity=0.0)
    params = StepParams(h_max=2.0**-5, rho=2.0**7)
    pair = MapPair.default()
    for path in range(5):
        src = WienerSource.on_demand(1, streams.wiener_stream(7, path))
        rec = simulate_path(p, params, src, empty_schedule(), pair)

        src2 = WienerSource.on_demand(1, streams.wiener_stream(7, path))
        t, y = 0.0, p.initial_state.copy()
        while t < 1.0:
            h, collapsed = adaptive_candidate(y, params)
            t_next = min(t + h, 1.0)
            h = t_next - t
            backstop = collapsed or h <= params.h_min
            xi = src2.iterated(t, t_next, p.noise_class)
            mapper = pair.backstop if backstop else pair.main
            y = mapper(y, h, xi, p)
            t = t_next
        assert abs(rec.endpoint[0] - y[0]) <= 1e-12


def test_backstop_frequency_decreases_with_rho():
    p = get_problem("1d-mult", intensity=2.0)
    freqs = {}
    for rho in (2.0**3, 2.0**7):
        used = total = 0
        for path in range(100):
            sched = sample_jump_schedule(2.0, 1.0, p.mark_sampler, streams.jump_stream(8, path))
            src = WienerSource.on_demand(1, streams.wiener_stream(8, path))
            rec = simulate_path(p, StepParams(h_max=2.0**-5, rho=rho), src, sched)
            used += rec.n_backstop
            total += rec.n_steps
        freqs[rho] = used / total
    assert freqs[2.0**7] <= freqs[2.0**3]


def test_fixed_mesh_times_structure():
    jumps = np.array([0.1239, 0.777])
    times = fixed_mesh_times(1.0, 0.1, jumps)
    assert times[0] == 0.0 and times[-1] == 1.0
    assert set(jumps.tolist()) <= set(times.tolist())
    q = fixed_mesh_times(1.0, 0.1, jumps, quantize_h=2.0**-6)
    on_grid = [t for t in q if t not in (0.0, 1.0) and t not in jumps.tolist()]
    assert all(abs(t / 2.0**-6 - round(t / 2.0**-6)) < 1e-9 for t in on_grid)


def test_run_fixed_mesh_pure_jump():
    p = pure_jump_problem(intensity=6.0)
    sched = sample_jump_schedule(6.0, 1.0, p.mark_sampler, streams.jump_stream(9, 0))
    src = WienerSource.on_demand(1, streams.wiener_stream(9, 0))
    rec = run_fixed_mesh(p, 0.05, src, sched, make_map("milstein"))
    expected = 0.5 * np.prod(1.0 + sched.marks[:, 0])
    assert rec.endpoint[0] == pytest.approx(expected, rel=1e-13)
    assert rec.n_steps == len(fixed_mesh_times(1.0, 0.05, sched.times)) - 1


def test_quantized_path_nodes_on_grid_or_jumps():
    p = get_problem("1d-mult", intensity=5.0)
    h_ref = 2.0**-9
    sched = sample_jump_schedule(5.0, 1.0, p.mark_sampler, streams.jump_stream(10, 2))
    src = WienerSource.fine_grid(1, 1.0, h_ref, streams.wiener_stream(10, 2),
                                 split_times=sched.times)
    rec = simulate_path(p, StepParams(h_max=2.0**-5, rho=2.0**7), src, sched)
    special = set(sched.times.tolist()) | {1.0}
    for t in rec.times:
        if t not in special:
            assert abs(t / h_ref - round(t / h_ref)) < 1e-9


def test_vector_marks_supported():
    # mark vectors of dimension > 1 flow through schedule and jump_coeff
    def marks2(rng, size):
        return rng.normal(0.0, 0.1, size=(size, 2))

    p = SjdeProblem(
        dim=1, drivers=1,
        drift=lambda x: np.zeros(1),
        diffusion_col=lambda i, x: np.zeros(1),
        diffusion_correction=lambda i, j, x: np.zeros(1),
        jump_coeff=lambda z, x: z[0] * x + z[1] * np.ones(1),
        mark_sampler=marks2,
        intensity=4.0,
        initial_state=np.array([0.5]),
        horizon=1.0,
        noise_class=NoiseClass.ADDITIVE,
    )
    sched = sample_jump_schedule(4.0, 1.0, p.mark_sampler, streams.jump_stream(12, 0))
    assert sched.marks.shape == (len(sched), 2)
    src = WienerSource.on_demand(1, streams.wiener_stream(12, 0))
    rec = simulate_path(p, StepParams(h_max=2.0**-4, rho=2.0**4), src, sched)
    expected = 0.5
    for z in sched.marks:
        expected = expected * (1.0 + z[0]) + z[1]
    assert rec.endpoint[0] == pytest.approx(expected, rel=1e-13)
