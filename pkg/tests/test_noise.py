import math

import numpy as np
import pytest
import scipy.stats

from jumpadapt import rng as streams
from jumpadapt.noise import (
    IteratedIntegrals,
    JumpSchedule,
    WienerSource,
    levy_terms_for,
    sample_iterated,
    sample_jump_schedule,
    sample_levy_areas,
)
from jumpadapt.problems import NoiseClass, gaussian_marks

MARKS = gaussian_marks(0.1)


def _rng(seed=0):
    return np.random.default_rng(seed)


# -- jump schedules ---------------------------------------------------------


def test_zero_intensity_gives_empty_schedule():
    s = sample_jump_schedule(0.0, 1.0, MARKS, _rng())
    assert len(s) == 0
    assert s.count(1.0) == 0


def test_schedule_validation_errors():
    with pytest.raises(ValueError):
        sample_jump_schedule(2.0, 0.0, MARKS, _rng())
    with pytest.raises(ValueError):
        sample_jump_schedule(-1.0, 1.0, MARKS, _rng())
    with pytest.raises(ValueError):
        JumpSchedule(np.array([0.5, 0.4]), np.zeros((2, 1)), 1.0)
    with pytest.raises(ValueError):
        JumpSchedule(np.array([0.5, 1.2]), np.zeros((2, 1)), 1.0)


def test_schedule_times_sorted_in_range():
    for seed in range(20):
        s = sample_jump_schedule(5.0, 1.0, MARKS, _rng(seed))
        if len(s):
            assert np.all(np.diff(s.times) > 0)
            assert s.times[0] > 0 and s.times[-1] <= 1.0
        assert s.marks.shape == (len(s), 1)


def test_jump_count_matches_poisson_mean():
    # Poisson(lam*T) oracle: mean within 3*sqrt(lam*T/n)
    lam, n = 2.0, 10_000
    rng = _rng(42)
    counts = np.array([len(sample_jump_schedule(lam, 1.0, MARKS, rng)) for _ in range(n)])
    assert abs(counts.mean() - lam) <= 3.0 * math.sqrt(lam / n)


def test_jump_count_chi_squared_goodness_of_fit():
    lam, n = 2.0, 10_000
    rng = _rng(7)
    counts = np.array([len(sample_jump_schedule(lam, 1.0, MARKS, rng)) for _ in range(n)])
    kmax = 8  # pool the tail so expected counts stay comfortably above 5
    observed = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
    pmf = scipy.stats.poisson.pmf(np.arange(kmax), lam)
    expected = n * np.append(pmf, 1.0 - pmf.sum())
    _, pvalue = scipy.stats.chisquare(observed, expected)
    assert pvalue > 0.01


# -- Wiener increments ------------------------------------------------------


def test_on_demand_increment_variance():
    rng = _rng(1)
    src = WienerSource.on_demand(1, rng)
    h = 0.01
    draws = np.array([src.increment(0.0, h)[0] for _ in range(100_000)])
    assert abs(draws.var() / h - 1.0) < 0.05


def test_on_demand_disjoint_intervals_uncorrelated():
    rng = _rng(2)
    src = WienerSource.on_demand(1, rng)
    a = np.empty(100_000)
    b = np.empty(100_000)
    for k in range(len(a)):
        a[k] = src.increment(0.0, 0.5)[0]
        b[k] = src.increment(0.5, 1.0)[0]
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 0.02


def test_increment_rejects_degenerate_interval():
    src = WienerSource.on_demand(1, _rng())
    with pytest.raises(ValueError):
        src.increment(0.5, 0.5)
    with pytest.raises(ValueError):
        src.increment(0.5, 0.4)


def test_fine_grid_partition_telescopes():
    src = WienerSource.fine_grid(2, 1.0, 2**-8, _rng(3))
    cuts = [0.0, 0.125, 0.25, 0.625, 1.0]
    total = sum(src.increment(a, b) for a, b in zip(cuts[:-1], cuts[1:]))
    assert np.allclose(total, src.increment(0.0, 1.0), rtol=0, atol=1e-13)


def test_fine_grid_variance_scaling():
    src = WienerSource.fine_grid(1, 1.0, 2**-12, _rng(4))
    times = src.refined_times()
    dw = np.diff(src._prefix[:, 0])
    assert abs(dw.var() / 2**-12 - 1.0) < 0.05
    assert len(times) == 2**12 + 1


def test_fine_grid_deterministic_and_order_independent():
    def build():
        return WienerSource.fine_grid(2, 1.0, 2**-6, streams.wiener_stream(9, 4),
                                      split_times=(0.33,))

    a, b = build(), build()
    # different query order, identical aligned answers
    qa = [a.increment(0.0, 0.5), a.increment(0.5, 1.0), a.increment(0.25, 0.75)]
    qb = [b.increment(0.25, 0.75), b.increment(0.5, 1.0), b.increment(0.0, 0.5)]
    assert np.array_equal(qa[0], qb[2])
    assert np.array_equal(qa[1], qb[1])
    assert np.array_equal(qa[2], qb[0])


def test_declared_split_pieces_sum_to_cell_increment():
    h = 2**-6
    tau = 0.3011
    src = WienerSource.fine_grid(1, 1.0, h, _rng(5), split_times=(tau,))
    lo = math.floor(tau / h) * h
    hi = lo + h
    left = src.increment(lo, tau)
    right = src.increment(tau, hi)
    whole = src.increment(lo, hi)
    assert abs(left[0] + right[0] - whole[0]) < 1e-15


def test_lazy_bridge_statistics():
    # residual of the bridged left piece against its conditional mean
    h = 2**-6
    src = WienerSource.fine_grid(1, 4096 * h, h, _rng(6))
    theta = 0.25
    res = np.empty(4096)
    for k in range(4096):
        lo = k * h
        u = lo + theta * h
        cell = src.increment(lo, lo + h)
        left = src.bridge_increment(lo, lo + h, u)
        res[k] = left[0] - theta * cell[0]
    assert abs(res.mean()) <= 3.0 * res.std() / math.sqrt(len(res))
    assert abs(res.var() / (theta * (1 - theta) * h) - 1.0) < 0.15
    # pieces stay consistent afterwards
    left = src.bridge_increment(0.0, h, theta * h)  # cached, no redraw
    right = src.increment(theta * h, h)
    assert abs(left[0] + right[0] - src.increment(0.0, h)[0]) < 1e-15


def test_midpoint_bridge_variance_is_quarter_cell():
    h = 2**-6
    src = WienerSource.fine_grid(1, 4096 * h, h, _rng(7))
    res = np.empty(4096)
    for k in range(4096):
        lo = k * h
        cell = src.increment(lo, lo + h)
        res[k] = src.bridge_increment(lo, lo + h, lo + 0.5 * h)[0] - 0.5 * cell[0]
    assert abs(res.var() / (h / 4.0) - 1.0) < 0.15


def test_bridge_rejects_bad_arguments():
    h = 2**-4
    src = WienerSource.fine_grid(1, 1.0, h, _rng(8))
    with pytest.raises(ValueError):
        src.bridge_increment(0.0, h, 0.0)
    with pytest.raises(ValueError):
        src.bridge_increment(0.0, h, h)
    with pytest.raises(ValueError):
        src.bridge_increment(0.0, 2 * h, 0.5 * h)  # not adjacent nodes
    with pytest.raises(ValueError):
        WienerSource.on_demand(1, _rng()).bridge_increment(0.0, h, 0.5 * h)


def test_undeclared_split_rejected_with_levy_areas():
    src = WienerSource.fine_grid(2, 1.0, 2**-5, _rng(9), levy_areas=True)
    with pytest.raises(ValueError):
        src.increment(0.0, 0.01)


# -- iterated integrals -----------------------------------------------------


def test_diagonal_identity_scalar():
    src = WienerSource.on_demand(1, _rng(10))
    for _ in range(100):
        xi = sample_iterated(src, 0.0, 0.25, NoiseClass.DIAGONAL)
        assert xi.I2[0, 0] == (xi.dW[0] ** 2 - xi.h) / 2.0


def test_pairing_identity_all_classes():
    for klass in NoiseClass:
        src = WienerSource.on_demand(2, _rng(11))
        for _ in range(200):
            xi = sample_iterated(src, 0.0, 0.125, klass, levy_terms=8)
            lhs = xi.I2[0, 1] + xi.I2[1, 0]
            assert lhs == pytest.approx(xi.dW[0] * xi.dW[1], abs=1e-15)


def test_iterated_rejects_degenerate_step():
    src = WienerSource.on_demand(2, _rng(12))
    with pytest.raises(ValueError):
        sample_iterated(src, 0.5, 0.5, NoiseClass.ADDITIVE)
    with pytest.raises(ValueError):
        sample_iterated(src, 0.0, 0.5, NoiseClass.NON_COMMUTATIVE, levy_terms=0)


def test_off_diagonal_mean_zero():
    rng = _rng(13)
    h = 2**-5
    dW = rng.standard_normal((100_000, 2)) * math.sqrt(h)
    A = sample_levy_areas(rng, h, dW, terms=10)
    I12 = dW[:, 0] * dW[:, 1] / 2.0 + A[:, 0, 1]
    stderr = I12.std() / math.sqrt(len(I12))
    assert abs(I12.mean()) <= 3.0 * stderr


def test_levy_area_unconditional_variance():
    # with the tail correction the variance is h^2/4 * (1 - O(1/terms))
    rng = _rng(14)
    h = 0.125
    dW = rng.standard_normal((20_000, 2)) * math.sqrt(h)
    A = sample_levy_areas(rng, h, dW, terms=50)
    assert abs(A[:, 0, 1].var() / (h * h / 4.0) - 1.0) < 0.05
    assert np.array_equal(A[:, 0, 1], -A[:, 1, 0])


def test_levy_terms_policy():
    assert levy_terms_for(2.0**-9) == 512
    assert levy_terms_for(4.0) == 1
    assert levy_terms_for(2.0**-20) == 4096  # capped
    assert levy_terms_for(0.5, override=50) == 50
    with pytest.raises(ValueError):
        levy_terms_for(0.5, override=0)


def test_coarse_assembly_matches_bruteforce():
    # oracle: accumulate I2 over pieces by the definition with explicit loops
    src = WienerSource.fine_grid(2, 1.0, 2**-6, streams.wiener_stream(21, 0),
                                 split_times=(0.171,), levy_areas=True)
    times = src.refined_times()
    i, j = 2, 30
    xi = src.iterated(times[i], times[j], NoiseClass.NON_COMMUTATIVE)
    I2 = np.zeros((2, 2))
    acc = np.zeros(2)
    for k in range(i, j):
        piece = src.iterated(times[k], times[k + 1], NoiseClass.NON_COMMUTATIVE)
        I2 += piece.I2 + np.outer(acc, piece.dW)
        acc += piece.dW
    assert np.allclose(I2, xi.I2, atol=1e-13)
    assert xi.I2[0, 1] + xi.I2[1, 0] == pytest.approx(xi.dW[0] * xi.dW[1], abs=1e-14)


def test_step_integrals_matches_per_step_queries():
    src = WienerSource.fine_grid(2, 1.0, 2**-5, streams.wiener_stream(22, 0),
                                 split_times=(0.4004,), levy_areas=True)
    times = src.refined_times()[::3]
    fast = list(src.step_integrals(times, NoiseClass.NON_COMMUTATIVE))
    for (a, b), xi in zip(zip(times[:-1], times[1:]), fast):
        slow = src.iterated(a, b, NoiseClass.NON_COMMUTATIVE)
        assert np.array_equal(slow.dW, xi.dW)
        assert np.allclose(slow.I2, xi.I2, atol=0)


def test_stream_derivation_is_stable_and_disjoint():
    a = streams.wiener_stream(123, 0).standard_normal(4)
    b = streams.wiener_stream(123, 0).standard_normal(4)
    c = streams.wiener_stream(123, 1).standard_normal(4)
    d = streams.jump_stream(123, 0).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    with pytest.raises(ValueError):
        streams.stream(1, -1, 0)
    with pytest.raises(ValueError):
        streams.stream(1, 0, 9)
