"""Noise sources: jump schedules, Wiener increments, iterated integrals.

Jump times are the cumulative sums of Exp(rate lambda) waiting times
truncated at the horizon, with one mark drawn per jump; they can be (and
are) precomputed before a trajectory starts because the diffusion and
jump drivers are independent.

A :class:`WienerSource` serves Brownian increments over arbitrary forward
intervals.  In *on-demand* mode it simply draws N(0, (t-s) I).  In
*fine-grid* mode it pregenerates increments on a reference grid of
spacing ``h_ref`` so that a coarse solver and a fine reference solver
consume the exact same path:

* increments over node-aligned intervals are differences of stored
  prefix values (bit-reproducible for a fixed seed, independent of query
  order);
* declared split times (jump times) refine their cell at construction
  via Brownian-bridge conditioning, so every consumed interval is a
  union of refined cells;
* an undeclared interior endpoint is bridged lazily on first touch and
  cached, keeping the realized path a single consistent function.

Iterated integrals I[j, i] = int int dW_j dW_i over a step carry the
exact identities I[i, i] = (dW_i^2 - h)/2 and I[i, j] + I[j, i] =
dW_i dW_j.  Off-diagonal entries are the symmetric split dW_i dW_j / 2
plus an antisymmetric Levy area, which is zero for additive, diagonal
and commutative noise (only symmetric combinations reach those schemes)
and is sampled for non-commutative noise by the truncated
Kloeden-Platen series with a Gaussian tail-correction term.  On the
fine grid, areas over a union of cells are assembled exactly from the
per-cell values via the Ito product rule, so coarse and reference
solvers see one coupled path with no extra randomness.
"""

import dataclasses
import math

import numpy as np

from .problems import NoiseClass

LEVY_TERMS_CAP = 4096


def levy_terms_for(h, override=None):
    """Series length policy: ceil(1/h), clamped to [1, LEVY_TERMS_CAP]."""
    if override is not None:
        if override < 1:
            raise ValueError("levy_terms must be >= 1")
        return int(override)
    return int(min(max(math.ceil(1.0 / h), 1), LEVY_TERMS_CAP))


@dataclasses.dataclass(frozen=True)
class JumpSchedule:
    """Realized jump times in (0, T] with their marks."""

    times: np.ndarray
    marks: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        z = np.asarray(self.marks, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        if len(t) != len(z):
            raise ValueError("times and marks must have equal length")
        if len(t) and (np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] > self.horizon):
            raise ValueError("jump times must be strictly increasing in (0, horizon]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "marks", z)

    def __len__(self):
        return len(self.times)

    def count(self, t):
        """Number of jumps in [0, t]."""
        return int(np.searchsorted(self.times, t, side="right"))


def sample_jump_schedule(lam, horizon, mark_sampler, rng):
    """Draw a jump schedule from Exp(rate lam) waiting times.

    Args:
      lam: jump intensity (events per unit time), >= 0.
      horizon: final time T > 0; jumps beyond T are discarded.
      mark_sampler: callable(rng, size) -> (size, mark_dim) array.
      rng: numpy Generator (the dedicated jump stream of the path).
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if lam < 0:
        raise ValueError("intensity must be nonnegative")
    if lam == 0:
        return JumpSchedule(np.empty(0), np.empty((0, 1)), horizon)
    mean = 1.0 / lam
    block = max(16, int(lam * horizon + 10.0 * math.sqrt(lam * horizon) + 10))
    times = np.cumsum(rng.exponential(mean, size=block))
    while times[-1] <= horizon:
        more = rng.exponential(mean, size=block)
        times = np.concatenate([times, times[-1] + np.cumsum(more)])
    times = times[times <= horizon]
    marks = mark_sampler(rng, len(times))
    return JumpSchedule(times, marks, horizon)


@dataclasses.dataclass(frozen=True)
class IteratedIntegrals:
    """Increments and iterated integrals of one step.

    ``I2[j, i]`` is the double integral with inner differential dW_j and
    outer dW_i, so a Milstein term Dg_i g_j multiplies ``I2[j, i]``.
    """

    h: float
    dW: np.ndarray
    I2: np.ndarray

    @classmethod
    def build(cls, h, dW, levy_area=None):
        """Assemble I2 from an increment and an (optional) Levy area.

        The diagonal is set exactly to (dW_i^2 - h)/2 and off-diagonals to
        dW_i dW_j / 2 + A[i, j] with A antisymmetric (A = 0 when omitted),
        so both identities hold by construction.
        """
        dW = np.asarray(dW, dtype=float)
        if dW.shape == (1,):
            I2 = np.array([[(dW[0] * dW[0] - h) * 0.5]])
        else:
            I2 = np.outer(dW, dW) / 2.0
            if levy_area is not None:
                I2 = I2 + levy_area
            np.fill_diagonal(I2, (dW * dW - h) / 2.0)
        return cls(h=float(h), dW=dW, I2=I2)


def sample_levy_areas(rng, h, dW, terms):
    """Sample antisymmetric Levy-area matrices for a batch of steps.

    Truncated Kloeden-Platen series with ``terms`` terms plus the standard
    Gaussian tail-correction term: with xi = dW/sqrt(h) and i.i.d. standard
    normals zeta_k, eta_k, mu,

        A = (h/2pi) sum_k (1/k) [zeta_k (eta_k + sqrt2 xi)^T - transpose]
            + h sqrt(rho_p) [mu xi^T - xi mu^T],
        rho_p = 1/12 - (1/2 pi^2) sum_{k<=p} 1/k^2.

    Args:
      rng: numpy Generator.
      h: scalar step length or array of shape (n,) per-step lengths.
      dW: array (n, m) of step increments.
      terms: series truncation length p >= 1.

    Returns:
      array (n, m, m), antisymmetric in the last two axes.
    """
    dW = np.asarray(dW, dtype=float)
    n, m = dW.shape
    if m < 2:
        return np.zeros((n, m, m))
    if terms < 1:
        raise ValueError("terms must be >= 1")
    h = np.broadcast_to(np.asarray(h, dtype=float), (n,))
    xi = dW / np.sqrt(h)[:, None]
    inv_k = 1.0 / np.arange(1, terms + 1)
    zeta = rng.standard_normal((n, terms, m))
    eta = rng.standard_normal((n, terms, m))
    mu = rng.standard_normal((n, m))
    shifted = eta + math.sqrt(2.0) * xi[:, None, :]
    S = np.einsum("t,ntj,nti->nji", inv_k, zeta, shifted, optimize=True)
    A = (S - S.transpose(0, 2, 1)) / (2.0 * math.pi)
    rho = 1.0 / 12.0 - np.sum(inv_k**2) / (2.0 * math.pi**2)
    tail = np.einsum("nj,ni->nji", mu, xi) - np.einsum("nj,ni->nji", xi, mu)
    A += math.sqrt(max(rho, 0.0)) * tail
    return A * h[:, None, None]


class WienerSource:
    """Coupled or on-demand provider of Brownian increments.

    Use :meth:`on_demand` for standalone simulation and :meth:`fine_grid`
    for coupled error measurement against a reference mesh.  One source
    belongs to one trajectory; distinct trajectories use distinct streams.
    """

    ON_DEMAND = "on-demand"
    FINE_GRID = "fine-grid"

    def __init__(self, drivers, mode, rng, horizon=None, h_ref=None):
        self.drivers = int(drivers)
        self.mode = mode
        self.rng = rng
        self.horizon = horizon
        self.h_ref = h_ref
        self._times = None       # refined node times, shape (R+1,)
        self._prefix = None      # W at nodes, shape (R+1, m), W(0) = 0
        self._areas = None       # per-piece Levy areas, shape (R, m, m)
        self._levy_terms = None

    @classmethod
    def on_demand(cls, drivers, rng):
        return cls(drivers, cls.ON_DEMAND, rng)

    @classmethod
    def fine_grid(cls, drivers, horizon, h_ref, rng, split_times=(),
                  levy_areas=False, levy_terms=None):
        """Pregenerate a path on the grid {k*h_ref} cut at ``split_times``.

        ``split_times`` (typically the jump times) refine their enclosing
        cells at construction; with ``levy_areas`` per-piece areas are also
        pregenerated so that non-commutative couplings are exact.  The draw
        order is fixed, so identical arguments reproduce the path bitwise.
        """
        if horizon <= 0 or h_ref <= 0 or h_ref > horizon:
            raise ValueError("need 0 < h_ref <= horizon")
        src = cls(drivers, cls.FINE_GRID, rng, horizon=float(horizon), h_ref=float(h_ref))
        n_cells = int(math.floor(horizon / h_ref + 1e-9))
        times = [k * h_ref for k in range(n_cells + 1)]
        if times[-1] < horizon - 1e-12 * horizon:
            times.append(horizon)
        else:
            times[-1] = horizon
        times = np.array(times)
        widths = np.diff(times)
        dW = rng.standard_normal((len(widths), drivers)) * np.sqrt(widths)[:, None]

        # cut cells at declared split points (in time order)
        splits = sorted(float(u) for u in split_times)
        for u in splits:
            times, dW = _split_piece(times, dW, u, rng, drivers)

        src._times = times
        src._prefix = np.vstack([np.zeros((1, drivers)), np.cumsum(dW, axis=0)])
        if levy_areas and drivers >= 2:
            widths = np.diff(times)
            terms = levy_terms_for(h_ref, levy_terms)
            src._areas = sample_levy_areas(rng, widths, dW, terms)
            src._levy_terms = terms
        return src

    # -- node bookkeeping -------------------------------------------------

    def refined_times(self):
        """All node times (fine grid plus splits); the reference mesh."""
        self._require_grid()
        return self._times.copy()

    def _require_grid(self):
        if self.mode != self.FINE_GRID:
            raise ValueError("operation requires a fine-grid source")

    def _locate(self, t, insert=False):
        """Index of node time t, lazily bridging if t is interior."""
        idx = int(np.searchsorted(self._times, t))
        if idx < len(self._times) and self._times[idx] == t:
            return idx
        if not insert:
            raise ValueError(f"time {t!r} is not a node of the refined grid")
        if t <= 0.0 or t >= self.horizon:
            raise ValueError(f"time {t} outside (0, horizon)")
        if self._areas is not None:
            raise ValueError(
                "undeclared split at t={}: a source carrying Levy areas needs "
                "all off-grid times declared at construction".format(t)
            )
        lo, hi = self._times[idx - 1], self._times[idx]
        dw_piece = self._prefix[idx] - self._prefix[idx - 1]
        theta = (t - lo) / (hi - lo)
        left = theta * dw_piece + self.rng.standard_normal(self.drivers) * math.sqrt(
            theta * (1.0 - theta) * (hi - lo)
        )
        self._times = np.insert(self._times, idx, t)
        self._prefix = np.insert(self._prefix, idx, self._prefix[idx - 1] + left, axis=0)
        return idx

    # -- queries ----------------------------------------------------------

    def increment(self, s, t):
        """W(t) - W(s) for 0 <= s < t <= horizon.

        On-demand mode draws a fresh N(0, (t-s) I) vector (queries must be
        over disjoint forward intervals).  Fine-grid mode returns the
        difference of stored prefix values, bridging misaligned endpoints
        lazily; split points are cached so later queries see the same path.
        """
        if t <= s:
            raise ValueError("need t > s")
        if self.mode == self.ON_DEMAND:
            return self.rng.standard_normal(self.drivers) * math.sqrt(t - s)
        if s < 0 or t > self.horizon + 1e-12:
            raise ValueError("interval outside [0, horizon]")
        i = self._locate(s, insert=True)
        j = self._locate(t, insert=True)
        return self._prefix[j] - self._prefix[i]

    def bridge_increment(self, cell_start, cell_end, u):
        """W(u) - W(cell_start) given the increment over one stored piece.

        ``cell_start`` and ``cell_end`` must be adjacent node times and u
        strictly interior.  The conditional law is Gaussian with mean
        (u - s)/(e - s) * dW_cell and per-driver variance
        (u - s)(e - u)/(e - s); the complementary increment is fixed by
        consistency and returned by later queries.
        """
        self._require_grid()
        i = self._locate(cell_start)
        if u <= cell_start or u >= cell_end:
            raise ValueError("u must lie strictly inside the cell")
        k = int(np.searchsorted(self._times, u))
        if k < len(self._times) and self._times[k] == u:
            return self._prefix[k] - self._prefix[i]  # already split here
        if self._times[i + 1] != cell_end:
            raise ValueError("cell_start and cell_end must be adjacent nodes")
        j = self._locate(u, insert=True)
        return self._prefix[j] - self._prefix[i]

    def iterated(self, s, t, noise_class, levy_terms=None):
        """Iterated integrals of the step [s, t] for the given noise class."""
        if t <= s:
            raise ValueError("need t > s")
        h = t - s
        dW = self.increment(s, t)
        if not noise_class.needs_levy_areas or self.drivers < 2:
            return IteratedIntegrals.build(h, dW)
        if self.mode == self.ON_DEMAND:
            terms = levy_terms_for(h, levy_terms)
            area = sample_levy_areas(self.rng, h, dW[None, :], terms)[0]
            return IteratedIntegrals.build(h, dW, area)
        return IteratedIntegrals.build(h, dW, self._assemble_area(s, t))

    def _assemble_area(self, s, t):
        if self._areas is None:
            raise ValueError("source was built without Levy areas")
        return self._assemble_area_span(self._locate(s), self._locate(t))

    def _assemble_area_span(self, i, j):
        """Levy area over the pieces [i, j), by the Ito product rule.

        With per-piece increments dw_k, areas A_k and running sums
        pre_k = sum_{l<k} dw_l, the area over the union is
        sum_k A_k + (M - M^T)/2 where M = pre^T dw.
        """
        if j == i + 1:
            return self._areas[i]
        dw = self._prefix[i + 1 : j + 1] - self._prefix[i:j]
        pre = self._prefix[i:j] - self._prefix[i]
        M = pre.T @ dw
        return np.sum(self._areas[i:j], axis=0) + (M - M.T) / 2.0

    def node_indices(self, times):
        """Indices of the given node times, or None if any is off-node."""
        self._require_grid()
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self._times, times)
        if np.any(idx >= len(self._times)) or np.any(self._times[idx] != times):
            return None
        return idx

    def step_integrals(self, times, noise_class, levy_terms=None):
        """Yield the integrals of each consecutive interval of a mesh.

        Equivalent to calling :meth:`iterated` per step; fine-grid sources
        whose mesh times are all nodes take a vectorized path.
        """
        times = np.asarray(times, dtype=float)
        idx = self.node_indices(times) if self.mode == self.FINE_GRID else None
        if idx is None:
            for a, b in zip(times[:-1], times[1:]):
                yield self.iterated(a, b, noise_class, levy_terms=levy_terms)
            return
        dws = self._prefix[idx[1:]] - self._prefix[idx[:-1]]
        widths = np.diff(times)
        needs_area = noise_class.needs_levy_areas and self.drivers >= 2
        for k in range(len(widths)):
            area = self._assemble_area_span(idx[k], idx[k + 1]) if needs_area else None
            yield IteratedIntegrals.build(widths[k], dws[k], area)


def _split_piece(times, dW, u, rng, drivers):
    """Cut the piece containing u at u, bridging its increment."""
    idx = int(np.searchsorted(times, u))
    if idx < len(times) and times[idx] == u:
        return times, dW  # coincides with an existing node
    if idx == 0 or idx == len(times):
        raise ValueError(f"split time {u} outside the grid span")
    lo, hi = times[idx - 1], times[idx]
    theta = (u - lo) / (hi - lo)
    left = theta * dW[idx - 1] + rng.standard_normal(drivers) * math.sqrt(
        theta * (1.0 - theta) * (hi - lo)
    )
    times = np.insert(times, idx, u)
    right = dW[idx - 1] - left
    dW = np.concatenate([dW[: idx - 1], left[None, :], right[None, :], dW[idx:]])
    return times, dW


def sample_iterated(source, s, t, noise_class, levy_terms=None):
    """Iterated integrals over [s, t] from a :class:`WienerSource`."""
    if noise_class.needs_levy_areas and source.drivers >= 2:
        if levy_terms is not None and levy_terms < 1:
            raise ValueError("levy_terms must be >= 1 for non-commutative noise")
    return source.iterated(s, t, noise_class, levy_terms=levy_terms)
