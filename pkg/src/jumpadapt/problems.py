"""Jump-diffusion test problems.

A problem bundles the coefficients of the d-dimensional equation

    dX = f(X) dt + sum_i g_i(X) dW_i + jump term,

where the jump term applies ``jump_coeff(z, x)`` at the events of a
finite-activity Poisson process with rate ``intensity`` and i.i.d. marks
``z``.  Besides the diffusion columns ``g_i`` the solver needs the
products ``Dg_i(x) g_j(x)`` (Jacobian of one column applied to another);
built-in problems supply them analytically, user problems can fall back
to :func:`fd_diffusion_correction`.

Built-in systems (all with cubic drift, mark ~ N(0, 0.01), gamma(z,x)=z*x,
X0 and T fixed, registry ids in :data:`PROBLEM_IDS`):

* ``1d-add``  -- scalar, g(x) = sigma            (additive noise)
* ``1d-mult`` -- scalar, g(x) = sigma*(1 - x^2)  (diagonal noise)
* ``2d-g1``   -- diagonal, ``2d-g2`` -- commutative, ``2d-g3`` --
  non-commutative two-driver systems.
"""

import dataclasses
import enum
import itertools

import numpy as np


class NoiseClass(enum.Enum):
    ADDITIVE = "additive"
    DIAGONAL = "diagonal"
    COMMUTATIVE = "commutative"
    NON_COMMUTATIVE = "non-commutative"

    @property
    def needs_levy_areas(self):
        return self is NoiseClass.NON_COMMUTATIVE


def gaussian_marks(std):
    """Mark sampler drawing i.i.d. N(0, std^2) scalar marks."""

    def sample(rng, size):
        return rng.normal(0.0, std, size=(size, 1))

    return sample


@dataclasses.dataclass(frozen=True)
class SjdeProblem:
    """Coefficients and metadata of one jump-diffusion system.

    ``drift``, ``diffusion_col(i, .)`` and ``diffusion_correction(i, j, .)``
    map state vectors of shape (dim,) to vectors of shape (dim,);
    ``jump_coeff(z, x)`` maps a mark of shape (mark_dim,) and a state to a
    state increment.  ``drift_poly_degree`` records the polynomial degree
    of the drift and sets the projection exponent of the projected-Milstein
    map.  Instances are immutable and safe to share across workers.
    """

    dim: int
    drivers: int
    drift: object
    diffusion_col: object
    diffusion_correction: object
    jump_coeff: object
    mark_sampler: object
    intensity: float
    initial_state: np.ndarray
    horizon: float
    noise_class: NoiseClass
    drift_poly_degree: int = 3
    drift_jacobian: object = None
    label: str = ""

    def __post_init__(self):
        if self.dim < 1 or self.drivers < 1:
            raise ValueError("dim and drivers must be >= 1")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.intensity < 0:
            raise ValueError("intensity must be nonnegative")
        x0 = np.asarray(self.initial_state, dtype=float)
        if x0.shape != (self.dim,):
            raise ValueError(f"initial_state must have shape ({self.dim},)")
        object.__setattr__(self, "initial_state", x0)

    def with_overrides(self, intensity=None, initial_state=None, horizon=None):
        """Copy with experiment-level overrides applied."""
        changes = {}
        if intensity is not None:
            changes["intensity"] = float(intensity)
        if initial_state is not None:
            changes["initial_state"] = np.asarray(initial_state, dtype=float)
        if horizon is not None:
            changes["horizon"] = float(horizon)
        return dataclasses.replace(self, **changes) if changes else self


def fd_diffusion_correction(diffusion_col, eps=1e-6):
    """Finite-difference fallback for Dg_i(x) g_j(x).

    Central difference of g_i along the direction g_j(x); exact to O(eps^2)
    for smooth columns.  Built-in problems use analytic corrections instead.
    """

    def correction(i, j, x):
        v = diffusion_col(j, x)
        return (diffusion_col(i, x + eps * v) - diffusion_col(i, x - eps * v)) / (2.0 * eps)

    return correction


def _linear_mark_action(z, x):
    # gamma(z, x) = z * x with scalar mark z
    return z[0] * x


def make_1d_additive(sigma):
    """Scalar cubic-drift system with constant diffusion g(x) = sigma."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    s = float(sigma)

    def drift(x):
        return x - 3.0 * x**3

    def drift_jacobian(x):
        return np.array([[1.0 - 9.0 * x[0] ** 2]])

    def diffusion_col(i, x):
        return np.array([s])

    def correction(i, j, x):
        return np.zeros(1)

    return SjdeProblem(
        dim=1,
        drivers=1,
        drift=drift,
        diffusion_col=diffusion_col,
        diffusion_correction=correction,
        jump_coeff=_linear_mark_action,
        mark_sampler=gaussian_marks(0.1),
        intensity=2.0,
        initial_state=np.array([0.5]),
        horizon=1.0,
        noise_class=NoiseClass.ADDITIVE,
        drift_jacobian=drift_jacobian,
        label="1d-add",
    )


def make_1d_multiplicative(sigma):
    """Scalar cubic-drift system with g(x) = sigma*(1 - x^2)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    s = float(sigma)

    def drift(x):
        return x - 3.0 * x**3

    def drift_jacobian(x):
        return np.array([[1.0 - 9.0 * x[0] ** 2]])

    def diffusion_col(i, x):
        return s * (1.0 - x**2)

    def correction(i, j, x):
        # Dg(x) g(x) = (-2 s x) * s (1 - x^2)
        return (-2.0 * s * x) * (s * (1.0 - x**2))

    return SjdeProblem(
        dim=1,
        drivers=1,
        drift=drift,
        diffusion_col=diffusion_col,
        diffusion_correction=correction,
        jump_coeff=_linear_mark_action,
        mark_sampler=gaussian_marks(0.1),
        intensity=2.0,
        initial_state=np.array([0.5]),
        horizon=1.0,
        noise_class=NoiseClass.DIAGONAL,
        drift_jacobian=drift_jacobian,
        label="1d-mult",
    )


def _drift_2d(x):
    return np.array([x[1] - 3.0 * x[0] ** 3, x[0] - 3.0 * x[1] ** 3])


def _drift_jacobian_2d(x):
    return np.array([[-9.0 * x[0] ** 2, 1.0], [1.0, -9.0 * x[1] ** 2]])


def make_2d(noise, sigma):
    """Two-driver system with drift [x2 - 3x1^3, x1 - 3x2^3].

    ``noise`` selects the diffusion matrix: "g1" (diagonal, sigma*diag(x1^2,
    x2^2)), "g2" (commutative, both columns sigma*[x2^2, x1^2]) or "g3"
    (non-commutative, columns sigma*[1.5x1^2, x2^2] and sigma*[x2, 1.5x1]).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    s = float(sigma)
    noise = str(noise).lower()

    if noise == "g1":

        def diffusion_col(i, x):
            g = np.zeros(2)
            g[i] = s * x[i] ** 2
            return g

        def correction(i, j, x):
            # Dg_i g_j = 0 for i != j; Dg_i g_i = s^2 [2 x_i^3] in slot i
            c = np.zeros(2)
            if i == j:
                c[i] = 2.0 * s * s * x[i] ** 3
            return c

        klass = NoiseClass.DIAGONAL
    elif noise == "g2":

        def diffusion_col(i, x):
            return s * np.array([x[1] ** 2, x[0] ** 2])

        def correction(i, j, x):
            # both columns equal, Dg = s*[[0, 2x2], [2x1, 0]]
            return s * s * np.array([2.0 * x[1] * x[0] ** 2, 2.0 * x[0] * x[1] ** 2])

        klass = NoiseClass.COMMUTATIVE
    elif noise == "g3":

        def diffusion_col(i, x):
            if i == 0:
                return s * np.array([1.5 * x[0] ** 2, x[1] ** 2])
            return s * np.array([x[1], 1.5 * x[0]])

        def correction(i, j, x):
            gj = diffusion_col(j, x)
            if i == 0:
                jac = s * np.array([[3.0 * x[0], 0.0], [0.0, 2.0 * x[1]]])
            else:
                jac = s * np.array([[0.0, 1.0], [1.5, 0.0]])
            return jac @ gj

        klass = NoiseClass.NON_COMMUTATIVE
    else:
        raise ValueError(f"unknown 2d noise tag {noise!r} (expected g1/g2/g3)")

    return SjdeProblem(
        dim=2,
        drivers=2,
        drift=_drift_2d,
        diffusion_col=diffusion_col,
        diffusion_correction=correction,
        jump_coeff=_linear_mark_action,
        mark_sampler=gaussian_marks(0.1),
        intensity=2.5,
        initial_state=np.array([0.5, 0.7]),
        horizon=1.0,
        noise_class=klass,
        drift_jacobian=_drift_jacobian_2d,
        label=f"2d-{noise}",
    )


def sample_grid(dim, samples):
    """Deterministic sample points in [-2, 2]^dim used by validity checks."""
    per_axis = max(2, int(np.ceil(samples ** (1.0 / dim))))
    axis = np.linspace(-2.0, 2.0, per_axis)
    pts = itertools.product(*([axis] * dim))
    return np.array(list(itertools.islice(pts, samples)))


def check_commutativity(problem, samples=100, tol=1e-10):
    """True iff Dg_i g_j == Dg_j g_i on a deterministic grid, up to tol."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    m = problem.drivers
    if m == 1:
        return True
    for x in sample_grid(problem.dim, samples):
        for i in range(m):
            for j in range(i + 1, m):
                lhs = problem.diffusion_correction(i, j, x)
                rhs = problem.diffusion_correction(j, i, x)
                if np.max(np.abs(lhs - rhs)) > tol:
                    return False
    return True


_BUILDERS = {
    "1d-add": make_1d_additive,
    "1d-mult": make_1d_multiplicative,
    "2d-g1": lambda sigma: make_2d("g1", sigma),
    "2d-g2": lambda sigma: make_2d("g2", sigma),
    "2d-g3": lambda sigma: make_2d("g3", sigma),
}

PROBLEM_IDS = tuple(_BUILDERS)


def get_problem(problem_id, sigma=0.2, intensity=None, initial_state=None, horizon=None):
    """Build a registered problem by string id, with optional overrides."""
    try:
        builder = _BUILDERS[problem_id]
    except KeyError:
        raise ValueError(
            f"unknown problem id {problem_id!r}; known: {', '.join(PROBLEM_IDS)}"
        ) from None
    return builder(sigma).with_overrides(
        intensity=intensity, initial_state=initial_state, horizon=horizon
    )
