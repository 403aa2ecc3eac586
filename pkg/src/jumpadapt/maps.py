"""One-step integrator maps.

Each map advances a state x over a step of length h given the step's
increments and iterated integrals; maps are deterministic functions of
``(x, h, integrals, problem)`` with no internal randomness.

* ``milstein``           -- the default explicit map,
  x + h f + sum_i g_i dW_i + sum_{i,j} Dg_i g_j I[j, i];
* ``projected_milstein`` -- Milstein applied after clamping x to the ball
  of radius theta * h**(-alpha), the order-one scheme used as backstop
  and as the reference integrator;
* ``ssbm``               -- split-step backward Milstein: solve
  y = x + h f(y) implicitly, then add the stochastic terms at y;
* ``tamed_milstein``     -- whole-increment taming, dividing the Milstein
  increment by 1 + h ||f(x)||.
"""

import dataclasses

import numpy as np

MAP_IDS = ("milstein", "pmil", "ssbm", "tmil")


class MapError(RuntimeError):
    """A one-step map failed; carries the map id for diagnostics."""

    def __init__(self, map_id, message):
        super().__init__(f"[{map_id}] {message}")
        self.map_id = map_id
        self._message = message

    def __reduce__(self):
        # custom two-argument __init__ needs explicit pickle support
        return (self.__class__, (self.map_id, self._message))


def _stochastic_terms(y, x_eval, xi, problem):
    """Add sum_i g_i dW_i + sum_{i,j} Dg_i g_j I2[j, i] evaluated at x_eval."""
    dW, I2 = xi.dW, xi.I2
    for i in range(problem.drivers):
        y = y + problem.diffusion_col(i, x_eval) * dW[i]
        for j in range(problem.drivers):
            y = y + problem.diffusion_correction(i, j, x_eval) * I2[j, i]
    return y


def milstein(x, h, xi, problem):
    """Explicit Milstein step."""
    y = x + h * problem.drift(x)
    return _stochastic_terms(y, x, xi, problem)


def projection_radius(h, theta, alpha):
    return theta * h ** (-alpha)


def default_projection_alpha(problem):
    """alpha = 1 / (2 (q - 1)) for drift polynomial degree q."""
    q = problem.drift_poly_degree
    if q < 2:
        return 0.5
    return 1.0 / (2.0 * (q - 1))


def projected_milstein(x, h, xi, problem, theta=0.25, alpha=None):
    """Milstein step from the projection of x onto a ball of radius theta*h^-alpha."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    if alpha is None:
        alpha = default_projection_alpha(problem)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    radius = projection_radius(h, theta, alpha)
    norm = float(x @ x) ** 0.5
    if norm > radius:
        x = x * (radius / norm)
    return milstein(x, h, xi, problem)


def _drift_jacobian(problem, y, eps=1e-7):
    if problem.drift_jacobian is not None:
        return problem.drift_jacobian(y)
    d = len(y)
    jac = np.empty((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = eps
        jac[:, k] = (problem.drift(y + e) - problem.drift(y - e)) / (2.0 * eps)
    return jac


def solve_implicit_drift(x, h, problem, tol=1e-12, max_iter=50):
    """Solve y = x + h f(y) by damped Newton iteration.

    Starts from y = x; the Newton step is damped by halving whenever the
    residual norm fails to decrease.  Raises :class:`MapError` on
    non-convergence.
    """
    y = np.array(x, dtype=float)
    res = y - x - h * problem.drift(y)
    res_norm = float(np.linalg.norm(res))
    for _ in range(max_iter):
        if res_norm <= tol:
            return y
        jac = np.eye(len(y)) - h * _drift_jacobian(problem, y)
        try:
            step = np.linalg.solve(jac, res)
        except np.linalg.LinAlgError as exc:
            raise MapError("ssbm", f"singular Newton system at h={h}: {exc}")
        damping = 1.0
        while True:
            y_new = y - damping * step
            res_new = y_new - x - h * problem.drift(y_new)
            new_norm = float(np.linalg.norm(res_new))
            if new_norm < res_norm or damping < 1e-8:
                break
            damping *= 0.5
        y, res, res_norm = y_new, res_new, new_norm
    if res_norm <= tol:
        return y
    raise MapError("ssbm", f"Newton did not reach tol={tol} in {max_iter} iterations "
                           f"(residual {res_norm:.3e}, h={h})")


def ssbm(x, h, xi, problem, tol=1e-12, max_iter=50):
    """Split-step backward Milstein step."""
    y_star = solve_implicit_drift(x, h, problem, tol=tol, max_iter=max_iter)
    return _stochastic_terms(y_star, y_star, xi, problem)


def tamed_milstein(x, h, xi, problem):
    """Milstein step with the whole increment divided by 1 + h ||f(x)||."""
    f = problem.drift(x)
    increment = _stochastic_terms(h * f, x, xi, problem)
    return x + increment / (1.0 + h * float(f @ f) ** 0.5)


@dataclasses.dataclass(frozen=True)
class OneStepMap:
    """A map id plus its fixed parameters, callable as (x, h, xi, problem)."""

    map_id: str
    params: dict = dataclasses.field(default_factory=dict)

    def __call__(self, x, h, xi, problem):
        if self.map_id == "milstein":
            return milstein(x, h, xi, problem)
        if self.map_id == "pmil":
            return projected_milstein(x, h, xi, problem, **self.params)
        if self.map_id == "ssbm":
            return ssbm(x, h, xi, problem, **self.params)
        if self.map_id == "tmil":
            return tamed_milstein(x, h, xi, problem)
        raise MapError(self.map_id, "unknown map id")


def make_map(map_id, **params):
    """Build a :class:`OneStepMap` by string id ("milstein"/"pmil"/"ssbm"/"tmil")."""
    if map_id not in MAP_IDS:
        raise ValueError(f"unknown map id {map_id!r}; known: {', '.join(MAP_IDS)}")
    if map_id in ("milstein", "tmil") and params:
        raise ValueError(f"map {map_id!r} takes no parameters")
    return OneStepMap(map_id, params)


@dataclasses.dataclass(frozen=True)
class MapPair:
    """The hybrid scheme's main map and its backstop."""

    main: OneStepMap
    backstop: OneStepMap

    @classmethod
    def default(cls):
        return cls(main=make_map("milstein"), backstop=make_map("pmil"))
