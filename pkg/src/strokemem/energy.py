"""Two-layer energy, hidden-variable elimination and gradient-flow descent.

The energy of a visible state ``x`` and hidden state ``y`` is::

    E(x, y) = 1/2 sum_i x_i^2 + sum_mu U(y_mu) - sum_mu u_mu(x) phi(y_mu)

with ``u = W x`` and ``phi = U'``.  Minimising over ``y`` decouples over
the hidden units and leaves ``E_eff(x) = 1/2 |x|^2 - sum_mu Phi(u_mu)``
where ``Phi(u) = -inf_y [U(y) - u phi(y)]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import ContractError, DivergenceError, InvalidParameterError, NumericalError


@dataclass(frozen=True)
class Potential:
    """Hidden-unit potential ``U`` with activation ``phi = U'`` and its slope ``phi'``."""

    name: str
    U: object
    phi: object
    dphi: object = None

    def slope(self, y):
        if self.dphi is not None:
            return self.dphi(y)
        h = 1e-6 * np.maximum(1.0, np.abs(y))
        return (self.phi(y + h) - self.phi(y - h)) / (2 * h)


QUADRATIC = Potential("quadratic", lambda y: 0.5 * y**2, lambda y: y, lambda y: np.ones_like(y))
QUARTIC = Potential("quartic", lambda y: 0.25 * y**4, lambda y: y**3, lambda y: 3.0 * y**2)

POTENTIALS = {"quadratic": QUADRATIC, "quartic": QUARTIC}


def custom_potential(U, phi, dphi=None, name="custom"):
    return Potential(name, U, phi, dphi)


def derivative_error(potential, n_points=10, seed=0, scale=2.0):
    """Largest relative error between ``phi`` and a central difference of ``U``."""
    rng = np.random.default_rng(seed)
    ys = rng.uniform(-scale, scale, size=n_points)
    worst = 0.0
    for y in ys:
        h = 1e-5 * max(1.0, abs(y))
        fd = (potential.U(y + h) - potential.U(y - h)) / (2 * h)
        ref = potential.phi(y)
        worst = max(worst, abs(fd - ref) / max(abs(ref), 1e-3))
    return worst


@dataclass(frozen=True, eq=False)
class EnergyModel:
    weights: np.ndarray
    potential: Potential = QUADRATIC
    tau_x: float = 1.0
    tau_y: float = 0.1
    dt: float = 1e-3

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.size == 0:
            raise InvalidParameterError("weights must be a non-empty N_h x N_f matrix")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if min(self.tau_x, self.tau_y, self.dt) <= 0:
            raise InvalidParameterError("time constants and dt must be positive")
        err = derivative_error(self.potential)
        if err > 1e-5:
            raise ContractError(f"phi is not the derivative of U (relative error {err:.2e})")

    @property
    def n_hidden(self):
        return self.weights.shape[0]

    @property
    def n_visible(self):
        return self.weights.shape[1]

    def overlaps(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_visible,):
            raise InvalidParameterError(f"x must have shape ({self.n_visible},), got {x.shape}")
        return self.weights @ x


def _check_y(model, y):
    y = np.asarray(y, dtype=float)
    if y.shape != (model.n_hidden,):
        raise InvalidParameterError(f"y must have shape ({model.n_hidden},), got {y.shape}")
    return y


def energy(model, x, y):
    u = model.overlaps(x)
    y = _check_y(model, y)
    pot = model.potential
    x = np.asarray(x, dtype=float)
    return float(0.5 * x @ x + np.sum(pot.U(y)) - u @ pot.phi(y))


def gradient(model, x, y):
    """Analytic ``(dE/dx, dE/dy)``."""
    u = model.overlaps(x)
    y = _check_y(model, y)
    pot = model.potential
    gx = np.asarray(x, dtype=float) - model.weights.T @ pot.phi(y)
    gy = pot.phi(y) - u * pot.slope(y)
    return gx, gy


def numerical_gradient(model, x, y, h=1e-6):
    """Central finite differences of :func:`energy`, for checking :func:`gradient`."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gx = np.empty_like(x)
    gy = np.empty_like(y)
    for vec, out, other in ((x, gx, "x"), (y, gy, "y")):
        for i in range(vec.size):
            step = h * max(1.0, abs(vec[i]))
            hi, lo = vec.copy(), vec.copy()
            hi[i] += step
            lo[i] -= step
            if other == "x":
                out[i] = (energy(model, hi, y) - energy(model, lo, y)) / (2 * step)
            else:
                out[i] = (energy(model, x, hi) - energy(model, x, lo)) / (2 * step)
    return gx, gy


# ---------------------------------------------------------------------------
# hidden-variable elimination
# ---------------------------------------------------------------------------


def _bracket(f, max_doublings=60):
    radius = 1.0
    for _ in range(max_doublings):
        ys = np.linspace(-radius, radius, 401)
        vals = np.array([f(v) for v in ys])
        if not np.all(np.isfinite(vals)):
            raise NumericalError(f"objective is not finite on [-{radius}, {radius}]")
        i = int(np.argmin(vals))
        if 0 < i < len(ys) - 1:
            return ys[i - 1], ys[i], ys[i + 1]
        radius *= 2.0
    raise NumericalError(
        f"could not bracket a minimum within |y| <= {radius}; the potential may not be coercive"
    )


def phi_from_potential(potential, u):
    """``Phi(u) = -inf_y [U(y) - u phi(y)]`` by bracketed 1-D minimisation.

    The bracket starts at ``[-1, 1]`` and doubles until the grid minimum is
    interior; golden-section search then refines it.
    """
    u = float(u)

    def f(y):
        return float(potential.U(y) - u * potential.phi(y))

    a, b, c = _bracket(f)
    try:
        res = optimize.minimize_scalar(f, bracket=(a, b, c), method="golden",
                                       options={"xtol": 1e-11, "maxiter": 5000})
    except ValueError:
        # grid ties (a flat or symmetric valley) violate the strict bracket test
        res = optimize.minimize_scalar(f, bounds=(a, c), method="bounded",
                                       options={"xatol": 1e-11, "maxiter": 5000})
    best = min(res.fun, f(b))
    if not np.isfinite(best):
        raise NumericalError(f"minimisation failed for u={u}: {res}")
    return -float(best)


@dataclass
class EffectiveEnergy:
    """``E_eff(x) = 1/2 |x|^2 - sum_mu Phi(u_mu(x))`` with a memo of ``Phi`` values."""

    model: EnergyModel
    phi_table: dict = field(default_factory=dict)

    def phi(self, u):
        key = float(u)
        if key not in self.phi_table:
            self.phi_table[key] = phi_from_potential(self.model.potential, key)
        return self.phi_table[key]

    def __call__(self, x):
        u = self.model.overlaps(x)
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ x - sum(self.phi(v) for v in u))


def effective_energy(model, x):
    return EffectiveEnergy(model)(x)


def quadratic_effective_coupling(model):
    """``J_eff = W^T W`` for a quadratic hidden potential."""
    if model.potential.name != "quadratic":
        raise ContractError("the effective coupling matrix only exists for the quadratic potential")
    return model.weights.T @ model.weights


# ---------------------------------------------------------------------------
# gradient flow
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    x: np.ndarray
    y: np.ndarray
    energy: np.ndarray

    def __len__(self):
        return len(self.energy)


def descend(model, x0, y0, n_steps):
    """Explicit-Euler integration of ``tau dz/dt = -grad E``.

    Returns states and energies for steps ``0..n_steps``.  Raises
    :class:`DivergenceError` if the energy stops being finite.
    """
    x = np.array(x0, dtype=float)
    y = _check_y(model, y0).copy()
    xs = np.empty((n_steps + 1, model.n_visible))
    ys = np.empty((n_steps + 1, model.n_hidden))
    es = np.empty(n_steps + 1)
    xs[0], ys[0], es[0] = x, y, energy(model, x, y)
    kx, ky = model.dt / model.tau_x, model.dt / model.tau_y
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, n_steps + 1):
            gx, gy = gradient(model, x, y)
            x = x - kx * gx
            y = y - ky * gy
            e = energy(model, x, y)
            if not np.isfinite(e):
                raise DivergenceError(step, e)
            xs[step], ys[step], es[step] = x, y, e
    return Trajectory(xs, ys, es)


def lyapunov_violations(trajectory, rtol=1e-9):
    """Steps where the energy rose by more than ``rtol`` relative to the previous value."""
    e = trajectory.energy
    allowed = rtol * np.maximum(1.0, np.abs(e[:-1]))
    return np.flatnonzero(np.diff(e) > allowed) + 1
