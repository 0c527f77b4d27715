"""Optimal time-dependent mini-batch schedule for SME-ASGD on a quadratic.

The second moment z(t) is reduced to its slowest mode,

    z' = lam (z - z_inf(u)),   z_inf(u) = kappa / (1 + u),
    kappa = (Sigma eta / 2) (eta/(1-mu) + 1/a),

and the schedule u(t) >= 0 minimizes z(T) + (gamma/eta) int_0^T u dt.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .moments import lambda_plus


class NoBatchingRegime(ValueError):
    """gamma > gamma*: extra gradients never pay off, so t* is undefined."""


@dataclass(frozen=True)
class ControlProblem:
    gamma: float
    T: float
    Sigma: float
    mu: float
    eta: float
    a: float = 2.0
    z0: float = 0.0
    lam: float | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.Sigma < 0:
            raise ValueError("Sigma must be nonnegative")
        if not 0.0 < self.mu < 1.0 or not self.eta > 0:
            raise ValueError("need mu in (0, 1) and eta > 0")
        if self.z0 < 0:
            raise ValueError("z0 must be nonnegative")
        if self.lam is None:
            object.__setattr__(self, "lam", float(np.real(lambda_plus(self.a, self.mu, self.eta))))
        if not self.lam < 0:
            raise ValueError(f"Re(lambda) must be negative, got {self.lam}")

    @property
    def kappa(self) -> float:
        return self.Sigma * self.eta / 2 * (self.eta / (1.0 - self.mu) + 1.0 / self.a)

    def z_inf(self, u: float = 0.0) -> float:
        return self.kappa / (1.0 + u)

    def drift(self, u, z):
        """F(u, z) = Re(lam) (z - z_inf(u))."""
        return self.lam * (z - self.kappa / (1.0 + np.asarray(u)))


def gamma_star(p: ControlProblem) -> float:
    return -p.lam * p.Sigma * p.eta**2 / 2 * (p.eta / (1.0 - p.mu) + 1.0 / p.a)


def t_star(p: ControlProblem, clamp: bool = True) -> float:
    gs = gamma_star(p)
    if p.gamma > gs:
        raise NoBatchingRegime(f"gamma = {p.gamma:g} exceeds gamma* = {gs:g}; optimal u is 0")
    ts = math.log(p.gamma / gs) / p.lam
    if ts > p.T and clamp:
        warnings.warn(f"t* = {ts:g} exceeds T = {p.T:g}; clamping, the schedule grows from t = 0",
                      stacklevel=2)
        return p.T
    return ts


def _active(p: ControlProblem) -> bool:
    return p.gamma <= gamma_star(p)


def _check_t(p: ControlProblem, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > p.T * (1 + 1e-12)):
        raise ValueError(f"t must lie in [0, {p.T}]")
    return t


def u_star(t, p: ControlProblem):
    t = _check_t(p, t)
    if not _active(p):
        return np.zeros_like(t)[()]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        seam = p.T - t_star(p)
    u = math.sqrt(gamma_star(p) / p.gamma) * np.exp(p.lam * (p.T - t) / 2) - 1.0
    return np.where(t <= seam, 0.0, np.maximum(u, 0.0))[()]


def u_of_vz(vz, p: ControlProblem):
    """Pointwise minimizer of F(u, z) V_z + (gamma/eta) u over u >= 0."""
    arg = -np.asarray(vz) * p.lam * p.Sigma * p.eta**2 / (2 * p.gamma) * (p.eta / (1 - p.mu) + 1 / p.a)
    return np.where(arg > 1, np.sqrt(np.maximum(arg, 0.0)) - 1.0, 0.0)[()]


def _h(p: ControlProblem, tau):
    """Accumulated running cost of the active phase over the last ``tau`` time units."""
    r = math.sqrt(gamma_star(p) / p.gamma)
    return p.gamma / p.eta * (2 * r * (2 / p.lam) * (np.exp(p.lam * tau / 2) - 1.0) - tau)


def value_function(z, t, p: ControlProblem):
    """Optimal cost-to-go V(z, t); V(z, T) = z and V_z = exp(Re(lam)(T - t))."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("z must be nonnegative")
    t = _check_t(p, t)
    decay = np.exp(p.lam * (p.T - t))
    if not _active(p):
        return (p.kappa + (z - p.kappa) * decay)[()]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ts = t_star(p)
    seam = p.T - ts
    late = z * decay + _h(p, p.T - t)
    early = (z - p.kappa) * decay + _h(p, ts) + p.kappa * math.exp(p.lam * ts)
    return np.where(t > seam, late, early)[()]


def value_function_linear_cost(z, t, p: ControlProblem):
    """The closed form whose active branch charges -gamma/eta per unit time.

    Kept for comparison: it meets the terminal condition and has the right
    V_z, but it does not satisfy the HJB equation when gamma < gamma*.
    """
    z = np.asarray(z, dtype=float)
    t = _check_t(p, t)
    decay = np.exp(p.lam * (p.T - t))
    if not _active(p):
        return (p.kappa + (z - p.kappa) * decay)[()]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ts = t_star(p)
    late = z * decay - p.gamma / p.eta * (p.T - t)
    early = (z - p.kappa) * decay - p.gamma / p.eta * (ts + 1 / p.lam)
    return np.where(t > p.T - ts, late, early)[()]


def hjb_residual(V: Callable, z, t, p: ControlProblem, h: float = 1e-5):
    """V_t + min_u {F(u, z) V_z + (gamma/eta) u} with central differences."""
    z = np.asarray(z, dtype=float)
    t = np.asarray(t, dtype=float)
    Vt = (V(z, t + h, p) - V(z, t - h, p)) / (2 * h)
    Vz = (V(z + h, t, p) - V(z - h, t, p)) / (2 * h)
    u = u_of_vz(Vz, p)
    return Vt + p.drift(u, z) * Vz + p.gamma / p.eta * u


@dataclass
class Schedule:
    u_fn: Callable
    times: np.ndarray
    u_values: np.ndarray
    batch_sizes: np.ndarray
    transition_step: int
    gamma_star: float
    t_star: float | None
    clock: str
    clock_step: float

    @property
    def budget(self) -> int:
        return int(self.batch_sizes.sum())

    @property
    def steps(self) -> int:
        return int(self.batch_sizes.size)


def clock_step(p: ControlProblem, clock: str = "eta") -> float:
    if clock == "eta":
        return p.eta
    if clock == "dt":
        return math.sqrt(p.eta * (1.0 - p.mu))
    raise ValueError("clock must be 'eta' or 'dt'")


def plan_batches(p: ControlProblem, clock: str = "eta", steps: int | None = None) -> Schedule:
    """Discretize u*(t) into integer batch sizes max(1, round(1 + u*(t_k))).

    Iteration k sits at control time t_k = k * step, where step is eta
    (``clock='eta'``) or sqrt(eta (1 - mu)) (``clock='dt'``).
    """
    h = clock_step(p, clock)
    K = steps if steps is not None else int(math.floor(p.T / h + 1e-9))
    t = np.minimum(np.arange(K) * h, p.T)
    gs = gamma_star(p)
    if _active(p):
        ts = t_star(p)
        u = np.asarray(u_star(t, p), dtype=float)
        k_star = int(math.ceil((p.T - ts) / h - 1e-9))
    else:
        ts, u, k_star = None, np.zeros(K), K
    batches = np.maximum(1, np.rint(1.0 + u)).astype(int)
    return Schedule(lambda s: u_star(s, p), t, u, batches, k_star, gs, ts, clock, h)


def integrate_z(u_fn: Callable[[float], float], p: ControlProblem, steps: int = 4000,
                t_grid: np.ndarray | None = None) -> tuple[float, np.ndarray, np.ndarray]:
    """Fixed-step RK4 for z' = Re(lam)(z - z_inf(u(t))) from z0; returns (z(T), t, z)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    t = np.linspace(0.0, p.T, steps + 1) if t_grid is None else np.asarray(t_grid, dtype=float)
    z = np.empty(t.size)
    z[0] = p.z0

    def f(s, y):
        u = float(u_fn(min(s, p.T)))
        if u < 0:
            raise ValueError(f"u(t) must be nonnegative, got {u} at t={s}")
        return p.lam * (y - p.kappa / (1.0 + u))

    for i in range(t.size - 1):
        s, h, y = t[i], t[i + 1] - t[i], z[i]
        k1 = f(s, y)
        k2 = f(s + h / 2, y + h / 2 * k1)
        k3 = f(s + h / 2, y + h / 2 * k2)
        k4 = f(s + h, y + h * k3)
        z[i + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("z integration produced non-finite values")
    return float(z[-1]), t, z


def control_cost(u_fn: Callable[[float], float], p: ControlProblem, steps: int = 4000) -> float:
    """z(T) + (gamma/eta) int_0^T u dt (trapezoid on the RK4 grid)."""
    zT, t, _ = integrate_z(u_fn, p, steps)
    u = np.array([float(u_fn(s)) for s in t])
    return zT + p.gamma / p.eta * float(np.trapezoid(u, t))


@dataclass(frozen=True)
class ScheduleFit:
    gamma: float
    T: float
    t_star: float
    gamma_star: float
    problem: ControlProblem
    schedule: Schedule


def fit_schedule(transition_step: int, final_batch: float, mu: float, eta: float, Sigma: float,
                 a: float = 2.0, clock: str = "eta") -> ScheduleFit:
    """Choose (gamma, T) so the planned schedule switches at ``transition_step``
    and ends at batch size ``final_batch``; the other inputs are free choices."""
    if final_batch <= 1:
        raise ValueError("final batch must exceed 1")
    probe = ControlProblem(1.0, 1.0, Sigma, mu, eta, a)
    gs = gamma_star(probe)
    gamma = gs / final_batch**2
    ts = math.log(gamma / gs) / probe.lam
    T = transition_step * clock_step(probe, clock) + ts
    p = ControlProblem(gamma, T, Sigma, mu, eta, a)
    return ScheduleFit(gamma, T, ts, gs, p, plan_batches(p, clock))
