"""Closed-form first and second moments of SME-ASGD on f(x) = a x^2 / 2.

With constant noise level Sigma the nonlinear SME is linear Gaussian:

    dY = -a X dt - c Y dt,   dX = Y dt + s dB,   c = sqrt((1-mu)/eta),
    s^2 = Sigma eta^{3/2} / ((1-mu)^{1/2} (1+u)).

The means (E[Y], E[X]) follow A = [[-c, -a], [1, 0]] and the second moments
(E[X^2], E[Y^2], E[XY]) follow B with additive forcing s^2 in the E[X^2] row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm


@dataclass(frozen=True)
class MomentSystem:
    a: float
    mu: float
    eta: float
    Sigma: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("curvature a must be positive")
        if not 0.0 < self.mu < 1.0:
            raise ValueError("mu must lie in (0, 1)")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.Sigma < 0:
            raise ValueError("Sigma must be nonnegative")

    @property
    def c(self) -> float:
        return float(np.sqrt((1.0 - self.mu) / self.eta))

    @property
    def A(self) -> np.ndarray:
        return np.array([[-self.c, -self.a], [1.0, 0.0]])

    @property
    def B(self) -> np.ndarray:
        c, a = self.c, self.a
        return np.array([[0.0, 0.0, 2.0], [0.0, -2 * c, -2 * a], [-a, 1.0, -c]])

    def forcing(self, u: float = 0.0) -> float:
        return self.Sigma * self.eta**1.5 / np.sqrt(1.0 - self.mu) / (1.0 + u)

    def first_moment_spectrum(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    def second_moment_spectrum(self) -> np.ndarray:
        return np.linalg.eigvals(self.B)


def build_moment_system(a: float, mu: float, eta: float, Sigma: float) -> MomentSystem:
    return MomentSystem(float(a), float(mu), float(eta), float(Sigma))


def lambda_plus(a: float, mu: float, eta: float) -> complex:
    """Slowest second-moment eigenvalue -sqrt(q) + sqrt(q - 4a), q = (1-mu)/eta.

    Complex when q < 4a; its real part is then -sqrt(q).
    """
    q = (1.0 - mu) / eta
    disc = q - 4.0 * a
    if abs(disc) <= 1e-12 * q:
        disc = 0.0  # critical damping up to round-off
    root = np.sqrt(disc) if disc >= 0 else 1j * np.sqrt(-disc)
    val = -np.sqrt(q) + root
    return complex(val) if disc < 0 else float(val)


def second_moment_eigenvalues(a: float, mu: float, eta: float) -> np.ndarray:
    """The three eigenvalues -sqrt(q) and -sqrt(q) +- sqrt(q - 4a)."""
    q = (1.0 - mu) / eta
    disc = q - 4.0 * a
    r = np.sqrt(complex(0.0 if abs(disc) <= 1e-12 * q else disc))
    vals = np.array([-np.sqrt(q) + 0j, -np.sqrt(q) + r, -np.sqrt(q) - r])
    return vals.real if np.all(vals.imag == 0) else vals


def decay_rate(a: float, mu: float, eta: float) -> float:
    """Asymptotic rate: the largest real part of the second-moment spectrum."""
    return float(np.max(second_moment_eigenvalues(a, mu, eta).real))


def mu_opt(a: float, eta: float) -> float:
    """Delay parameter at which q = 4a, i.e. the fastest decay, clamped at 0."""
    return max(1.0 - 4.0 * a * eta, 0.0)


def stationary_moments(a: float, mu: float, eta: float, Sigma: float, u: float = 0.0) -> dict:
    """Fixed point of the second-moment system."""
    k = 1.0 / (1.0 + u)
    return {
        "EX2": k * (Sigma * eta**2 / (2 * (1 - mu)) + Sigma * eta / (2 * a)),
        "EY2": k * a * Sigma * eta**2 / (2 * (1 - mu)),
        "EXY": -k * Sigma * eta**1.5 / (2 * np.sqrt(1 - mu)),
    }


def initial_moments(x0: float, a: float, mu: float, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic start X = x0, Y = -sqrt(eta/(1-mu)) a x0.

    Returns ``(first, second)`` with first = (E[Y], E[X]) and
    second = (E[X^2], E[Y^2], E[XY]).
    """
    y0 = -np.sqrt(eta / (1.0 - mu)) * a * x0
    return np.array([y0, x0]), np.array([x0**2, y0**2, x0 * y0])


def first_moment_series(sys: MomentSystem, m0, t) -> np.ndarray:
    """exp(A t) m0 for each t; rows are (E[Y], E[X])."""
    m0 = np.asarray(m0, dtype=float)
    return np.array([expm(sys.A * ti) @ m0 for ti in np.atleast_1d(t)])


def _rhs(sys: MomentSystem, v: np.ndarray, u: float) -> np.ndarray:
    out = sys.B @ v
    out[0] += sys.forcing(u)
    return out


def _rk4(sys: MomentSystem, v0: np.ndarray, t: np.ndarray, h_max: float,
         u: Callable[[float], float]) -> np.ndarray:
    out = np.empty((t.size, 3))
    v, tc = v0.astype(float).copy(), float(t[0])
    out[0] = v
    for i in range(1, t.size):
        n = max(1, int(np.ceil((t[i] - tc) / h_max)))
        h = (t[i] - tc) / n
        for _ in range(n):
            k1 = _rhs(sys, v, u(tc))
            k2 = _rhs(sys, v + 0.5 * h * k1, u(tc + 0.5 * h))
            k3 = _rhs(sys, v + 0.5 * h * k2, u(tc + 0.5 * h))
            k4 = _rhs(sys, v + h * k3, u(tc + h))
            v = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            tc += h
        tc = float(t[i])
        out[i] = v
    return out


def integrate_moment_ode(sys: MomentSystem, v0, t, u: Callable[[float], float] | float = 0.0,
                         rtol: float = 1e-8, h0: float | None = None) -> np.ndarray:
    """Second moments (E[X^2], E[Y^2], E[XY]) on the time grid ``t``.

    Classical RK4; the step is halved until two successive refinements agree
    to ``rtol`` relative to the largest moment.
    """
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 1 or np.any(np.diff(t) < 0):
        raise ValueError("t must be a nondecreasing 1-d grid")
    uf = u if callable(u) else (lambda _t, _u=float(u): _u)
    h = h0 or 0.1 / max(np.abs(np.linalg.eigvals(sys.B)).max(), 1e-12)
    prev = _rk4(sys, np.asarray(v0, dtype=float), t, h, uf)
    for _ in range(30):
        h /= 2
        cur = _rk4(sys, np.asarray(v0, dtype=float), t, h, uf)
        scale = max(np.abs(cur).max(), 1e-300)
        if np.abs(cur - prev).max() <= rtol * scale:
            return cur
        prev = cur
    raise RuntimeError("moment ODE refinement did not converge")


def second_moment_series_exact(sys: MomentSystem, v0, t, u: float = 0.0) -> np.ndarray:
    """Constant-u solution via the augmented matrix exponential, an independent
    route to :func:`integrate_moment_ode`."""
    aug = np.zeros((4, 4))
    aug[:3, :3] = sys.B
    aug[0, 3] = sys.forcing(u)
    w0 = np.append(np.asarray(v0, dtype=float), 1.0)
    return np.array([(expm(aug * ti) @ w0)[:3] for ti in np.atleast_1d(t)])
