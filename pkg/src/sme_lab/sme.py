"""Euler-Maruyama integrators for the continuous models.

* linear SME-ASGD in (M, P) form with its covariance law for affine gradients,
* nonlinear SME-ASGD in (X, Y) form with the general covariance law and an
  optional batch-size control u(t),
* SME-MSGD (momentum SGD), and
* the memoryless second-order SME-SGD baseline.

States carry a leading path axis: positions are ``(paths, d)`` and
covariances ``(paths, d, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .objectives import Objective

SIGMA_MODES = ("evolve", "freeze", "const")


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., :, None] * b[..., None, :]


def _matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    if m.shape[-1] == 1:
        return m[..., 0] * v
    if m.ndim == 2:
        return v @ m.T
    return np.einsum("...ij,...j->...i", m, v)


def psd_sqrt(S, tol: float = 1e-10) -> np.ndarray:
    """Principal square root of a symmetric matrix after clipping negative eigenvalues.

    Works on single matrices or stacks ``(..., d, d)``.  Scalars are treated
    as 1x1 matrices and returned as scalars.
    """
    S = np.asarray(S, dtype=float)
    scalar = S.ndim == 0
    if scalar:
        S = S.reshape(1, 1)
    if S.shape[-1] != S.shape[-2]:
        raise ValueError("psd_sqrt needs square matrices")
    asym = np.abs(S - np.swapaxes(S, -1, -2)).max(initial=0.0)
    if asym > tol * max(1.0, np.abs(S).max(initial=0.0)):
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    if S.shape[-1] == 1:
        root = np.sqrt(np.maximum(S, 0.0))
    else:
        w, U = np.linalg.eigh(0.5 * (S + np.swapaxes(S, -1, -2)))
        root = (U * np.sqrt(np.maximum(w, 0.0))[..., None, :]) @ np.swapaxes(U, -1, -2)
    return root[0, 0] if scalar else root


def _finite_or_zero(S: np.ndarray) -> np.ndarray:
    return S if np.all(np.isfinite(S)) else np.nan_to_num(S, nan=0.0, posinf=0.0, neginf=0.0)


def _project_psd(S: np.ndarray) -> tuple[np.ndarray, int]:
    """Symmetrize and clip negative eigenvalues; returns the clip count.
    Non-finite entries (paths that already blew up) are zeroed."""
    S = _finite_or_zero(S)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    if S.shape[-1] == 1:
        neg = S < 0
        return np.where(neg, 0.0, S), int(neg.sum())
    w, U = np.linalg.eigh(S)
    neg = w < 0
    if not neg.any():
        return S, 0
    w = np.maximum(w, 0.0)
    S = (U * w[..., None, :]) @ np.swapaxes(U, -1, -2)
    return 0.5 * (S + np.swapaxes(S, -1, -2)), int(neg.sum())


@dataclass
class IntegratorConfig:
    """Parameters shared by all integrators.

    For SME-MSGD ``mu``/``eta`` are read as the momentum parameter and its
    step size.  ``dt`` defaults per model: sqrt(eta (1 - mu)) for SME-ASGD,
    sqrt(eta) for SME-MSGD and eta for SME-SGD.  ``Sigma_const`` is a noise
    covariance (scalar means a multiple of the identity) used by
    ``sigma_mode='const'``.
    """

    mu: float
    eta: float
    dt: float | None = None
    substeps: int = 1
    sigma_mode: str = "evolve"
    Sigma_const: float | np.ndarray | None = None
    batch_u: Callable[[float], float] | None = None
    staleness_sigma: bool = False
    allow_nonfinite: bool = False
    # square root reused across steps when the noise covariance cannot change
    frozen_root: np.ndarray | None = None

    def __post_init__(self):
        if self.sigma_mode not in SIGMA_MODES:
            raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")
        if self.sigma_mode == "const" and self.Sigma_const is None:
            raise ValueError("sigma_mode='const' needs Sigma_const")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    @property
    def friction(self) -> float:
        return np.sqrt((1.0 - self.mu) / self.eta)

    def const_sigma(self, d: int) -> np.ndarray:
        S = np.asarray(self.Sigma_const, dtype=float)
        return S * np.eye(d) if S.ndim == 0 else S


def asgd_dt(mu: float, eta: float) -> float:
    return float(np.sqrt(eta * (1.0 - mu)))


@dataclass
class LinearSmeState:
    M: np.ndarray
    P: np.ndarray
    Sigma: np.ndarray
    t: float = 0.0
    clip_events: int = 0


@dataclass
class NonlinearSmeState:
    X: np.ndarray
    Y: np.ndarray
    Sigma: np.ndarray
    t: float = 0.0
    clip_events: int = 0


@dataclass
class MsgdSmeState:
    X: np.ndarray
    P: np.ndarray
    Sigma: np.ndarray
    t: float = 0.0


@dataclass
class SgdSmeState:
    X: np.ndarray
    t: float = 0.0
    Y: np.ndarray | None = None
    Sigma: np.ndarray | None = None
    clip_events: int = 0


def _check_asgd_params(mu: float, eta: float) -> None:
    if not 0.0 < mu < 1.0:
        raise ValueError(f"SME-ASGD needs mu in (0, 1), got {mu}")
    if not eta > 0:
        raise ValueError(f"SME-ASGD needs eta > 0, got {eta}")


def _start(obj: Objective, x0, paths: int) -> np.ndarray:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape[-1] != obj.dim:
        raise ValueError(f"x0 has dimension {x0.shape[-1]}, objective has {obj.dim}")
    return np.broadcast_to(x0, (paths, obj.dim)).copy()


def init_linear(obj: Objective, x0, mu: float, eta: float, paths: int = 1) -> LinearSmeState:
    """M = x0, P = 0; Sigma_0 is the read-noise covariance under a constant history,
    which reduces to the one-point component covariance at x0."""
    _check_asgd_params(mu, eta)
    M = _start(obj, x0, paths)
    return LinearSmeState(M, np.zeros_like(M), obj.component_covariance(M))


def init_nonlinear(obj: Objective, x0, mu: float, eta: float, paths: int = 1) -> NonlinearSmeState:
    _check_asgd_params(mu, eta)
    X = _start(obj, x0, paths)
    Y = -np.sqrt(eta / (1.0 - mu)) * obj.grad_full(X, check=False)
    return NonlinearSmeState(X, Y, obj.component_covariance(X))


def init_msgd_sme(obj: Objective, x0, paths: int = 1) -> MsgdSmeState:
    X = _start(obj, x0, paths)
    return MsgdSmeState(X, np.zeros_like(X), obj.component_covariance(X))


def init_sme_sgd(obj: Objective, x0, paths: int = 1, mu: float | None = None,
                 eta: float | None = None) -> SgdSmeState:
    """Memoryless state; with ``mu``/``eta`` also seeds the auxiliary (Y, Sigma)
    used by the staleness-augmented covariance variant."""
    X = _start(obj, x0, paths)
    if mu is None:
        return SgdSmeState(X)
    aux = init_nonlinear(obj, x0, mu, eta, paths)
    return SgdSmeState(X, 0.0, aux.Y, aux.Sigma)


def _noise_sigma(Sigma: np.ndarray, cfg: IntegratorConfig, d: int) -> np.ndarray:
    if cfg.frozen_root is not None:
        return cfg.frozen_root
    if cfg.allow_nonfinite:
        Sigma = _finite_or_zero(Sigma)
    if cfg.sigma_mode == "const":
        return psd_sqrt(cfg.const_sigma(d))
    if d > 1 and Sigma.ndim == 3 and np.array_equal(Sigma, np.broadcast_to(Sigma[:1], Sigma.shape)):
        # shared covariance (frozen at a common start): one eigendecomposition
        return psd_sqrt(Sigma[0])
    return psd_sqrt(Sigma)


def _control_factor(cfg: IntegratorConfig, t: float) -> float:
    if cfg.batch_u is None:
        return 1.0
    u = float(cfg.batch_u(t))
    if u < 0:
        raise ValueError(f"control u(t) must be nonnegative, got {u} at t={t}")
    return 1.0 / np.sqrt(1.0 + u)


def _check_finite_state(cfg: IntegratorConfig, *arrays: np.ndarray) -> None:
    if cfg.allow_nonfinite:
        return
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite SME state")


def linear_sigma_rhs(obj: Objective, M, P, Sigma, mu: float, eta: float) -> np.ndarray:
    """Right-hand side of the covariance law for affine gradients.

    grad f(P) is read as the linear part H P, which equals grad f(P) when the
    gradient is linear and is the correct increment when it is affine.
    """
    c = np.sqrt((1.0 - mu) / eta)
    gM = obj.grad_full(M, check=False)
    HP = obj.hvp(M, P)
    shifted = M + mu * np.sqrt(eta / (1.0 - mu)) * P
    cross = _outer(gM, HP)
    return (-c * Sigma - mu * (cross + np.swapaxes(cross, -1, -2)) - c * _outer(gM, gM)
            + mu * np.sqrt(eta * (1.0 - mu)) * _outer(HP, HP) + c * obj.second_moment(shifted))


def nonlinear_sigma_rhs(obj: Objective, X, Y, Sigma, mu: float, eta: float) -> np.ndarray:
    c = np.sqrt((1.0 - mu) / eta)
    g = obj.grad_full(X, check=False)
    gy = _outer(g, Y)
    return (-c * Sigma
            + c * (obj.second_moment(X) + (1.0 - mu) / mu * _outer(g, g))
            + (1.0 - mu) / (eta * mu) * (c * _outer(Y, Y) + gy + np.swapaxes(gy, -1, -2)))


def step_linear(state: LinearSmeState, obj: Objective, cfg: IntegratorConfig,
                rng: np.random.Generator) -> LinearSmeState:
    """One macro step of dP = -grad f(M) dt - sqrt((1-mu)/eta) P dt + sigma (eta(1-mu))^{1/4} dB, dM = P dt."""
    _check_asgd_params(cfg.mu, cfg.eta)
    if cfg.sigma_mode == "evolve" and not obj.quadratic:
        raise ValueError("the linear-form covariance law needs affine gradients; "
                         "use the nonlinear SME or sigma_mode='freeze'/'const'")
    mu, eta = cfg.mu, cfg.eta
    h = (cfg.dt or asgd_dt(mu, eta)) / cfg.substeps
    c = cfg.friction
    scale = (eta * (1.0 - mu)) ** 0.25
    M, P, Sigma, t, clips = state.M, state.P, state.Sigma, state.t, state.clip_events
    for _ in range(cfg.substeps):
        sigma = _noise_sigma(Sigma, cfg, obj.dim)
        dB = np.sqrt(h) * rng.standard_normal(M.shape)
        gM = obj.grad_full(M, check=False)
        P_new = P + (-gM - c * P) * h + scale * _control_factor(cfg, t) * _matvec(sigma, dB)
        if cfg.sigma_mode == "evolve":
            Sigma, n = _project_psd(Sigma + h * linear_sigma_rhs(obj, M, P, Sigma, mu, eta))
            clips += n
        M = M + P * h
        P = P_new
        t += h
    _check_finite_state(cfg, M, P)
    return LinearSmeState(M, P, Sigma, t, clips)


def step_nonlinear(state: NonlinearSmeState, obj: Objective, cfg: IntegratorConfig,
                   rng: np.random.Generator) -> NonlinearSmeState:
    """One macro step of dY = -grad f(X) dt - sqrt((1-mu)/eta) Y dt,
    dX = Y dt + sqrt(Sigma) eta^{3/4} (1-mu)^{-1/4} (1+u)^{-1/2} dB."""
    if cfg.mu == 0:
        raise ValueError("the nonlinear covariance law is undefined at mu = 0; "
                         "use the SME-SGD baseline for delay-free SGD")
    _check_asgd_params(cfg.mu, cfg.eta)
    mu, eta = cfg.mu, cfg.eta
    h = (cfg.dt or asgd_dt(mu, eta)) / cfg.substeps
    c = cfg.friction
    scale = eta ** 0.75 / (1.0 - mu) ** 0.25
    X, Y, Sigma, t, clips = state.X, state.Y, state.Sigma, state.t, state.clip_events
    for _ in range(cfg.substeps):
        sigma = _noise_sigma(Sigma, cfg, obj.dim)
        dB = np.sqrt(h) * rng.standard_normal(X.shape)
        g = obj.grad_full(X, check=False)
        X_new = X + Y * h + scale * _control_factor(cfg, t) * _matvec(sigma, dB)
        if cfg.sigma_mode == "evolve":
            Sigma, n = _project_psd(Sigma + h * nonlinear_sigma_rhs(obj, X, Y, Sigma, mu, eta))
            clips += n
        Y = Y + (-g - c * Y) * h
        X = X_new
        t += h
    _check_finite_state(cfg, X, Y)
    return NonlinearSmeState(X, Y, Sigma, t, clips)


def step_msgd_sme(state: MsgdSmeState, obj: Objective, cfg: IntegratorConfig,
                  rng: np.random.Generator) -> MsgdSmeState:
    """dP = -grad f(X) dt - (1-mu')/sqrt(eta') P dt + sigma(X) eta'^{1/4} dB, dX = P dt."""
    mu_p, eta_p = cfg.mu, cfg.eta
    if not 0.0 <= mu_p < 1.0:
        raise ValueError("SME-MSGD needs mu' in [0, 1)")
    h = (cfg.dt or np.sqrt(eta_p)) / cfg.substeps
    friction = (1.0 - mu_p) / np.sqrt(eta_p)
    scale = eta_p ** 0.25
    X, P, Sigma, t = state.X, state.P, state.Sigma, state.t
    for _ in range(cfg.substeps):
        if cfg.sigma_mode == "evolve":
            Sigma = obj.component_covariance(X, check=False)
        sigma = _noise_sigma(Sigma, cfg, obj.dim)
        dB = np.sqrt(h) * rng.standard_normal(X.shape)
        P_new = P + (-obj.grad_full(X, check=False) - friction * P) * h + scale * _matvec(sigma, dB)
        X = X + P * h
        P = P_new
        t += h
    _check_finite_state(cfg, X, P)
    return MsgdSmeState(X, P, Sigma, t)


def sme_sgd_drift(obj: Objective, X: np.ndarray, eta: float) -> np.ndarray:
    """grad (f + eta/4 |grad f|^2) = grad f + (eta/2) Hess f grad f."""
    g = obj.grad_full(X, check=False)
    return g + 0.5 * eta * obj.hvp(X, g)


def step_sme_sgd(state: SgdSmeState, obj: Objective, cfg: IntegratorConfig,
                 rng: np.random.Generator) -> SgdSmeState:
    """dX = -grad(f + eta/4 |grad f|^2) dt + (eta Sigma(X))^{1/2} dB.

    Sigma(X) is the one-point component covariance by default.  With
    ``cfg.staleness_sigma`` it is instead carried by the nonlinear SME-ASGD
    covariance law driven by an auxiliary accumulator Y; that variant is an
    experimental aid, not a published model.
    """
    eta = cfg.eta
    h = (cfg.dt or eta) / cfg.substeps
    X, t = state.X, state.t
    Y, Sigma, clips = state.Y, state.Sigma, state.clip_events
    if cfg.staleness_sigma and (Y is None or not 0.0 < cfg.mu < 1.0):
        raise ValueError("staleness-augmented Sigma needs mu in (0, 1) and a state from "
                         "init_sme_sgd(..., mu=, eta=)")
    c = cfg.friction if cfg.staleness_sigma else 0.0
    for _ in range(cfg.substeps):
        if cfg.frozen_root is not None:
            root = cfg.frozen_root
        elif cfg.sigma_mode == "const":
            root = psd_sqrt(cfg.const_sigma(obj.dim))
        else:
            if cfg.staleness_sigma:
                S = Sigma
            elif cfg.sigma_mode == "freeze":
                if Sigma is None:
                    Sigma = obj.component_covariance(X, check=False)
                S = Sigma
            else:
                S = obj.component_covariance(X, check=False)
            root = _noise_sigma(S, replace(cfg, sigma_mode="evolve"), obj.dim)
        dB = np.sqrt(h) * rng.standard_normal(X.shape)
        X_new = X - sme_sgd_drift(obj, X, eta) * h + np.sqrt(eta) * _matvec(root, dB)
        if cfg.staleness_sigma:
            if cfg.sigma_mode == "evolve":
                Sigma, n = _project_psd(Sigma + h * nonlinear_sigma_rhs(obj, X, Y, Sigma, cfg.mu, eta))
                clips += n
            Y = Y + (-obj.grad_full(X, check=False) - c * Y) * h
        X = X_new
        t += h
    _check_finite_state(cfg, X)
    return SgdSmeState(X, t, Y, Sigma, clips)


_STEPPERS = {
    "sme-asgd-linear": (step_linear, "M"),
    "sme-asgd": (step_nonlinear, "X"),
    "sme-msgd": (step_msgd_sme, "X"),
    "sme-sgd": (step_sme_sgd, "X"),
}


def integrate(method: str, state, obj: Objective, cfg: IntegratorConfig, steps: int,
              rng: np.random.Generator, record: np.ndarray | None = None):
    """Advance ``steps`` macro steps, recording the position at indices ``record``.

    Returns ``(records, final_state)`` with records of shape ``(len(record), paths, d)``.
    """
    stepper, attr = _STEPPERS[method]
    if cfg.sigma_mode in ("freeze", "const") and cfg.frozen_root is None:
        S = state.Sigma if cfg.sigma_mode == "freeze" else None
        if cfg.sigma_mode == "freeze" and S is None:
            S = obj.component_covariance(getattr(state, attr), check=False)
        cfg = replace(cfg, frozen_root=_noise_sigma(S, cfg, obj.dim))
    record = np.arange(steps + 1) if record is None else np.asarray(record)
    out = np.empty((record.size,) + getattr(state, attr).shape)
    pos = {int(k): j for j, k in enumerate(record)}
    if 0 in pos:
        out[pos[0]] = getattr(state, attr)
    for k in range(1, steps + 1):
        state = stepper(state, obj, cfg, rng)
        if k in pos:
            out[pos[k]] = getattr(state, attr)
    return out, state


def initial_state(method: str, obj: Objective, x0, cfg: IntegratorConfig, paths: int):
    if method == "sme-asgd-linear":
        return init_linear(obj, x0, cfg.mu, cfg.eta, paths)
    if method == "sme-asgd":
        return init_nonlinear(obj, x0, cfg.mu, cfg.eta, paths)
    if method == "sme-msgd":
        return init_msgd_sme(obj, x0, paths)
    if method == "sme-sgd":
        if cfg.staleness_sigma:
            return init_sme_sgd(obj, x0, paths, cfg.mu, cfg.eta)
        return init_sme_sgd(obj, x0, paths)
    raise ValueError(f"unknown continuous model {method!r}")


def default_dt(method: str, cfg: IntegratorConfig) -> float:
    if cfg.dt is not None:
        return cfg.dt
    if method in ("sme-asgd-linear", "sme-asgd"):
        return asgd_dt(cfg.mu, cfg.eta)
    if method == "sme-msgd":
        return float(np.sqrt(cfg.eta))
    return float(cfg.eta)


def with_zero_noise(cfg: IntegratorConfig) -> IntegratorConfig:
    return replace(cfg, sigma_mode="const", Sigma_const=0.0)
