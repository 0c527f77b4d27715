"""Discrete algorithms: ASGD with geometric staleness, mini-batch ASGD, MSGD,
and the exact reformulations through expected reads and accumulators.

All simulators advance a batch of independent paths at once.  Iterate arrays
have shape ``(steps + 1, paths, d)``.  Before time zero every path sits at
``x0``, so a read with ``tau_k > k`` returns ``x0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .objectives import Objective


class DivergenceError(FloatingPointError):
    """A simulated path produced a non-finite value."""

    def __init__(self, step: int, path: int, seed=None):
        self.step = step
        self.path = path
        self.seed = seed
        where = f"step {step}, path {path}" + (f", seed {seed}" if seed is not None else "")
        super().__init__(f"non-finite iterate at {where}")


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class StalenessModel:
    """Geometric delay law P(tau = l) = (1 - mu) mu^l, l = 0, 1, 2, ..."""

    mu: float

    def __post_init__(self):
        if not 0.0 <= self.mu < 1.0:
            raise ValueError(f"staleness parameter mu must lie in [0, 1), got {self.mu}")

    @property
    def mean(self) -> float:
        return self.mu / (1.0 - self.mu)

    def pmf(self, l) -> np.ndarray:
        l = np.asarray(l)
        return np.where(l >= 0, (1.0 - self.mu) * self.mu ** np.maximum(l, 0), 0.0)

    def sample(self, rng: np.random.Generator, size=None):
        # numpy's geometric counts trials (support 1, 2, ...)
        return rng.geometric(1.0 - self.mu, size=size) - 1


def sample_staleness(model: StalenessModel, rng: np.random.Generator, size=None):
    return model.sample(rng, size)


@dataclass
class RunConfig:
    eta: float
    steps: int
    x0: np.ndarray
    seed: int | None = None
    batch_sizes: np.ndarray | None = None
    momentum_mu_prime: float | None = None

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if not self.eta >= 0:
            raise ValueError("eta must be nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.batch_sizes is not None:
            self.batch_sizes = np.asarray(self.batch_sizes, dtype=int)
            if self.batch_sizes.size < self.steps:
                raise ValueError("batch schedule shorter than the number of steps")
            if np.any(self.batch_sizes < 1):
                raise ValueError("batch sizes must be >= 1")


@dataclass
class Trajectory:
    """Iterates of a batch of paths plus the random choices that produced them.

    ``taus`` has shape ``(steps, paths)`` (``(steps, paths, b)`` with
    per-sample staleness); ``gammas`` is ``(steps, paths)`` for unit batches
    and otherwise a list of ``(paths, b_k)`` arrays.  ``diverged`` holds the
    first non-finite step per path or -1.
    """

    iterates: np.ndarray
    taus: np.ndarray | None
    gammas: object
    dt: float = 1.0
    diverged: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.diverged is None:
            self.diverged = np.full(self.iterates.shape[1], -1)

    @property
    def steps(self) -> int:
        return self.iterates.shape[0] - 1

    @property
    def paths(self) -> int:
        return self.iterates.shape[1]

    def path(self, j: int = 0) -> np.ndarray:
        return self.iterates[:, j, :]

    def gamma_column(self, j: int = 0) -> list[str]:
        if isinstance(self.gammas, np.ndarray):
            return [str(int(g)) for g in self.gammas[:, j]]
        return [";".join(str(int(g)) for g in gk[j]) for gk in self.gammas]


def _initial_history(x0: np.ndarray, steps: int, paths: int) -> np.ndarray:
    hist = np.empty((steps + 1, paths, x0.size))
    hist[0] = x0
    return hist


def _check_step(x: np.ndarray, k: int, diverged: np.ndarray, allow_divergence: bool, seed) -> None:
    bad = ~np.isfinite(x).all(axis=-1)
    if bad.any():
        fresh = bad & (diverged < 0)
        if not allow_divergence:
            raise DivergenceError(k, int(np.argmax(bad)), seed)
        diverged[fresh] = k


def _delayed_read(hist: np.ndarray, k: int, tau: np.ndarray) -> np.ndarray:
    rows = np.maximum(k - tau, 0)
    if tau.ndim == 1:
        return hist[rows, np.arange(tau.size)]
    return hist[rows, np.arange(tau.shape[0])[:, None]]


def asgd_run(obj: Objective, model: StalenessModel, cfg: RunConfig, rng=None, paths: int = 1,
             taus: np.ndarray | None = None, gammas: np.ndarray | None = None,
             allow_divergence: bool = False) -> Trajectory:
    """x_{k+1} = x_k - eta grad f_{gamma_k}(x_{k - tau_k}).

    Explicit ``taus``/``gammas`` of shape ``(steps, paths)`` replace sampling,
    which lets other recursions be driven by the same random streams.
    """
    ones = np.ones(cfg.steps, dtype=int)
    return asgd_minibatch_run(obj, model, RunConfig(cfg.eta, cfg.steps, cfg.x0, cfg.seed, ones),
                              rng, paths, taus=taus, gammas=gammas, allow_divergence=allow_divergence)


def asgd_minibatch_run(obj: Objective, model: StalenessModel, cfg: RunConfig, rng=None,
                       paths: int = 1, per_sample_staleness: bool = False,
                       enumerate_batch: bool = False, taus: np.ndarray | None = None,
                       gammas=None, allow_divergence: bool = False) -> Trajectory:
    """x_{k+1} = x_k - eta/(1+u_k) sum_j grad f_{gamma_j}(x_{k - tau_k}).

    The batch is sampled with replacement and shares one delay per step unless
    ``per_sample_staleness`` is set.  ``enumerate_batch`` replaces sampling by
    the exact full gradient at the delayed read (a diagnostic mode).

    Random draws happen in a fixed order: all delays up front, then the
    component indices step by step.
    """
    if cfg.batch_sizes is None:
        raise ValueError("mini-batch run needs cfg.batch_sizes")
    rng = make_rng(rng if rng is not None else cfg.seed)
    steps, x0 = cfg.steps, cfg.x0
    batch = cfg.batch_sizes[:steps]
    unit = bool(np.all(batch == 1))
    if taus is None:
        if per_sample_staleness:
            taus = [model.sample(rng, (paths, int(b))) for b in batch]
        else:
            taus = model.sample(rng, (steps, paths))
    hist = _initial_history(x0, steps, paths)
    drawn = [] if gammas is None else gammas
    diverged = np.full(paths, -1)
    with np.errstate(all="ignore"):
        for k in range(steps):
            b = int(batch[k])
            if enumerate_batch:
                reads = _delayed_read(hist, k, taus[k] if not per_sample_staleness else taus[k][:, 0])
                g = obj.grad_full(reads, check=False)
            else:
                if gammas is None:
                    gk = rng.integers(0, obj.n, size=(paths, b))
                    drawn.append(gk)
                else:
                    gk = np.asarray(gammas[k]).reshape(paths, -1)
                if per_sample_staleness:
                    reads = _delayed_read(hist, k, taus[k])
                else:
                    reads = _delayed_read(hist, k, taus[k])[:, None, :]
                g = obj.grads_at(gk, reads).mean(axis=1)
            hist[k + 1] = hist[k] - cfg.eta * g
            _check_step(hist[k + 1], k + 1, diverged, allow_divergence, cfg.seed)
    if enumerate_batch:
        gamma_log = None
    elif unit and gammas is None:
        gamma_log = np.stack([g[:, 0] for g in drawn]) if drawn else np.empty((0, paths), dtype=int)
    elif unit:
        gamma_log = np.asarray(gammas).reshape(steps, paths)
    else:
        gamma_log = drawn
    if not per_sample_staleness:
        taus = np.asarray(taus)
    dt = np.sqrt(cfg.eta * (1.0 - model.mu))
    return Trajectory(hist, taus, gamma_log, dt=dt, diverged=diverged)


def msgd_run(obj: Objective, cfg: RunConfig, rng=None, paths: int = 1,
             allow_divergence: bool = False) -> Trajectory:
    """v_{k+1} = mu' v_k - eta' grad f_{gamma_k}(x_k), x_{k+1} = x_k + v_{k+1}, v_0 = 0."""
    mu_p = cfg.momentum_mu_prime
    if mu_p is None or not 0.0 <= mu_p < 1.0:
        raise ValueError("MSGD needs momentum_mu_prime in [0, 1)")
    rng = make_rng(rng if rng is not None else cfg.seed)
    gammas = rng.integers(0, obj.n, size=(cfg.steps, paths))
    x = _initial_history(cfg.x0, cfg.steps, paths)
    v = np.zeros((paths, cfg.x0.size))
    diverged = np.full(paths, -1)
    with np.errstate(all="ignore"):
        for k in range(cfg.steps):
            v = mu_p * v - cfg.eta * obj.grads_at(gammas[k], x[k])
            x[k + 1] = x[k] + v
            _check_step(x[k + 1], k + 1, diverged, allow_divergence, cfg.seed)
    return Trajectory(x, None, gammas, dt=np.sqrt(cfg.eta), diverged=diverged)


def expected_read_sequence(x: np.ndarray, mu: float) -> np.ndarray:
    """m_0 = x_0 and m_{k+1} = (1 - mu) x_{k+1} + mu m_k along axis 0."""
    x = np.asarray(x, dtype=float)
    m = np.empty_like(x)
    m[0] = x[0]
    for k in range(len(x) - 1):
        m[k + 1] = (1.0 - mu) * x[k + 1] + mu * m[k]
    return m


def reconstruct_from_expected_read(m: np.ndarray, mu: float) -> np.ndarray:
    """Invert :func:`expected_read_sequence`: x_{k+1} = (m_{k+1} - mu m_k) / (1 - mu)."""
    if mu >= 1.0:
        raise ValueError("reconstruction needs mu < 1")
    m = np.asarray(m, dtype=float)
    x = np.empty_like(m)
    x[0] = m[0]
    x[1:] = (m[1:] - mu * m[:-1]) / (1.0 - mu)
    return x


def auxiliary_y_sequence(obj: Objective, x: np.ndarray, mu: float, eta: float) -> np.ndarray:
    """y_k = -alpha E_tau grad f(x_{k - tau}), alpha = sqrt(eta / (1 - mu)).

    Computed by y_0 = -alpha grad f(x_0), y_{k+1} = mu y_k - alpha (1 - mu) grad f(x_{k+1}).
    """
    alpha = np.sqrt(eta / (1.0 - mu))
    x = np.asarray(x, dtype=float)
    g = obj.grad_full(x, check=False)
    y = np.empty_like(g)
    y[0] = -alpha * g[0]
    for k in range(len(x) - 1):
        y[k + 1] = mu * y[k] - alpha * (1.0 - mu) * g[k + 1]
    return y


def mp_system_run(obj: Objective, mu: float, eta: float, x0, taus: np.ndarray,
                  gammas: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run ASGD in its (m, p) form with the given delay and sample streams.

    p_{k+1} = p_k - dt sqrt((1-mu)/eta) p_k - dt grad f(m_k) + dt (grad f(m_k) - grad f_gamma(x_{k-tau})),
    m_{k+1} = m_k + dt p_{k+1}, with dt = sqrt(eta (1 - mu)).  Delayed reads
    come from iterates reconstructed out of m.  Returns ``(m, p, x)``.
    """
    taus = np.asarray(taus)
    gammas = np.asarray(gammas)
    steps, paths = taus.shape
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dt = np.sqrt(eta * (1.0 - mu))
    friction = np.sqrt((1.0 - mu) / eta)
    m = _initial_history(x0, steps, paths)
    p = np.zeros_like(m)
    x = _initial_history(x0, steps, paths)
    for k in range(steps):
        g_mean = obj.grad_full(m[k], check=False)
        noise = g_mean - obj.grads_at(gammas[k], _delayed_read(x, k, taus[k]))
        p[k + 1] = p[k] - dt * friction * p[k] - dt * g_mean + dt * noise
        m[k + 1] = m[k] + dt * p[k + 1]
        x[k + 1] = (m[k + 1] - mu * m[k]) / (1.0 - mu)
    return m, p, x


def read_noise(obj: Objective, history: np.ndarray, mu: float, rng, draws: int) -> np.ndarray:
    """Samples of grad f(m_k) - grad f_gamma(x_{k - tau}) for a fixed history.

    ``history`` holds x_0..x_k (shape ``(k+1, d)``); older reads return x_0.
    """
    history = np.asarray(history, dtype=float)
    k = len(history) - 1
    m = expected_read_sequence(history, mu)[-1]
    taus = StalenessModel(mu).sample(rng, draws)
    gammas = rng.integers(0, obj.n, size=draws)
    reads = history[np.maximum(k - taus, 0)]
    return obj.grad_full(m, check=False) - obj.grads_at(gammas, reads)
