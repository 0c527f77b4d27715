"""Monte Carlo harness: independent paths of any simulator, checkpoint statistics,
basin fractions and cross-model error metrics.

Seeding rule: paths are grouped into blocks of ``block_size`` consecutive
sample indices and block ``b`` draws from
``default_rng(SeedSequence(master_seed, spawn_key=(b,)))``.  Blocks are
reduced in index order, so statistics are bitwise identical for any number
of workers.
"""

from __future__ import annotations

import os
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import discrete, sme
from .objectives import Objective

METHODS = ("asgd", "asgd-batch", "msgd", "sme-asgd-linear", "sme-asgd", "sme-msgd", "sme-sgd")
DEFAULT_BLOCK = 250


@dataclass(frozen=True)
class SimSpec:
    """Everything needed to simulate one model; ``mu``/``eta`` belong to ASGD and
    its SMEs, ``mu_prime``/``eta_prime`` to MSGD and SME-MSGD."""

    method: str
    objective: Objective
    x0: tuple
    steps: int
    mu: float = 0.0
    eta: float = 0.01
    mu_prime: float | None = None
    eta_prime: float | None = None
    substeps: int = 1
    sigma_mode: str = "evolve"
    Sigma_const: float | None = None
    batch_sizes: tuple | None = None
    per_sample_staleness: bool = False
    staleness_sigma: bool = False
    batch_u: object = None
    checkpoint_every: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        object.__setattr__(self, "x0", tuple(np.atleast_1d(np.asarray(self.x0, dtype=float)).tolist()))
        if len(self.x0) != self.objective.dim:
            raise ValueError(f"x0 has {len(self.x0)} coordinates, objective has dim {self.objective.dim}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_sizes is not None:
            object.__setattr__(self, "batch_sizes", tuple(int(b) for b in self.batch_sizes))
        if self.method in ("msgd", "sme-msgd") and (self.mu_prime is None or self.eta_prime is None):
            raise ValueError(f"{self.method} needs mu_prime and eta_prime")
        if self.method == "asgd-batch" and self.batch_sizes is None:
            raise ValueError("asgd-batch needs batch_sizes")

    @property
    def checkpoints(self) -> np.ndarray:
        every = self.checkpoint_every or (1 if self.objective.dim < 10 else 10)
        ks = np.arange(0, self.steps + 1, every)
        if ks[-1] != self.steps:
            ks = np.append(ks, self.steps)
        return ks

    def integrator_config(self, allow_nonfinite: bool = False) -> sme.IntegratorConfig:
        if self.method == "sme-msgd":
            mu, eta = self.mu_prime, self.eta_prime
        else:
            mu, eta = self.mu, self.eta
        return sme.IntegratorConfig(mu, eta, substeps=self.substeps, sigma_mode=self.sigma_mode,
                                    Sigma_const=self.Sigma_const, batch_u=self.batch_u,
                                    staleness_sigma=self.staleness_sigma,
                                    allow_nonfinite=allow_nonfinite)

    @property
    def dt(self) -> float:
        """Model time per iteration."""
        if self.method in ("asgd", "asgd-batch"):
            return float(np.sqrt(self.eta * (1.0 - self.mu)))
        if self.method == "msgd":
            return float(np.sqrt(self.eta_prime))
        return sme.default_dt(self.method, self.integrator_config())


@dataclass
class BlockResult:
    records: np.ndarray
    diverged: np.ndarray


def simulate(spec: SimSpec, paths: int, rng: np.random.Generator,
             allow_divergence: bool = False) -> BlockResult:
    """Simulate ``paths`` paths; records have shape ``(checkpoints, paths, d)``."""
    obj, ks = spec.objective, spec.checkpoints
    x0 = np.asarray(spec.x0)
    if spec.method in ("asgd", "asgd-batch", "msgd"):
        if spec.method == "msgd":
            cfg = discrete.RunConfig(spec.eta_prime, spec.steps, x0, momentum_mu_prime=spec.mu_prime)
            traj = discrete.msgd_run(obj, cfg, rng, paths, allow_divergence=allow_divergence)
        else:
            batch = spec.batch_sizes or (1,) * spec.steps
            cfg = discrete.RunConfig(spec.eta, spec.steps, x0, batch_sizes=batch)
            traj = discrete.asgd_minibatch_run(obj, discrete.StalenessModel(spec.mu), cfg, rng, paths,
                                               per_sample_staleness=spec.per_sample_staleness,
                                               allow_divergence=allow_divergence)
        return BlockResult(traj.iterates[ks], traj.diverged)
    cfg = spec.integrator_config(allow_nonfinite=allow_divergence)
    state = sme.initial_state(spec.method, obj, x0, cfg, paths)
    with np.errstate(all="ignore" if allow_divergence else "warn"):
        records, _ = sme.integrate(spec.method, state, obj, cfg, spec.steps, rng, record=ks)
    bad = ~np.isfinite(records).all(axis=-1)
    diverged = np.where(bad.any(axis=0), ks[np.argmax(bad, axis=0)], -1)
    return BlockResult(records, diverged)


def block_rng(master_seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(block,)))


@dataclass
class EnsembleStats:
    checkpoints: np.ndarray
    times: np.ndarray
    mean: np.ndarray
    second_moment: np.ndarray
    stderr: np.ndarray
    second_moment_stderr: np.ndarray
    sample_count: int
    finals: np.ndarray
    divergences: list = field(default_factory=list)
    basin_counts: dict | None = None

    @property
    def variance(self) -> np.ndarray:
        return self.second_moment - self.mean**2

    @property
    def second_moment_norm(self) -> np.ndarray:
        """E|X|^2 per checkpoint."""
        return self.second_moment.sum(axis=-1)


def _run_block(args):
    spec, master_seed, block, paths, allow = args
    res = simulate(spec, paths, block_rng(master_seed, block), allow_divergence=allow)
    keep = res.diverged < 0
    x = res.records[:, keep, :]
    divs = [(int(j), int(res.diverged[j])) for j in np.nonzero(~keep)[0]]
    with np.errstate(over="ignore"):
        # finite but enormous paths may still overflow the fourth power
        return (x.sum(axis=1), (x**2).sum(axis=1), (x**4).sum(axis=1), int(keep.sum()),
                res.records[-1, keep, :], divs)


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("SME_LAB_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_ensemble(spec: SimSpec, samples: int, master_seed: int, workers: int | None = None,
                 block_size: int = DEFAULT_BLOCK, allow_divergence: bool = False,
                 minimizers=None) -> EnsembleStats:
    """Simulate ``samples`` independent paths and aggregate checkpoint statistics.

    Divergent paths raise :class:`discrete.DivergenceError` unless
    ``allow_divergence`` is set, in which case they are excluded and listed in
    ``divergences`` as ``(sample_index, step)``.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    n_blocks = -(-samples // block_size)
    jobs = [(spec, master_seed, b, min(block_size, samples - b * block_size), allow_divergence)
            for b in range(n_blocks)]
    n_workers = min(worker_count(workers), n_blocks)
    if n_workers > 1:
        try:
            pickle.dumps(spec)
        except Exception:
            n_workers = 1
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_run_block, jobs))
    else:
        results = [_run_block(j) for j in jobs]

    s1 = s2 = s4 = None
    count, finals, divs = 0, [], []
    for b, (a1, a2, a4, c, fin, dv) in enumerate(results):
        s1 = a1 if s1 is None else s1 + a1
        s2 = a2 if s2 is None else s2 + a2
        s4 = a4 if s4 is None else s4 + a4
        count += c
        finals.append(fin)
        divs.extend((b * block_size + j, st) for j, st in dv)
    if count == 0:
        raise FloatingPointError("every path diverged")
    mean, second = s1 / count, s2 / count
    denom = max(count - 1, 1)
    with np.errstate(over="ignore", invalid="ignore"):
        var = np.maximum(second - mean**2, 0.0)
        var4 = np.maximum(s4 / count - second**2, 0.0)
    stats = EnsembleStats(
        checkpoints=spec.checkpoints, times=spec.checkpoints * spec.dt, mean=mean,
        second_moment=second, stderr=np.sqrt(var / denom),
        second_moment_stderr=np.sqrt(var4 / denom), sample_count=count,
        finals=np.concatenate(finals), divergences=divs)
    if minimizers is not None:
        stats.basin_counts = basin_counts(stats.finals, minimizers)
    return stats


def basin_counts(finals: np.ndarray, minimizers, radius: float | None = None) -> dict:
    """Assign each final point to its nearest minimizer; points farther than
    ``radius`` from every minimizer are counted under ``None``."""
    finals = np.atleast_2d(np.asarray(finals, dtype=float))
    mins = np.asarray(minimizers, dtype=float).reshape(len(minimizers), -1)
    dist = np.linalg.norm(finals[:, None, :] - mins[None, :, :], axis=-1)
    nearest = dist.argmin(axis=1)
    counts = {i: 0 for i in range(len(mins))}
    counts[None] = 0
    for j, i in enumerate(nearest):
        if radius is not None and dist[j, i] > radius:
            counts[None] += 1
        else:
            counts[int(i)] += 1
    return counts


def basin_fractions(finals: np.ndarray, minimizers=(-0.9575, 0.9575),
                    radius: float | None = None) -> tuple[np.ndarray, float]:
    """Fraction of final iterates per basin, plus the unclassified fraction."""
    counts = basin_counts(finals, minimizers, radius)
    total = sum(counts.values())
    fr = np.array([counts[i] / total for i in range(len(minimizers))])
    return fr, counts[None] / total


def weak_error(a: EnsembleStats, b: EnsembleStats) -> tuple[float, float]:
    """sup_k |E a_k - E b_k| (Euclidean) and sup_k |E|a_k|^2 - E|b_k|^2|."""
    if a.checkpoints.shape != b.checkpoints.shape or np.any(a.checkpoints != b.checkpoints):
        raise ValueError("checkpoint grids differ")
    mean_err = np.linalg.norm(a.mean - b.mean, axis=-1).max()
    second_err = np.abs(a.second_moment_norm - b.second_moment_norm).max()
    return float(mean_err), float(second_err)


def fit_decay_rate(t, series, z_inf: float = 0.0, window: tuple[float, float] | None = None,
                   envelope: bool = False) -> float:
    """Least-squares slope of log|series - z_inf| over ``window``.

    ``envelope`` replaces |series - z_inf| by its running maximum from the
    right, which removes the zeros of oscillating decays.
    """
    t = np.asarray(t, dtype=float)
    r = np.abs(np.asarray(series, dtype=float) - z_inf)
    if envelope:
        r = np.maximum.accumulate(r[::-1])[::-1]
    sel = np.ones_like(t, dtype=bool) if window is None else (t >= window[0]) & (t <= window[1])
    if sel.sum() < 2:
        raise ValueError("fit window holds fewer than two points")
    if np.any(r[sel] <= 0):
        raise ValueError("non-positive residuals in the fit window")
    slope, _ = np.polyfit(t[sel], np.log(r[sel]), 1)
    return float(slope)


def sign_changes(series: np.ndarray, threshold: np.ndarray | float = 0.0) -> int:
    """Number of sign changes among entries with |value| > threshold."""
    s = np.asarray(series, dtype=float)
    thr = np.broadcast_to(np.asarray(threshold, dtype=float), s.shape)
    signs = np.sign(s[np.abs(s) > thr])
    return int(np.count_nonzero(signs[1:] != signs[:-1]))
