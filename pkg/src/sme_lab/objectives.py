"""Finite-sum objectives f = (1/n) sum_i f_i with vectorized gradients.

Every array-valued method accepts points of shape ``(..., d)`` so the
simulators can evaluate a whole batch of paths at once.  Component indices
are zero-based throughout the package.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Sequence

import numpy as np

GradMap = Callable[[np.ndarray], np.ndarray]


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.shape[-1] != dim:
        raise ValueError(f"point has trailing dimension {x.shape[-1]}, expected {dim}")
    return x


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input point")


class Objective:
    """Base class: an average of ``n`` components on R^d.

    Subclasses implement :meth:`component_grads`; everything else has a
    generic (possibly slow) fallback.
    """

    name = "custom"

    def __init__(self, dim: int, n: int, lipschitz_bounds: Sequence[float] | None = None,
                 quadratic: bool = False, params: dict | None = None):
        if dim < 1 or n < 1:
            raise ValueError("an objective needs dim >= 1 and n >= 1")
        if lipschitz_bounds is not None:
            lipschitz_bounds = tuple(float(v) for v in lipschitz_bounds)
            if len(lipschitz_bounds) != n:
                raise ValueError("one Lipschitz bound per component is required")
        self.dim = int(dim)
        self.n = int(n)
        self.lipschitz_bounds = lipschitz_bounds
        # affine gradients; the linear-form covariance law is only valid then
        self.quadratic = bool(quadratic)
        self.params = dict(params or {})

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim}, n={self.n})"

    # -- core vectorized surface -------------------------------------------------
    def component_grads(self, x: np.ndarray) -> np.ndarray:
        """All component gradients, shape ``(..., n, d)``."""
        raise NotImplementedError

    def grads_at(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Gradient of component ``idx[...]`` at ``x[...]``; shapes ``(...)`` and ``(..., d)``."""
        idx = np.asarray(idx)
        x = np.broadcast_to(x, idx.shape + (self.dim,))
        out = np.empty(idx.shape + (self.dim,))
        for i in np.unique(idx):
            sel = idx == i
            out[sel] = self._single_component(int(i), x[sel])
        return out

    def _single_component(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.component_grads(x)[..., i, :]

    def grad_full(self, x, check: bool = True) -> np.ndarray:
        """Mean gradient. Simulators pass ``check=False`` so diverged paths can propagate."""
        x = _as_points(x, self.dim)
        if check:
            _check_finite(x)
        return self.component_grads(x).mean(axis=-2)

    def hvp(self, x, v) -> np.ndarray:
        """Hessian-vector product of f by central differences of the full gradient."""
        x = _as_points(x, self.dim)
        v = np.asarray(v, dtype=float)
        h = 1e-5 * (1.0 + np.abs(x).max(axis=-1, keepdims=True))
        return (self.grad_full(x + h * v, check=False) - self.grad_full(x - h * v, check=False)) / (2 * h)

    def hessian(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        eye = np.eye(self.dim)
        cols = [self.hvp(x, eye[j]) for j in range(self.dim)]
        return np.stack(cols, axis=-1)

    def loss_component(self, i: int, x) -> np.ndarray:
        raise NotImplementedError(f"{self.name} has no scalar loss values")

    def loss(self, x) -> np.ndarray:
        return np.mean([self.loss_component(i, x) for i in range(self.n)], axis=0)

    # -- checked single-point API ------------------------------------------------
    def grad_component(self, i: int, x) -> np.ndarray:
        if not 0 <= i < self.n:
            raise IndexError(f"component index {i} out of range [0, {self.n})")
        x = _as_points(x, self.dim)
        _check_finite(x)
        return self.grads_at(np.full(x.shape[:-1], i), x)

    def component_covariance(self, x, check: bool = True) -> np.ndarray:
        """(1/n) sum_i (g_i - g)(g_i - g)^T at x, shape ``(..., d, d)``."""
        x = _as_points(x, self.dim)
        if check:
            _check_finite(x)
        g = self.component_grads(x)
        dev = g - g.mean(axis=-2, keepdims=True)
        return np.einsum("...ni,...nj->...ij", dev, dev) / self.n

    def second_moment(self, x) -> np.ndarray:
        """(1/n) sum_i g_i g_i^T at x."""
        g = self.component_grads(_as_points(x, self.dim))
        return np.einsum("...ni,...nj->...ij", g, g) / self.n


class CustomObjective(Objective):
    """Objective built from user-supplied per-component gradient maps."""

    def __init__(self, dim: int, components: Sequence[GradMap],
                 lipschitz_bounds: Sequence[float] | None = None,
                 losses: Sequence[Callable] | None = None, quadratic: bool = False):
        super().__init__(dim, len(components), lipschitz_bounds, quadratic)
        self.components = tuple(components)
        self.losses = tuple(losses) if losses is not None else None

    def _single_component(self, i, x):
        x = np.atleast_2d(x)
        return np.stack([np.asarray(self.components[i](p), dtype=float) for p in x])

    def component_grads(self, x):
        x = _as_points(x, self.dim)
        flat = x.reshape(-1, self.dim)
        g = np.stack([self._single_component(i, flat) for i in range(self.n)], axis=1)
        return g.reshape(x.shape[:-1] + (self.n, self.dim))

    def loss_component(self, i, x):
        if self.losses is None:
            return super().loss_component(i, x)
        return self.losses[i](np.asarray(x, dtype=float))


# Profiles h with first and second derivatives, applied coordinatewise.
_PROFILES: dict[str, tuple[Callable, Callable, Callable]] = {
    "square": (lambda z: z**2, lambda z: 2 * z, lambda z: 2 * np.ones_like(z)),
    "quartic": (lambda z: z**4, lambda z: 4 * z**3, lambda z: 12 * z**2),
    "gauss": (lambda z: -np.exp(-z**2), lambda z: 2 * z * np.exp(-z**2),
              lambda z: 2 * np.exp(-z**2) * (1 - 2 * z**2)),
}
# sup |h''| where finite
_PROFILE_CURVATURE = {"square": 2.0, "gauss": 2.0}


class SeparableObjective(Objective):
    """Components f_j(x) = sum_i w_i h(x_i - s_j) + b_j sum_i x_i + o_j.

    Covers every catalog problem: ``w`` scales each coordinate, ``s_j`` shifts
    component ``j``, ``b_j`` adds a linear tilt and ``o_j`` a constant.
    """

    def __init__(self, name: str, profile: str, weights, shifts, tilts=None, offsets=None,
                 params: dict | None = None):
        if profile not in _PROFILES:
            raise ValueError(f"unknown profile {profile!r}")
        weights = np.atleast_1d(np.asarray(weights, dtype=float))
        shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
        n = shifts.size
        tilts = np.zeros(n) if tilts is None else np.broadcast_to(np.asarray(tilts, float), (n,)).copy()
        offsets = np.zeros(n) if offsets is None else np.broadcast_to(np.asarray(offsets, float), (n,)).copy()
        bounds = None
        if profile in _PROFILE_CURVATURE:
            bounds = [_PROFILE_CURVATURE[profile] * float(np.abs(weights).max())] * n
        super().__init__(weights.size, n, bounds, quadratic=(profile == "square"), params=params)
        self.name = name
        self.profile = profile
        self.weights = weights
        self.shifts = shifts
        self.tilts = tilts
        self.offsets = offsets
        for arr in (self.weights, self.shifts, self.tilts, self.offsets):
            arr.setflags(write=False)

    def component_grads(self, x):
        x = _as_points(x, self.dim)
        _, dh, _ = _PROFILES[self.profile]
        z = x[..., None, :] - self.shifts[:, None]
        return self.weights * dh(z) + self.tilts[:, None]

    def grads_at(self, idx, x):
        _, dh, _ = _PROFILES[self.profile]
        idx = np.asarray(idx)
        z = x - self.shifts[idx][..., None]
        return self.weights * dh(z) + self.tilts[idx][..., None]

    def grad_full(self, x, check: bool = True):
        x = _as_points(x, self.dim)
        if check:
            _check_finite(x)
        if self.profile == "square":
            # closed form avoids materializing (..., n, d)
            return self.weights * 2 * (x - self.shifts.mean()) + self.tilts.mean()
        return super().grad_full(x, check=False)

    def hessian_diag(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        _, _, d2h = _PROFILES[self.profile]
        z = x[..., None, :] - self.shifts[:, None]
        return self.weights * d2h(z).mean(axis=-2)

    def hvp(self, x, v):
        return self.hessian_diag(x) * np.asarray(v, dtype=float)

    def hessian(self, x):
        diag = self.hessian_diag(x)
        return diag[..., :, None] * np.eye(self.dim)

    def loss_component(self, i, x):
        x = _as_points(x, self.dim)
        h, _, _ = _PROFILES[self.profile]
        return (self.weights * h(x - self.shifts[i])).sum(-1) + self.tilts[i] * x.sum(-1) + self.offsets[i]

    def component_covariance(self, x, check: bool = True):
        x = _as_points(x, self.dim)
        if check:
            _check_finite(x)
        if self.profile == "square":
            # deviations 2 w (s_bar - s_j) + (b_j - b_bar) do not depend on x
            dev = (-2 * self.weights * (self.shifts - self.shifts.mean())[:, None]
                   + (self.tilts - self.tilts.mean())[:, None])
            cov = dev.T @ dev / self.n
            return np.broadcast_to(cov, x.shape[:-1] + cov.shape).copy()
        return super().component_covariance(x, check=False)


CATALOG = ("quad1d", "quartic1d", "doublewell", "linquad", "sep-quad-nd", "sep-quartic-nd",
           "scaled-quad")


def _nd_coefficients(dim: int, coeffs, seed) -> tuple[np.ndarray, dict]:
    if coeffs is not None:
        c = np.asarray(coeffs, dtype=float).ravel()
        if dim is not None and c.size != dim:
            raise ValueError(f"got {c.size} coefficients for dim={dim}")
        return c, {"coeffs": c.tolist()}
    if dim is None or dim < 1:
        raise ValueError("nd objectives need dim >= 1 or explicit coeffs")
    seed = 0 if seed is None else int(seed)
    c = np.random.default_rng(seed).uniform(0.0, 5.0, size=int(dim))
    return c, {"seed": seed, "coeffs": c.tolist()}


def builtin_objective(name: str, **params) -> SeparableObjective:
    """Construct a catalog problem by name.

    ``linquad`` takes ``n``; the ``*-nd`` problems take ``dim`` plus either
    ``coeffs`` or ``seed``; ``scaled-quad`` takes curvature ``a`` and an
    optional ``shift`` that splits it into two components ½a(x∓shift)².
    """
    if name == "quad1d":
        return SeparableObjective(name, "square", [1.0], [1.0, -1.0], offsets=-1.0)
    if name == "quartic1d":
        return SeparableObjective(name, "quartic", [1.0], [1.0, -1.0], offsets=-1.0)
    if name == "doublewell":
        return SeparableObjective(name, "gauss", [2.0], [1.0, -1.0], offsets=1.0)
    if name == "linquad":
        n = int(params.get("n", 100))
        if n < 1:
            raise ValueError("linquad needs n >= 1")
        c = -0.5 + np.arange(1, n + 1) / (2 * n)
        return SeparableObjective(name, "square", [0.5], c, params={"n": n})
    if name == "sep-quad-nd":
        c, rec = _nd_coefficients(params.get("dim"), params.get("coeffs"), params.get("seed"))
        # f_{1,2} = sum c_i x_i^2 / 2 -/+ sum_i x_i
        return SeparableObjective(name, "square", c / 2, [0.0, 0.0], tilts=[-1.0, 1.0], params=rec)
    if name == "sep-quartic-nd":
        c, rec = _nd_coefficients(params.get("dim"), params.get("coeffs"), params.get("seed"))
        # f_{1,2} = sum c_i (x_i -/+ 1)^4 / 2 -/+ 1
        return SeparableObjective(name, "quartic", c / 2, [1.0, -1.0], offsets=[-1.0, 1.0], params=rec)
    if name == "scaled-quad":
        a = float(params.get("a", 1.0))
        shift = float(params.get("shift", 0.0))
        if a <= 0 or shift < 0:
            raise ValueError("scaled-quad needs a > 0 and shift >= 0")
        shifts = [shift, -shift] if shift > 0 else [0.0]
        return SeparableObjective(name, "square", [a / 2], shifts, params={"a": a, "shift": shift})
    raise ValueError(f"unknown objective {name!r}; choose from {', '.join(CATALOG)}")


def load_coefficients(path: str | Path) -> np.ndarray:
    """Read one coefficient per line (blank lines and #-comments skipped)."""
    values = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            values.append(float(line))
    if not values:
        raise ValueError(f"no coefficients in {path}")
    return np.asarray(values)


def curvature(obj: Objective) -> float | None:
    """Curvature a of a one-dimensional quadratic f = ½a(x - x*)² + const, else None."""
    if obj.dim != 1 or not obj.quadratic:
        return None
    return float(obj.hessian(np.zeros(1))[0, 0])


def minimizers_1d(obj: Objective, lo: float = -5.0, hi: float = 5.0, grid: int = 20001) -> np.ndarray:
    """Local minimizers of a 1D objective located by sign changes of f' and bisection."""
    if obj.dim != 1:
        raise ValueError("only defined for dim == 1")
    xs = np.linspace(lo, hi, grid)
    g = obj.grad_full(xs[:, None])[:, 0]
    out = []
    for j in np.nonzero((g[:-1] < 0) & (g[1:] >= 0))[0]:
        a, b = xs[j], xs[j + 1]
        for _ in range(80):
            mid = 0.5 * (a + b)
            if obj.grad_full([mid])[0] < 0:
                a = mid
            else:
                b = mid
        out.append(0.5 * (a + b))
    return np.asarray(out)
