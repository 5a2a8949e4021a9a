"""Independent optimal-transport solvers used to validate flow limits.

The one-dimensional oracle composes periodic CDFs, T = Fbar^{-1}(F(x) + s),
with the rotation sector s chosen by scanning total cost; the entropic oracle
runs log-domain Sinkhorn with an epsilon-scaling schedule and reads the map
off the coupling by barycentric projection of wrapped displacements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .errors import GridMismatch, MassMismatch, NonConvergence
from .grid import VectorField, wrap_displacement

__all__ = ["OracleMap", "rearrangement_1d", "sinkhorn", "compare_maps"]

MASS_TOL = 1e-10
ROTATION_CANDIDATES = 64
SINKHORN_MAX_AXIS = 64


@dataclass(frozen=True)
class OracleMap:
    grid: object
    T_star: VectorField
    method: str
    params: dict


class _SpectralCdf:
    """Periodic CDF of a node-sampled density via its trigonometric interpolant.

    Exact for band-limited densities; the antiderivative is evaluated termwise,
    so F is smooth, strictly increasing (density > 0), with F(0) = 0 and
    F(x + L) = F(x) + mass.
    """

    def __init__(self, values, length):
        n = len(values)
        self.length = float(length)
        self.mean = float(np.mean(values))
        self.mass = self.mean * self.length
        coeffs = np.fft.rfft(values) / n
        # drop negligible harmonics; keeps evaluation cheap for smooth data
        keep = np.abs(coeffs[1:]) > 1e-15 * max(1.0, np.abs(coeffs[0]))
        self.k = np.nonzero(keep)[0] + 1
        self.c = coeffs[self.k]
        if n % 2 == 0 and (n // 2) in self.k:
            # real-signal Nyquist mode is cosine-only at half weight in rfft
            self.c = self.c.copy()
            self.c[self.k == n // 2] *= 0.5
        self.omega = 2.0 * np.pi * self.k / self.length

    def density(self, x):
        x = np.asarray(x, dtype=float)
        phase = np.multiply.outer(x, self.omega)
        out = self.mean + 2.0 * (
            np.cos(phase) @ self.c.real - np.sin(phase) @ self.c.imag
        )
        return out

    def value(self, x):
        x = np.asarray(x, dtype=float)
        phase = np.multiply.outer(x, self.omega)
        series = 2.0 * (
            (np.sin(phase) / self.omega) @ self.c.real
            + ((np.cos(phase) - 1.0) / self.omega) @ self.c.imag
        )
        return self.mean * x + series


def _monotone_cubic_inverse_seed(cdf, grid_axis, length):
    """PCHIP interpolant of y as a function of F(y), extended over one period."""
    y = np.concatenate([grid_axis, [length]])
    F = cdf.value(y)
    return PchipInterpolator(F, y)


def _invert_cdf(cdf, seed, targets, min_density, tol=1e-13, max_iter=60):
    """Solve F(y) = q by Newton from the monotone-cubic seed (q within one period)."""
    q = np.asarray(targets, dtype=float)
    shift = np.floor(q / cdf.mass)
    q0 = q - shift * cdf.mass
    y = np.clip(seed(q0), 0.0, cdf.length)
    for _ in range(max_iter):
        resid = cdf.value(y) - q0
        if np.max(np.abs(resid)) <= tol * max(cdf.mass, 1.0):
            break
        step = resid / np.maximum(cdf.density(y), 0.5 * min_density)
        y = np.clip(y - step, 0.0, cdf.length)
    return y + shift * cdf.length


def rearrangement_1d(rho, rho_bar, grid, candidates=ROTATION_CANDIDATES):
    """Monotone rearrangement T = Fbar^{-1}(F(x) + s) on the circle.

    The rotation sector s is selected by scanning `candidates` anchors for the
    least total squared periodic displacement cost, then polishing the best
    bracket with a bounded scalar minimization.
    """
    if grid.n_dims != 1:
        raise ValueError("rearrangement oracle is one-dimensional")
    length = grid.period[0]
    mass_rho = float(np.mean(rho.values)) * length
    mass_bar = float(np.mean(rho_bar.values)) * length
    if abs(mass_rho - mass_bar) > MASS_TOL:
        raise MassMismatch(f"masses differ: {mass_rho!r} vs {mass_bar!r}")

    F = _SpectralCdf(rho.values, length)
    Fbar = _SpectralCdf(rho_bar.values, length)
    x = grid.axis_coords(0)
    Fx = F.value(x)
    seed = _monotone_cubic_inverse_seed(Fbar, x, length)
    min_bar = float(np.min(rho_bar.values))
    weights = rho.values * grid.spacing[0]

    def map_at(s):
        return _invert_cdf(Fbar, seed, Fx + s, min_bar)

    def cost_at(s):
        d = wrap_displacement(map_at(s) - x, length)
        return float(np.sum(weights * 0.5 * d * d))

    anchors = np.arange(candidates) * (F.mass / candidates)
    costs = [cost_at(s) for s in anchors]
    best = int(np.argmin(costs))
    span = F.mass / candidates
    res = minimize_scalar(
        cost_at,
        bounds=(anchors[best] - span, anchors[best] + span),
        method="bounded",
        options={"xatol": 1e-12},
    )
    s_star = float(res.x) if res.fun <= costs[best] else float(anchors[best])

    T_raw = map_at(s_star)
    if np.min(np.diff(T_raw)) < -1e-12:
        raise ValueError("rearrangement produced a non-monotone map")
    T_vals = x + wrap_displacement(T_raw - x, length)
    return OracleMap(
        grid=grid,
        T_star=VectorField(grid, T_vals[:, None]),
        method="rearrangement_1d",
        params={"rotation": s_star, "candidates": candidates},
    )


def sinkhorn(rho, rho_bar, model, eps, max_iters=20000, tol=1e-9):
    """Entropic-OT map by log-domain Sinkhorn with an epsilon-scaling schedule.

    The dense kernel restricts grids to 64 nodes per axis. Scaling starts at
    0.1 and halves down to the target epsilon, warm-starting the potentials;
    the iteration budget is shared across the whole schedule.
    """
    grid = rho.grid
    if any(r > SINKHORN_MAX_AXIS for r in grid.resolution):
        raise ValueError(f"sinkhorn oracle limited to {SINKHORN_MAX_AXIS} nodes per axis")
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    cell = float(np.prod(grid.spacing))
    a = rho.values.reshape(-1) * cell
    b = rho_bar.values.reshape(-1) * cell
    if abs(a.sum() - b.sum()) > MASS_TOL:
        raise MassMismatch(f"masses differ: {a.sum()!r} vs {b.sum()!r}")
    total = a.sum()
    a = a / total
    b = b / total

    X = grid.coords().reshape(-1, grid.n_dims)
    C = model.value(X[:, None, :], X[None, :, :])
    log_a = np.log(a)
    log_b = np.log(b)

    levels = []
    level = max(0.1, eps)
    while level > eps:
        levels.append(level)
        level *= 0.5
    levels.append(eps)

    f = np.zeros_like(a)
    g = np.zeros_like(b)
    iters_used = 0
    marginal_error = np.inf
    for level_eps in levels:
        target_tol = tol if level_eps == eps else max(tol, 1e-6)
        while True:
            if iters_used >= max_iters:
                raise NonConvergence(
                    f"sinkhorn used {iters_used} iterations without reaching {tol}"
                )
            f = -level_eps * logsumexp((g[None, :] - C) / level_eps + log_b[None, :], axis=1)
            g = -level_eps * logsumexp((f[:, None] - C) / level_eps + log_a[:, None], axis=0)
            iters_used += 1
            if iters_used % 5 == 0 or iters_used < 5:
                log_pi = (f[:, None] + g[None, :] - C) / level_eps + log_a[:, None] + log_b[None, :]
                row = np.exp(logsumexp(log_pi, axis=1))
                col = np.exp(logsumexp(log_pi, axis=0))
                marginal_error = max(np.sum(np.abs(row - a)), np.sum(np.abs(col - b)))
                if marginal_error < target_tol:
                    break

    # barycentric projection of wrapped displacements, row-normalized
    log_w = (g[None, :] - C) / eps + log_b[None, :]
    log_w -= logsumexp(log_w, axis=1, keepdims=True)
    w = np.exp(log_w)
    disp = np.empty_like(X)
    for axis in range(grid.n_dims):
        d = wrap_displacement(X[None, :, axis] - X[:, None, axis], grid.period[axis])
        disp[:, axis] = np.einsum("ij,ij->i", w, d)
    T_vals = (X + disp).reshape(grid.shape + (grid.n_dims,))
    return OracleMap(
        grid=grid,
        T_star=VectorField(grid, T_vals),
        method="sinkhorn",
        params={
            "eps": eps,
            "iterations": iters_used,
            "marginal_tol": tol,
            "marginal_error": float(marginal_error),
        },
    )


def compare_maps(T, T_star, grid):
    """Sup and RMS errors of wrapped displacement differences on shared nodes."""
    if T.grid != grid or T_star.grid != grid:
        raise GridMismatch("maps must live on the comparison grid")
    diff = np.empty_like(T.values)
    for axis in range(grid.n_dims):
        diff[..., axis] = wrap_displacement(
            T.values[..., axis] - T_star.values[..., axis], grid.period[axis]
        )
    norms = np.sqrt(np.sum(diff * diff, axis=-1))
    return {
        "sup_error": float(np.max(norms)),
        "l2_error": float(np.sqrt(np.mean(norms * norms))),
    }
