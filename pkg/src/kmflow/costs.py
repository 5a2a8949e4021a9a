"""Cost functions on T^n x T^n with exact partial derivatives up to order 4.

All built-in kinds are separable across axes and are expressed through the
signed nearest-representative displacement wrap(x - xbar) in (-L/2, L/2], so
any partial derivative whose multi-index touches more than one axis vanishes
(except the order-zero value itself). A guard band around the antipode keeps
every evaluation away from the nonsmooth cut locus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import mpmath as mp
import numpy as np

from .errors import CutLocusViolation, UnsupportedOrder
from .grid import wrap_displacement

__all__ = [
    "CostModel",
    "CutLocusGuard",
    "VerificationReport",
    "make_cost",
    "cost_value",
    "cost_partial",
    "verify_partials",
]

COST_KINDS = ("bilinear_flat", "torus_squared_distance", "perturbed_quadratic")

# Spec caps for the perturbed family; the product condition below is what
# actually keeps the mixed Hessian positive definite.
MAX_EPSILON = 0.05
MAX_FREQUENCY = 2
PD_SAFETY = 0.95


@dataclass(frozen=True)
class CutLocusGuard:
    """Accepts (x, xbar) iff every axis displacement stays clear of the antipode.

    margin is a fraction of the period: the band |wrap(x - xbar)| > (0.5 - margin) * L
    is rejected.
    """

    margin: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.margin < 0.5:
            raise ValueError(f"guard margin {self.margin} outside (0, 0.5)")

    def accepts(self, x, xbar, period):
        x = np.asarray(x, dtype=float)
        xbar = np.asarray(xbar, dtype=float)
        ok = np.ones(x.shape[:-1], dtype=bool)
        for a, length in enumerate(period):
            d = wrap_displacement(x[..., a] - xbar[..., a], length)
            ok &= np.abs(d) <= (0.5 - self.margin) * length
        return ok

    def accepts_displacement(self, disp, period):
        """Same test given already-wrapped displacements, shape (..., n)."""
        ok = np.ones(disp.shape[:-1], dtype=bool)
        for a, length in enumerate(period):
            ok &= np.abs(disp[..., a]) <= (0.5 - self.margin) * length
        return ok


def _sin_derivative(t, omega, order):
    """order-th derivative of sin(omega * t)."""
    return omega**order * np.sin(omega * t + order * np.pi / 2.0)


@dataclass(frozen=True)
class CostModel:
    """A built-in cost kind with closed-form partials and a validity guard."""

    kind: str
    n_dims: int
    period: tuple = None
    epsilon: float = 0.0
    frequency: tuple = None
    guard: CutLocusGuard = field(default_factory=CutLocusGuard)

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.n_dims not in (1, 2):
            raise ValueError(f"unsupported dimension {self.n_dims}")
        period = self.period or (1.0,) * self.n_dims
        object.__setattr__(self, "period", tuple(float(p) for p in period))
        if len(self.period) != self.n_dims:
            raise ValueError("period length must equal n_dims")
        freq = self.frequency or (1,) * self.n_dims
        if np.isscalar(freq):
            freq = (freq,) * self.n_dims
        object.__setattr__(self, "frequency", tuple(int(k) for k in freq))
        if self.kind == "perturbed_quadratic":
            if not 0.0 <= self.epsilon <= MAX_EPSILON:
                raise ValueError(f"epsilon {self.epsilon} outside [0, {MAX_EPSILON}]")
            if any(k < 1 or k > MAX_FREQUENCY for k in self.frequency):
                raise ValueError(f"frequency {self.frequency} outside [1, {MAX_FREQUENCY}]")
            # Positive definiteness of b = -c_{i sbar} needs eps * (2 pi k / L)^2 < 1.
            worst = max(
                self.epsilon * (2.0 * np.pi * k / L) ** 2
                for k, L in zip(self.frequency, self.period)
            )
            if worst > PD_SAFETY:
                raise ValueError(
                    f"perturbation too strong: eps*(2 pi k/L)^2 = {worst:.3f} > {PD_SAFETY}"
                )

    # -- closed forms, vectorized over leading dimensions; no guard here ------

    def _axis_partial(self, a, x_a, xbar_a, p, q):
        """Partial d^p/dx^p d^q/dxbar^q of the axis-a term."""
        L = self.period[a]
        m = p + q
        sign_q = -1.0 if q % 2 else 1.0
        if self.kind == "bilinear_flat":
            ystar = x_a + wrap_displacement(xbar_a - x_a, L)
            if m == 0:
                return -x_a * ystar
            if (p, q) == (1, 0):
                return -ystar
            if (p, q) == (0, 1):
                return -x_a + 0.0 * x_a
            if (p, q) == (1, 1):
                return -1.0 + 0.0 * x_a
            return 0.0 * x_a
        delta = wrap_displacement(x_a - xbar_a, L)
        if m == 0:
            quad = 0.5 * delta**2
        elif m == 1:
            quad = sign_q * delta
        elif m == 2:
            quad = sign_q + 0.0 * delta
        else:
            quad = 0.0 * delta
        if self.kind == "torus_squared_distance" or self.epsilon == 0.0:
            return quad
        omega = 2.0 * np.pi * self.frequency[a] / L
        return quad + self.epsilon * _sin_derivative(x_a, omega, p) * _sin_derivative(
            xbar_a, omega, q
        )

    def value(self, x, xbar):
        x = np.asarray(x, dtype=float)
        xbar = np.asarray(xbar, dtype=float)
        out = 0.0
        for a in range(self.n_dims):
            out = out + self._axis_partial(a, x[..., a], xbar[..., a], 0, 0)
        return out

    def partial(self, x, xbar, orders_x, orders_xbar):
        """Exact partial for per-axis multi-indices orders_x, orders_xbar."""
        orders_x = tuple(int(o) for o in orders_x)
        orders_xbar = tuple(int(o) for o in orders_xbar)
        if len(orders_x) != self.n_dims or len(orders_xbar) != self.n_dims:
            raise ValueError("multi-index length must equal n_dims")
        if any(o < 0 for o in orders_x + orders_xbar):
            raise ValueError("derivative orders must be nonnegative")
        total = sum(orders_x) + sum(orders_xbar)
        if total > 4:
            raise UnsupportedOrder(f"total order {total} exceeds 4")
        x = np.asarray(x, dtype=float)
        xbar = np.asarray(xbar, dtype=float)
        if total == 0:
            return self.value(x, xbar)
        touched = [
            a for a in range(self.n_dims) if orders_x[a] + orders_xbar[a] > 0
        ]
        if len(touched) > 1:
            # Separable costs: cross-axis partials vanish identically.
            return 0.0 * x[..., 0]
        a = touched[0]
        return self._axis_partial(a, x[..., a], xbar[..., a], orders_x[a], orders_xbar[a])

    def grad_x(self, x, xbar):
        """D_x c, shape (..., n)."""
        x = np.asarray(x, dtype=float)
        cols = []
        for a in range(self.n_dims):
            ox = tuple(1 if b == a else 0 for b in range(self.n_dims))
            oz = (0,) * self.n_dims
            cols.append(self.partial(x, xbar, ox, oz))
        return np.stack(cols, axis=-1)

    def mixed_hessian_matrix(self, x, xbar):
        """C[i, s] = c_{i sbar}, shape (..., n, n)."""
        x = np.asarray(x, dtype=float)
        n = self.n_dims
        out = np.zeros(x.shape[:-1] + (n, n))
        for i in range(n):
            ox = tuple(1 if b == i else 0 for b in range(n))
            for s in range(n):
                oz = tuple(1 if b == s else 0 for b in range(n))
                out[..., i, s] = self.partial(x, xbar, ox, oz)
        return out

    def hess_xx(self, x, xbar):
        """Pure second derivatives c_{ij}, shape (..., n, n)."""
        x = np.asarray(x, dtype=float)
        n = self.n_dims
        out = np.zeros(x.shape[:-1] + (n, n))
        for i in range(n):
            for j in range(i, n):
                ox = tuple((1 if b == i else 0) + (1 if b == j else 0) for b in range(n))
                oz = (0,) * n
                val = self.partial(x, xbar, ox, oz)
                out[..., i, j] = val
                out[..., j, i] = val
        return out

    @property
    def has_identity_mixed_hessian(self):
        """True when b = -c_{i sbar} is the identity everywhere (flat kinds)."""
        return self.kind in ("bilinear_flat", "torus_squared_distance") or self.epsilon == 0.0

    @property
    def constant_hess_xx(self):
        """The pure-x Hessian when it is position-independent, else None."""
        if self.kind == "bilinear_flat":
            return np.zeros((self.n_dims, self.n_dims))
        if self.kind == "torus_squared_distance" or self.epsilon == 0.0:
            return np.eye(self.n_dims)
        return None

    def guard_ok(self, x, xbar):
        return self.guard.accepts(x, xbar, self.period)

    def check_guard(self, x, xbar):
        ok = self.guard_ok(x, xbar)
        if not np.all(ok):
            raise CutLocusViolation(np.asarray(x), np.asarray(xbar), self.guard.margin)
        return True

    # -- arbitrary-precision evaluation used by the FD verification oracle ----

    def value_mp(self, x, xbar):
        total = mp.mpf(0)
        for a in range(self.n_dims):
            L = mp.mpf(self.period[a])
            xa = mp.mpf(x[a])
            ya = mp.mpf(xbar[a])
            if self.kind == "bilinear_flat":
                d = ya - xa
                d = d - L * mp.floor(d / L + mp.mpf("0.5"))
                total -= xa * (xa + d)
                continue
            d = xa - ya
            d = d - L * mp.floor(d / L + mp.mpf("0.5"))
            total += d * d / 2
            if self.kind == "perturbed_quadratic" and self.epsilon:
                omega = 2 * mp.pi * self.frequency[a] / L
                total += mp.mpf(self.epsilon) * mp.sin(omega * xa) * mp.sin(omega * ya)
        return total


def make_cost(kind, n_dims, period=None, epsilon=0.0, frequency=None, margin=0.1):
    return CostModel(
        kind=kind,
        n_dims=n_dims,
        period=period,
        epsilon=epsilon,
        frequency=frequency,
        guard=CutLocusGuard(margin=margin),
    )


def cost_value(model, x, xbar):
    """Guarded cost evaluation at a single point pair."""
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    model.check_guard(x, xbar)
    return float(model.value(x, xbar))


def cost_partial(model, x, xbar, orders_x, orders_xbar):
    """Guarded exact partial derivative at a single point pair."""
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    model.check_guard(x, xbar)
    return float(model.partial(x, xbar, orders_x, orders_xbar))


# ---------------------------------------------------------------------------
# Finite-difference verification of the closed forms
# ---------------------------------------------------------------------------


def _multi_indices(n_dims, max_total=4):
    """All (orders_x, orders_xbar) pairs with 1 <= total <= max_total."""
    ranges = []

    def gen(prefix, remaining, slots):
        if slots == 0:
            ranges.append(tuple(prefix))
            return
        for v in range(remaining + 1):
            gen(prefix + [v], remaining - v, slots - 1)

    gen([], max_total, 2 * n_dims)
    out = []
    for combo in ranges:
        if 1 <= sum(combo) <= max_total:
            out.append((combo[:n_dims], combo[n_dims:]))
    return out


def _fd_partial_mp(value_fn, x, xbar, orders_x, orders_xbar, h):
    """Composite central difference of given multi-index order at one step h."""
    chain = []
    for a, o in enumerate(orders_x):
        chain.extend([("x", a)] * o)
    for a, o in enumerate(orders_xbar):
        chain.extend([("xbar", a)] * o)

    def rec(xv, yv, depth):
        if depth == len(chain):
            return value_fn(xv, yv)
        side, a = chain[depth]
        xp, yp = list(xv), list(yv)
        xm, ym = list(xv), list(yv)
        if side == "x":
            xp[a] = xp[a] + h
            xm[a] = xm[a] - h
        else:
            yp[a] = yp[a] + h
            ym[a] = ym[a] - h
        return (rec(xp, yp, depth + 1) - rec(xm, ym, depth + 1)) / (2 * h)

    return rec(list(x), list(xbar), 0)


def _richardson_fd_mp(model, x, xbar, orders_x, orders_xbar, step):
    """Two-level Richardson extrapolation of the composite central difference."""
    h = mp.mpf(step)
    d1 = _fd_partial_mp(model.value_mp, x, xbar, orders_x, orders_xbar, h)
    d2 = _fd_partial_mp(model.value_mp, x, xbar, orders_x, orders_xbar, h / 2)
    d3 = _fd_partial_mp(model.value_mp, x, xbar, orders_x, orders_xbar, h / 4)
    r1 = (4 * d2 - d1) / 3
    r2 = (4 * d3 - d2) / 3
    return (16 * r2 - r1) / 15


@dataclass
class VerificationReport:
    kind: str
    samples: int
    checks: int
    passed: bool
    max_abs_error: float
    worst: dict
    failures: list

    def to_dict(self):
        return {
            "kind": self.kind,
            "samples": self.samples,
            "checks": self.checks,
            "passed": self.passed,
            "max_abs_error": self.max_abs_error,
            "worst": self.worst,
            "failures": self.failures,
        }


def sample_guarded_pairs(model, count, seed, shrink=0.0):
    """Random pairs accepted by the guard; displacement drawn inside the band."""
    rng = np.random.default_rng(seed)
    n = model.n_dims
    L = np.asarray(model.period)
    x = rng.uniform(0.0, 1.0, size=(count, n)) * L
    half = (0.5 - model.guard.margin - shrink) * L
    delta = rng.uniform(-1.0, 1.0, size=(count, n)) * half
    xbar = np.mod(x - delta, L)
    return x, xbar


def verify_partials(model, sample_count=100, seed=0, step=1e-3, rel_tol=1e-5, abs_floor=1e-8):
    """Check every closed-form partial up to total order 4 against an FD oracle.

    The oracle differentiates cost values numerically (Richardson-extrapolated
    central differences in 40-digit arithmetic, so the 1e-8 absolute floor is
    meaningful even for identically-zero partials).
    """
    xs, xbars = sample_guarded_pairs(model, sample_count, seed)
    indices = _multi_indices(model.n_dims)
    worst = {"abs_error": -1.0}
    failures = []
    checks = 0
    with mp.workdps(40):
        for i in range(sample_count):
            x = xs[i]
            xbar = xbars[i]
            for ox, oz in indices:
                analytic = float(model.partial(x, xbar, ox, oz))
                fd = float(_richardson_fd_mp(model, x, xbar, ox, oz, step))
                abs_err = abs(analytic - fd)
                tol = max(rel_tol * abs(analytic), abs_floor)
                checks += 1
                record = {
                    "x": [float(v) for v in x],
                    "xbar": [float(v) for v in xbar],
                    "orders_x": list(ox),
                    "orders_xbar": list(oz),
                    "analytic": analytic,
                    "fd": fd,
                    "abs_error": abs_err,
                    "tolerance": tol,
                }
                if abs_err > worst["abs_error"]:
                    worst = record
                if abs_err > tol and len(failures) < 20:
                    failures.append(record)
    return VerificationReport(
        kind=model.kind,
        samples=sample_count,
        checks=checks,
        passed=not failures,
        max_abs_error=worst["abs_error"],
        worst=worst,
        failures=failures,
    )
