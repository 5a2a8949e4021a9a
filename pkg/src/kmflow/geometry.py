"""Geometry kernel for the split pseudo-metric built from a cost function.

The product space carries the signature-(n,n) metric whose only nonzero
blocks are -c_{i sbar}/2. Christoffel symbols and the mixed curvature
components have closed forms in the cost partials; an independent oracle
finite-differences the assembled 2n x 2n metric through the textbook
coordinate formulas and is the authority for every index-placement choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CutLocusViolation,
    NonpositiveDensity,
    NullPairUnavailable,
    SingularHessian,
)

__all__ = [
    "GeometrySample",
    "MtwReport",
    "mixed_hessian",
    "christoffel",
    "curvature",
    "christoffel_fd_oracle",
    "curvature_fd_oracle",
    "cross_curvature",
    "cross_curvature_fd",
    "mtw_scan",
    "conformal_factor",
    "kmw_metric",
    "sample_geometry",
]

CONDITION_LIMIT = 1e10

# The oracle contraction R(xi(+)0, 0(+)xibar, xi(+)0, 0(+)xibar) equals the
# analytic quartic sum R_{i jbar kbar l} xi_i xibar_j xibar_k xi_l up to one
# overall sign fixed once by tests/test_geometry.py::TestConventionPin.
CROSS_CURVATURE_SIGN = -1.0


def _third_partials(model, x, xbar):
    """c3_uub[..., i, j, s] = c_{i j sbar}; c3_ubb[..., i, s, t] = c_{i sbar tbar}."""
    n = model.n_dims
    x = np.asarray(x, dtype=float)
    lead = x.shape[:-1]
    c3_uub = np.zeros(lead + (n, n, n))
    c3_ubb = np.zeros(lead + (n, n, n))
    for i in range(n):
        for j in range(i, n):
            ox = tuple((1 if b == i else 0) + (1 if b == j else 0) for b in range(n))
            for s in range(n):
                oz = tuple(1 if b == s else 0 for b in range(n))
                val = model.partial(x, xbar, ox, oz)
                c3_uub[..., i, j, s] = val
                c3_uub[..., j, i, s] = val
    for i in range(n):
        ox = tuple(1 if b == i else 0 for b in range(n))
        for s in range(n):
            for t in range(s, n):
                oz = tuple((1 if b == s else 0) + (1 if b == t else 0) for b in range(n))
                val = model.partial(x, xbar, ox, oz)
                c3_ubb[..., i, s, t] = val
                c3_ubb[..., i, t, s] = val
    return c3_uub, c3_ubb


def _fourth_partials(model, x, xbar):
    """c4[..., i, l, j, k] = c_{i l jbar kbar} (two unbarred, two barred)."""
    n = model.n_dims
    x = np.asarray(x, dtype=float)
    lead = x.shape[:-1]
    c4 = np.zeros(lead + (n, n, n, n))
    for i in range(n):
        for l in range(i, n):
            ox = tuple((1 if b == i else 0) + (1 if b == l else 0) for b in range(n))
            for j in range(n):
                for k in range(j, n):
                    oz = tuple((1 if b == j else 0) + (1 if b == k else 0) for b in range(n))
                    val = model.partial(x, xbar, ox, oz)
                    for ii, ll in ((i, l), (l, i)):
                        for jj, kk in ((j, k), (k, j)):
                            c4[..., ii, ll, jj, kk] = val
    return c4


def mixed_hessian(model, x, xbar, with_condition=False):
    """b = -[c_{i sbar}] and its inverse at a guarded point pair.

    with_condition=True appends the 2-norm condition number (always computed
    for the singularity guard) to the return tuple.
    """
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    model.check_guard(x, xbar)
    b = -model.mixed_hessian_matrix(x, xbar)
    cond = np.linalg.cond(b)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularHessian(f"mixed Hessian condition number {cond:.3e}")
    if with_condition:
        return b, np.linalg.inv(b), float(cond)
    return b, np.linalg.inv(b)


def christoffel(model, x, xbar):
    """Nonvanishing Christoffel symbols of the split metric.

    Returns (gamma_unbarred, gamma_barred) with
      gamma_unbarred[m, i, j] = c^{m kbar} c_{kbar i j}   (source-source-source)
      gamma_barred[m, i, j]   = c^{mbar k} c_{k ibar jbar} (target-target-target)
    All symbol classes mixing the two factors vanish identically.
    """
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    model.check_guard(x, xbar)
    C = model.mixed_hessian_matrix(x, xbar)
    cond = np.linalg.cond(C)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularHessian(f"mixed Hessian condition number {cond:.3e}")
    Cinv = np.linalg.inv(C)  # Cinv[..., s, i] = c^{sbar i}
    c3_uub, c3_ubb = _third_partials(model, x, xbar)
    gamma_unbarred = np.einsum("...km,...ijk->...mij", Cinv, c3_uub)
    gamma_barred = np.einsum("...mk,...kij->...mij", Cinv, c3_ubb)
    return gamma_unbarred, gamma_barred


def curvature(model, x, xbar):
    """Mixed curvature components R[i, j, k, l] = R_{i jbar kbar l}.

    2 R_{i jbar kbar l} = c_{i jbar kbar l} - c_{l i fbar} c^{a fbar} c_{a jbar kbar};
    every component with unbalanced barred/unbarred counts vanishes.
    """
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    model.check_guard(x, xbar)
    C = model.mixed_hessian_matrix(x, xbar)
    Cinv = np.linalg.inv(C)
    c3_uub, c3_ubb = _third_partials(model, x, xbar)
    c4 = _fourth_partials(model, x, xbar)
    # c4 term with x-orders (i, l) and xbar-orders (j, k)
    first = np.einsum("...iljk->...ijkl", c4)
    # c^{a fbar} = Cinv[f, a]
    second = np.einsum("...lif,...fa,...ajk->...ijkl", c3_uub, Cinv, c3_ubb)
    return 0.5 * (first - second)


# ---------------------------------------------------------------------------
# Finite-difference oracle on the assembled 2n x 2n metric
# ---------------------------------------------------------------------------


def metric_matrix(model, x, xbar):
    """The full split metric h = [[0, -C/2], [-C^T/2, 0]] at one point pair."""
    n = model.n_dims
    C = model.mixed_hessian_matrix(np.asarray(x, float), np.asarray(xbar, float))
    h = np.zeros((2 * n, 2 * n))
    h[:n, n:] = -0.5 * C
    h[n:, :n] = -0.5 * C.T
    return h


def _metric_at(model, z):
    n = model.n_dims
    return metric_matrix(model, z[:n], z[n:])


def _richardson_dir(f, z, axis, h):
    """Richardson-extrapolated central difference of array-valued f along axis."""
    e = np.zeros_like(z)
    e[axis] = 1.0

    def central(step):
        return (f(z + step * e) - f(z - step * e)) / (2.0 * step)

    return (4.0 * central(h / 2.0) - central(h)) / 3.0


def _christoffel_full_at(model, z, step):
    """Textbook Christoffels of the 2n x 2n metric by finite differences."""
    m = 2 * model.n_dims
    H = _metric_at(model, z)
    Hinv = np.linalg.inv(H)
    dH = np.stack(
        [_richardson_dir(lambda w: _metric_at(model, w), z, a, step) for a in range(m)]
    )  # dH[a, i, j] = d_a H_{ij}
    gamma = np.zeros((m, m, m))
    for b in range(m):
        for c in range(m):
            # Gamma^a_{bc} = H^{ad}(d_b H_{dc} + d_c H_{db} - d_d H_{bc}) / 2
            gamma[:, b, c] = 0.5 * Hinv @ (dH[b, :, c] + dH[c, :, b] - dH[:, b, c])
    return gamma


def christoffel_fd_oracle(model, x, xbar, step=1e-3):
    """Full (2n)^3 Christoffel array of the product metric, by FD with Richardson."""
    z = np.concatenate([np.asarray(x, float), np.asarray(xbar, float)])
    model.check_guard(z[: model.n_dims], z[model.n_dims :])
    return _christoffel_full_at(model, z, step)


def riemann_fd_full(model, x, xbar, step=1e-3):
    """Fully lowered Riemann tensor R_{ABCD} of the product metric by FD.

    Convention: R^A_{BCD} = d_C Gamma^A_{DB} - d_D Gamma^A_{CB}
                            + Gamma^A_{CE} Gamma^E_{DB} - Gamma^A_{DE} Gamma^E_{CB},
    lowered with H in the first slot.
    """
    n = model.n_dims
    m = 2 * n
    z = np.concatenate([np.asarray(x, float), np.asarray(xbar, float)])
    model.check_guard(z[:n], z[n:])
    gamma = _christoffel_full_at(model, z, step)
    dgamma = np.stack(
        [
            _richardson_dir(lambda w: _christoffel_full_at(model, w, step), z, a, step)
            for a in range(m)
        ]
    )  # dgamma[c, a, d, b] = d_c Gamma^a_{db}
    r_up = (
        np.einsum("cadb->abcd", dgamma)
        - np.einsum("dacb->abcd", dgamma)
        + np.einsum("ace,edb->abcd", gamma, gamma)
        - np.einsum("ade,ecb->abcd", gamma, gamma)
    )
    H = _metric_at(model, z)
    return np.einsum("ae,ebcd->abcd", H, r_up)


def curvature_fd_oracle(model, x, xbar, step=1e-3):
    """Mixed components R_{i jbar kbar l} extracted from the FD Riemann tensor."""
    n = model.n_dims
    full = riemann_fd_full(model, x, xbar, step=step)
    return full[:n, n:, n:, :n]


# ---------------------------------------------------------------------------
# Cross-curvature and the positivity scan
# ---------------------------------------------------------------------------


def _project_null_pair(b, xi, xibar):
    """Normalize xi, then project xibar against b^T xi so that xi^T b xibar = 0."""
    xi = np.asarray(xi, dtype=float)
    xibar = np.asarray(xibar, dtype=float)
    nxi = np.linalg.norm(xi)
    if nxi == 0.0:
        raise NullPairUnavailable("xi vanishes")
    xi = xi / nxi
    bt_xi = b.T @ xi
    denom = bt_xi @ bt_xi
    if denom == 0.0:
        raise NullPairUnavailable("b^T xi vanishes")
    xibar = xibar - ((xi @ b @ xibar) / denom) * bt_xi
    nbar = np.linalg.norm(xibar)
    if nbar < 1e-12:
        raise NullPairUnavailable("projection annihilated xibar")
    return xi, xibar / nbar


def cross_curvature(model, x, xbar, xi, xibar):
    """R(xi(+)0, 0(+)xibar, xi(+)0, 0(+)xibar) on an h-orthogonal pair.

    In one dimension the orthogonality constraint xi^T b xibar = 0 admits no
    nonvanishing pair (b is a nonzero scalar), so the condition is vacuous and
    NullPairUnavailable is raised instead of inventing a surrogate.
    """
    if model.n_dims == 1:
        raise NullPairUnavailable("no nonvanishing h-orthogonal pairs in one dimension")
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    b, _ = mixed_hessian(model, x, xbar)
    xi, xibar = _project_null_pair(b, xi, xibar)
    if abs(xi @ b @ xibar) > 1e-10:
        raise NullPairUnavailable("orthogonality projection failed")
    r4 = curvature(model, x, xbar)
    return CROSS_CURVATURE_SIGN * float(np.einsum("ijkl,i,j,k,l", r4, xi, xibar, xibar, xi))


def cross_curvature_fd(model, x, xbar, xi, xibar, step=1e-3):
    """Same quartic evaluated by contracting the FD Riemann tensor directly."""
    if model.n_dims == 1:
        raise NullPairUnavailable("no nonvanishing h-orthogonal pairs in one dimension")
    n = model.n_dims
    b, _ = mixed_hessian(model, x, xbar)
    xi, xibar = _project_null_pair(b, xi, xibar)
    full = riemann_fd_full(model, x, xbar, step=step)
    u = np.concatenate([xi, np.zeros(n)])
    v = np.concatenate([np.zeros(n), xibar])
    return float(np.einsum("abcd,a,b,c,d", full, u, v, u, v))


@dataclass
class MtwReport:
    min_value: float
    argmin: dict
    samples: int
    verdict: str

    def to_dict(self):
        return {
            "min_value": self.min_value,
            "argmin": self.argmin,
            "samples": self.samples,
            "verdict": self.verdict,
        }


def mtw_scan(model, grid, directions_per_point=8, seed=0, points_per_axis=6):
    """Scan cross-curvature over guarded sub-lattice pairs and random null pairs.

    Verdict: positive if the minimum exceeds 1e-10, nonnegative_with_nulls if
    it sits within 1e-10 of zero, violated otherwise. With no valid samples
    (always in one dimension, where the constraint is vacuous) the verdict is
    vacuously positive with a NaN minimum.
    """
    if directions_per_point < 8:
        raise ValueError("directions_per_point must be at least 8")
    rng = np.random.default_rng(seed)
    n = model.n_dims
    if n == 1:
        return MtwReport(float("nan"), {}, 0, "positive")

    axes = []
    for a in range(n):
        count = min(points_per_axis, grid.resolution[a])
        stride = max(1, grid.resolution[a] // count)
        axes.append(grid.axis_coords(a)[::stride][:count])
    lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)

    best = None
    samples = 0
    for x in lattice:
        for xbar in lattice:
            if not np.all(model.guard_ok(x, xbar)):
                continue
            b = -model.mixed_hessian_matrix(x, xbar)
            r4 = curvature(model, x, xbar)
            for _ in range(directions_per_point):
                xi = rng.standard_normal(n)
                xibar = rng.standard_normal(n)
                try:
                    xi, xibar = _project_null_pair(b, xi, xibar)
                except NullPairUnavailable:
                    continue
                val = CROSS_CURVATURE_SIGN * float(
                    np.einsum("ijkl,i,j,k,l", r4, xi, xibar, xibar, xi)
                )
                samples += 1
                if best is None or val < best[0]:
                    best = (
                        val,
                        {
                            "x": x.tolist(),
                            "xbar": xbar.tolist(),
                            "xi": xi.tolist(),
                            "xibar": xibar.tolist(),
                        },
                    )
    if best is None:
        return MtwReport(float("nan"), {}, 0, "positive")
    min_value, argmin = best
    if min_value > 1e-10:
        verdict = "positive"
    elif abs(min_value) <= 1e-10:
        verdict = "nonnegative_with_nulls"
    else:
        verdict = "violated"
    return MtwReport(min_value, argmin, samples, verdict)


# ---------------------------------------------------------------------------
# Conformal factor and the conformally rescaled metric
# ---------------------------------------------------------------------------


def log_det_b(model, x, xbar):
    """log det(-c_{i sbar}) via LU factorization; rejects nonpositive pivots."""
    b = -model.mixed_hessian_matrix(np.asarray(x, float), np.asarray(xbar, float))
    sign, logdet = np.linalg.slogdet(b)
    if sign <= 0.0:
        raise SingularHessian("mixed Hessian has nonpositive determinant")
    return logdet


def conformal_factor(model, rho_val, rhobar_val, x, xbar):
    """psi = (ln rho + ln rhobar - ln det b) / (2n)."""
    if rho_val <= 0.0 or rhobar_val <= 0.0:
        raise NonpositiveDensity(f"rho={rho_val}, rhobar={rhobar_val}")
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    model.check_guard(x, xbar)
    n = model.n_dims
    return (np.log(rho_val) + np.log(rhobar_val) - log_det_b(model, x, xbar)) / (2.0 * n)


def kmw_metric(model, rho_val, rhobar_val, x, xbar):
    """Conformally rescaled metric e^{2 psi} h, assembled blockwise (diagnostic)."""
    psi = conformal_factor(model, rho_val, rhobar_val, x, xbar)
    return np.exp(2.0 * psi) * metric_matrix(model, x, xbar)


@dataclass
class GeometrySample:
    """Per-point bundle of geometric quantities used by the verify scenario."""

    point: tuple
    b: np.ndarray
    b_inv: np.ndarray
    gamma_unbarred: np.ndarray
    gamma_barred: np.ndarray
    riem_mixed: np.ndarray
    psi: float


def sample_geometry(model, x, xbar, rho_val=1.0, rhobar_val=1.0):
    b, b_inv = mixed_hessian(model, x, xbar)
    gu, gb = christoffel(model, x, xbar)
    r4 = curvature(model, x, xbar)
    psi = conformal_factor(model, rho_val, rhobar_val, x, xbar)
    return GeometrySample(
        point=(np.asarray(x, float), np.asarray(xbar, float)),
        b=b,
        b_inv=b_inv,
        gamma_unbarred=gu,
        gamma_barred=gb,
        riem_mixed=r4,
        psi=psi,
    )
