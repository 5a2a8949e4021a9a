"""Lagrangian graph states over the torus.

A state bundles a degree-one map T (stored as identity plus wrapped periodic
displacement), the Jacobian-weighted matrix W_ij = -c_{i sbar} dT^s/dx^j, the
induced metric g = (W + W^T)/2, and the angle field computed from the
log-det of g. The angle carries two algebraically equal routes (through det g
and through det DT); their gap, together with the antisymmetric part of W,
measures how far the graph has drifted off the Lagrangian cone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CutLocusViolation,
    NewtonDivergence,
    RouteMismatch,
    SpacelikeViolation,
)
from .grid import (
    MatrixField,
    ScalarField,
    VectorField,
    diff_values,
    interpolate,
    interpolate_many,
    wrap_displacement,
)
from .paracomplex import TAU, TAU_BAR, ParaComplex, k_power
from .smallmat import bdet, bmatmul, bsolve, sym_eig_range

__all__ = [
    "DensityPair",
    "LagrangianState",
    "c_exponential",
    "build_state",
    "lagrangian_angle",
    "lagrangian_defect",
    "calibration_defect",
    "wedge_identity_check",
    "slope_ratio",
    "slope_ratio_direct",
    "recover_potential",
    "map_displacement",
]

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
ROUTE_TOL = 1e-6


@dataclass(frozen=True)
class DensityPair:
    """Strictly positive densities rho on the source and rhobar on the target.

    log_rho_bar_eval, when provided (built-in density families carry their
    closed form), evaluates ln(rhobar) at off-node points exactly; otherwise
    periodic cubic interpolation of the log field is used.
    """

    rho: ScalarField
    rho_bar: ScalarField
    log_rho_bar_eval: object = None

    def __post_init__(self):
        for name, f in (("rho", self.rho), ("rho_bar", self.rho_bar)):
            if np.min(f.values) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        object.__setattr__(
            self, "log_rho", ScalarField(self.rho.grid, np.log(self.rho.values))
        )
        object.__setattr__(
            self, "log_rho_bar", ScalarField(self.rho_bar.grid, np.log(self.rho_bar.values))
        )

    def log_rho_bar_at(self, points):
        if self.log_rho_bar_eval is not None:
            return self.log_rho_bar_eval(points)
        return interpolate_many(self.log_rho_bar, points)

    def _mass(self, f):
        volume = float(np.prod(f.grid.period))
        return float(np.mean(f.values)) * volume

    @property
    def mass_rho(self):
        return self._mass(self.rho)

    @property
    def mass_rho_bar(self):
        return self._mass(self.rho_bar)

    @property
    def normalized(self):
        return abs(self.mass_rho - 1.0) <= 1e-12 and abs(self.mass_rho_bar - 1.0) <= 1e-12


def map_displacement(grid, T_values):
    """Wrapped displacement d = T - x with d_a in (-L_a/2, L_a/2]."""
    X = grid.coords()
    d = np.empty_like(T_values)
    for a in range(grid.n_dims):
        d[..., a] = wrap_displacement(T_values[..., a] - X[..., a], grid.period[a])
    return d


def c_exponential(model, u, initial=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Solve Du(x) + D_x c(x, T(x)) = 0 for T at every node by Newton.

    The iteration warm-starts from `initial` (the previous map during a flow)
    or from x + Du, which is already exact for the flat costs.
    """
    grid = u.grid
    n = grid.n_dims
    X = grid.coords()
    Du = np.stack([diff_values(u.values, grid, a) for a in range(n)], axis=-1)
    if initial is not None:
        T = initial.values.copy()
    else:
        T = X + Du
    for _ in range(max_iter):
        disp = map_displacement(grid, T)
        ok = model.guard.accepts_displacement(disp, model.period)
        if not ok.all():
            node = tuple(int(v) for v in np.argwhere(~ok)[0])
            raise CutLocusViolation(X[node], T[node], model.guard.margin)
        residual = Du + model.grad_x(X, T)
        rmax = np.max(np.abs(residual))
        if rmax <= tol:
            return VectorField(grid, X + disp)
        b = -model.mixed_hessian_matrix(X, T)
        T = T + bsolve(b, residual)
    residual_norm = np.max(np.abs(residual), axis=-1)
    node = tuple(int(v) for v in np.unravel_index(np.argmax(residual_norm), grid.shape))
    raise NewtonDivergence(node, float(residual_norm[node]), max_iter)


@dataclass
class LagrangianState:
    """Immutable-by-convention snapshot of a graph over the source torus."""

    grid: object
    model: object
    densities: DensityPair
    T: VectorField
    W: MatrixField
    g: MatrixField
    theta: ScalarField
    time: float = 0.0
    u: ScalarField = None
    # cached per-node arrays used by monitors and the flow step
    disp: np.ndarray = None
    b: np.ndarray = None
    det_b: np.ndarray = None
    det_w: np.ndarray = None
    det_g: np.ndarray = None
    eig_min: np.ndarray = None
    eig_max: np.ndarray = None
    rhobar_at_T: np.ndarray = None
    theta_alt: np.ndarray = None
    route_gap: float = 0.0

    @property
    def det_dt(self):
        """det DT = det W / det b."""
        return self.det_w / self.det_b


def build_state(model, densities, T=None, u=None, time=0.0, route_check=True):
    """Assemble W, g and the angle field from a map (or a potential).

    route_check=False skips the RouteMismatch guard so that the map-based flow
    can carry non-Lagrangian states and let the defect monitor see raw drift.
    """
    if T is None:
        if u is None:
            raise ValueError("need a map T or a potential u")
        T = c_exponential(model, u)
    grid = T.grid
    n = grid.n_dims
    X = grid.coords()
    Tv = T.values

    disp = map_displacement(grid, Tv)
    ok = model.guard.accepts_displacement(disp, model.period)
    if not ok.all():
        node = tuple(int(v) for v in np.argwhere(~ok)[0])
        raise CutLocusViolation(X[node], Tv[node], model.guard.margin)

    flat_b = model.has_identity_mixed_hessian
    b = None if flat_b else -model.mixed_hessian_matrix(X, Tv)
    if u is not None:
        # Potential-backed state: realize W through the expanded operator
        # u_ij + c_ij(x, T), the same discretization the potential step uses.
        # (Algebraically equal to b DT by differentiating the c-exponential
        # identity; keeping one discrete object avoids a truncation-level gap
        # between the driving and the monitored angle.)
        hess_u = np.empty(grid.shape + (n, n))
        for i in range(n):
            di = diff_values(u.values, grid, i)
            for j in range(i, n):
                val = (
                    diff_values(u.values, grid, i, order=2)
                    if j == i
                    else diff_values(di, grid, j)
                )
                hess_u[..., i, j] = val
                hess_u[..., j, i] = val
        cxx = model.constant_hess_xx
        W = hess_u + (model.hess_xx(X, Tv) if cxx is None else cxx)
    else:
        # Map-backed state: W = b DT, differentiating the periodic displacement
        DT = np.empty(grid.shape + (n, n))
        for s in range(n):
            for j in range(n):
                d = diff_values(disp[..., s], grid, j)
                DT[..., s, j] = d + (1.0 if s == j else 0.0)
        W = DT if flat_b else bmatmul(b, DT)
    g = 0.5 * (W + np.swapaxes(W, -1, -2))

    eig_min, eig_max = sym_eig_range(g)
    if np.min(eig_min) <= 0.0:
        node = tuple(int(v) for v in np.unravel_index(np.argmin(eig_min), grid.shape))
        raise SpacelikeViolation(node, float(eig_min[node]))

    det_b = 1.0 if flat_b else bdet(b)
    det_w = bdet(W)
    det_g = bdet(g)
    if np.min(det_w) <= 0.0:
        node = tuple(int(v) for v in np.unravel_index(np.argmin(det_w), grid.shape))
        raise SpacelikeViolation(node, float(det_w[node]))

    log_rho = densities.log_rho.values
    log_rhobar_T = densities.log_rho_bar_at(Tv)
    theta_vals = -0.5 * (np.log(det_g) - log_rho + log_rhobar_T - np.log(det_b))
    theta_alt = 0.5 * (log_rho - log_rhobar_T - np.log(det_w / det_b))
    route_gap = float(np.max(np.abs(theta_vals - theta_alt)))
    if route_check and route_gap > ROUTE_TOL:
        raise RouteMismatch(
            f"det-g and det-DT angle routes differ by {route_gap:.3e} "
            f"(W asymmetry or differentiation error)"
        )

    return LagrangianState(
        grid=grid,
        model=model,
        densities=densities,
        T=VectorField(grid, X + disp),
        W=MatrixField(grid, W),
        g=MatrixField(grid, g),
        theta=ScalarField(grid, theta_vals),
        time=time,
        u=u,
        disp=disp,
        b=b,
        det_b=det_b,
        det_w=det_w,
        det_g=det_g,
        eig_min=eig_min,
        eig_max=eig_max,
        rhobar_at_T=np.exp(log_rhobar_T),
        theta_alt=theta_alt,
        route_gap=route_gap,
    )


def lagrangian_angle(state):
    """The angle field from the det-g route, after checking the det-DT route."""
    if state.route_gap > ROUTE_TOL:
        raise RouteMismatch(
            f"angle routes differ by {state.route_gap:.3e} "
            f"(W asymmetry or differentiation error)"
        )
    return state.theta


def lagrangian_defect(state):
    """sup-norm of the antisymmetric part of W: the discrete |omega restricted|."""
    W = state.W.values
    asym = 0.5 * (W - np.swapaxes(W, -1, -2))
    return float(np.max(np.abs(asym)))


def _psi_values(state):
    n = state.grid.n_dims
    log_rho = state.densities.log_rho.values
    return (log_rho + np.log(state.rhobar_at_T) - np.log(state.det_b)) / (2.0 * n)


def calibration_defect(state):
    """sup-norm gap in the calibration identity.

    Compares the restricted form evaluated on the coordinate frame,
    tau*rho + taubar*rhobar(T)*det DT, with e^{k theta + n psi} sqrt(det g),
    as para-complex numbers.
    """
    theta = state.theta.values
    rho = state.densities.rho.values
    q = state.rhobar_at_T * state.det_dt
    lhs_re = 0.5 * (rho + q)
    lhs_im = 0.5 * (rho - q)
    scale = np.exp(state.grid.n_dims * _psi_values(state)) * np.sqrt(state.det_g)
    rhs_re = scale * np.cosh(theta)
    rhs_im = scale * np.sinh(theta)
    return float(np.max(np.hypot(lhs_re - rhs_re, lhs_im - rhs_im)))


def _pfaffian(a):
    """Pfaffian of an antisymmetric matrix of size 2 or 4 (direct expansion)."""
    m = a.shape[0]
    if m == 2:
        return a[0, 1]
    if m == 4:
        return a[0, 1] * a[2, 3] - a[0, 2] * a[1, 3] + a[0, 3] * a[1, 2]
    raise ValueError("pfaffian implemented for sizes 2 and 4 only")


def wedge_identity_check(model, densities, x, xbar):
    """Residual of the volume normalization identity at one point pair.

    Left side: e^{2 n psi} times the top power of the symplectic form, its
    coefficient extracted through a Pfaffian. Right side: the para-complex
    wedge of the holomorphic form with its k-conjugate, carried out in
    tau/taubar arithmetic. Both are coefficients of dx^1..dx^n dxbar^1..dxbar^n.
    """
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    model.check_guard(x, xbar)
    n = model.n_dims
    rho_val = interpolate(densities.rho, x)
    rhobar_val = interpolate(densities.rho_bar, xbar)

    C = model.mixed_hessian_matrix(x, xbar)
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = -0.5 * C
    A[n:, :n] = 0.5 * C.T
    from .geometry import conformal_factor

    psi = conformal_factor(model, rho_val, rhobar_val, x, xbar)
    lhs = ParaComplex(float(np.exp(2.0 * n * psi) * _pfaffian(A)), 0.0)

    sign = -1.0 if (n * (n - 1) // 2) % 2 else 1.0
    # Omega wedge conj(Omega): tau^2 rho rhobar dx dxbar + taubar^2 rho rhobar dxbar dx
    reorder = -1.0 if (n * n) % 2 else 1.0
    wedge = (TAU * TAU) * (rho_val * rhobar_val) + (TAU_BAR * TAU_BAR) * (
        reorder * rho_val * rhobar_val
    )
    rhs = sign * (0.5**n) * (k_power(n) * wedge)
    return (lhs - rhs).modulus()


def _ratio_of(lam):
    return (1.0 + lam * lam) / lam


def slope_ratio(state, require_lagrangian=True, defect_tol=1e-6):
    """Worst steep/flat ratio per node from the eigenvalues of g.

    The eigenvalue form (1 + lambda^2)/lambda reads the ratio off the
    symmetrized Jacobian; it only represents the tangent-vector maximization
    when W is symmetric, hence the defect precondition.
    """
    if require_lagrangian:
        defect = lagrangian_defect(state)
        if defect > defect_tol:
            raise ValueError(
                f"slope eigen form needs symmetric W: defect {defect:.3e} > {defect_tol:.1e}"
            )
    if np.min(state.eig_min) <= 0.0:
        node = tuple(
            int(v) for v in np.unravel_index(np.argmin(state.eig_min), state.grid.shape)
        )
        raise SpacelikeViolation(node, float(np.min(state.eig_min)))
    # (1 + t^2)/t is convex, so the per-node max sits at an extreme eigenvalue.
    vals = np.maximum(_ratio_of(state.eig_min), _ratio_of(state.eig_max))
    return ScalarField(state.grid, vals)


def slope_ratio_direct(state, node, samples=10000, seed=0):
    """Independent route: maximize S(V,V)/h(V,V) over random unit chart vectors.

    S is the auxiliary Riemannian metric built from the Euclidean chart metric
    m: the target block evaluates to |b w|^2 via m-traces of h-pairings, so on
    a graph tangent vector V = (xi, DT xi) the ratio is
    (|xi|^2 + |W xi|^2) / (xi^T W xi).
    """
    rng = np.random.default_rng(seed)
    n = state.grid.n_dims
    W = state.W.values[node]
    best = -np.inf
    for _ in range(samples):
        xi = rng.standard_normal(n)
        xi /= np.linalg.norm(xi)
        Wxi = W @ xi
        denom = xi @ Wxi
        if denom <= 0.0:
            raise SpacelikeViolation(node, float(denom))
        best = max(best, (xi @ xi + Wxi @ Wxi) / denom)
    return best


def recover_potential(state):
    """Invert the discrete gradient of the closed one-form -c_i(x, T(x)).

    Solves the least-squares system D_h u = eta with the exact Fourier symbol
    of the accuracy-4 stencil; when the graph is Lagrangian at discretization
    level, eta lies in the range of D_h and c_exponential(u) reproduces T.
    """
    grid = state.grid
    n = grid.n_dims
    X = grid.coords()
    eta = -state.model.grad_x(X, state.T.values)

    eta_hat = [np.fft.fftn(eta[..., a]) for a in range(n)]
    num = np.zeros(grid.shape, dtype=complex)
    den = np.zeros(grid.shape)
    for a in range(n):
        N = grid.resolution[a]
        h = grid.spacing[a]
        omega = 2.0 * np.pi * np.fft.fftfreq(N)
        sym = 1j * (8.0 * np.sin(omega) - np.sin(2.0 * omega)) / (6.0 * h)
        shape = [1] * n
        shape[a] = N
        sym = sym.reshape(shape)
        num += np.conj(sym) * eta_hat[a]
        den += np.abs(sym) ** 2
    den_flat = den.reshape(-1)
    den_flat[0] = 1.0  # zero mode: potential defined up to a constant
    u_hat = num / den
    u_hat.reshape(-1)[0] = 0.0
    u = np.real(np.fft.ifftn(u_hat))
    return ScalarField(grid, u - np.mean(u))
