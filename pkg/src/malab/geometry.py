"""Tensor geometry of convex graphs under the Hessian (Calabi) metric.

From a potential's derivatives this module evaluates the metric and its
inverse, the Levi-Civita connection Gamma^k_ij = 1/2 sum_l G^{kl} d3_ijl,
the cubic form A_ijk = -1/2 d3_ijk (with vanishing Weingarten tensor), the
relative Pick invariant, the Ricci tensor built from the cubic form, the
normalized determinant power rho, the invariant Phi = |grad log rho|^2_G,
and the metric Laplacian

    Lap = sum G^{ij} d_i d_j + side * (n+2)/(2 rho) sum G^{ij} rho_j d_i,

with side = +1 for a primal potential f(x) (rho = det(D^2 f)^{-1/(n+2)})
and side = -1 for a dual potential u(xi) (rho = det(D^2 u)^{+1/(n+2)}; this
is the same scalar on the graph expressed in gradient coordinates).

Quantities that need fourth derivatives (the flat-direction curvature,
second derivatives of rho or Phi) are obtained by centered differencing of
the exact third-order rules, with one Richardson level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, StencilError
from .grids import GridFunction, INTERIOR, gradient_field, hessian_field
from .oracles import DUAL, PRIMAL, FieldOracle
from .stencils import fd_gradient, fd_hessian, richardson

DEFAULT_FD_SCALE = 1e-3  # outer FD step = scale * local length unit


def rho_sign(side):
    return -1.0 if side == PRIMAL else 1.0


def lap_drift_sign(side):
    return 1.0 if side == PRIMAL else -1.0


def _require_spd(H, x):
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise DegeneracyError("Hessian not positive definite at probe",
                              point=np.asarray(x).tolist()) from None


# ---------------------------------------------------------------------------
# exact pointwise pieces from (H, T)


def _core(H, T, side):
    n = H.shape[-1]
    Hi = np.linalg.inv(H)
    Gamma = 0.5 * np.einsum("kl,ijl->kij", Hi, T)
    A = -0.5 * T
    J = np.einsum("il,jm,kn,ijk,lmn->", Hi, Hi, Hi, T, T) / (4.0 * n * (n - 1))
    Ricci = (np.einsum("mh,lj,iml,hjk->ik", Hi, Hi, A, A)
             - np.einsum("mh,lj,imk,hlj->ik", Hi, Hi, A, A))
    s = rho_sign(side) / (n + 2.0)
    logdet = float(np.linalg.slogdet(H)[1])
    rho = float(np.exp(s * logdet))
    grad_logrho = s * np.einsum("ab,abi->i", Hi, T)
    phi = float(np.einsum("ij,i,j->", Hi, grad_logrho, grad_logrho))
    return {
        "Ginv": Hi, "Gamma": Gamma, "A": A, "J": float(J), "Ricci": Ricci,
        "rho": rho, "grad_logrho": grad_logrho, "grad_rho": rho * grad_logrho,
        "Phi": phi,
    }


def grad_logrho_rule(oracle, side):
    n = oracle.n
    s = rho_sign(side) / (n + 2.0)

    def rule(x):
        H = oracle.hessian(x)
        T = oracle.third(x)
        return s * np.einsum("...ab,...abi->...i", np.linalg.inv(H), T)

    return rule


def phi_rule(oracle, side):
    n = oracle.n
    s = rho_sign(side) / (n + 2.0)

    def rule(x):
        H = oracle.hessian(x)
        Hi = np.linalg.inv(H)
        g = s * np.einsum("...ab,...abi->...i", Hi, oracle.third(x))
        return np.einsum("...ij,...i,...j->...", Hi, g, g)

    return rule


def rho_value_rule(oracle, side):
    n = oracle.n
    s = rho_sign(side) / (n + 2.0)

    def rule(x):
        sign, logdet = np.linalg.slogdet(oracle.hessian(x))
        return np.exp(s * logdet)

    return rule


def fd_step(oracle, x, h=None):
    if h is not None:
        return h
    return DEFAULT_FD_SCALE * max(1.0, float(np.abs(np.asarray(x)).max()))


# ---------------------------------------------------------------------------
# the x-Hessian of log rho (fourth-order content; drives the flat-direction
# curvature and identity (a))


def xx_hessian_logrho(oracle, x, side=None, h=None, use_richardson=True):
    """Second derivatives of log rho with respect to the primal coordinates.

    On the dual side d/dx_j is the directional derivative along the columns
    of (D^2 u)^{-1}; centered differencing along those straight lines agrees
    with the true chained derivative to O(h^2).
    """
    side = side or oracle.side
    x = np.asarray(x, dtype=float)
    n = oracle.n
    h = fd_step(oracle, x, h)
    glr = grad_logrho_rule(oracle, side)
    if side == PRIMAL:
        def columns(step):
            out = np.empty((n, n))
            for j in range(n):
                e = np.zeros(n)
                e[j] = step
                out[:, j] = (glr(x + e) - glr(x - e)) / (2.0 * step)
            return out
    else:
        Hi = np.linalg.inv(oracle.hessian(x))

        def s_of(xi):
            return np.linalg.inv(oracle.hessian(xi)) @ glr(xi)

        def columns(step):
            out = np.empty((n, n))
            for j in range(n):
                w = Hi[:, j]
                out[:, j] = (s_of(x + step * w) - s_of(x - step * w)) / (2.0 * step)
            return out
    D = columns(h)
    if use_richardson:
        D = richardson(D, columns(h / 2.0))
    return 0.5 * (D + D.T)


# ---------------------------------------------------------------------------
# geometry sample


@dataclass
class GeometrySample:
    x: np.ndarray
    side: str
    G: np.ndarray
    Ginv: np.ndarray
    Gamma: np.ndarray
    A: np.ndarray
    B: np.ndarray
    J: float
    Ricci: np.ndarray
    KahlerRicci: np.ndarray
    KahlerScalar: float
    rho: float
    grad_rho: np.ndarray
    Phi: float
    conormal: np.ndarray

    def phi_recomputed(self):
        return float(np.einsum("ij,i,j->", self.Ginv, self.grad_rho, self.grad_rho)
                     / self.rho**2)

    def to_json(self):
        return {
            "x": self.x.tolist(), "side": self.side,
            "G": self.G.tolist(), "Ginv": self.Ginv.tolist(),
            "Gamma": self.Gamma.tolist(), "A": self.A.tolist(), "B": self.B.tolist(),
            "J": self.J, "Ricci": self.Ricci.tolist(),
            "KahlerRicci": self.KahlerRicci.tolist(), "KahlerScalar": self.KahlerScalar,
            "rho": self.rho, "grad_rho": self.grad_rho.tolist(), "Phi": self.Phi,
            "conormal": self.conormal.tolist(),
        }


def geometry_sample(potential, x, side=None, h=None):
    """All pointwise tensors at x (oracle) or at the node nearest x (grid)."""
    if isinstance(potential, GridFunction):
        return _geometry_sample_grid(potential, x, side)
    side = side or potential.side
    x = np.asarray(x, dtype=float)
    n = potential.n
    H = potential.hessian(x)
    _require_spd(H, x)
    T = potential.third(x)
    core = _core(H, T, side)
    KR = (n + 2.0) * xx_hessian_logrho(potential, x, side, h)
    # scalar: -1/2 sum f^{ij} d_i d_j logdet f; f^{ij} at the graph point is
    # Ginv on the primal side and the dual Hessian itself on the dual side
    fij = core["Ginv"] if side == PRIMAL else H
    KS = 0.5 * float(np.einsum("ij,ij->", fij, KR))
    grad = potential.gradient(x)
    return GeometrySample(
        x=x, side=side, G=H, Ginv=core["Ginv"], Gamma=core["Gamma"], A=core["A"],
        B=np.zeros((n, n)), J=core["J"], Ricci=core["Ricci"],
        KahlerRicci=KR, KahlerScalar=KS, rho=core["rho"],
        grad_rho=core["grad_rho"], Phi=core["Phi"],
        conormal=np.r_[-grad, 1.0],
    )


def _geometry_sample_grid(fu, x, side):
    side = side or PRIMAL
    grid = fu.grid
    node = grid.nearest_node(x) if not isinstance(x, tuple) else x
    if grid.mask[node] != INTERIOR:
        raise StencilError("geometry sample needs an interior node",
                           node=[int(k) for k in node])
    n = grid.dim
    H = fu.hessian(node)
    _require_spd(H, grid.point(node))
    T = fu.third(node)
    core = _core(H, T, side)
    KR = (n + 2.0) * grid_xx_hessian_logrho(fu, side)[node]
    fij = core["Ginv"] if side == PRIMAL else H
    KS = 0.5 * float(np.einsum("ij,ij->", fij, KR))
    grad = fu.gradient(node)
    return GeometrySample(
        x=grid.point(node), side=side, G=H, Ginv=core["Ginv"], Gamma=core["Gamma"],
        A=core["A"], B=np.zeros((n, n)), J=core["J"], Ricci=core["Ricci"],
        KahlerRicci=KR, KahlerScalar=KS, rho=core["rho"],
        grad_rho=core["grad_rho"], Phi=core["Phi"],
        conormal=np.r_[-grad, 1.0],
    )


# ---------------------------------------------------------------------------
# metric Laplacian


class ScalarRule:
    """Scalar field with optional exact derivatives; missing ones use FD."""

    def __init__(self, value, gradient=None, hessian=None):
        self.value = value
        self._gradient = gradient
        self._hessian = hessian

    def gradient(self, x, h, use_richardson=True):
        if self._gradient is not None:
            return self._gradient(x)
        return fd_gradient(self.value, x, h, use_richardson)

    def hessian(self, x, h, use_richardson=True):
        if self._hessian is not None:
            return self._hessian(x)
        return fd_hessian(self.value, x, h, use_richardson)


def calabi_laplacian(potential, field, x, side=None, h=None, use_richardson=True):
    """Metric Laplacian of a scalar field.

    For an analytic potential, x is any point and missing field derivatives
    use Richardson-extrapolated differences. For a grid potential, x snaps
    to the nearest node and the field (callable or node array) is chained
    through grid differences.
    """
    if isinstance(potential, GridFunction):
        grid = potential.grid
        node = grid.nearest_node(x) if not isinstance(x, tuple) else x
        values = field if isinstance(field, np.ndarray) else \
            np.vectorize(lambda *c: field(np.array(c)))(*np.meshgrid(
                *grid.coords, indexing="ij"))
        lap = grid_laplacian_of(potential, side or PRIMAL, values)
        out = lap[node]
        if not np.isfinite(out):
            raise StencilError("laplacian stencil does not fit at the node",
                               node=[int(k) for k in node])
        return float(out)
    side = side or potential.side
    x = np.asarray(x, dtype=float)
    if not isinstance(field, ScalarRule):
        field = ScalarRule(field)
    H = potential.hessian(x)
    _require_spd(H, x)
    Hi = np.linalg.inv(H)
    glr = grad_logrho_rule(potential, side)(x)
    hstep = fd_step(potential, x, h)
    grad_f = field.gradient(x, hstep, use_richardson)
    hess_f = field.hessian(x, hstep, use_richardson)
    n = potential.n
    drift = lap_drift_sign(side) * (n + 2.0) / 2.0
    return float(np.einsum("ij,ij->", Hi, hess_f)
                 + drift * np.einsum("ij,j,i->", Hi, glr, grad_f))


class CalabiOperator:
    """The metric Laplacian of a fixed potential, applied to scalar rules."""

    def __init__(self, potential, side=None):
        self.potential = potential
        self.side = side or potential.side

    def apply(self, field, x, h=None):
        return calabi_laplacian(self.potential, field, x, self.side, h)


# ---------------------------------------------------------------------------
# structure-equation self-checks


def _fourth_by_fd(oracle, x, h, use_richardson=True):
    """F4[i,j,k,l] ~ d_l of the third-derivative rule."""
    n = oracle.n

    def cols(step):
        out = np.empty((n, n, n, n))
        for l in range(n):
            e = np.zeros(n)
            e[l] = step
            out[..., l] = (oracle.third(x + e) - oracle.third(x - e)) / (2.0 * step)
        return out

    D = cols(h)
    if use_richardson:
        D = richardson(D, cols(h / 2.0))
    return D


def _gamma_rule(oracle):
    def rule(x):
        H = oracle.hessian(x)
        return 0.5 * np.einsum("kl,ijl->kij", np.linalg.inv(H), oracle.third(x))

    return rule


def _dgamma_by_fd(gamma, x, n, h, use_richardson=True):
    def cols(step):
        out = np.empty((n, n, n, n))
        for l in range(n):
            e = np.zeros(n)
            e[l] = step
            out[l] = (gamma(x + e) - gamma(x - e)) / (2.0 * step)
        return out

    D = cols(h)
    if use_richardson:
        D = richardson(D, cols(h / 2.0))
    return D  # D[l, k, i, j] = d_l Gamma^k_ij


@dataclass(frozen=True)
class StructureResiduals:
    gauss: float
    codazzi: float
    ricci_consistency: float

    def to_json(self):
        return {"gauss": self.gauss, "codazzi": self.codazzi,
                "ricci_consistency": self.ricci_consistency}


def structure_residuals(potential, x, h=1e-3):
    """Numerical defects of the graph structure equation, the symmetry of the
    covariant-derivative cubic form, and Ricci-from-connection vs the cubic
    contraction. The potential is treated as the graph function over its own
    coordinates."""
    x = np.asarray(x, dtype=float)
    n = potential.n
    H = potential.hessian(x)
    _require_spd(H, x)
    T = potential.third(x)
    Hi = np.linalg.inv(H)
    Gamma = 0.5 * np.einsum("kl,ijl->kij", Hi, T)
    A = -0.5 * T
    A_up = np.einsum("kl,ijl->kij", Hi, A)

    # graph structure equation: dd y - Gamma.dy = A.dy + H Y
    grad = potential.gradient(x)
    y_k = np.c_[np.eye(n), grad].reshape(n, n + 1)          # tangent vectors
    Y = np.r_[np.zeros(n), 1.0]
    ddy = np.zeros((n, n, n + 1))
    ddy[..., n] = H
    resid = (ddy - np.einsum("kij,ka->ija", Gamma, y_k)
             - np.einsum("kij,ka->ija", A_up, y_k)
             - np.einsum("ij,a->ija", H, Y))
    gauss = float(np.abs(resid).max())

    # covariant derivative of the cubic form, antisymmetry in last two slots
    F4 = _fourth_by_fd(potential, x, h)
    dA = -0.5 * F4.transpose(3, 0, 1, 2)                    # [l, i, j, k]
    A_cov = (dA
             - np.einsum("mli,mjk->lijk", Gamma, A)
             - np.einsum("mlj,imk->lijk", Gamma, A)
             - np.einsum("mlk,ijm->lijk", Gamma, A))
    codazzi = float(np.abs(A_cov - A_cov.transpose(3, 1, 2, 0)).max())

    # Ricci from the connection vs the cubic-form contraction
    dG = _dgamma_by_fd(_gamma_rule(potential), x, n, h)
    ricci_gamma = (np.einsum("mmvs->sv", dG) - np.einsum("vmms->sv", dG)
                   + np.einsum("mml,lvs->sv", Gamma, Gamma)
                   - np.einsum("mvl,lms->sv", Gamma, Gamma))
    ricci_cubic = (np.einsum("mh,lj,iml,hjk->ik", Hi, Hi, A, A)
                   - np.einsum("mh,lj,imk,hlj->ik", Hi, Hi, A, A))
    ricci = float(np.abs(ricci_gamma - ricci_cubic).max())
    return StructureResiduals(gauss, codazzi, ricci)


# ---------------------------------------------------------------------------
# whole-grid chains (NaN marks nodes whose stencils do not fit)


def grid_hessian_stack(fu):
    return fu.hessian_field()


def grid_inv_hessian(fu):
    def build():
        H = fu.hessian_field()
        flat = H.reshape(-1, fu.n, fu.n)
        ok = np.all(np.isfinite(flat.reshape(len(flat), -1)), axis=1)
        eigs = np.full(len(flat), -np.inf)
        if ok.any():
            eigs[ok] = np.linalg.eigvalsh(flat[ok])[:, 0]
        out = np.full_like(flat, np.nan)
        good = ok & (eigs > 0)
        if good.any():
            out[good] = np.linalg.inv(flat[good])
        return out.reshape(H.shape)

    return fu.field("hess_inv", build)


def grid_logrho(fu, side):
    def build():
        H = fu.hessian_field()
        flat = H.reshape(-1, fu.n, fu.n)
        ok = np.all(np.isfinite(flat.reshape(len(flat), -1)), axis=1)
        out = np.full(len(flat), np.nan)
        if ok.any():
            sign, logdet = np.linalg.slogdet(flat[ok])
            logdet[sign <= 0] = np.nan
            out[ok] = logdet
        s = rho_sign(side) / (fu.n + 2.0)
        return s * out.reshape(fu.grid.shape)

    return fu.field(("logrho", side), build)


def grid_grad_logrho(fu, side):
    return fu.field(("grad_logrho", side),
                    lambda: gradient_field(grid_logrho(fu, side), fu.grid.spacing))


def grid_phi(fu, side):
    def build():
        Hi = grid_inv_hessian(fu)
        g = grid_grad_logrho(fu, side)
        return np.einsum("...ij,...i,...j->...", Hi, g, g)

    return fu.field(("phi", side), build)


def grid_laplacian_of(fu, side, values):
    """Metric Laplacian of a node field, by FD chains at grid spacing."""
    sp = fu.grid.spacing
    Hi = grid_inv_hessian(fu)
    glr = grid_grad_logrho(fu, side)
    gv = gradient_field(values, sp)
    hv = hessian_field(values, sp)
    n = fu.n
    drift = lap_drift_sign(side) * (n + 2.0) / 2.0
    return (np.einsum("...ij,...ij->...", Hi, hv)
            + drift * np.einsum("...ij,...j,...i->...", Hi, glr, gv))


def grid_phi_inequality_fields(fu, side):
    """(residual field, Phi field) of the gradient-of-Phi differential
    inequality, by FD chains."""
    n = fu.n
    sp = fu.grid.spacing
    Hi = grid_inv_hessian(fu)
    glr = grid_grad_logrho(fu, side)
    phi = grid_phi(fu, side)
    gphi = gradient_field(phi, sp)
    lap_phi = grid_laplacian_of(fu, side, phi)
    norm_gphi = np.einsum("...ij,...i,...j->...", Hi, gphi, gphi)
    inner = np.einsum("...ij,...i,...j->...", Hi, gphi, glr)
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = (n / (n - 1.0) * norm_gphi / phi
               + (n * n - 3.0 * n - 10.0) / (2.0 * (n - 1.0)) * inner
               + (n + 2.0) ** 2 / (n - 1.0) * phi**2)
    return lap_phi - rhs, phi


def grid_xx_hessian_logrho(fu, side):
    """Second x-derivatives of log rho on the grid.

    Primal side: straight FD Hessian of the log rho field. Dual side: chain
    through x = grad u, using only node fields.
    """
    key = ("xxlogrho", side)

    def build():
        sp = fu.grid.spacing
        phi_f = grid_logrho(fu, side)
        if side == PRIMAL:
            return hessian_field(phi_f, sp)
        Hi = grid_inv_hessian(fu)
        dphi = gradient_field(phi_f, sp)        # phi_a
        ddphi = hessian_field(phi_f, sp)        # phi_ab
        T = fu.third_field()                    # u_pqc
        term1 = np.einsum("...ia,...jb,...ab->...ij", Hi, Hi, ddphi)
        term2 = np.einsum("...ip,...qa,...a,...pqc,...cj->...ij", Hi, Hi, dphi, T, Hi)
        out = term1 - term2
        return 0.5 * (out + out.transpose(*range(out.ndim - 2), -1, -2))

    return fu.field(key, build)


def grid_kahler_ricci(fu, side):
    return (fu.n + 2.0) * grid_xx_hessian_logrho(fu, side)
