"""Numerical verification harness: pointwise identities satisfied by
solutions of the drift Monge-Ampere equation, the gradient-of-Phi
differential inequality, the barrier-weighted supremum functionals, and the
determinant lower-bound probe.

Every check first gates its input through the PDE residual, then reports
per-probe residuals with named tolerances; nothing is asserted here beyond
precondition gates (callers and tests decide what a report means).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CounterexampleError, PreconditionError, WindowError
from .geometry import (ScalarRule, calabi_laplacian, geometry_sample,
                       grad_logrho_rule, grid_phi_inequality_fields, phi_rule,
                       rho_value_rule, xx_hessian_logrho, fd_step)
from .grids import GridFunction, INTERIOR
from .oracles import DUAL, PRIMAL, FieldOracle, ScaledOracle, pde_residual
from .solver import residual_field
from .stencils import fd_gradient, fd_hessian

PDE_GATE_TOL = 1e-8


# ---------------------------------------------------------------------------
# reports


@dataclass
class CheckReport:
    name: str
    passed: bool
    tolerances: dict
    stats: dict
    points: np.ndarray = field(default=None, repr=False)
    residuals: dict = field(default_factory=dict, repr=False)

    def to_json(self):
        return {"name": self.name, "passed": bool(self.passed),
                "tolerances": self.tolerances, "stats": self.stats}

    def write_csv(self, path):
        import csv

        keys = sorted(self.residuals)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            n = self.points.shape[1] if self.points is not None else 0
            w.writerow([f"x{i+1}" for i in range(n)] + keys)
            rows = len(next(iter(self.residuals.values()))) if self.residuals else 0
            for r in range(rows):
                pt = [f"{v:.17g}" for v in self.points[r]] if self.points is not None else []
                w.writerow(pt + [f"{self.residuals[k][r]:.17g}" for k in keys])


def _stats(arrs):
    out = {}
    for k, v in arrs.items():
        v = np.asarray(v, dtype=float)
        good = np.isfinite(v)
        if not good.any():
            out[k] = {"count": 0}
            continue
        out[k] = {"count": int(good.sum()),
                  "min": float(np.nanmin(v)), "max": float(np.nanmax(v)),
                  "argmin": int(np.nanargmin(v)), "argmax": int(np.nanargmax(v))}
    return out


def _gate(potential, probes, drift, side):
    if drift is None:
        drift = potential.drift(side)
    if drift is None:
        raise PreconditionError("no drift constants available for the PDE gate")
    r = pde_residual(potential, probes, drift, side)
    worst = float(np.abs(r).max())
    if worst > PDE_GATE_TOL:
        raise PreconditionError("potential fails the PDE residual gate",
                                worst=worst, tol=PDE_GATE_TOL)
    return drift


# ---------------------------------------------------------------------------
# identity suite


def identity_suite(potential, probes, side=None, drift=None, scale_factor=4.0):
    """Residuals of the solution identities at analytic probes.

    logrho_flat             the x-Hessian of log rho vanishes;
    rho_laplacian           Lap rho = (n+4)/2 |grad rho|^2 / rho;
    primal_value_laplacian  Lap f = n + (n+2)/(2 rho) <grad rho, grad f>;
    dual_value_laplacian    Lap u = n - (n+2)/(2 rho) <grad rho, grad u>;
    phi_scaling_rel         Phi of (potential/scale) = scale * Phi pointwise.
    """
    side = side or potential.side
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    drift = _gate(potential, probes, drift, side)
    n = potential.n

    res = {k: np.empty(len(probes)) for k in
           ("logrho_flat", "rho_laplacian", "primal_value_laplacian",
            "dual_value_laplacian", "phi_scaling_rel")}
    rho_r = rho_value_rule(potential, side)
    glr_r = grad_logrho_rule(potential, side)
    phi_r = phi_rule(potential, side)
    scaled = ScaledOracle(potential, scale_factor)
    phi_scaled = phi_rule(scaled, side)

    rho_rule = ScalarRule(rho_r, gradient=lambda y: rho_r(y) * glr_r(y))

    for k, x in enumerate(probes):
        H = potential.hessian(x)
        Hi = np.linalg.inv(H)
        glr = glr_r(x)
        rho = float(rho_r(x))
        phi = float(phi_r(x))

        res["logrho_flat"][k] = np.abs(xx_hessian_logrho(potential, x, side)).max()

        lap_rho = calabi_laplacian(potential, rho_rule, x, side)
        res["rho_laplacian"][k] = lap_rho - (n + 4.0) / 2.0 * phi * rho

        # scalars f and u as functions on the evaluation side
        if side == PRIMAL:
            f_grad, f_hess = potential.gradient(x), H
            u_grad = x @ H  # d_i u = sum_k x_k f_ki
            u_hess = H + np.einsum("k,kij->ij", x, potential.third(x))
        else:
            u_grad, u_hess = potential.gradient(x), H
            f_grad = x @ H
            f_hess = H + np.einsum("k,kij->ij", x, potential.third(x))

        drift_term = (n + 2.0) / (2.0 * rho)

        def metric_lap(grad_s, hess_s):
            sgn = 1.0 if side == PRIMAL else -1.0
            return (np.einsum("ij,ij->", Hi, hess_s)
                    + sgn * drift_term * rho * np.einsum("ij,j,i->", Hi, glr, grad_s))

        inner_f = drift_term * rho * np.einsum("ij,i,j->", Hi, glr, f_grad)
        inner_u = drift_term * rho * np.einsum("ij,i,j->", Hi, glr, u_grad)
        res["primal_value_laplacian"][k] = metric_lap(f_grad, f_hess) - (n + inner_f)
        res["dual_value_laplacian"][k] = metric_lap(u_grad, u_hess) - (n - inner_u)

        phi_new = float(phi_scaled(x))
        want = scale_factor * phi
        res["phi_scaling_rel"][k] = abs(phi_new - want) / max(abs(want), 1e-300) if want else abs(phi_new)

    tols = {"logrho_flat": 1e-6, "rho_laplacian": 1e-6,
            "primal_value_laplacian": 1e-6, "dual_value_laplacian": 1e-6,
            "phi_scaling_rel": 1e-8}
    passed = all(np.abs(res[k]).max() <= tols[k] for k in tols)
    return CheckReport("identity_suite", passed, tols, _stats(res),
                       points=probes, residuals=res)


# ---------------------------------------------------------------------------
# the differential inequality for Phi


def phi_inequality_check(potential, probes=None, side=None, drift=None,
                         tol_scale=1e-4, phi_floor=1e-10,
                         gate_tol=PDE_GATE_TOL, probe_predicate=None):
    """Pointwise residual of

        Lap Phi >= n/(n-1) |grad Phi|^2/Phi
                   + (n^2-3n-10)/(2(n-1)) <grad Phi, grad log rho>
                   + (n+2)^2/(n-1) Phi^2

    Probes where Phi <= phi_floor are skipped (the zero branch is vacuous).
    For grid potentials the probes are interior nodes (optionally filtered
    by probe_predicate on node coordinates); FD chains near the prescribed
    collar are not trustworthy, so callers usually keep a margin.
    """
    if isinstance(potential, GridFunction):
        return _phi_inequality_grid(potential, side, drift, tol_scale,
                                    phi_floor, gate_tol, probe_predicate)
    side = side or potential.side
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    _gate(potential, probes, drift, side)
    n = potential.n

    phi_r = phi_rule(potential, side)
    glr_r = grad_logrho_rule(potential, side)
    residuals, phis, margins, used = [], [], [], []
    skipped = 0
    for x in probes:
        phi0 = float(phi_r(x))
        if phi0 <= phi_floor:
            skipped += 1
            continue
        used.append(x)
        H = potential.hessian(x)
        Hi = np.linalg.inv(H)
        glr = glr_r(x)
        hstep = fd_step(potential, x)
        gphi = fd_gradient(phi_r, x, hstep)
        hphi = fd_hessian(phi_r, x, hstep)
        sgn = 1.0 if side == PRIMAL else -1.0
        lap = (np.einsum("ij,ij->", Hi, hphi)
               + sgn * (n + 2.0) / 2.0 * np.einsum("ij,j,i->", Hi, glr, gphi))
        rhs = (n / (n - 1.0) * np.einsum("ij,i,j->", Hi, gphi, gphi) / phi0
               + (n * n - 3.0 * n - 10.0) / (2.0 * (n - 1.0))
               * np.einsum("ij,i,j->", Hi, gphi, glr)
               + (n + 2.0) ** 2 / (n - 1.0) * phi0**2)
        r = float(lap - rhs)
        residuals.append(r)
        phis.append(phi0)
        margins.append(r + tol_scale * max(1.0, phi0**2))
    residuals = np.asarray(residuals)
    margins = np.asarray(margins)
    passed = bool(len(margins) == 0 or margins.min() >= 0.0)
    arrs = {"residual": residuals, "phi": np.asarray(phis), "margin": margins}
    stats = _stats(arrs)
    stats["skipped_zero_phi"] = skipped
    used = np.asarray(used) if used else np.zeros((0, potential.n))
    return CheckReport("phi_inequality", passed, {"tol_scale": tol_scale}, stats,
                       points=used, residuals=arrs)


def _phi_inequality_grid(fu, side, drift, tol_scale, phi_floor, gate_tol,
                         probe_predicate=None):
    side = side or DUAL
    if drift is None:
        raise PreconditionError("grid potentials need explicit drift constants")
    r = residual_field(fu, drift, side)
    worst = float(np.nanmax(np.abs(r.values)))
    if worst > gate_tol:
        raise PreconditionError("grid potential fails the PDE residual gate",
                                worst=worst, tol=gate_tol)
    res_f, phi_f = grid_phi_inequality_fields(fu, side)
    valid = np.isfinite(res_f) & np.isfinite(phi_f) & (fu.grid.mask == INTERIOR)
    if probe_predicate is not None:
        valid &= probe_predicate(fu.grid.points())
    live = valid & (phi_f > phi_floor)
    skipped = int((valid & ~live).sum())
    residuals = res_f[live]
    phis = phi_f[live]
    margins = residuals + tol_scale * np.maximum(1.0, phis**2)
    pts = fu.grid.points()[live]
    passed = bool(len(margins) == 0 or margins.min() >= 0.0)
    arrs = {"residual": residuals, "phi": phis, "margin": margins}
    stats = _stats(arrs)
    stats["skipped_zero_phi"] = skipped
    return CheckReport("phi_inequality_grid", passed, {"tol_scale": tol_scale}, stats,
                       points=pts, residuals=arrs)


# ---------------------------------------------------------------------------
# barrier functionals over sublevel sections


@dataclass(frozen=True)
class BarrierConstants:
    """Barrier constants used by the supremum functionals over a section of
    height C: a level height, the three barrier scales, the exponent alpha,
    the shift constant d > 1, and the smallness scale epsilon for H."""

    n: int
    C: float
    alpha: float
    m_phi: float
    m_weighted: float
    m_trace: float
    d: float
    epsilon: float

    @staticmethod
    def defaults(n, C, d, epsilon):
        return BarrierConstants(
            n=n, C=C,
            alpha=(n + 2.0) * (n - 3.0) / 2.0 + (n - 1.0) / 4.0,
            m_phi=8.0 * (n - 1.0) * C,
            m_weighted=32.0 * (n + 2.0) * C,
            m_trace=64.0 * (n - 1.0) * C,
            d=d, epsilon=epsilon)

    def h(self, u):
        return self.m_weighted / (self.C - u) ** 2

    def hprime(self, u):
        return 2.0 * self.m_weighted / (self.C - u) ** 3

    def hdoubleprime(self, u):
        return 6.0 * self.m_weighted / (self.C - u) ** 4

    def to_json(self):
        return {"n": self.n, "C": self.C, "alpha": self.alpha,
                "m_phi": self.m_phi, "m_weighted": self.m_weighted,
                "m_trace": self.m_trace, "d": self.d, "epsilon": self.epsilon}


def _check_normalized(u, p):
    p = np.asarray(p, dtype=float)
    if abs(float(u.value(p))) > 1e-9 or np.abs(u.gradient(p)).max() > 1e-9:
        raise PreconditionError(
            "potential is not normalized at p (apply normalize_at first)",
            value=float(u.value(p)), grad=np.abs(u.gradient(p)).max())
    return p


def trace_ray(u, p, direction, C, window=None, rel_tol=1e-8):
    """Walk a ray from p until the potential reaches level C.

    Returns (point, kind): kind is 'level' when u hits C on the ray,
    'window' when the ray leaves the window box with u still below C, and
    'domain' when it leaves the oracle's domain below C.
    """
    p = np.asarray(p, dtype=float)
    d = np.asarray(direction, dtype=float)
    n = len(p)
    t_cap = np.inf
    if window is not None:
        lo_w, hi_w = np.asarray(window[0], float), np.asarray(window[1], float)
        for i in range(n):
            if d[i] > 0:
                t_cap = min(t_cap, (hi_w[i] - p[i]) / d[i])
            elif d[i] < 0:
                t_cap = min(t_cap, (lo_w[i] - p[i]) / d[i])
    if not np.isfinite(t_cap):
        t_cap = 1.0
        while u.contains(p + t_cap * d) and float(u.value(p + t_cap * d)) < C:
            t_cap *= 2.0
            if t_cap > 1e12:
                return p + t_cap * d, "window"

    def below(t):
        x = p + t * d
        return bool(u.contains(x)) and float(u.value(x)) < C

    if below(t_cap):
        return p + t_cap * d, "window"
    t_lo, t_hi = 0.0, t_cap
    while (t_hi - t_lo) > 1e-14 * max(1.0, t_cap):
        t_mid = 0.5 * (t_lo + t_hi)
        if below(t_mid):
            t_lo = t_mid
        else:
            t_hi = t_mid
        x_lo = p + t_lo * d
        if t_lo > 0 and abs(float(u.value(x_lo)) - C) <= rel_tol * max(C, 1e-12):
            return x_lo, "level"
    x_lo = p + t_lo * d
    if abs(float(u.value(x_lo)) - C) <= 1e-6 * max(C, 1e-12):
        return x_lo, "level"
    return x_lo, "domain"


def section_probes(u, p, C, window, probes_per_axis=201, ray_count=None,
                   allow_clipped=False):
    """Dense probe set of the sublevel section {u < C}.

    Rays from p locate the section boundary by bisection; rays that leave
    the window or the oracle domain before the level mark the section as
    clipped (an error unless allow_clipped). Returns (points, clipped_rays).
    """
    from .domains import direction_fan

    p = _check_normalized(u, p)
    n = u.n
    ray_count = ray_count or (128 if n == 2 else 512)
    dirs = direction_fan(n, ray_count)
    hits, clipped = [], 0
    for d in dirs:
        x, kind = trace_ray(u, p, d, C, window)
        if kind != "level":
            clipped += 1
        hits.append(x)
    if clipped and not allow_clipped:
        raise WindowError("section is not compactly contained in the window",
                          clipped_rays=clipped, rays=ray_count)
    hits = np.asarray(hits)
    lo_w, hi_w = np.asarray(window[0], float), np.asarray(window[1], float)
    lo = np.maximum(hits.min(axis=0), lo_w)
    hi = np.minimum(hits.max(axis=0), hi_w)
    axes = [np.linspace(lo[i], hi[i], probes_per_axis) for i in range(n)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    pts = pts[u.contains(pts)]
    vals = u.value(pts)
    return pts[vals < C], clipped


def choose_shift_constant(u_vals, f_vals):
    """Smallest power-of-two d > 1 with |u + f| <= d + f on the probes."""
    d = 2.0
    for _ in range(60):
        if np.all(d + f_vals > 0) and np.all(np.abs(u_vals + f_vals) <= d + f_vals):
            return d
        d *= 2.0
    raise PreconditionError("no shift constant d satisfies the pointwise bound")


@dataclass
class SectionFunctionalReport:
    params: BarrierConstants
    sup_phi_barrier: float
    sup_weighted_phi: float
    sup_weighted_barrier: float
    sup_weighted_trace: float
    sup_gradient_ratio: float
    argmax_phi_barrier: np.ndarray
    level_fraction_at_argmax: float
    probe_count: int
    clipped_rays: int

    def to_json(self):
        return {
            "params": self.params.to_json(),
            "sup_phi_barrier": self.sup_phi_barrier, "sup_weighted_phi": self.sup_weighted_phi,
            "sup_weighted_barrier": self.sup_weighted_barrier, "sup_weighted_trace": self.sup_weighted_trace,
            "sup_gradient_ratio": self.sup_gradient_ratio,
            "argmax_phi_barrier": self.argmax_phi_barrier.tolist(),
            "level_fraction_at_argmax": self.level_fraction_at_argmax,
            "probe_count": self.probe_count, "clipped_rays": self.clipped_rays,
        }


def section_functionals(u, p, C, window, probes_per_axis=201,
                        allow_clipped=False, shift_d=None, epsilon=None):
    """Suprema of the barrier functionals over a dense probe set of {u < C}.

    The potential must be normalized at p. The shift constant d is found by
    doubling search so |u+f| <= d+f holds on the probes, and epsilon is set
    so the auxiliary exponent H stays below 1/30.
    """
    pts, clipped = section_probes(u, p, C, window, probes_per_axis,
                                  allow_clipped=allow_clipped)
    n = u.n
    uv = u.value(pts)
    grads = u.gradient(pts)                    # x = grad u
    fv = np.einsum("ki,ki->k", pts, grads) - uv
    phi = phi_rule(u, u.side)(pts)
    H = u.hessian(pts)
    sign, logdet = np.linalg.slogdet(H)
    from .geometry import rho_sign

    rho = np.exp(rho_sign(u.side) / (n + 2.0) * logdet)
    trace = np.einsum("kii->k", H)

    d = shift_d if shift_d is not None else choose_shift_constant(uv, fv)
    gradient_ratio = np.einsum("ki,ki->k", grads, grads) / (d + fv) ** 2
    if epsilon is None:
        peak = float(gradient_ratio.max())
        epsilon = (1.0 / 30.0) / peak * (1.0 - 1e-12) if peak > 0 else 1.0
    params = BarrierConstants.defaults(n, C, d, epsilon)

    a = params.alpha
    pw = (d + fv) ** (2.0 * n * a / (n + 2.0))
    phi_barrier = np.exp(-params.m_phi / (C - uv)) * phi
    weighted_phi = np.exp(-params.m_weighted / (C - uv)) * rho**a * phi / pw
    Hexp = epsilon * gradient_ratio
    weighted_barrier = np.exp(-params.m_weighted / (C - uv) + Hexp) \
        * (params.h(uv) + 2.0 * a) * rho**a / pw
    weighted_trace = np.exp(-params.m_trace / (C - uv)) * rho**a * trace \
        / (pw * (d + fv) ** 2)

    k = int(np.argmax(phi_barrier))
    return SectionFunctionalReport(
        params=params,
        sup_phi_barrier=float(phi_barrier.max()),
        sup_weighted_phi=float(weighted_phi.max()),
        sup_weighted_barrier=float(weighted_barrier.max()),
        sup_weighted_trace=float(weighted_trace.max()),
        sup_gradient_ratio=float(gradient_ratio.max()),
        argmax_phi_barrier=pts[k], level_fraction_at_argmax=float(uv[k] / C),
        probe_count=int(len(pts)), clipped_rays=int(clipped))


@dataclass
class LadderReport:
    levels: list
    sups: list
    observed_b: float
    decreasing: bool
    within_factor_two: bool
    clipped: list

    def to_json(self):
        return {"levels": list(self.levels), "sups": list(self.sups),
                "observed_b": self.observed_b, "decreasing": self.decreasing,
                "within_factor_two": self.within_factor_two,
                "clipped": list(self.clipped)}


def phi_barrier_ladder(u, p, levels, window, probes_per_axis=201,
                       allow_clipped=True):
    """sup of the barrier-weighted Phi functional across a ladder of section
    heights, with the bound constant b calibrated from the first level."""
    sups, clipped = [], []
    for C in levels:
        rep = section_functionals(u, p, C, window, probes_per_axis,
                                  allow_clipped=allow_clipped)
        sups.append(rep.sup_phi_barrier)
        clipped.append(rep.clipped_rays)
    b = levels[0] * sups[0]
    decreasing = all(sups[i + 1] < sups[i] for i in range(len(sups) - 1))
    within = all(s <= 2.0 * b / C for s, C in zip(sups, levels))
    return LadderReport(list(levels), sups, float(b), decreasing, within, clipped)


# ---------------------------------------------------------------------------
# determinant lower-bound probe


def det_barrier_constant(n, Rprime, delta):
    return (4.0 * Rprime / delta**2) ** (n / (n + 2.0)) * 2.0 ** ((n + 1.0) / (n + 2.0))


def det_barrier_probe(f, delta, Rprime, coarse=None, rounds=6):
    """Search the ball B_delta(0) for a point with det(D^2 f)^{1/(n+2)}
    below the closed-form barrier constant d5, by coarse-to-fine descent.

    Verifies |f| <= Rprime on the ball first; raises CounterexampleError if
    the search cannot beat d5 (the theory forbids that on valid inputs).
    """
    if isinstance(f, GridFunction):
        return _det_barrier_grid(f, delta, Rprime)
    n = f.n
    d5 = det_barrier_constant(n, Rprime, delta)
    coarse = coarse or (21 if n <= 3 else 7)

    def lattice(center, radius, per_axis):
        axes = [np.linspace(center[i] - radius, center[i] + radius, per_axis)
                for i in range(n)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        return pts[np.sum(pts**2, axis=-1) <= delta**2]

    pts = lattice(np.zeros(n), delta, coarse)
    if not np.all(f.contains(pts)):
        raise PreconditionError("ball escapes the oracle domain")
    worst = float(np.abs(f.value(pts)).max())
    if worst > Rprime:
        raise PreconditionError("|f| exceeds the stated bound on the ball",
                                worst=worst, Rprime=Rprime)

    def invrho(points):
        sign, logdet = np.linalg.slogdet(f.hessian(points))
        return np.exp(logdet / (n + 2.0))

    best_pts = pts
    radius = delta
    center, best_val = np.zeros(n), float(invrho(np.zeros(n)[None, :])[0])
    for _ in range(rounds):
        v = invrho(best_pts)
        k = int(np.argmin(v))
        center, best_val = best_pts[k], float(v[k])
        radius *= 0.35
        cand = lattice(center, radius, coarse)
        if len(cand) == 0:
            break
        best_pts = np.vstack([cand, center[None, :]])
    if best_val >= d5:
        raise CounterexampleError("no point beats the determinant barrier",
                                  best=best_val, d5=d5)
    return center, best_val, d5


def _det_barrier_grid(fu, delta, Rprime):
    """Grid variant: descend on interior nodes of the ball."""
    n = fu.n
    d5 = det_barrier_constant(n, Rprime, delta)
    grid = fu.grid
    pts = grid.points()
    in_ball = np.linalg.norm(pts, axis=-1) <= delta
    live = in_ball & (grid.mask != 0)
    if not live.any():
        raise PreconditionError("grid does not cover the ball")
    if float(np.abs(fu.values[live]).max()) > Rprime:
        raise PreconditionError("|f| exceeds the stated bound on the ball")
    H = fu.hessian_field()
    flat = H[in_ball & (grid.mask == INTERIOR)]
    ok = np.all(np.isfinite(flat.reshape(len(flat), -1)), axis=1)
    sign, logdet = np.linalg.slogdet(flat[ok])
    vals = np.exp(logdet / (n + 2.0))
    nodes = pts[in_ball & (grid.mask == INTERIOR)][ok]
    k = int(np.argmin(vals))
    if vals[k] >= d5:
        raise CounterexampleError("no node beats the determinant barrier",
                                  best=float(vals[k]), d5=d5)
    return nodes[k], float(vals[k]), d5
