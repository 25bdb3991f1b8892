"""Desk-scale blow-up sequences: section extraction, John normalization,
potential rescaling, and tracking of the invariant Phi and the barrier
functionals along a ladder of section heights.

For a convex potential u with minimum 0 at p, each ladder entry C_k yields
the section {u < C_k}, its centered-MVEE normalization T_k, and the
normalized potential w_k = (u/C_k) o T_k^{-1} with w_k = 1 on the image
boundary. The invariant Phi satisfies Phi_{w_k}(T_k p) = C_k Phi_u(p)
exactly, which is the quantity the ladder reports and tests pin down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

from .checks import BarrierConstants, choose_shift_constant, trace_ray
from .domains import Polytope, direction_fan, normalize_domain
from .errors import PreconditionError, UnboundedSectionError
from .geometry import phi_rule, rho_sign
from .oracles import AffineImageOracle

DEFAULT_DIRECTIONS = {2: 128, 3: 512}


def _check_min_at(u, p):
    p = np.asarray(p, dtype=float)
    if abs(float(u.value(p))) > 1e-9 or np.abs(u.gradient(p)).max() > 1e-9:
        raise PreconditionError("potential must have value 0 and zero gradient at p",
                                value=float(u.value(p)))
    return p


@dataclass
class SectionData:
    p: np.ndarray
    C: float
    support_points: np.ndarray
    map: object                 # AffineMap sending the section MVEE to B(0,1)
    normalized_domain: object
    normalized_potential: object
    level_defect: float

    def to_json(self):
        return {"p": self.p.tolist(), "C": self.C,
                "support_points": self.support_points.tolist(),
                "map": self.map.to_json(),
                "normalized_domain": self.normalized_domain.to_json(),
                "level_defect": self.level_defect}


def extract_section(u, p, C, directions=None, mvee_tol=1e-9):
    """Boundary of {u < C} by ray bisection, plus its John normalization.

    Raises UnboundedSectionError when a ray leaves the oracle's domain
    before reaching the level.
    """
    p = _check_min_at(u, p)
    n = u.n
    directions = directions or DEFAULT_DIRECTIONS.get(n, 512)
    dirs = direction_fan(n, directions)
    pts = np.empty((directions, n))
    for k, d in enumerate(dirs):
        x, kind = trace_ray(u, p, d, C, window=None, rel_tol=1e-9)
        if kind != "level":
            raise UnboundedSectionError(
                "section ray leaves the domain before the level",
                direction=d.tolist(), level=C)
        pts[k] = x
    defect = float(np.abs(u.value(pts) - C).max())
    if defect > 1e-6 * max(C, 1e-12):
        raise PreconditionError("section boundary located too coarsely",
                                defect=defect)
    hull = ConvexHull(pts)
    poly = Polytope(hull.equations[:, :-1], -hull.equations[:, -1])
    T, image = normalize_domain(poly, tol=mvee_tol)
    w = AffineImageOracle(u, T, scale=C, name=f"{u.name}_section_{C:g}")
    return SectionData(p=p, C=float(C), support_points=pts, map=T,
                       normalized_domain=image, normalized_potential=w,
                       level_defect=defect)


@dataclass
class BlowupRecord:
    C: float
    map: object
    phi_at_base: float
    phi_at_base_expected: float
    scaling_rel_error: float
    sup_phi_half: float
    sup_rho_half: float
    sup_rho_alpha_phi_half: float
    sup_rho_alpha_trace_half: float
    sup_weighted_phi: float
    sup_weighted_barrier: float
    sup_weighted_trace: float
    sup_gradient_ratio: float
    half_section_radius: float
    normal_map_radius: float
    normal_map_covered: int
    normal_map_directions: int

    def to_json(self):
        return {
            "C": self.C, "map": self.map.to_json(),
            "phi_at_base": self.phi_at_base,
            "phi_at_base_expected": self.phi_at_base_expected,
            "scaling_rel_error": self.scaling_rel_error,
            "sup_phi_half": self.sup_phi_half,
            "sup_rho_half": self.sup_rho_half,
            "sup_rho_alpha_phi_half": self.sup_rho_alpha_phi_half,
            "sup_rho_alpha_trace_half": self.sup_rho_alpha_trace_half,
            "sup_weighted_phi": self.sup_weighted_phi,
            "sup_weighted_barrier": self.sup_weighted_barrier,
            "sup_weighted_trace": self.sup_weighted_trace,
            "sup_gradient_ratio": self.sup_gradient_ratio,
            "half_section_radius": self.half_section_radius,
            "normal_map_radius": self.normal_map_radius,
            "normal_map_covered": self.normal_map_covered,
            "normal_map_directions": self.normal_map_directions,
        }


@dataclass
class BlowupReport:
    base_point: np.ndarray
    phi_base: float
    params: BarrierConstants
    records: list = field(default_factory=list)

    def to_json(self):
        return {"base_point": self.base_point.tolist(), "phi_base": self.phi_base,
                "params": self.params.to_json(),
                "records": [r.to_json() for r in self.records]}


def _normalized_probes(w, probes_per_axis):
    """Probes of the unit-ball bounding box with w finite, as (pts, values)."""
    n = w.n
    axes = [np.linspace(-1.0, 1.0, probes_per_axis)] * n
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    keep = w.contains(pts)
    pts = pts[keep]
    vals = w.value(pts)
    return pts, vals


def _normal_map_coverage(pts, vals, directions_count, margin=1e-3):
    """Check the gradient image of {w < 1/2} covers the sphere of radius
    1/(2R), where {w < 1/2} sits inside the ball of radius R/2 about 0."""
    half = vals < 0.5
    hpts, hvals = pts[half], vals[half]
    circ = float(np.linalg.norm(hpts, axis=1).max())
    R = 2.0 * circ
    r = 1.0 / (2.0 * R)
    n = pts.shape[1]
    dirs = direction_fan(n, directions_count)
    covered = 0
    for th in dirs:
        score = hvals - hpts @ (r * th)
        k = int(np.argmin(score))
        if hvals[k] < 0.5 - margin:
            covered += 1
    return r, covered, len(dirs), circ


def run_blowup(u, p, ladder, probes_per_axis=161, directions=None,
               normal_directions=64, mvee_tol=1e-9):
    """Blow-up ladder: per level, the normalized potential's invariant Phi at
    the image of the base point (with the exact C_k * Phi(p) scaling law),
    suprema of the barrier functionals over the half-section, and the
    normal-mapping ball coverage."""
    p = _check_min_at(u, p)
    n = u.n
    ladder = sorted(float(C) for C in ladder)
    phi_base = float(phi_rule(u, u.side)(np.asarray(p, dtype=float)))

    sections = [extract_section(u, p, C, directions, mvee_tol) for C in ladder]
    probe_sets = []
    d_needed = 2.0
    ratio_peak = 0.0
    for sec in sections:
        w = sec.normalized_potential
        pts, vals = _normalized_probes(w, probes_per_axis)
        inside = vals < 1.0
        pts, vals = pts[inside], vals[inside]
        grads = w.gradient(pts)
        fvals = np.einsum("ki,ki->k", pts, grads) - vals
        d_needed = max(d_needed, choose_shift_constant(vals, fvals))
        probe_sets.append((pts, vals, grads, fvals))
    for pts, vals, grads, fvals in probe_sets:
        ratio_peak = max(ratio_peak, float(
            (np.einsum("ki,ki->k", grads, grads) / (d_needed + fvals) ** 2).max()))
    eps = (1.0 / 30.0) / ratio_peak * (1.0 - 1e-12) if ratio_peak > 0 else 1.0
    params = BarrierConstants.defaults(n, 1.0, d_needed, eps)

    report = BlowupReport(base_point=np.asarray(p, float), phi_base=phi_base,
                          params=params)
    a = params.alpha
    for sec, (pts, vals, grads, fvals) in zip(sections, probe_sets):
        w = sec.normalized_potential
        q = sec.map.apply(p)
        phi_w = phi_rule(w, w.side)
        phi_at_base = float(phi_w(q))
        expected = sec.C * phi_base
        rel = abs(phi_at_base - expected) / max(abs(expected), 1e-300) \
            if expected else abs(phi_at_base)

        H = w.hessian(pts)
        sign, logdet = np.linalg.slogdet(H)
        rho = np.exp(rho_sign(w.side) / (n + 2.0) * logdet)
        trace = np.einsum("kii->k", H)
        phis = phi_w(pts)
        half = vals < 0.5
        dpf = d_needed + fvals
        gradient_ratio = np.einsum("ki,ki->k", grads, grads) / dpf**2
        Hexp = eps * gradient_ratio
        pw = dpf ** (2.0 * n * a / (n + 2.0))
        weighted_phi = np.exp(-params.m_weighted / (1.0 - vals)) * rho**a * phis / pw
        weighted_barrier = np.exp(-params.m_weighted / (1.0 - vals) + Hexp) \
            * (params.h(vals) + 2.0 * a) * rho**a / pw
        weighted_trace = np.exp(-params.m_trace / (1.0 - vals)) * rho**a * trace \
            / (pw * dpf**2)

        r_nm, covered, ndirs, circ = _normal_map_coverage(pts, vals, normal_directions)
        report.records.append(BlowupRecord(
            C=sec.C, map=sec.map,
            phi_at_base=phi_at_base, phi_at_base_expected=expected,
            scaling_rel_error=float(rel),
            sup_phi_half=float(phis[half].max()),
            sup_rho_half=float(rho[half].max()),
            sup_rho_alpha_phi_half=float((rho**a * phis)[half].max()),
            sup_rho_alpha_trace_half=float((rho**a * trace)[half].max()),
            sup_weighted_phi=float(weighted_phi[half].max()),
            sup_weighted_barrier=float(weighted_barrier[half].max()),
            sup_weighted_trace=float(weighted_trace[half].max()),
            sup_gradient_ratio=float(gradient_ratio.max()),
            half_section_radius=circ, normal_map_radius=r_nm,
            normal_map_covered=covered, normal_map_directions=ndirs))
    return report
