"""Bounded convex domains, centered minimum-volume ellipsoids, and the
affine normalization that sends the ellipsoid to the unit ball.

Supported domains are boxes, balls and halfspace polytopes. The centered
MVEE is computed by a fixed-center multiplicative-weights ascent with away
steps over a finite support set (vertices for boxes/polytopes, a dense
direction fan for balls).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection

from .errors import ConvergenceError, DomainError

_CONTAIN_TOL = 1e-12
MAX_AXIS_RATIO = 1e6


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise DomainError("box bounds must be equal-length vectors")
        if not np.all(self.lo < self.hi):
            raise DomainError("box has empty interior", lo=self.lo.tolist(), hi=self.hi.tolist())

    @property
    def dim(self):
        return len(self.lo)

    def contains(self, x, tol=_CONTAIN_TOL):
        x = np.asarray(x, dtype=float)
        scale = np.maximum(np.abs(self.lo), np.abs(self.hi)) + 1.0
        return np.all((x >= self.lo - tol * scale) & (x <= self.hi + tol * scale), axis=-1)

    def support_point(self, direction):
        d = np.asarray(direction, dtype=float)
        return np.where(d >= 0.0, self.hi, self.lo)

    def vertices(self):
        n = self.dim
        corners = np.array(np.meshgrid(*[(self.lo[i], self.hi[i]) for i in range(n)], indexing="ij"))
        return corners.reshape(n, -1).T

    def centroid(self):
        return 0.5 * (self.lo + self.hi)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def to_json(self):
        return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise DomainError("ball radius must be positive", radius=self.radius)

    @property
    def dim(self):
        return len(self.center)

    def contains(self, x, tol=_CONTAIN_TOL):
        x = np.asarray(x, dtype=float)
        r2 = np.sum((x - self.center) ** 2, axis=-1)
        return r2 <= self.radius**2 * (1.0 + tol) + tol

    def support_point(self, direction):
        d = np.asarray(direction, dtype=float)
        return self.center + self.radius * d / np.linalg.norm(d)

    def centroid(self):
        return self.center.copy()

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def to_json(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True)
class Polytope:
    """Intersection of halfspaces {x : normals[k].x <= offsets[k]}."""

    normals: np.ndarray
    offsets: np.ndarray
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        N = np.asarray(self.normals, dtype=float)
        b = np.asarray(self.offsets, dtype=float)
        if N.ndim != 2 or len(b) != len(N):
            raise DomainError("polytope needs matching normals and offsets")
        norms = np.linalg.norm(N, axis=1)
        if np.any(norms <= 0):
            raise DomainError("zero normal in polytope")
        object.__setattr__(self, "normals", N / norms[:, None])
        object.__setattr__(self, "offsets", b / norms)
        self._check_interior_and_bounded()

    @property
    def dim(self):
        return self.normals.shape[1]

    def _check_interior_and_bounded(self):
        n = self.dim
        # Chebyshev center: max t s.t. N x + t <= b
        res = linprog(
            c=np.r_[np.zeros(n), -1.0],
            A_ub=np.c_[self.normals, np.ones(len(self.offsets))],
            b_ub=self.offsets,
            bounds=[(None, None)] * n + [(0, None)],
            method="highs",
        )
        if res.status == 3:
            raise DomainError("polytope is unbounded")
        if not res.success or res.x[-1] <= 1e-12:
            raise DomainError("polytope has empty interior")
        self._cache["interior_point"] = res.x[:n]
        self._cache["inradius"] = res.x[-1]
        for i in range(n):
            for sg in (1.0, -1.0):
                c = np.zeros(n)
                c[i] = sg
                r = linprog(c=c, A_ub=self.normals, b_ub=self.offsets,
                            bounds=[(None, None)] * n, method="highs")
                if r.status == 3:
                    raise DomainError("polytope is unbounded", axis=i)

    def interior_point(self):
        return self._cache["interior_point"].copy()

    def contains(self, x, tol=_CONTAIN_TOL):
        x = np.asarray(x, dtype=float)
        slack = x @ self.normals.T - self.offsets
        scale = np.abs(self.offsets) + 1.0
        return np.all(slack <= tol * scale, axis=-1)

    def vertices(self):
        if "vertices" not in self._cache:
            hs = np.c_[self.normals, -self.offsets]
            inter = HalfspaceIntersection(hs, self.interior_point())
            v = np.unique(np.round(inter.intersections, 12), axis=0)
            self._cache["vertices"] = v
        return self._cache["vertices"].copy()

    def support_point(self, direction):
        v = self.vertices()
        return v[np.argmax(v @ np.asarray(direction, dtype=float))]

    def centroid(self):
        """Exact centroid by fan decomposition from an interior point (n<=3)."""
        v = self.vertices()
        n = self.dim
        p = self.interior_point()
        if n == 2:
            ang = np.arctan2(v[:, 1] - p[1], v[:, 0] - p[0])
            v = v[np.argsort(ang)]
            tot, acc = 0.0, np.zeros(2)
            for i in range(len(v)):
                a, b = v[i], v[(i + 1) % len(v)]
                da, db = a - p, b - p
                area = 0.5 * abs(da[0] * db[1] - da[1] * db[0])
                tot += area
                acc += area * (a + b + p) / 3.0
            return acc / tot
        if n == 3:
            hull = ConvexHull(v)
            tot, acc = 0.0, np.zeros(3)
            for simplex in hull.simplices:
                a, b, c = v[simplex]
                vol = abs(np.linalg.det(np.stack([a - p, b - p, c - p]))) / 6.0
                tot += vol
                acc += vol * (a + b + c + p) / 4.0
            return acc / tot
        raise DomainError("exact polytope centroid implemented for n in {2,3}", n=n)

    def bounding_box(self):
        v = self.vertices()
        return v.min(axis=0), v.max(axis=0)

    def to_json(self):
        return {"kind": "polytope", "normals": self.normals.tolist(),
                "offsets": self.offsets.tolist()}


ConvexDomain = Box | Ball | Polytope


def domain_from_json(obj):
    kind = obj.get("kind")
    if kind == "box":
        return Box(np.asarray(obj["lo"]), np.asarray(obj["hi"]))
    if kind == "ball":
        return Ball(np.asarray(obj["center"]), float(obj["radius"]))
    if kind == "polytope":
        return Polytope(np.asarray(obj["normals"]), np.asarray(obj["offsets"]))
    raise DomainError("unknown domain kind", kind=kind)


def box_as_polytope(box):
    n = box.dim
    N = np.vstack([np.eye(n), -np.eye(n)])
    b = np.r_[box.hi, -box.lo]
    return Polytope(N, b)


# ---------------------------------------------------------------------------
# ellipsoids and affine maps


@dataclass(frozen=True)
class Ellipsoid:
    """{x : (x-c)^T M (x-c) <= 1} with M symmetric positive definite."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        M = np.asarray(self.shape, dtype=float)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", 0.5 * (M + M.T))
        asym = np.abs(M - M.T).max()
        if asym > 1e-12 * (1.0 + np.abs(M).max()):
            raise DomainError("ellipsoid shape matrix is not symmetric", asym=asym)
        if np.linalg.eigvalsh(self.shape).min() <= 0:
            raise DomainError("ellipsoid shape matrix is not positive definite")

    @property
    def dim(self):
        return len(self.center)

    def quadratic(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return np.einsum("...i,ij,...j->...", d, self.shape, d)

    def semi_axes(self):
        """Semi-axis lengths, largest first."""
        return np.sort(1.0 / np.sqrt(np.linalg.eigvalsh(self.shape)))[::-1]

    def volume(self):
        from math import gamma, pi

        n = self.dim
        unit = pi ** (n / 2.0) / gamma(n / 2.0 + 1.0)
        return unit / np.sqrt(np.linalg.det(self.shape))

    def to_json(self):
        return {"center": self.center.tolist(), "shape": self.shape.tolist()}


@dataclass(frozen=True)
class AffineMap:
    """x -> linear @ x + offset, with a cached exact inverse."""

    linear: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.linear, dtype=float)
        t = np.asarray(self.offset, dtype=float)
        object.__setattr__(self, "linear", A)
        object.__setattr__(self, "offset", t)
        det = np.linalg.det(A)
        if abs(det) <= 0:
            raise DomainError("affine map is singular")
        object.__setattr__(self, "_inv_linear", np.linalg.inv(A))

    @property
    def dim(self):
        return len(self.offset)

    @property
    def inv_linear(self):
        return self._inv_linear

    def apply(self, x):
        return np.asarray(x, dtype=float) @ self.linear.T + self.offset

    def apply_inverse(self, y):
        return (np.asarray(y, dtype=float) - self.offset) @ self._inv_linear.T

    def inverse(self):
        return AffineMap(self._inv_linear, -self._inv_linear @ self.offset)

    def roundtrip_defect(self):
        n = self.dim
        return np.abs(self.linear @ self._inv_linear - np.eye(n)).max()

    def to_json(self):
        return {"linear": self.linear.tolist(), "offset": self.offset.tolist()}


def affine_map_from_json(obj):
    return AffineMap(np.asarray(obj["linear"]), np.asarray(obj["offset"]))


# ---------------------------------------------------------------------------
# support sampling


def direction_fan(n, count, seed=None):
    """Deterministic spread of unit directions: uniform angles (n=2),
    Fibonacci sphere (n=3), seeded Gaussian directions otherwise."""
    if n == 2:
        th = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if n == 3:
        k = np.arange(count) + 0.5
        phi = np.arccos(1.0 - 2.0 * k / count)
        golden = np.pi * (1.0 + 5.0**0.5)
        th = golden * k
        return np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], axis=1)
    rng = np.random.default_rng(0 if seed is None else seed)
    v = rng.normal(size=(count, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


DEFAULT_FAN = {2: 256, 3: 2048}


def support_points(domain, count=None):
    """Finite support set whose MVEE equals the domain's MVEE for polyhedra."""
    n = domain.dim
    if isinstance(domain, (Box, Polytope)):
        return domain.vertices()
    count = count or DEFAULT_FAN.get(n, 4096)
    dirs = direction_fan(n, count)
    return np.array([domain.support_point(d) for d in dirs])


# ---------------------------------------------------------------------------
# centered MVEE


def centered_mvee(domain, tol=1e-9, max_iters=200_000):
    """Minimum-volume ellipsoid containing `domain`, centered at its centroid.

    Fixed-center multiplicative-weights ascent (Khachiyan-type) with away
    steps over the domain's support points; the returned ellipsoid is
    rescaled to contain every support point exactly.
    """
    if not (0.0 < tol <= 1e-3):
        raise DomainError("tol must lie in (0, 1e-3]", tol=tol)
    c = domain.centroid()
    pts = support_points(domain)
    q = pts - c
    m, n = q.shape
    if isinstance(domain, Ball):
        # a ball is its own centered MVEE
        M = np.eye(n) / domain.radius**2
        return Ellipsoid(c, M)

    u = np.full(m, 1.0 / m)
    eye = 1e-14 * np.eye(n)
    gap = np.inf
    for _ in range(max_iters):
        V = (q * u[:, None]).T @ q + eye
        g = np.einsum("ij,jk,ik->i", q, np.linalg.inv(V), q)
        imax = int(np.argmax(g))
        kmax = g[imax]
        support = u > 1e-16
        gmin_idx = np.flatnonzero(support)[int(np.argmin(g[support]))]
        kmin = g[gmin_idx]
        gap = kmax / n - 1.0
        if gap <= tol:
            break
        do_away = (1.0 - kmin / n) > (kmax / n - 1.0)
        if do_away:
            # dropping the point entirely must keep the support full-rank
            trial = u.copy()
            trial[gmin_idx] = 0.0
            if np.linalg.matrix_rank(q[trial > 1e-16], tol=1e-10) < n:
                do_away = False
        if do_away:
            clip = -u[gmin_idx] / (1.0 - u[gmin_idx])
            if kmin > 1.0:
                lam = max((kmin - n) / (n * (kmin - 1.0)), clip)
            else:
                # objective increases monotonically toward the full drop
                lam = clip
            u *= 1.0 - lam
            u[gmin_idx] += lam
            u[u < 0] = 0.0
        else:
            lam = (kmax - n) / (n * (kmax - 1.0))
            u *= 1.0 - lam
            u[imax] += lam
        u /= u.sum()
    else:
        raise ConvergenceError("centered MVEE did not converge", gap=float(gap), tol=tol)

    V = (q * u[:, None]).T @ q
    M = np.linalg.inv(V) / n
    # rescale for exact containment of the support set
    s = np.einsum("ij,jk,ik->i", q, M, q).max()
    M = M / s
    ell = Ellipsoid(c, M)
    axes = ell.semi_axes()
    if axes[0] / axes[-1] > MAX_AXIS_RATIO:
        raise DomainError("domain too flat for normalization",
                          axis_ratio=float(axes[0] / axes[-1]))
    return ell


def sqrtm_spd(M):
    w, Q = np.linalg.eigh(M)
    return (Q * np.sqrt(w)) @ Q.T


def _affine_image_domain(domain, T):
    """Image of a box/ball/polytope under T, as a representable domain."""
    if isinstance(domain, Ball):
        # only used when T maps the ball to a ball (isotropic linear part)
        A = T.linear
        s = np.linalg.norm(A[:, 0])
        if np.abs(A @ A.T - s**2 * np.eye(domain.dim)).max() < 1e-10 * s**2:
            return Ball(T.apply(domain.center), domain.radius * s)
        raise DomainError("anisotropic image of a ball is not representable")
    poly = box_as_polytope(domain) if isinstance(domain, Box) else domain
    # {x: N x <= b} -> {y: (N B) y <= b + N B t} with B = A^-1, y = A x + t
    NB = poly.normals @ T.inv_linear
    b = poly.offsets + NB @ T.offset
    return Polytope(NB, b)


def normalize_domain(domain, tol=1e-9, check_directions=1024):
    """Affine map sending the centered MVEE to the unit ball, plus the image.

    The image satisfies B(0, n^{-3/2}) within T(domain) within B(0,1); both
    inclusions are verified on a fan of support directions.
    """
    ell = centered_mvee(domain, tol=tol)
    W = sqrtm_spd(ell.shape)
    T = AffineMap(W, -W @ ell.center)
    image = _affine_image_domain(domain, T)
    n = domain.dim
    dirs = direction_fan(n, max(check_directions, 2 * n))
    sup = np.array([image.support_point(d) @ d for d in dirs])
    outer = np.array([np.linalg.norm(image.support_point(d)) for d in dirs])
    slack = 1e-6
    if outer.max() > 1.0 + slack:
        raise DomainError("normalized image escapes the unit ball",
                          worst=float(outer.max()))
    inner = n ** (-1.5) * (1.0 - slack)
    if sup.min() < inner:
        raise DomainError("normalized image misses the inner ball",
                          worst=float(sup.min()), required=inner)
    return T, image
