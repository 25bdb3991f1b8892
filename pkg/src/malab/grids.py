"""Masked rectangular grids and finite-difference derivative fields.

Nodes are classified outside / boundary / interior against a convex domain.
Interior nodes keep a full two-node margin of in-domain neighbors, so every
stencil used here (up to third derivatives) fits without one-sided formulas;
boundary nodes carry prescribed values and are never differentiated.

Derivative fields are computed on whole arrays with NaN standing for
"unavailable", which lets chained differences track their own validity.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .domains import Box, domain_from_json
from .errors import DomainError, StencilError

OUTSIDE, BOUNDARY, INTERIOR = 0, 1, 2
MASK_MARGIN = 2  # in-domain neighbors required around an interior node


@dataclass(frozen=True)
class Grid:
    lo: np.ndarray
    hi: np.ndarray
    shape: tuple
    spacing: np.ndarray
    mask: np.ndarray
    domain: object
    coords: tuple

    @staticmethod
    def build(domain, resolution):
        """Grid over the domain's bounding box with `resolution` nodes per axis."""
        lo, hi = domain.bounding_box()
        n = len(lo)
        if np.isscalar(resolution):
            resolution = (int(resolution),) * n
        shape = tuple(int(r) for r in resolution)
        if any(r < 2 * MASK_MARGIN + 1 for r in shape):
            raise DomainError("resolution too small for the stencil margin", shape=shape)
        coords = tuple(np.linspace(lo[i], hi[i], shape[i]) for i in range(n))
        spacing = np.array([(hi[i] - lo[i]) / (shape[i] - 1) for i in range(n)])
        pts = np.stack(np.meshgrid(*coords, indexing="ij"), axis=-1)
        inside = domain.contains(pts.reshape(-1, n)).reshape(shape)
        interior = inside.copy()
        for off in _cube_offsets(n, MASK_MARGIN):
            interior &= _shift_bool(inside, off)
        mask = np.where(interior, INTERIOR, np.where(inside, BOUNDARY, OUTSIDE)).astype(np.int8)
        if not interior.any():
            raise DomainError("grid resolves no interior nodes", shape=shape)
        return Grid(np.asarray(lo, float), np.asarray(hi, float), shape, spacing, mask,
                    domain, coords)

    @property
    def dim(self):
        return len(self.shape)

    def points(self):
        return np.stack(np.meshgrid(*self.coords, indexing="ij"), axis=-1)

    def point(self, node):
        return np.array([self.coords[i][node[i]] for i in range(self.dim)])

    def interior_nodes(self):
        return np.argwhere(self.mask == INTERIOR)

    def boundary_nodes(self):
        return np.argwhere(self.mask == BOUNDARY)

    def nearest_node(self, x):
        x = np.asarray(x, dtype=float)
        idx = tuple(int(np.clip(round((x[i] - self.lo[i]) / self.spacing[i]), 0,
                                self.shape[i] - 1)) for i in range(self.dim))
        return idx

    def meta_json(self):
        return {
            "bounds": {"lo": self.lo.tolist(), "hi": self.hi.tolist()},
            "resolution": list(self.shape),
            "spacing": self.spacing.tolist(),
            "mask_margin": MASK_MARGIN,
            "domain": self.domain.to_json(),
        }


def _cube_offsets(n, radius):
    grids = np.meshgrid(*[np.arange(-radius, radius + 1)] * n, indexing="ij")
    offs = np.stack(grids, axis=-1).reshape(-1, n)
    return [tuple(o) for o in offs if any(o)]


def _shift_bool(arr, offset):
    out = np.zeros_like(arr)
    src = tuple(slice(max(0, -o), arr.shape[i] - max(0, o)) for i, o in enumerate(offset))
    dst = tuple(slice(max(0, o), arr.shape[i] - max(0, -o)) for i, o in enumerate(offset))
    out[src] = arr[dst]
    return out


def shift(values, offset):
    """Shifted copy of an array with NaN fill at the swept-in border."""
    out = np.full_like(values, np.nan)
    src = tuple(slice(max(0, -o), values.shape[i] - max(0, o)) for i, o in enumerate(offset))
    dst = tuple(slice(max(0, o), values.shape[i] - max(0, -o)) for i, o in enumerate(offset))
    out[src] = values[dst]
    return out


def _ei(n, i, k=1):
    o = [0] * n
    o[i] = k
    return tuple(o)


def diff1(values, spacing, i):
    n = values.ndim
    return (shift(values, _ei(n, i, 1)) - shift(values, _ei(n, i, -1))) / (2.0 * spacing[i])


def diff2(values, spacing, i, j):
    n = values.ndim
    if i == j:
        return (shift(values, _ei(n, i, 1)) - 2.0 * values + shift(values, _ei(n, i, -1))) \
            / spacing[i] ** 2
    oij = [0] * n
    hij = spacing[i] * spacing[j]
    def s(a, b):
        o = list(oij)
        o[i], o[j] = a, b
        return shift(values, tuple(o))
    return (s(1, 1) - s(1, -1) - s(-1, 1) + s(-1, -1)) / (4.0 * hij)


def diff3_pure(values, spacing, i):
    """Width-5 centered stencil for the third derivative along one axis."""
    n = values.ndim
    h3 = spacing[i] ** 3
    return (-shift(values, _ei(n, i, -2)) + 2.0 * shift(values, _ei(n, i, -1))
            - 2.0 * shift(values, _ei(n, i, 1)) + shift(values, _ei(n, i, 2))) / (2.0 * h3)


def gradient_field(values, spacing):
    return np.stack([diff1(values, spacing, i) for i in range(values.ndim)], axis=-1)


def hessian_field(values, spacing):
    n = values.ndim
    H = np.empty(values.shape + (n, n))
    for i in range(n):
        for j in range(i, n):
            d = diff2(values, spacing, i, j)
            H[..., i, j] = d
            H[..., j, i] = d
    return H


def third_field(values, spacing):
    """Fully symmetric third-derivative tensor field.

    Pure components use the width-5 stencil; mixed components compose
    centered first/second differences, which keeps everything O(h^2).
    """
    n = values.ndim
    T = np.empty(values.shape + (n, n, n))
    firsts = [diff1(values, spacing, k) for k in range(n)]
    for i in range(n):
        for j in range(i, n):
            for k in range(j, n):
                if i == j == k:
                    d = diff3_pure(values, spacing, i)
                elif i == j:
                    d = diff2(firsts[k], spacing, i, i)
                elif j == k:
                    d = diff2(firsts[i], spacing, j, j)
                else:
                    d = diff1(diff1(firsts[k], spacing, j), spacing, i)
                for p in {(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)}:
                    T[(...,) + p] = d
    return T


class GridFunction:
    """Scalar samples on a masked grid; NaN at outside nodes.

    Immutable after construction; derivative fields are cached lazily.
    """

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise DomainError("values shape does not match grid", shape=values.shape)
        bad = ~np.isfinite(values) & (grid.mask != OUTSIDE)
        if bad.any():
            node = tuple(int(v) for v in np.argwhere(bad)[0])
            raise DomainError("non-finite value on an in-domain node", node=node)
        self.grid = grid
        self.values = np.where(grid.mask == OUTSIDE, np.nan, values)
        self.values.setflags(write=False)
        self._cache = {}

    @property
    def n(self):
        return self.grid.dim

    def field(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    def _interior_only(self, arr):
        # boundary nodes carry prescribed values and are never differentiated
        out = arr.copy()
        out[self.grid.mask != INTERIOR] = np.nan
        return out

    def gradient_field(self):
        return self.field("grad", lambda: self._interior_only(
            gradient_field(self.values, self.grid.spacing)))

    def hessian_field(self):
        return self.field("hess", lambda: self._interior_only(
            hessian_field(self.values, self.grid.spacing)))

    def third_field(self):
        return self.field("third", lambda: self._interior_only(
            third_field(self.values, self.grid.spacing)))

    def _take(self, arr, node, what):
        node = tuple(node)
        if self.grid.mask[node] != INTERIOR:
            raise StencilError(f"{what} needs an interior node", node=[int(i) for i in node])
        out = arr[node]
        if not np.all(np.isfinite(out)):
            raise StencilError(f"stencil for {what} does not fit", node=[int(i) for i in node])
        return out

    def gradient(self, node):
        return self._take(self.gradient_field(), node, "gradient")

    def hessian(self, node):
        return self._take(self.hessian_field(), node, "hessian")

    def third(self, node):
        return self._take(self.third_field(), node, "third derivative")

    def value(self, node):
        return float(self.values[tuple(node)])


def differentiate(fu, node, order):
    """Centered-difference derivative tensor of the given order at a node."""
    if order == 1:
        return fu.gradient(node)
    if order == 2:
        return fu.hessian(node)
    if order == 3:
        return fu.third(node)
    raise StencilError("order must be 1, 2 or 3", order=order)


def sample_oracle(oracle, grid):
    """GridFunction with the oracle's exact values at in-domain nodes."""
    pts = grid.points()
    inside_dom = grid.mask != OUTSIDE
    ok = oracle.contains(pts.reshape(-1, grid.dim)).reshape(grid.shape)
    bad = inside_dom & ~ok
    if bad.any():
        node = tuple(int(v) for v in np.argwhere(bad)[0])
        raise DomainError("grid node escapes the oracle domain",
                          node=list(node), point=grid.point(node).tolist())
    vals = np.full(grid.shape, np.nan)
    vals[inside_dom] = oracle.value(pts[inside_dom])
    return GridFunction(grid, vals)


@dataclass(frozen=True)
class ConvexityReport:
    min_eigenvalue: float
    worst_node: tuple
    convex: bool
    checked_nodes: int

    def to_json(self):
        return {"min_eigenvalue": self.min_eigenvalue,
                "worst_node": list(self.worst_node),
                "convex": self.convex, "checked_nodes": self.checked_nodes}


def check_convex(fu):
    """Minimum FD-Hessian eigenvalue over interior nodes (reports, never throws)."""
    H = fu.hessian_field()
    interior = fu.grid.mask == INTERIOR
    flat = H[interior]
    good = np.all(np.isfinite(flat.reshape(len(flat), -1)), axis=1)
    eigs = np.full(len(flat), np.nan)
    if good.any():
        eigs[good] = np.linalg.eigvalsh(flat[good]).min(axis=-1)
    k = int(np.nanargmin(eigs))
    worst = tuple(int(v) for v in np.argwhere(interior)[k])
    mn = float(eigs[k])
    return ConvexityReport(mn, worst, mn > 0.0, int(good.sum()))


# ---------------------------------------------------------------------------
# CSV + sidecar JSON round trip


def write_gridfunction(fu, csv_path, meta_path=None):
    grid = fu.grid
    n = grid.dim
    header = [f"x{i+1}" for i in range(n)] + ["value"]
    nodes = np.argwhere(grid.mask != OUTSIDE)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for node in nodes:
            node = tuple(node)
            pt = grid.point(node)
            w.writerow([f"{v:.17g}" for v in pt] + [f"{fu.values[node]:.17g}"])
    if meta_path:
        with open(meta_path, "w") as fh:
            json.dump(grid.meta_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_gridfunction(csv_path, meta_path):
    with open(meta_path) as fh:
        meta = json.load(fh)
    domain = domain_from_json(meta["domain"])
    grid = Grid.build(domain, tuple(meta["resolution"]))
    got_lo = np.asarray(meta["bounds"]["lo"])
    if np.abs(got_lo - grid.lo).max() > 1e-9:
        raise DomainError("sidecar bounds do not match the rebuilt grid")
    vals = np.full(grid.shape, np.nan)
    with open(csv_path) as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            pt = np.array([float(v) for v in row[:-1]])
            node = grid.nearest_node(pt)
            if np.abs(grid.point(node) - pt).max() > 1e-9 * (1 + np.abs(pt).max()):
                raise DomainError("CSV point is not a grid node", point=pt.tolist())
            vals[node] = float(row[-1])
    return GridFunction(grid, vals)


def box_grid(lo, hi, resolution):
    """Convenience: grid over a plain box domain."""
    return Grid.build(Box(np.asarray(lo, float), np.asarray(hi, float)), resolution)
