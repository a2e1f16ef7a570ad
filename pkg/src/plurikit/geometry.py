"""Polytopes, weight functions, grids, and finite-difference curvature fields.

Everything downstream consumes the objects built here: integral polytopes in
dimension one or two together with their lattice points, weight functions
given either in toric log coordinates v = (ln|z_1|^2, ..., ln|z_n|^2) or on a
single affine chart, and real-valued fields sampled on rectangular v-grids or
log-polar chart grids.

The model weights are

    phi_Delta(v) = ln( sum_{a in Delta cap Z^n} e^{<a, v>} )

for an integral polytope Delta (plus optional compactly supported radial
bumps in v), and on the chart

    phi_FS(zeta) = ln(1 + |zeta|^2)

plus optional bumps in the zeta plane.  Bumps use the profile
amp * (1 - (r/R)^2)^s with s >= 3, which is C^2 and supported in r < R.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.special import logsumexp


class DomainMismatchError(ValueError):
    """Raised when fields on different grids are combined, or a weight is
    evaluated on a grid kind it does not live on."""


class DegeneratePolytopeError(ValueError):
    """Raised when polytope data does not define a full-dimensional integral
    polytope in dimension one or two."""


# ---------------------------------------------------------------------------
# polytopes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticePolytope:
    """Full-dimensional integral polytope in R^n, n in {1, 2}.

    Vertices are integer tuples; they need not be listed in hull order and
    may include redundant (non-vertex) points.  The hull is recomputed.
    """

    vertices: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.vertices) == 0:
            raise DegeneratePolytopeError("polytope needs at least two vertices")
        verts = []
        for p in self.vertices:
            pt = tuple(p) if np.ndim(p) else (p,)
            for c in pt:
                if int(c) != c:
                    raise DegeneratePolytopeError(
                        f"vertex coordinate {c!r} is not an integer"
                    )
            verts.append(tuple(int(c) for c in pt))
        n = len(verts[0])
        if any(len(p) != n for p in verts):
            raise DegeneratePolytopeError("vertices have mixed dimensions")
        if n not in (1, 2):
            raise DegeneratePolytopeError(f"dimension {n} unsupported (need 1 or 2)")
        object.__setattr__(self, "vertices", tuple(verts))
        if n == 1:
            lo = min(p[0] for p in verts)
            hi = max(p[0] for p in verts)
            if hi <= lo:
                raise DegeneratePolytopeError(
                    "1-d polytope is a point: not full-dimensional"
                )
            object.__setattr__(self, "_hull", ((lo,), (hi,)))
        else:
            hull = _convex_hull_2d(verts)
            if len(hull) < 3:
                raise DegeneratePolytopeError(
                    "2-d vertices are collinear: not full-dimensional"
                )
            object.__setattr__(self, "_hull", tuple(hull))

    @property
    def dim(self) -> int:
        return len(self.vertices[0])

    @property
    def hull_vertices(self) -> tuple[tuple[int, ...], ...]:
        """Hull vertices in counterclockwise order (1-d: (lo, hi))."""
        return self._hull

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        arr = np.array(self.vertices)
        return arr.min(axis=0), arr.max(axis=0)

    def contains(self, point, tol: float = 0.0) -> bool:
        """Membership test; `tol` loosens every face inequality."""
        p = np.atleast_1d(np.asarray(point, dtype=float))
        if self.dim == 1:
            return self._hull[0][0] - tol <= p[0] <= self._hull[1][0] + tol
        for a, normal in _hull_edges(self._hull):
            if normal @ (p - a) < -tol:
                return False
        return True

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from interior points to the hull boundary
        (negative outside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.dim == 1:
            lo, hi = self._hull[0][0], self._hull[1][0]
            d = np.minimum(pts[:, 0] - lo, hi - pts[:, 0])
            return d
        dists = []
        for a, normal in _hull_edges(self._hull):
            nn = np.linalg.norm(normal)
            dists.append((pts - np.asarray(a, float)) @ normal / nn)
        return np.min(dists, axis=0)

    def barycenter(self) -> np.ndarray:
        return np.mean(np.array(self._hull, dtype=float), axis=0)

    def scaled(self, m: int) -> "LatticePolytope":
        """The dilate m * Delta (m a positive integer)."""
        if int(m) != m or m < 1:
            raise ValueError("dilation factor must be a positive integer")
        return LatticePolytope(tuple(tuple(int(m) * c for c in p) for p in self.vertices))

    def axis_extent(self) -> np.ndarray:
        lo, hi = self.bounding_box()
        return (hi - lo).astype(float)

    def diameter(self) -> float:
        arr = np.array(self._hull, dtype=float)
        d = arr[:, None, :] - arr[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())


def _convex_hull_2d(points) -> list[tuple[int, ...]]:
    """Monotone-chain hull of integer points, counterclockwise, collinear
    interior points dropped.  Exact integer arithmetic."""
    pts = sorted(set(tuple(p) for p in points))
    if len(pts) < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3 or _polygon_area2(hull) == 0:
        return hull[:2]
    return hull


def _polygon_area2(hull) -> int:
    """Twice the signed area (integer, exact)."""
    s = 0
    m = len(hull)
    for i in range(m):
        x0, y0 = hull[i]
        x1, y1 = hull[(i + 1) % m]
        s += x0 * y1 - x1 * y0
    return s


def _hull_edges(hull):
    """Yield (anchor, inward normal) per edge of a ccw hull."""
    m = len(hull)
    for i in range(m):
        a = np.asarray(hull[i], dtype=float)
        b = np.asarray(hull[(i + 1) % m], dtype=float)
        e = b - a
        yield a, np.array([-e[1], e[0]])  # inward for ccw orientation


def lattice_points(polytope: LatticePolytope, k: int) -> np.ndarray:
    """Integer points of the dilate k * Delta, shape (count, n), in
    lexicographic order.  Exact integer arithmetic."""
    if int(k) != k or k < 0:
        raise ValueError("dilation k must be a nonnegative integer")
    k = int(k)
    n = polytope.dim
    lo, hi = polytope.bounding_box()
    lo, hi = k * lo, k * hi
    if n == 1:
        return np.arange(lo[0], hi[0] + 1, dtype=np.int64)[:, None]
    hull = [(k * a, k * b) for a, b in polytope.hull_vertices]
    out = []
    m = len(hull)
    for x, y in product(range(lo[0], hi[0] + 1), range(lo[1], hi[1] + 1)):
        inside = True
        for i in range(m):
            ax, ay = hull[i]
            bx, by = hull[(i + 1) % m]
            # inward-normal test, all integers: (-(by-ay), bx-ax) . (p - a) >= 0
            if -(by - ay) * (x - ax) + (bx - ax) * (y - ay) < 0:
                inside = False
                break
        if inside:
            out.append((x, y))
    return np.array(out, dtype=np.int64).reshape(len(out), 2)


def lattice_volume(polytope: LatticePolytope) -> float:
    """Euclidean volume (length / area) of the polytope, exact."""
    if polytope.dim == 1:
        return float(polytope.hull_vertices[1][0] - polytope.hull_vertices[0][0])
    return abs(_polygon_area2(polytope.hull_vertices)) / 2.0


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bump:
    """Radial C^2 perturbation amp * (1 - (r/R)^2)^power, supported in r < R.

    For toric weights the center lives in v-space; for chart weights it is a
    point of the zeta plane and r is the Euclidean distance |zeta - center|.
    """

    center: tuple[float, ...]
    radius: float
    amplitude: float
    power: int = 3

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if self.radius <= 0:
            raise ValueError("bump radius must be positive")
        if int(self.power) != self.power or self.power < 3:
            # power >= 3 keeps the profile C^2 at the support edge
            raise ValueError("bump power must be an integer >= 3")

    def profile(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        u = 1.0 - (r / self.radius) ** 2
        return self.amplitude * np.where(u > 0.0, u, 0.0) ** int(self.power)

    def value(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at points with coordinates on the last axis."""
        pts = np.asarray(points, dtype=float)
        c = np.asarray(self.center)
        if pts.shape[-1] != c.size:
            raise ValueError("bump center dimension does not match points")
        r = np.sqrt(((pts - c) ** 2).sum(axis=-1))
        return self.profile(r)


class WeightSpec:
    """Base class for the four weight kinds."""

    bumps: tuple = ()  # overridden by the perturbed kinds

    @property
    def is_toric(self) -> bool:
        return isinstance(self, (ToricPotential, PerturbedToric))


@dataclass(frozen=True)
class ToricPotential(WeightSpec):
    """phi_Delta(v) = ln sum_{a in Delta cap Z^n} exp(<a, v>)."""

    polytope: LatticePolytope


@dataclass(frozen=True)
class PerturbedToric(WeightSpec):
    """phi_Delta plus radial bumps in v-space."""

    polytope: LatticePolytope
    bumps: tuple[Bump, ...]

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))
        n = self.polytope.dim
        if any(len(b.center) != n for b in self.bumps):
            raise ValueError("bump centers must match the polytope dimension")


@dataclass(frozen=True)
class FSChart(WeightSpec):
    """phi(zeta) = ln(1 + |zeta|^2) on a single affine chart."""


@dataclass(frozen=True)
class PerturbedChart(WeightSpec):
    """Fubini-Study chart weight plus bumps in the zeta plane."""

    bumps: tuple[Bump, ...]

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))
        if any(len(b.center) != 2 for b in self.bumps):
            raise ValueError("chart bump centers must be points of the plane")

    def growth_bound(self) -> float:
        """C with |phi - ln(1+|zeta|^2)| <= C everywhere."""
        return float(sum(abs(b.amplitude) for b in self.bumps))


def _as_points(points, n: int) -> np.ndarray:
    """Normalize to coordinates-on-last-axis.  For n = 1 a bare array is a
    list of v values; arrays already ending in a length-1 axis pass through."""
    pts = np.asarray(points, dtype=float)
    if n == 1:
        if pts.ndim >= 2 and pts.shape[-1] == 1:
            return pts
        return pts.reshape(pts.shape + (1,))
    if pts.ndim < 1 or pts.shape[-1] != n:
        raise ValueError(f"expected points with {n} coordinates on the last axis")
    return pts


def toric_weight_values(weight: WeightSpec, points: np.ndarray) -> np.ndarray:
    """Toric weight at v-points (coordinates on the last axis; 1-d input may
    be a bare array of v values)."""
    if not weight.is_toric:
        raise DomainMismatchError("toric evaluation requested for a chart weight")
    poly = weight.polytope
    pts = _as_points(points, poly.dim)
    exps = lattice_points(poly, 1).astype(float)  # (m, n)
    # logsumexp over the lattice exponents; stable for any |v|
    vals = logsumexp(pts @ exps.T, axis=-1)
    for b in weight.bumps:
        vals = vals + b.value(pts)
    return vals


def toric_reference_hessian(polytope: LatticePolytope, points: np.ndarray) -> np.ndarray:
    """Analytic Hessian of phi_Delta at v-points.

    phi_Delta is a log-sum of exponentials, so its Hessian is the covariance
    of the lattice exponents under the softmax weights; it is positive
    definite everywhere.  Returns shape (..., n, n).
    """
    pts = _as_points(points, polytope.dim)
    exps = lattice_points(polytope, 1).astype(float)  # (m, n)
    logits = pts @ exps.T
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=-1, keepdims=True)
    mean = w @ exps  # (..., n)
    centered = exps - mean[..., None, :]  # broadcasts to (..., m, n)
    return np.einsum("...m,...mi,...mj->...ij", w, centered, centered)


def chart_weight_values(weight: WeightSpec, xy: np.ndarray) -> np.ndarray:
    """Chart weight at zeta points given as (..., 2) arrays (x, y)."""
    if weight.is_toric:
        raise DomainMismatchError("chart evaluation requested for a toric weight")
    pts = np.asarray(xy, dtype=float)
    r2 = (pts ** 2).sum(axis=-1)
    vals = np.log1p(r2)
    for b in weight.bumps:
        vals = vals + b.value(pts)
    return vals


# ---------------------------------------------------------------------------
# grids and fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxDomain:
    """Uniform rectangular grid over a v-box, n in {1, 2}."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(x) for x in np.atleast_1d(self.lo))
        hi = tuple(float(x) for x in np.atleast_1d(self.hi))
        shape = tuple(int(s) for s in np.atleast_1d(self.shape))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "shape", shape)
        if not (len(lo) == len(hi) == len(shape)) or len(lo) not in (1, 2):
            raise ValueError("box domain needs matching lo/hi/shape in dim 1 or 2")
        if any(h <= l for l, h in zip(lo, hi)) or any(s < 2 for s in shape):
            raise ValueError("box domain must have positive extent and >= 2 nodes per axis")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(l, h, s) for l, h, s in zip(self.lo, self.hi, self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((h - l) / (s - 1) for l, h, s in zip(self.lo, self.hi, self.shape))

    def meshgrid(self) -> np.ndarray:
        """Node coordinates, shape self.shape + (n,)."""
        axes = self.axes()
        if self.dim == 1:
            return axes[0][:, None]
        X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.stack([X, Y], axis=-1)


@dataclass(frozen=True)
class ChartDomain:
    """Log-polar chart grid: v = ln|zeta|^2 in [v_lo, v_hi] (n_v nodes) times
    n_theta equispaced angles (periodic, no duplicate seam node)."""

    v_lo: float
    v_hi: float
    n_v: int
    n_theta: int

    def __post_init__(self):
        object.__setattr__(self, "v_lo", float(self.v_lo))
        object.__setattr__(self, "v_hi", float(self.v_hi))
        object.__setattr__(self, "n_v", int(self.n_v))
        object.__setattr__(self, "n_theta", int(self.n_theta))
        if self.v_hi <= self.v_lo or self.n_v < 2:
            raise ValueError("chart domain needs v_hi > v_lo and >= 2 radial nodes")
        if self.n_theta < 4 or self.n_theta % 2:
            # even count keeps red-black coloring consistent across the seam
            raise ValueError("n_theta must be an even integer >= 4")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_v, self.n_theta)

    def v_axis(self) -> np.ndarray:
        return np.linspace(self.v_lo, self.v_hi, self.n_v)

    def theta_axis(self) -> np.ndarray:
        return np.arange(self.n_theta) * (2.0 * np.pi / self.n_theta)

    @property
    def spacing_v(self) -> float:
        return (self.v_hi - self.v_lo) / (self.n_v - 1)

    @property
    def spacing_theta(self) -> float:
        return 2.0 * np.pi / self.n_theta

    def meshgrid_xy(self) -> np.ndarray:
        """Chart coordinates (x, y) at the grid nodes, shape (n_v, n_theta, 2)."""
        r = np.exp(0.5 * self.v_axis())
        th = self.theta_axis()
        X = r[:, None] * np.cos(th)[None, :]
        Y = r[:, None] * np.sin(th)[None, :]
        return np.stack([X, Y], axis=-1)


@dataclass(frozen=True)
class GridField:
    """Values sampled at the nodes of a BoxDomain or ChartDomain.

    Fields are immutable; combining two fields requires identical domains.
    """

    domain: object
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != tuple(self.domain.shape):
            raise DomainMismatchError(
                f"values shape {vals.shape} does not match domain shape {tuple(self.domain.shape)}"
            )
        if vals.dtype != bool and not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite at every node")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def _check(self, other: "GridField"):
        if self.domain != other.domain:
            raise DomainMismatchError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, GridField):
            self._check(other)
            return GridField(self.domain, self.values + other.values)
        return GridField(self.domain, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridField):
            self._check(other)
            return GridField(self.domain, self.values - other.values)
        return GridField(self.domain, self.values - other)

    def __mul__(self, other):
        if isinstance(other, GridField):
            self._check(other)
            return GridField(self.domain, self.values * other.values)
        return GridField(self.domain, self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(self.domain, -self.values)

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())


def eval_weight(weight: WeightSpec, domain) -> GridField:
    """Sample a weight on a grid: toric weights on BoxDomain v-grids, chart
    weights on ChartDomain log-polar grids."""
    if isinstance(domain, BoxDomain):
        if not weight.is_toric:
            raise DomainMismatchError("chart weights live on ChartDomain grids")
        if weight.polytope.dim != domain.dim:
            raise DomainMismatchError("polytope and grid dimensions differ")
        return GridField(domain, toric_weight_values(weight, domain.meshgrid()))
    if isinstance(domain, ChartDomain):
        if weight.is_toric:
            raise DomainMismatchError("toric weights live on BoxDomain v-grids")
        return GridField(domain, chart_weight_values(weight, domain.meshgrid_xy()))
    raise DomainMismatchError(f"unknown domain type {type(domain).__name__}")


# ---------------------------------------------------------------------------
# finite-difference curvature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HessianField:
    """Second-derivative data of a grid field.

    For 1-d box grids `det` and `eig_min` both hold u''.  For 2-d box grids
    they hold det(Hess u) and the smaller Hessian eigenvalue.  For chart
    grids both hold the conformal Laplacian 4 u_vv + u_thth, the curvature
    carrier of a radial-log chart (positive exactly where the weight is
    strictly plurisubharmonic).  `trusted` is False on nodes whose stencil
    used one-sided differences.

    `noise_scale` is the magnitude against which the finite-difference error
    of `det` should be judged: multiplied by max(h)^2 it bounds the stencil
    truncation noise (entry magnitudes squared in 2-d, where near-rank-one
    Hessians make `det` cancel far below the entry scale; the entry scale
    itself in the additive 1-d and chart forms).
    """

    domain: object
    det: np.ndarray
    eig_min: np.ndarray
    trusted: np.ndarray
    noise_scale: np.ndarray


def _second_diff(vals: np.ndarray, h: float, axis: int) -> np.ndarray:
    v = np.moveaxis(vals, axis, 0)
    out = np.empty_like(v, dtype=float)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    # one-sided copies of the adjacent interior stencil; flagged untrusted
    out[0] = (v[0] - 2.0 * v[1] + v[2]) / h**2
    out[-1] = (v[-1] - 2.0 * v[-2] + v[-3]) / h**2
    return np.moveaxis(out, 0, axis)


def _second_diff_periodic(vals: np.ndarray, h: float, axis: int) -> np.ndarray:
    v = np.moveaxis(vals, axis, 0)
    out = (np.roll(v, -1, axis=0) - 2.0 * v + np.roll(v, 1, axis=0)) / h**2
    return np.moveaxis(out, 0, axis)


def _cross_diff(vals: np.ndarray, hx: float, hy: float) -> np.ndarray:
    out = np.zeros_like(vals, dtype=float)
    out[1:-1, 1:-1] = (
        vals[2:, 2:] - vals[2:, :-2] - vals[:-2, 2:] + vals[:-2, :-2]
    ) / (4.0 * hx * hy)
    return out


def hessian_field(field: GridField) -> HessianField:
    """Centered second differences of a field (O(h^2) on interior nodes).

    Boundary nodes use one-sided stencils and are flagged untrusted; chart
    grids wrap in theta so only the two radial rings are untrusted.
    """
    dom = field.domain
    vals = np.asarray(field.values, dtype=float)
    if isinstance(dom, BoxDomain):
        if dom.dim == 1:
            h = dom.spacing[0]
            if dom.shape[0] < 3:
                raise ValueError("need >= 3 nodes for second differences")
            d2 = _second_diff(vals, h, 0)
            trusted = np.zeros(dom.shape, dtype=bool)
            trusted[1:-1] = True
            return HessianField(dom, d2, d2.copy(), trusted, np.abs(d2))
        hx, hy = dom.spacing
        if min(dom.shape) < 3:
            raise ValueError("need >= 3 nodes per axis for second differences")
        uxx = _second_diff(vals, hx, 0)
        uyy = _second_diff(vals, hy, 1)
        uxy = _cross_diff(vals, hx, hy)
        det = uxx * uyy - uxy**2
        tr = uxx + uyy
        disc = np.sqrt(np.maximum((uxx - uyy) ** 2 + 4.0 * uxy**2, 0.0))
        eig_min = 0.5 * (tr - disc)
        trusted = np.zeros(dom.shape, dtype=bool)
        trusted[1:-1, 1:-1] = True
        scale = (np.abs(uxx) + np.abs(uyy) + 2.0 * np.abs(uxy)) ** 2
        return HessianField(dom, det, eig_min, trusted, scale)
    if isinstance(dom, ChartDomain):
        if dom.n_v < 3:
            raise ValueError("need >= 3 radial nodes for second differences")
        d2v = 4.0 * _second_diff(vals, dom.spacing_v, 0)
        d2t = _second_diff_periodic(vals, dom.spacing_theta, 1)
        lap = d2v + d2t
        trusted = np.zeros(dom.shape, dtype=bool)
        trusted[1:-1, :] = True
        return HessianField(dom, lap, lap.copy(), trusted, np.abs(d2v) + np.abs(d2t))
    raise DomainMismatchError(f"unknown domain type {type(dom).__name__}")


def interior_window(domain, fraction: float = 0.6) -> tuple[slice, ...]:
    """Index slices selecting the central `fraction` of each non-periodic axis."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if isinstance(domain, BoxDomain):
        out = []
        for s in domain.shape:
            skip = int(round(s * (1.0 - fraction) / 2.0))
            out.append(slice(skip, s - skip))
        return tuple(out)
    if isinstance(domain, ChartDomain):
        skip = int(round(domain.n_v * (1.0 - fraction) / 2.0))
        return (slice(skip, domain.n_v - skip), slice(None))
    raise DomainMismatchError(f"unknown domain type {type(domain).__name__}")
