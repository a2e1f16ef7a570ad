"""Quadrature rules shared by every integral in the package.

Toric norms are integrals over the v-line (or v-plane) against the reference
measure det(Hess phi_Delta) dv; chart norms use the unit-mass rotation
measure dt dtheta / (2 pi) with t = r^2 / (1 + r^2).  Both are handled by
composite Gauss-Legendre panels whose count is doubled until successive
refinements agree to a relative tolerance.

The truncation box for v-integrals follows the tail estimate of the
integrands e^{<a,v> - k phi(v)}: beyond the slope-saturation scale V0 every
integrand decays at least like e^{-dist}, so V = V0 + ln(k * dim / tol)
bounds the discarded tail by tol relative to the peak.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BoxDomain, ChartDomain, GridField, LatticePolytope, WeightSpec


class QuadratureError(RuntimeError):
    """Raised when panel doubling fails to reach the requested tolerance."""


def leggauss_panels(lo: float, hi: float, n_panels: int, order: int = 16):
    """Composite Gauss-Legendre rule: `n_panels` equal panels of given order.

    Returns (nodes, weights), each of length n_panels * order.
    """
    if hi <= lo:
        raise ValueError("need hi > lo")
    if n_panels < 1 or order < 2:
        raise ValueError("need n_panels >= 1 and order >= 2")
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, n_panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def truncation_halfwidth(base: float, k: int, dim: int, tol: float = 1e-12) -> float:
    """Half-width of the v-integration box: base slope-saturation scale plus
    the logarithmic tail allowance ln(k * dim / tol)."""
    return float(base + np.log(max(k, 1) * max(dim, 1) / tol))


@dataclass(frozen=True)
class PanelRule:
    """A concrete node set for one axis."""

    nodes: np.ndarray
    weights: np.ndarray
    n_panels: int


def normalize_breaks(breaks) -> np.ndarray:
    """Sorted, de-duplicated segment boundaries (at least the two ends)."""
    b = np.unique(np.asarray(breaks, dtype=float))
    if b.size < 2:
        raise ValueError("need at least two segment boundaries")
    keep = [b[0]]
    for x in b[1:]:
        if x - keep[-1] > 1e-9 * max(1.0, abs(x)):
            keep.append(x)
    if len(keep) < 2:
        raise ValueError("degenerate integration interval")
    return np.asarray(keep)


def leggauss_segmented(breaks, n_panels: int, order: int = 16):
    """Composite Gauss-Legendre rule whose panel edges include every entry
    of `breaks`; n_panels are distributed over the segments proportionally
    to length (at least one per segment).  Aligning edges with the points
    where an integrand loses smoothness restores spectral convergence.
    """
    b = normalize_breaks(breaks)
    lengths = np.diff(b)
    total = lengths.sum()
    counts = np.maximum(1, np.rint(n_panels * lengths / total).astype(int))
    nodes, weights = [], []
    for lo, hi, c in zip(b[:-1], b[1:], counts):
        x, w = leggauss_panels(lo, hi, int(c), order)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def refine_until(eval_log_integrals, breaks, rtol: float = 1e-10,
                 start_panels: int = 8, max_panels: int = 16384, order: int = 16):
    """Double panel counts until all log-integrals move by less than rtol.

    `eval_log_integrals(nodes, weights)` must return an array of log-scale
    integral values.  Agreement of log values to rtol is relative agreement
    of the integrals.  Returns (values, n_panels, achieved).
    """
    n = start_panels
    nodes, weights = leggauss_segmented(breaks, n, order)
    prev = np.asarray(eval_log_integrals(nodes, weights))
    achieved = np.inf
    while True:
        n *= 2
        if n > max_panels:
            raise QuadratureError(
                f"panel doubling exceeded {max_panels} panels "
                f"(last change {achieved:.3e}, requested {rtol:.1e})"
            )
        nodes, weights = leggauss_segmented(breaks, n, order)
        cur = np.asarray(eval_log_integrals(nodes, weights))
        achieved = float(np.max(np.abs(cur - prev))) if cur.size else 0.0
        if achieved <= rtol:
            return cur, n, achieved
        prev = cur


def chart_radial_rule(n_panels: int, order: int = 16) -> PanelRule:
    """Gauss-Legendre panels on t in (0, 1); nodes avoid the endpoints."""
    nodes, weights = leggauss_panels(0.0, 1.0, n_panels, order)
    return PanelRule(nodes, weights, n_panels)


def theta_rule(n_theta: int) -> PanelRule:
    """Uniform periodic rule on [0, 2 pi): spectrally accurate for smooth
    periodic integrands."""
    if n_theta < 4:
        raise ValueError("need at least 4 angular nodes")
    nodes = np.arange(n_theta) * (2.0 * np.pi / n_theta)
    weights = np.full(n_theta, 2.0 * np.pi / n_theta)
    return PanelRule(nodes, weights, n_theta)


def trapezoid_weights(domain) -> np.ndarray:
    """Trapezoid weights per node for integrals of grid fields (dv on box
    grids, dv dtheta on chart grids, theta direction periodic)."""
    if isinstance(domain, BoxDomain):
        ws = []
        for h, s in zip(domain.spacing, domain.shape):
            w = np.full(s, h)
            w[0] = w[-1] = 0.5 * h
            ws.append(w)
        if domain.dim == 1:
            return ws[0]
        return np.outer(ws[0], ws[1])
    if isinstance(domain, ChartDomain):
        wv = np.full(domain.n_v, domain.spacing_v)
        wv[0] = wv[-1] = 0.5 * domain.spacing_v
        wt = np.full(domain.n_theta, domain.spacing_theta)
        return np.outer(wv, wt)
    raise TypeError(f"unknown domain type {type(domain).__name__}")


def grid_integral(field: GridField, density: np.ndarray | None = None) -> float:
    """Trapezoid integral of a grid field, optionally against a per-node
    density (with respect to dv, or dv dtheta on chart grids)."""
    w = trapezoid_weights(field.domain)
    vals = np.asarray(field.values, dtype=float)
    if density is not None:
        vals = vals * np.asarray(density, dtype=float)
    return float((vals * w).sum())


def fs_measure_density(domain: ChartDomain) -> np.ndarray:
    """Density of the unit-mass chart measure dt dtheta / (2 pi) with respect
    to dv dtheta: t(1-t) / (2 pi) with t = e^v / (1 + e^v)."""
    v = domain.v_axis()
    t = 1.0 / (1.0 + np.exp(-v))
    dens = t * (1.0 - t) / (2.0 * np.pi)
    return np.repeat(dens[:, None], domain.n_theta, axis=1)


def toric_measure_density(polytope: LatticePolytope, domain: BoxDomain) -> np.ndarray:
    """Density det(Hess phi_Delta) of the toric reference measure with
    respect to dv at the grid nodes (analytic, not finite differences)."""
    from .geometry import toric_reference_hessian

    H = toric_reference_hessian(polytope, domain.meshgrid())
    if domain.dim == 1:
        return H[..., 0, 0]
    return H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] ** 2
