"""Equilibrium potentials: largest admissible minorants of a weight.

In toric log coordinates the equilibrium potential of u with gradient range
constrained to the polytope Delta is the double discrete Legendre transform

    u*(p)    = max_v <p, v> - u(v)        (p on a grid over Delta),
    phi_e(v) = max_p <p, v> - u*(p),

i.e. the largest convex function below u whose slopes stay in Delta.  On an
affine chart the same object is computed as the largest solution of the
obstacle problem  L psi >= 0, psi <= phi  with the conformal Laplacian
L = 4 d^2/dv^2 + d^2/dtheta^2 in log-polar coordinates, solved by projected
red-black SOR.

The contact set {phi_e = phi} carries the equilibrium measure; everything
downstream (Monge-Ampere densities, decay profiles, capacity estimates)
consumes the EnvelopeResult produced here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BoxDomain,
    ChartDomain,
    GridField,
    LatticePolytope,
    WeightSpec,
    chart_weight_values,
    eval_weight,
    hessian_field,
    toric_weight_values,
)


class EnvelopeBoxError(RuntimeError):
    """Raised when the v-box is too narrow for the requested slope range."""


class SorConvergenceError(RuntimeError):
    """Raised when projected SOR fails to reach tolerance within the sweep
    budget."""


@dataclass(eq=False)
class EnvelopeResult:
    """Equilibrium potential with its contact set and solver diagnostics.

    `residual` is the complementarity defect: max(phi_e - phi) for the
    biconjugate route, the sup-norm of the final sweep update for SOR.
    """

    phi_e: GridField
    contact_mask: GridField
    method: str
    iterations: int
    residual: float
    eps_contact: float
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# one-dimensional hull oracle
# ---------------------------------------------------------------------------


def convex_envelope_1d(v: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Largest convex minorant of the samples (v_i, u_i), evaluated back at
    the v_i.  Monotone-chain lower hull; collinear interior points are
    dropped, so the result is deterministic.  Distinct abscissae required.
    """
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    if v.ndim != 1 or v.shape != u.shape or v.size < 2:
        raise ValueError("need matching 1-d arrays with at least two samples")
    order = np.argsort(v, kind="stable")
    vs, us = v[order], u[order]
    if np.any(np.diff(vs) <= 0):
        raise ValueError("duplicate abscissae in convex_envelope_1d input")
    hull_x: list[float] = []
    hull_y: list[float] = []
    for x, y in zip(vs, us):
        while len(hull_x) >= 2:
            x1, y1 = hull_x[-2], hull_y[-2]
            x2, y2 = hull_x[-1], hull_y[-1]
            # pop the middle point unless the chain turns strictly left
            if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) <= 0.0:
                hull_x.pop()
                hull_y.pop()
            else:
                break
        hull_x.append(x)
        hull_y.append(y)
    out = np.interp(vs, hull_x, hull_y)
    result = np.empty_like(out)
    result[order] = out
    return result


# ---------------------------------------------------------------------------
# discrete Legendre transforms
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ConjugateResult:
    """Values of the discrete Legendre transform on the dual grid, with the
    index of the maximizing primal node per dual node."""

    values: np.ndarray
    argmax: np.ndarray  # (M,) for 1-d; (M1, M2, 2) for 2-d


_P_CHUNK = 64


def legendre_conjugate(u: GridField, dual_axes) -> ConjugateResult:
    """u*(p) = max over grid nodes v of <p, v> - u(v), exactly (discrete sup).

    `dual_axes` is a 1-d array of p values (1-d fields) or a pair of axis
    arrays (2-d fields; the dual grid is their tensor product).  Two-dim
    transforms are computed dimension-wise, which is exact for the discrete
    maximum and keeps the cost at two staged scans.
    """
    dom = u.domain
    if not isinstance(dom, BoxDomain):
        raise ValueError("legendre_conjugate expects a field on a BoxDomain")
    if dom.dim == 1:
        p = np.asarray(dual_axes, dtype=float).ravel()
        v = dom.axes()[0]
        vals = np.empty(p.size)
        amax = np.empty(p.size, dtype=np.int64)
        for i in range(0, p.size, _P_CHUNK):
            chunk = p[i : i + _P_CHUNK]
            t = chunk[:, None] * v[None, :] - u.values[None, :]
            amax[i : i + _P_CHUNK] = np.argmax(t, axis=1)
            vals[i : i + _P_CHUNK] = np.take_along_axis(
                t, amax[i : i + _P_CHUNK, None], axis=1
            )[:, 0]
        return ConjugateResult(vals, amax)
    p1 = np.asarray(dual_axes[0], dtype=float).ravel()
    p2 = np.asarray(dual_axes[1], dtype=float).ravel()
    v1, v2 = dom.axes()
    N1 = v1.size
    # stage one: w(p2, v1) = max_v2 (p2 v2 - u(v1, v2))
    W = np.empty((p2.size, N1))
    A2 = np.empty((p2.size, N1), dtype=np.int64)
    for i in range(0, p2.size, _P_CHUNK):
        chunk = p2[i : i + _P_CHUNK]
        t = chunk[:, None, None] * v2[None, None, :] - u.values[None, :, :]
        a = np.argmax(t, axis=2)
        A2[i : i + _P_CHUNK] = a
        W[i : i + _P_CHUNK] = np.take_along_axis(t, a[:, :, None], axis=2)[:, :, 0]
    # stage two: u*(p1, p2) = max_v1 (p1 v1 + w(p2, v1))
    vals = np.empty((p1.size, p2.size))
    A1 = np.empty((p1.size, p2.size), dtype=np.int64)
    for i in range(0, p1.size, _P_CHUNK):
        chunk = p1[i : i + _P_CHUNK]
        t = chunk[:, None, None] * v1[None, None, :] + W[None, :, :]
        a = np.argmax(t, axis=2)
        A1[i : i + _P_CHUNK] = a
        vals[i : i + _P_CHUNK] = np.take_along_axis(t, a[:, :, None], axis=2)[:, :, 0]
    I2 = A2.T[A1, np.arange(p2.size)[None, :]]
    return ConjugateResult(vals, np.stack([A1, I2], axis=-1))


def _biconjugate_1d(v: np.ndarray, p: np.ndarray, conj: np.ndarray) -> np.ndarray:
    out = np.empty(v.size)
    for i in range(0, v.size, _P_CHUNK):
        chunk = v[i : i + _P_CHUNK]
        out[i : i + _P_CHUNK] = np.max(chunk[:, None] * p[None, :] - conj[None, :], axis=1)
    return out


def _biconjugate_2d(v1, v2, p1, p2, g) -> np.ndarray:
    """max over (p1, p2) of p1 v1 + p2 v2 + g(p1, p2), staged; g may hold
    -inf entries (dual nodes outside the polytope)."""
    # stage one over p2: T(v2, p1) = max_p2 (v2 p2 + g(p1, p2))
    T = np.empty((v2.size, p1.size))
    for i in range(0, v2.size, _P_CHUNK):
        chunk = v2[i : i + _P_CHUNK]
        t = chunk[:, None, None] * p2[None, None, :] + g[None, :, :]
        T[i : i + _P_CHUNK] = np.max(t, axis=2)
    out = np.empty((v1.size, v2.size))
    for i in range(0, v1.size, _P_CHUNK):
        chunk = v1[i : i + _P_CHUNK]
        # t[c, v2, p1] = v1_c p1 + T(v2, p1); max over p1
        t = chunk[:, None, None] * p1[None, None, :] + T[None, :, :]
        out[i : i + _P_CHUNK] = np.max(t, axis=2)
    return out


# ---------------------------------------------------------------------------
# toric equilibrium by biconjugation
# ---------------------------------------------------------------------------


def dual_axes_for(polytope: LatticePolytope, domain: BoxDomain, dual_factor: int = 4):
    """Per-axis dual grids over the bounding box of Delta, dual_factor times
    finer than the primal slope resolution (spacing = extent * h / (2 f V))."""
    lo, hi = polytope.bounding_box()
    axes = []
    for i in range(domain.dim):
        counts = 2 * dual_factor * (domain.shape[i] - 1)
        axes.append(np.linspace(lo[i], hi[i], counts + 1))
    return axes


def default_contact_eps(phi: GridField, residual: float) -> float:
    """Contact threshold: ten times the larger of the solver residual and
    the h^2-scale discretization error of the envelope.

    The curvature scale is clipped to [1/4, 1]: the envelope's second
    derivatives near its contact set stay of order one for log-type weights
    even when a bump interior is much more curved, and an inflated threshold
    would swallow genuine detachment gaps.
    """
    hf = hessian_field(phi)
    dom = phi.domain
    if isinstance(dom, ChartDomain):
        h2 = dom.spacing_v**2
        curv = float(np.abs(hf.det[hf.trusted]).max()) / 4.0
    else:
        h2 = max(dom.spacing) ** 2
        if dom.dim == 1:
            curv = float(np.abs(hf.det[hf.trusted]).max())
        else:
            curv = float(np.abs(hf.eig_min[hf.trusted]).max())
    return 10.0 * max(residual, h2 * min(1.0, max(curv, 0.25)))


def contact_set(phi: GridField, phi_e: GridField, eps: float | None = None,
                residual: float = 0.0) -> GridField:
    """Boolean field marking {phi - phi_e <= eps}."""
    if eps is None:
        eps = default_contact_eps(phi, residual)
    gap = phi.values - phi_e.values
    return GridField(phi.domain, gap <= eps)


def _check_box_slopes(u: GridField, polytope: LatticePolytope, dual_axes):
    """The one-sided slopes of u on each box face must reach past the
    polytope's slope extent (up to a saturation allowance), otherwise the box
    truncates the gradient range and the conjugate would be wrong."""
    dom = u.domain
    lo, hi = polytope.bounding_box()
    for i in range(dom.dim):
        h = dom.spacing[i]
        extent = float(hi[i] - lo[i])
        dp = dual_axes[i][1] - dual_axes[i][0]
        tol = max(4.0 * dp, 0.003 * extent)
        v = np.moveaxis(u.values, i, 0) if dom.dim == 2 else u.values
        s_lo = (v[1] - v[0]) / h
        s_hi = (v[-1] - v[-2]) / h
        if np.min(s_lo) > lo[i] + tol or np.max(s_hi) < hi[i] - tol:
            raise EnvelopeBoxError(
                f"v-box too narrow along axis {i}: boundary slopes "
                f"[{np.min(s_lo):.4f}, {np.max(s_hi):.4f}] do not cover the "
                f"slope range [{lo[i]}, {hi[i]}]; widen the box"
            )


def toric_equilibrium(u: GridField, polytope: LatticePolytope, dual_factor: int = 4,
                      eps_contact: float | None = None) -> EnvelopeResult:
    """Equilibrium potential of a toric-coordinates weight by double
    discrete Legendre transform with slopes constrained to Delta.

    The v-box must be wide enough that every interior dual slope is attained
    strictly inside the box; violations raise EnvelopeBoxError with advice
    to widen the box.
    """
    dom = u.domain
    if not isinstance(dom, BoxDomain) or dom.dim != polytope.dim:
        raise ValueError("field domain and polytope dimension must agree")
    axes = dual_axes_for(polytope, dom, dual_factor)
    _check_box_slopes(u, polytope, axes)
    conj = legendre_conjugate(u, axes[0] if dom.dim == 1 else axes)
    # interior dual nodes (safely inside Delta) must not attain their sup on
    # the box faces, else the box clipped the slope range; the safety margin
    # is the dual spacing plus the grid's own slope quantization h * max|u''|
    if dom.dim == 1:
        h = dom.spacing[0]
        m2 = float(np.abs(np.diff(u.values, 2)).max()) / h**2
    else:
        hx, hy = dom.spacing
        m2 = max(
            float(np.abs(np.diff(u.values, 2, axis=0)).max()) / hx**2,
            float(np.abs(np.diff(u.values, 2, axis=1)).max()) / hy**2,
        )
    if dom.dim == 1:
        p = axes[0]
        dp = p[1] - p[0]
        hmax = dom.spacing[0]
        margin = 2.0 * dp + 4.0 * hmax * max(m2, 0.25)
        interior = polytope.boundary_distance(p[:, None]) >= margin
        edge = (conj.argmax == 0) | (conj.argmax == dom.shape[0] - 1)
        if np.any(interior & edge):
            raise EnvelopeBoxError(
                "v-box too narrow: interior dual slopes attained on the box "
                "boundary; widen the box"
            )
        mask_in = polytope.boundary_distance(p[:, None]) >= 0.0
        g = np.where(mask_in, -conj.values, -np.inf)
        env_vals = _biconjugate_1d(dom.axes()[0], p, -g)
    else:
        p1, p2 = axes
        P1, P2 = np.meshgrid(p1, p2, indexing="ij")
        pts = np.stack([P1.ravel(), P2.ravel()], axis=-1)
        bdist = polytope.boundary_distance(pts).reshape(P1.shape)
        dp = max(p1[1] - p1[0], p2[1] - p2[0])
        hmax = max(dom.spacing)
        margin = 2.0 * dp + 4.0 * hmax * max(m2, 0.25)
        interior = bdist >= margin
        i1 = conj.argmax[..., 0]
        i2 = conj.argmax[..., 1]
        edge = (
            (i1 == 0)
            | (i1 == dom.shape[0] - 1)
            | (i2 == 0)
            | (i2 == dom.shape[1] - 1)
        )
        if np.any(interior & edge):
            raise EnvelopeBoxError(
                "v-box too narrow: interior dual slopes attained on the box "
                "boundary; widen the box"
            )
        g = np.where(bdist >= 0.0, -conj.values, -np.inf)
        if not np.any(np.isfinite(g)):
            raise ValueError("dual grid does not intersect the polytope")
        env_vals = _biconjugate_2d(dom.axes()[0], dom.axes()[1], p1, p2, g)
    phi_e = GridField(dom, env_vals)
    defect = float(np.max(env_vals - u.values))
    residual = max(defect, 0.0)
    if eps_contact is None:
        eps_contact = default_contact_eps(u, residual)
    mask = contact_set(u, phi_e, eps_contact)
    return EnvelopeResult(
        phi_e,
        mask,
        method="biconjugate",
        iterations=1,
        residual=residual,
        eps_contact=eps_contact,
        diagnostics={
            "dual_shape": tuple(len(a) for a in axes),
            "contact_fraction": float(mask.values.mean()),
        },
    )


# ---------------------------------------------------------------------------
# chart obstacle problem by projected SOR
# ---------------------------------------------------------------------------


def sor_envelope(phi: GridField, boundary_lo: np.ndarray, boundary_hi: np.ndarray,
                 omega: float = 1.5, tol: float = 1e-10, max_sweeps: int = 1_000_000,
                 eps_contact: float | None = None) -> EnvelopeResult:
    """Largest L-subharmonic minorant of a chart weight on an annulus.

    L = 4 d_vv + d_thth is the conformal Laplacian of the log-polar chart;
    Dirichlet data is pinned on the two radial rings.  Projected red-black
    SOR iterates  psi <- min(phi, psi + omega (gs - psi))  until the sweep
    update falls below tol * range(phi).
    """
    dom = phi.domain
    if not isinstance(dom, ChartDomain):
        raise ValueError("sor_envelope expects a field on a ChartDomain")
    if not 0.0 < omega < 2.0:
        raise ValueError("SOR relaxation factor must lie in (0, 2)")
    obstacle = np.asarray(phi.values, dtype=float)
    lo = np.broadcast_to(np.asarray(boundary_lo, dtype=float), (dom.n_theta,)).copy()
    hi = np.broadcast_to(np.asarray(boundary_hi, dtype=float), (dom.n_theta,)).copy()
    if np.any(lo > obstacle[0] + 1e-12) or np.any(hi > obstacle[-1] + 1e-12):
        raise ValueError("boundary data must not exceed the obstacle on the rings")
    scale = max(1.0, float(obstacle.max() - obstacle.min()))
    stop = tol * scale
    cv = 4.0 / dom.spacing_v**2
    ct = 1.0 / dom.spacing_theta**2
    denom = 2.0 * (cv + ct)

    # start from the v-linear interpolant of the ring data, clipped under phi
    frac = np.linspace(0.0, 1.0, dom.n_v)[:, None]
    psi = np.minimum(obstacle, (1.0 - frac) * lo[None, :] + frac * hi[None, :])
    psi[0] = lo
    psi[-1] = hi

    iv, jt = np.meshgrid(np.arange(dom.n_v), np.arange(dom.n_theta), indexing="ij")
    colors = ((iv + jt) % 2).astype(bool)
    interior = np.zeros(dom.shape, dtype=bool)
    interior[1:-1, :] = True

    sweeps = 0
    delta = np.inf
    while delta > stop:
        if sweeps >= max_sweeps:
            raise SorConvergenceError(
                f"projected SOR did not converge in {max_sweeps} sweeps "
                f"(last update {delta:.3e}, target {stop:.3e})"
            )
        delta = 0.0
        for color in (False, True):
            gs = (
                cv * (np.roll(psi, -1, axis=0) + np.roll(psi, 1, axis=0))
                + ct * (np.roll(psi, -1, axis=1) + np.roll(psi, 1, axis=1))
            ) / denom
            cand = np.minimum(obstacle, psi + omega * (gs - psi))
            mask = interior & (colors == color)
            upd = np.abs(cand - psi)[mask].max()
            delta = max(delta, float(upd))
            psi[mask] = cand[mask]
        sweeps += 1

    phi_e = GridField(dom, psi)
    if eps_contact is None:
        eps_contact = default_contact_eps(phi, delta)
    mask = contact_set(phi, phi_e, eps_contact)
    lap = hessian_field(phi_e)
    lap_interior = lap.det[1:-1, :]
    noncontact = ~mask.values[1:-1, :]
    diagnostics = {
        "subharmonic_defect": float(max(0.0, -lap_interior.min())),
        "pde_residual_detached": float(np.abs(lap_interior[noncontact]).max())
        if noncontact.any()
        else 0.0,
        "contact_fraction": float(mask.values.mean()),
    }
    return EnvelopeResult(
        phi_e,
        mask,
        method="sor",
        iterations=sweeps,
        residual=float(delta),
        eps_contact=eps_contact,
        diagnostics=diagnostics,
    )


def radial_boundary_envelope(weight: WeightSpec, domain: ChartDomain,
                             pad: float = 30.0):
    """Dirichlet data for the chart obstacle problem from the radial route.

    The theta-minimum of the weight as a function of v is enveloped in one
    dimension with slopes constrained to [0, 1] (degree growth of the chart)
    on a padded v-interval, then read off at the two rings.  For invariant
    weights this is exact; otherwise the theta-maximum gives a majorant and
    the gap is returned as an error bar.
    """
    h = domain.spacing_v
    n_extra = int(np.ceil(pad / h))
    n_total = domain.n_v + 2 * n_extra
    v_lo = domain.v_lo - n_extra * h
    v_hi = domain.v_hi + n_extra * h
    box = BoxDomain((v_lo,), (v_hi,), (n_total,))
    wide = ChartDomain(v_lo, v_hi, n_total, domain.n_theta)
    vals = chart_weight_values(weight, wide.meshgrid_xy())
    lo_profile = vals.min(axis=1)
    hi_profile = vals.max(axis=1)
    unit = LatticePolytope(((0,), (1,)))
    env_lo = toric_equilibrium(GridField(box, lo_profile), unit)
    env_hi = toric_equilibrium(GridField(box, hi_profile), unit)
    sel = [n_extra, n_extra + domain.n_v - 1]
    gap = float(np.max(env_hi.phi_e.values - env_lo.phi_e.values))
    return (
        np.repeat(env_lo.phi_e.values[sel[0]], domain.n_theta),
        np.repeat(env_lo.phi_e.values[sel[1]], domain.n_theta),
        gap,
    )


def chart_equilibrium(weight: WeightSpec, domain: ChartDomain, omega: float = 1.5,
                      tol: float = 1e-10, max_sweeps: int = 1_000_000) -> EnvelopeResult:
    """Envelope of a chart weight on a log-polar grid: radial-route boundary
    data plus projected SOR in the interior."""
    if weight.is_toric:
        raise ValueError("chart_equilibrium expects a chart weight")
    phi = eval_weight(weight, domain)
    lo, hi, gap = radial_boundary_envelope(weight, domain)
    res = sor_envelope(phi, lo, hi, omega=omega, tol=tol, max_sweeps=max_sweeps)
    res.diagnostics["boundary_gap"] = gap
    return res


# ---------------------------------------------------------------------------
# regularity probe
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RegularityReport:
    """Grid evidence for C^{1,1} regularity of an envelope.

    Bounded second differences under refinement are consistent with a
    Lipschitz gradient; they are evidence, not a proof.
    """

    spacings: tuple
    env_second_diff: tuple
    obstacle_second_diff: tuple
    ratios: tuple
    ratio_tol: float
    bound_tol: float
    passed: bool
    notes: str = ""


def _max_second_diff(field: GridField) -> float:
    dom = field.domain
    vals = field.values
    if isinstance(dom, BoxDomain) and dom.dim == 1:
        h = dom.spacing[0]
        return float(np.abs(np.diff(vals, 2)).max() / h**2)
    if isinstance(dom, BoxDomain):
        hx, hy = dom.spacing
        cands = [
            np.abs(vals[2:, :] - 2 * vals[1:-1, :] + vals[:-2, :]).max() / hx**2,
            np.abs(vals[:, 2:] - 2 * vals[:, 1:-1] + vals[:, :-2]).max() / hy**2,
            np.abs(vals[2:, 2:] - 2 * vals[1:-1, 1:-1] + vals[:-2, :-2]).max()
            / (hx**2 + hy**2),
            np.abs(vals[2:, :-2] - 2 * vals[1:-1, 1:-1] + vals[:-2, 2:]).max()
            / (hx**2 + hy**2),
        ]
        return float(max(cands))
    if isinstance(dom, ChartDomain):
        hv = dom.spacing_v
        ht = dom.spacing_theta
        dvv = np.abs(vals[2:, :] - 2 * vals[1:-1, :] + vals[:-2, :]).max() / hv**2
        dtt = np.abs(
            np.roll(vals, -1, axis=1) - 2 * vals + np.roll(vals, 1, axis=1)
        )[1:-1].max() / ht**2
        return float(max(dvv, dtt))
    raise ValueError("unsupported domain for the regularity probe")


def regularity_probe(pairs, ratio_tol: float = 1.2,
                     bound_margin: float = 0.35) -> RegularityReport:
    """Second-difference growth check across a refinement sequence.

    `pairs` lists (phi, phi_e) at successively halved spacings.  Passes when
    the max second difference of phi_e stays bounded (ratio per refinement
    <= ratio_tol) and does not exceed the obstacle's own curvature scale by
    more than bound_margin relatively.  A gradient kink fails: its second
    difference doubles with each refinement.
    """
    if len(pairs) < 2:
        raise ValueError("need at least two refinement levels")
    spacings = []
    env_m2 = []
    obs_m2 = []
    for phi, phi_e in pairs:
        dom = phi.domain
        if phi_e.domain != dom:
            raise ValueError("each pair must share one grid")
        h = dom.spacing_v if isinstance(dom, ChartDomain) else max(dom.spacing)
        spacings.append(float(h))
        env_m2.append(_max_second_diff(phi_e))
        obs_m2.append(_max_second_diff(phi))
    for a, b in zip(spacings[:-1], spacings[1:]):
        if not 0.4 <= b / a <= 0.6:
            raise ValueError("refinement sequence must halve the spacing")
    ratios = tuple(b / a for a, b in zip(env_m2[:-1], env_m2[1:]))
    bounded = all(r <= ratio_tol for r in ratios)
    below = env_m2[-1] <= obs_m2[-1] * (1.0 + bound_margin)
    notes = []
    if not bounded:
        notes.append("second differences grow under refinement (gradient kink?)")
    if not below:
        notes.append("envelope curvature exceeds the obstacle scale")
    return RegularityReport(
        spacings=tuple(spacings),
        env_second_diff=tuple(env_m2),
        obstacle_second_diff=tuple(obs_m2),
        ratios=ratios,
        ratio_tol=ratio_tol,
        bound_tol=bound_margin,
        passed=bounded and below,
        notes="; ".join(notes),
    )
