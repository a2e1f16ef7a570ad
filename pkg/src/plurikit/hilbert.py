"""Weighted polynomial Hilbert spaces and their Bergman data.

A space at level k is spanned by monomials z^a for a in k*Delta (toric) or
zeta^j, j = 0..k (chart), with squared norms

    ||z^a||^2   = integral e^{<a,v> - k phi(v)} det(Hess phi_Delta)(v) dv,
    ||zeta^j||^2 = integral |zeta|^{2j} e^{-k phi} dt dtheta / (2 pi),

where t = |zeta|^2 / (1 + |zeta|^2).  Torus invariance makes the toric Gram
exactly diagonal, so it is stored as log norms and never densified unless
asked for.  Chart Grams are dense Hermitian matrices assembled after
prescaling each basis function by its unperturbed-weight norm, which keeps
the matrix near the identity and its conditioning honest.

The Bergman function of a model is

    B_k(x) = sum_i |psi_i(x)|^2 e^{-k phi(x)}

over any orthonormal basis psi_i; its integral against the reference measure
equals the space dimension, and k^{-n} B_k concentrates on the contact set
of the equilibrium potential as k grows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, eigh, solve_triangular
from scipy.special import betaln, logsumexp

from .geometry import (
    BoxDomain,
    ChartDomain,
    GridField,
    WeightSpec,
    chart_weight_values,
    lattice_points,
    toric_reference_hessian,
    toric_weight_values,
)
from .quadrature import (
    QuadratureError,
    leggauss_panels,
    leggauss_segmented,
    refine_until,
    theta_rule,
    truncation_halfwidth,
)


class GramNotPDError(RuntimeError):
    """Raised when the (prescaled) Gram matrix is not positive definite at
    working precision."""


_ALPHA_CHUNK = 256  # basis chunk for streaming log-sum-exp evaluations
_NODE_BLOCK = 65536  # quadrature-node block: caps temporaries at chunk*block


def _log_measure_det(poly, pts: np.ndarray) -> np.ndarray:
    """log det of the reference Hessian; underflowed corners clamp to -inf
    instead of emitting nan from rounding-negative determinants."""
    H = toric_reference_hessian(poly, pts)
    det = H[..., 0, 0] if poly.dim == 1 else H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] ** 2
    with np.errstate(divide="ignore"):
        return np.log(np.maximum(det, 0.0))


@dataclass(frozen=True)
class HilbertSpaceSpec:
    """Level-k weighted polynomial space.

    `basis` lists the monomial exponents: lattice points of k*Delta in
    lexicographic order for toric weights, degrees (0,) .. (k,) on the chart.
    It is filled in automatically when omitted and validated when given.
    """

    weight: WeightSpec
    k: int
    basis: tuple = None
    quad_rtol: float = 1e-10
    tail_tol: float = 1e-12

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("level k must be an integer >= 1")
        object.__setattr__(self, "k", int(self.k))
        expected = _expected_basis(self.weight, self.k)
        if self.basis is None:
            object.__setattr__(self, "basis", expected)
        elif tuple(tuple(int(c) for c in a) for a in self.basis) != expected:
            raise ValueError("basis does not match the weight's exponent set at this k")

    @property
    def is_toric(self) -> bool:
        return self.weight.is_toric


def _expected_basis(weight: WeightSpec, k: int) -> tuple:
    if weight.is_toric:
        pts = lattice_points(weight.polytope, k)
        return tuple(tuple(int(c) for c in row) for row in pts)
    return tuple((j,) for j in range(k + 1))


def dimension(spec: HilbertSpaceSpec) -> int:
    """Number of basis monomials; equals the integral of B_k against the
    reference measure."""
    return len(spec.basis)


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class BergmanModel:
    """Orthonormalization data for one space, ready for pointwise evaluation.

    Toric models carry only the log norms of the diagonal Gram.  Chart
    models carry the prescaled Gram with its Cholesky (or eigenvalue) factor;
    `n_discarded` counts basis directions dropped by the eigenvalue fallback.
    """

    spec: HilbertSpaceSpec
    log_norms: np.ndarray | None = None  # toric: ln ||z^a||^2
    gram: np.ndarray | None = None  # chart: prescaled Hermitian Gram
    prescale_log: np.ndarray | None = None  # chart: ln D_j
    chol: np.ndarray | None = None  # chart: lower Cholesky factor
    eig_transform: np.ndarray | None = None  # chart fallback transform
    cond: float = 1.0
    n_discarded: int = 0
    quad_panels: int = 0
    quad_achieved: float = 0.0
    v_halfwidth: float = 0.0
    _quad_nodes: np.ndarray | None = field(default=None, repr=False)
    _quad_logw: np.ndarray | None = field(default=None, repr=False)  # toric
    _quad_w: np.ndarray | None = field(default=None, repr=False)  # chart
    _quad_theta: np.ndarray | None = field(default=None, repr=False)
    _quad_breaks: np.ndarray | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.spec.k

    @property
    def dim(self) -> int:
        return dimension(self.spec)

    @property
    def dim_effective(self) -> int:
        return self.dim - self.n_discarded

    @property
    def n_complex(self) -> int:
        """Complex dimension of the underlying model (1 for charts)."""
        return self.spec.weight.polytope.dim if self.spec.is_toric else 1


def default_v_halfwidth(spec: HilbertSpaceSpec) -> float:
    """Integration half-width: bump extent plus slope-saturation margin plus
    the tail allowance ln(k * dim / tail_tol)."""
    reach = 0.0
    for b in spec.weight.bumps:
        c = np.linalg.norm(b.center)
        reach = max(reach, c + b.radius)
    base = reach + 3.0
    return truncation_halfwidth(base, spec.k, dimension(spec), spec.tail_tol)


def _toric_breaks(spec: HilbertSpaceSpec, V: float) -> np.ndarray:
    """Panel boundaries for 1-d toric integrals: box ends plus the bump
    support edges (the integrand is merely C^2 across them, so panels must
    not straddle them)."""
    breaks = [-V, V]
    if spec.weight.polytope.dim == 1:
        for b in spec.weight.bumps:
            for edge in (b.center[0] - b.radius, b.center[0] + b.radius):
                if -V < edge < V:
                    breaks.append(edge)
    return np.sort(np.asarray(breaks, dtype=float))


def _toric_rule(spec: HilbertSpaceSpec, breaks: np.ndarray, n_panels: int):
    """Tensor quadrature nodes (m, n) and log measure weights for one level."""
    poly = spec.weight.polytope
    nodes_1d, weights_1d = leggauss_segmented(breaks, n_panels)
    if poly.dim == 1:
        pts = nodes_1d[:, None]
        logw = np.log(weights_1d)
    else:
        X, Y = np.meshgrid(nodes_1d, nodes_1d, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
        logw = np.add.outer(np.log(weights_1d), np.log(weights_1d)).ravel()
    return pts, logw + _log_measure_det(poly, pts)


def _toric_log_gram(spec: HilbertSpaceSpec, V: float):
    """Diagonal log norms by panel doubling on [-V, V]^n."""
    alphas = np.asarray(spec.basis, dtype=float)
    weight, k = spec.weight, spec.k
    n = weight.polytope.dim
    breaks = _toric_breaks(spec, V)

    def eval_logs(nodes_1d, weights_1d):
        if n == 1:
            pts = nodes_1d[:, None]
            logw = np.log(weights_1d)
        else:
            X, Y = np.meshgrid(nodes_1d, nodes_1d, indexing="ij")
            pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
            logw = np.add.outer(np.log(weights_1d), np.log(weights_1d)).ravel()
        base = logw + _log_measure_det(weight.polytope, pts) - k * toric_weight_values(weight, pts)
        out = np.full(len(alphas), -np.inf)
        for i in range(0, len(alphas), _ALPHA_CHUNK):
            chunk = alphas[i : i + _ALPHA_CHUNK]
            for j in range(0, len(pts), _NODE_BLOCK):
                sl = slice(j, j + _NODE_BLOCK)
                part = logsumexp(chunk @ pts[sl].T + base[None, sl], axis=1)
                out[i : i + _ALPHA_CHUNK] = np.logaddexp(out[i : i + _ALPHA_CHUNK], part)
        return out

    start = max(16, int(V / 2))
    max_panels = 16384 if n == 1 else 512
    vals, n_panels, achieved = refine_until(
        eval_logs, breaks, rtol=spec.quad_rtol, start_panels=start, max_panels=max_panels
    )
    pts, logw_measure = _toric_rule(spec, breaks, n_panels)
    return vals, n_panels, achieved, pts, logw_measure, breaks


def chart_prescale_log(k: int) -> np.ndarray:
    """ln D_j with D_j = ||zeta^j||^{-1} under the unperturbed chart weight:
    ||zeta^j||^2 = Beta(j+1, k-j+1)."""
    j = np.arange(k + 1)
    return -0.5 * betaln(j + 1.0, k - j + 1.0)


def _chart_weighted_basis(spec: HilbertSpaceSpec, v: np.ndarray, theta: np.ndarray,
                          prescale_log: np.ndarray) -> np.ndarray:
    """Matrix U[node, j] = D_j zeta^j e^{-k phi / 2} at the (v, theta) nodes
    (flattened C-order: v outer, theta inner)."""
    k = spec.k
    r = np.exp(0.5 * v)
    X = r[:, None] * np.cos(theta)[None, :]
    Y = r[:, None] * np.sin(theta)[None, :]
    phi = chart_weight_values(spec.weight, np.stack([X, Y], axis=-1))
    j = np.arange(k + 1, dtype=float)
    # magnitudes combined in log scale: ln D_j + j v / 2 - k phi / 2
    logmag = (
        prescale_log[None, None, :]
        + 0.5 * v[:, None, None] * j[None, None, :]
        - 0.5 * k * phi[:, :, None]
    )
    phase = np.exp(1j * theta[None, :, None] * j[None, None, :])
    U = np.exp(logmag) * phase
    return U.reshape(-1, k + 1)


def _chart_t_breaks(spec: HilbertSpaceSpec) -> np.ndarray:
    """Radial panel boundaries in t = r^2/(1+r^2): unit interval ends plus
    the tangency radii of every bump support."""
    breaks = [0.0, 1.0]
    for b in spec.weight.bumps:
        c = float(np.hypot(*b.center))
        for r in (c - b.radius, c + b.radius):
            if r > 0.0:
                t = r * r / (1.0 + r * r)
                if 0.0 < t < 1.0:
                    breaks.append(t)
    return np.sort(np.asarray(breaks, dtype=float))


def _chart_gram(spec: HilbertSpaceSpec, n_theta: int):
    """Prescaled chart Gram by radial panel doubling in t = r^2/(1+r^2)."""
    prescale_log = chart_prescale_log(spec.k)
    th = theta_rule(n_theta)
    breaks = _chart_t_breaks(spec)

    def assemble(t_nodes, t_weights):
        v = np.log(t_nodes) - np.log1p(-t_nodes)
        U = _chart_weighted_basis(spec, v, th.nodes, prescale_log)
        w = np.outer(t_weights, th.weights / (2.0 * np.pi)).ravel()
        A = U * np.sqrt(w)[:, None]
        return A.conj().T @ A, A, v, w

    n_panels = max(8, spec.k // 4)
    prev, _, _, _ = assemble(*leggauss_segmented(breaks, n_panels))
    while True:
        n_panels *= 2
        if n_panels > 4096:
            raise QuadratureError("radial panel doubling exceeded 4096 panels")
        cur, A, v, w = assemble(*leggauss_segmented(breaks, n_panels))
        achieved = float(np.max(np.abs(cur - prev)) / max(np.max(np.abs(cur)), 1e-300))
        if achieved <= spec.quad_rtol:
            return cur, prescale_log, n_panels, achieved, A, v, w, breaks
        prev = cur


def build_model(spec: HilbertSpaceSpec, n_theta: int | None = None) -> BergmanModel:
    """Assemble the Gram data and orthonormalization for one space."""
    if spec.is_toric:
        V = default_v_halfwidth(spec)
        logs, n_panels, achieved, pts, logw, breaks = _toric_log_gram(spec, V)
        return BergmanModel(
            spec,
            log_norms=logs,
            quad_panels=n_panels,
            quad_achieved=achieved,
            v_halfwidth=V,
            _quad_nodes=pts,
            _quad_logw=logw,
            _quad_breaks=breaks,
        )
    if n_theta is None:
        n_theta = 4 * spec.k + 16
    gram, prescale_log, n_panels, achieved, A, v, w, breaks = _chart_gram(spec, n_theta)
    model = BergmanModel(
        spec,
        gram=gram,
        prescale_log=prescale_log,
        quad_panels=n_panels,
        quad_achieved=achieved,
        _quad_nodes=v,
        _quad_w=w,
        _quad_theta=theta_rule(n_theta).nodes,
        _quad_breaks=breaks,
    )
    _factorize(model)
    return model


def _factorize(model: BergmanModel, cond_limit: float = 1e12, drop_tol: float = 1e-13):
    G = model.gram
    evals = eigh(G, eigvals_only=True)
    emax = float(evals[-1])
    if not np.isfinite(emax) or emax <= 0.0:
        raise GramNotPDError("Gram not positive definite at working precision")
    emin = float(evals[0])
    model.cond = emax / emin if emin > 0 else np.inf
    if emin > 0 and model.cond < cond_limit:
        model.chol = cholesky(G, lower=True)
        model.n_discarded = 0
        return
    # eigenvalue fallback: drop directions below drop_tol * largest eigenvalue
    vals, vecs = eigh(G)
    keep = vals > drop_tol * emax
    if not np.any(keep):
        raise GramNotPDError("Gram not positive definite at working precision")
    model.eig_transform = (vecs[:, keep] / np.sqrt(vals[keep])[None, :]).conj().T
    model.n_discarded = int((~keep).sum())


def _chart_coeffs(model: BergmanModel, U: np.ndarray) -> np.ndarray:
    """Coefficients of the orthonormal basis at evaluation points: rows of U
    are weighted prescaled monomial values."""
    if model.chol is not None:
        return solve_triangular(model.chol, U.T, lower=True).T
    return U @ model.eig_transform.conj().T


# ---------------------------------------------------------------------------
# pointwise evaluation
# ---------------------------------------------------------------------------


def log_bergman_values(
    model: BergmanModel, points: np.ndarray, *, include_weight: bool = True
) -> np.ndarray:
    """ln B_k at toric v-points (log scale survives arbitrarily deep decay).

    With `include_weight=False` the k*phi subtraction is skipped, returning
    ln(B_k e^{k phi}) -- an exact log-sum-exp of affine functions of v, which
    keeps its convexity free of cancellation error.
    """
    spec = model.spec
    if not spec.is_toric:
        raise ValueError("log_bergman_values expects a toric model")
    alphas = np.asarray(spec.basis, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if spec.weight.polytope.dim == 1 and pts.shape[-1] != 1:
        pts = pts.reshape(-1, 1)
    out = np.full(len(pts), -np.inf)
    for i in range(0, len(alphas), _ALPHA_CHUNK):
        chunk = alphas[i : i + _ALPHA_CHUNK]
        logs = model.log_norms[i : i + _ALPHA_CHUNK]
        for j in range(0, len(pts), _NODE_BLOCK):
            sl = slice(j, j + _NODE_BLOCK)
            t = chunk @ pts[sl].T - logs[:, None]
            out[sl] = np.logaddexp(out[sl], logsumexp(t, axis=0))
    if not include_weight:
        return out
    return out - spec.k * toric_weight_values(spec.weight, pts)


def _chart_points_vtheta(points: np.ndarray):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r2 = (pts**2).sum(axis=1)
    v = np.log(np.maximum(r2, 1e-300))
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    return v, theta


def _chart_U_at(model: BergmanModel, xy: np.ndarray) -> np.ndarray:
    spec = model.spec
    pts = np.atleast_2d(np.asarray(xy, dtype=float))
    v, theta = _chart_points_vtheta(pts)
    k = spec.k
    j = np.arange(k + 1, dtype=float)
    phi = chart_weight_values(spec.weight, pts)
    logmag = model.prescale_log[None, :] + 0.5 * np.outer(v, j) - 0.5 * k * phi[:, None]
    return np.exp(logmag) * np.exp(1j * np.outer(theta, j))


def bergman_values(model: BergmanModel, points: np.ndarray) -> np.ndarray:
    """B_k at points: toric models take v-points, chart models take (x, y)."""
    if model.spec.is_toric:
        return np.exp(log_bergman_values(model, points))
    Y = _chart_coeffs(model, _chart_U_at(model, points))
    return (np.abs(Y) ** 2).sum(axis=1)


def bergman_function(model: BergmanModel, domain) -> GridField:
    """B_k sampled on a grid (BoxDomain for toric, ChartDomain for chart)."""
    if model.spec.is_toric:
        if not isinstance(domain, BoxDomain):
            raise ValueError("toric Bergman fields live on BoxDomain grids")
        pts = domain.meshgrid().reshape(-1, domain.dim)
        vals = np.exp(log_bergman_values(model, pts))
        return GridField(domain, vals.reshape(domain.shape))
    if not isinstance(domain, ChartDomain):
        raise ValueError("chart Bergman fields live on ChartDomain grids")
    xy = domain.meshgrid_xy().reshape(-1, 2)
    vals = bergman_values(model, xy)
    return GridField(domain, vals.reshape(domain.shape))


def log_bergman_function(model: BergmanModel, domain) -> GridField:
    """ln B_k on a grid; the toric path never leaves log scale."""
    if model.spec.is_toric:
        pts = domain.meshgrid().reshape(-1, domain.dim)
        vals = log_bergman_values(model, pts)
        return GridField(domain, vals.reshape(domain.shape))
    f = bergman_function(model, domain)
    return GridField(domain, np.log(np.maximum(f.values, 1e-300)))


def bergman_kernel_norm(model: BergmanModel, x, y) -> float:
    """Weighted kernel magnitude |K_k(x,y)| e^{-k(phi(x)+phi(y))/2}.

    Equals B_k(x) on the diagonal; its square integrates (against the
    reference measure in y) back to B_k(x).
    """
    spec = model.spec
    if spec.is_toric:
        alphas = np.asarray(spec.basis, dtype=float)
        vx = np.asarray(x, dtype=float).reshape(1, -1)
        vy = np.asarray(y, dtype=float).reshape(1, -1)
        mid = 0.5 * (vx + vy)
        logK = logsumexp(alphas @ mid.T - model.log_norms[:, None], axis=0)[0]
        kphi = 0.5 * spec.k * (
            toric_weight_values(spec.weight, vx)[0] + toric_weight_values(spec.weight, vy)[0]
        )
        return float(np.exp(logK - kphi))
    Yx = _chart_coeffs(model, _chart_U_at(model, np.asarray(x, float)[None, :]))[0]
    Yy = _chart_coeffs(model, _chart_U_at(model, np.asarray(y, float)[None, :]))[0]
    return float(np.abs(np.vdot(Yy, Yx)))


# ---------------------------------------------------------------------------
# integral identities
# ---------------------------------------------------------------------------


def bergman_mass(model: BergmanModel, refine: float = 1.5) -> float:
    """Integral of B_k against the reference measure, recomputed on a node
    set `refine` times denser than the converged Gram rule, so agreement
    with the dimension is a genuine quadrature statement."""
    spec = model.spec
    if spec.is_toric:
        n_panels = max(4, int(model.quad_panels * refine))
        pts, logw = _toric_rule(spec, model._quad_breaks, n_panels)
        logB = log_bergman_values(model, pts)
        return float(np.exp(logsumexp(logB + logw)))
    n_panels = max(4, int(model.quad_panels * refine))
    t_nodes, t_weights = leggauss_segmented(model._quad_breaks, n_panels)
    v = np.log(t_nodes) - np.log1p(-t_nodes)
    th = model._quad_theta
    U = _chart_weighted_basis(spec, v, th, model.prescale_log)
    Y = _chart_coeffs(model, U)
    B = (np.abs(Y) ** 2).sum(axis=1).reshape(len(v), len(th))
    w_t = t_weights[:, None] * (1.0 / len(th))
    return float((B * w_t).sum())


def reproducing_residual(model: BergmanModel, n_probe: int = 7) -> float:
    """max over probe points x of |integral |K(x,.)|^2 dmu - B(x)| / B(x).

    The kernel reproduces itself exactly in exact arithmetic; the residual
    measures quadrature consistency of the assembled model.
    """
    spec = model.spec
    if spec.is_toric:
        # angular integration collapses the torus integral to a diagonal sum;
        # recompute the norms on a denser rule for independence
        n_panels = max(4, int(model.quad_panels * 1.5))
        pts, logw_measure = _toric_rule(spec, model._quad_breaks, n_panels)
        base = logw_measure - spec.k * toric_weight_values(spec.weight, pts)
        alphas = np.asarray(spec.basis, dtype=float)
        fresh = np.full(len(alphas), -np.inf)
        for i in range(0, len(alphas), _ALPHA_CHUNK):
            chunk = alphas[i : i + _ALPHA_CHUNK]
            for j in range(0, len(pts), _NODE_BLOCK):
                sl = slice(j, j + _NODE_BLOCK)
                part = logsumexp(chunk @ pts[sl].T + base[None, sl], axis=1)
                fresh[i : i + _ALPHA_CHUNK] = np.logaddexp(fresh[i : i + _ALPHA_CHUNK], part)
        rel = np.abs(np.expm1(fresh - model.log_norms))
        return float(rel.max())
    # chart: integral |K(x,.)|^2 dmu = Y(x)^H M Y(x) with M the quadrature
    # Gram of the orthonormal basis; M = I up to quadrature error
    A = model._quad_nodes  # v nodes
    Yq = _chart_coeffs(model, _chart_weighted_basis(spec, A, model._quad_theta, model.prescale_log))
    M = (Yq * model._quad_w[:, None]).conj().T @ Yq
    v_probe = np.linspace(-2.0, 2.0, n_probe)
    xy = np.stack([np.exp(0.5 * v_probe), np.zeros(n_probe)], axis=-1)
    Y = _chart_coeffs(model, _chart_U_at(model, xy))
    B = (np.abs(Y) ** 2).sum(axis=1)
    repro = np.einsum("pi,ij,pj->p", Y.conj(), M, Y).real
    return float(np.max(np.abs(repro - B) / B))


def gram_matrix(spec: HilbertSpaceSpec) -> np.ndarray:
    """Raw Gram matrix of the monomial basis (dense; diagonal for toric
    weights by torus invariance)."""
    if spec.is_toric:
        model = build_model(spec)
        return np.diag(np.exp(model.log_norms))
    model = build_model(spec)
    D = np.exp(model.prescale_log)
    return model.gram / np.outer(D, D)


@dataclass(eq=False)
class Factorization:
    """Result of orthonormalizing a Gram matrix.

    `transform` maps raw basis values to orthonormal-basis values:
    psi(x) = transform @ f(x).
    """

    mode: str
    transform: np.ndarray
    cond: float
    n_discarded: int


def orthonormalize(gram: np.ndarray, prescale: np.ndarray | None = None,
                   cond_limit: float = 1e12, drop_tol: float = 1e-13) -> Factorization:
    """Factor a Hermitian Gram after symmetric prescaling.

    Default prescale is 1/sqrt(diag); pass ones to factor the raw matrix.
    Falls back from Cholesky to an eigenvalue factorization (discarding
    directions below drop_tol * largest eigenvalue) when the prescaled
    condition number exceeds cond_limit.
    """
    G = np.asarray(gram)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError("gram must be a square matrix")
    d = np.real(np.diag(G))
    if np.any(d <= 0):
        raise GramNotPDError("Gram not positive definite at working precision")
    D = 1.0 / np.sqrt(d) if prescale is None else np.asarray(prescale, dtype=float)
    Gt = G * np.outer(D, D)
    evals = eigh(Gt, eigvals_only=True)
    emax = float(evals[-1])
    if not np.isfinite(emax) or emax <= 0:
        raise GramNotPDError("Gram not positive definite at working precision")
    cond = emax / float(evals[0]) if evals[0] > 0 else np.inf
    if evals[0] > 0 and cond < cond_limit:
        L = cholesky(Gt, lower=True)
        T = solve_triangular(L, np.diag(D), lower=True)
        return Factorization("cholesky", T, cond, 0)
    vals, vecs = eigh(Gt)
    keep = vals > drop_tol * emax
    if not np.any(keep):
        raise GramNotPDError("Gram not positive definite at working precision")
    T = (vecs[:, keep] / np.sqrt(vals[keep])[None, :]).conj().T @ np.diag(D)
    return Factorization("eigh", T, cond, int((~keep).sum()))


# ---------------------------------------------------------------------------
# moment forms for off-diagonal concentration
# ---------------------------------------------------------------------------


def kernel_moment_trace(model: BergmanModel, f, g) -> float:
    """k^{-n} integral integral f(x) g(y) |K(x,y)|^2_{k phi} dmu(x) dmu(y).

    Computed as k^{-n} Tr(M_f M_g) with M_h the matrix of the multiplication
    form h against the orthonormal basis; no four-dimensional quadrature is
    ever assembled.  `f`, `g` take v-points (toric) or (x, y) chart points.
    """
    spec = model.spec
    if spec.is_toric:
        pts = model._quad_nodes
        logw = model._quad_logw - spec.k * toric_weight_values(spec.weight, pts)
        alphas = np.asarray(spec.basis, dtype=float)
        fv = np.asarray(f(pts), dtype=float)
        gv = np.asarray(g(pts), dtype=float)
        mf = np.zeros(len(alphas))
        mg = np.zeros(len(alphas))
        for i in range(0, len(alphas), _ALPHA_CHUNK):
            chunk = alphas[i : i + _ALPHA_CHUNK]
            logs = model.log_norms[i : i + _ALPHA_CHUNK, None]
            for j in range(0, len(pts), _NODE_BLOCK):
                sl = slice(j, j + _NODE_BLOCK)
                t = np.exp(chunk @ pts[sl].T + logw[None, sl] - logs)
                mf[i : i + _ALPHA_CHUNK] += t @ fv[sl]
                mg[i : i + _ALPHA_CHUNK] += t @ gv[sl]
        n = spec.weight.polytope.dim
        return float((mf * mg).sum() / spec.k**n)
    v = model._quad_nodes
    th = model._quad_theta
    Y = _chart_coeffs(model, _chart_weighted_basis(spec, v, th, model.prescale_log))
    r = np.exp(0.5 * v)
    X = r[:, None] * np.cos(th)[None, :]
    Yc = r[:, None] * np.sin(th)[None, :]
    xy = np.stack([X, Yc], axis=-1).reshape(-1, 2)
    fv = np.asarray(f(xy), dtype=float)
    gv = np.asarray(g(xy), dtype=float)
    w = model._quad_w
    Mf = (Y * (w * fv)[:, None]).conj().T @ Y
    Mg = (Y * (w * gv)[:, None]).conj().T @ Y
    return float(np.trace(Mf @ Mg).real / model.spec.k)
