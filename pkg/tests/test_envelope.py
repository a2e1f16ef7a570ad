import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plurikit.envelope import (
    EnvelopeBoxError,
    SorConvergenceError,
    chart_equilibrium,
    contact_set,
    convex_envelope_1d,
    default_contact_eps,
    dual_axes_for,
    legendre_conjugate,
    radial_boundary_envelope,
    regularity_probe,
    sor_envelope,
    toric_equilibrium,
)
from plurikit.geometry import (
    BoxDomain,
    Bump,
    ChartDomain,
    FSChart,
    GridField,
    LatticePolytope,
    PerturbedChart,
    ToricPotential,
    eval_weight,
)

# conjugate of the unit-interval toric weight at p = 1/2:
# sup_v (v/2 - ln(1+e^v)) attained at v = 0
CONJ_PHI01_AT_HALF = -np.log(2.0)


def test_convex_envelope_identity_on_convex_samples():
    v = np.linspace(-2.0, 2.0, 41)
    u = np.cosh(v)
    np.testing.assert_allclose(convex_envelope_1d(v, u), u, rtol=1e-14)


def test_convex_envelope_two_points_is_chord():
    np.testing.assert_allclose(
        convex_envelope_1d(np.array([0.0, 2.0]), np.array([1.0, 3.0])), [1.0, 3.0]
    )


def test_convex_envelope_bridges_double_parabola():
    # hull of min((v-1)^2, (v+1)^2) is zero on [-1, 1], the function outside
    v = np.linspace(-3.0, 3.0, 121)
    u = np.minimum((v - 1.0) ** 2, (v + 1.0) ** 2)
    env = convex_envelope_1d(v, u)
    inside = np.abs(v) <= 1.0
    np.testing.assert_allclose(env[inside], 0.0, atol=1e-14)
    np.testing.assert_allclose(env[~inside], u[~inside], rtol=1e-12)


def test_convex_envelope_rejects_bad_input():
    with pytest.raises(ValueError):
        convex_envelope_1d(np.array([0.0, 0.0, 1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        convex_envelope_1d(np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        convex_envelope_1d(np.zeros((2, 2)), np.zeros((2, 2)))


@given(seed=st.integers(min_value=0, max_value=10_000))
@settings(max_examples=40, deadline=None)
def test_convex_envelope_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 40))
    v = np.sort(rng.uniform(-5.0, 5.0, size=n))
    v = v[np.concatenate(([True], np.diff(v) > 1e-9))]
    if v.size < 3:
        return
    u = rng.normal(size=v.size)
    env = convex_envelope_1d(v, u)
    assert np.all(env <= u + 1e-12)  # minorant
    slopes = np.diff(env) / np.diff(v)
    assert np.all(np.diff(slopes) >= -1e-9)  # convex
    np.testing.assert_allclose(convex_envelope_1d(v, env), env, atol=1e-12)  # idempotent
    perm = rng.permutation(v.size)
    np.testing.assert_allclose(convex_envelope_1d(v[perm], u[perm]), env[perm], atol=1e-12)


def test_legendre_conjugate_quadratic():
    dom = BoxDomain((-4.0,), (4.0,), (801,))
    u = GridField(dom, 0.5 * dom.axes()[0] ** 2)
    conj = legendre_conjugate(u, np.array([1.0]))
    h = dom.spacing[0]
    assert conj.values[0] == pytest.approx(0.5, abs=h)
    # the argmax index really attains the reported value
    v = dom.axes()[0]
    i = conj.argmax[0]
    assert conj.values[0] == pytest.approx(1.0 * v[i] - u.values[i], rel=1e-14)


def test_legendre_conjugate_affine_exact():
    dom = BoxDomain((-2.0,), (2.0,), (41,))
    v = dom.axes()[0]
    u = GridField(dom, 0.5 * v + 0.3)
    conj = legendre_conjugate(u, np.array([0.5]))
    assert conj.values[0] == pytest.approx(-0.3, rel=1e-14)


def test_legendre_conjugate_toric_weight(fs_weight):
    dom = BoxDomain((-20.0,), (20.0,), (4001,))
    u = eval_weight(fs_weight, dom)
    conj = legendre_conjugate(u, np.array([0.5]))
    assert conj.values[0] == pytest.approx(CONJ_PHI01_AT_HALF, abs=1e-4)


def test_legendre_conjugate_2d_matches_bruteforce():
    dom = BoxDomain((-2.0, -2.0), (2.0, 2.0), (17, 19))
    pts = dom.meshgrid()
    u = GridField(dom, np.cosh(pts[..., 0]) + 0.5 * pts[..., 1] ** 2 + 0.2 * pts[..., 0])
    p1 = np.linspace(-1.0, 1.0, 7)
    p2 = np.linspace(-0.5, 0.5, 5)
    conj = legendre_conjugate(u, (p1, p2))
    flat = pts.reshape(-1, 2)
    uh = u.values.ravel()
    for i, a in enumerate(p1):
        for j, b in enumerate(p2):
            brute = np.max(flat @ np.array([a, b]) - uh)
            assert conj.values[i, j] == pytest.approx(brute, rel=1e-13)
    with pytest.raises(ValueError):
        legendre_conjugate(GridField(ChartDomain(-1, 1, 5, 8), np.zeros((5, 8))), p1)


def test_toric_equilibrium_convex_weight_is_identity(fs_weight, interval01):
    dom = BoxDomain((-9.0,), (9.0,), (361,))
    phi = eval_weight(fs_weight, dom)
    env = toric_equilibrium(phi, interval01)
    h = dom.spacing[0]
    assert np.abs(env.phi_e.values - phi.values).max() <= 2.0 * h
    assert env.contact_mask.values.all()
    assert env.residual <= 1e-12
    assert env.method == "biconjugate"


def test_toric_equilibrium_bridge_matches_hull_oracle(dw_env, dw_box):
    phi, env = dw_env
    hull = convex_envelope_1d(dw_box.axes()[0], phi.values)
    np.testing.assert_allclose(env.phi_e.values, hull, atol=1e-4)
    # detached exactly where the hull sits below the weight
    oracle_detached = phi.values - hull > env.eps_contact
    np.testing.assert_array_equal(~env.contact_mask.values, oracle_detached)
    assert oracle_detached.any() and not oracle_detached.all()


def test_toric_equilibrium_minorant_convex_slopes_in_range(dw_env, dw_box, interval_sym):
    phi, env = dw_env
    assert (env.phi_e.values - phi.values).max() <= 1e-12
    s = np.diff(env.phi_e.values) / dw_box.spacing[0]
    assert np.all(np.diff(s) >= -1e-9)
    lo, hi = interval_sym.bounding_box()
    assert s.min() >= lo[0] - 1e-9 and s.max() <= hi[0] + 1e-9


def test_toric_equilibrium_narrow_box_raises(fs_weight, interval01):
    dom = BoxDomain((-1.0,), (1.0,), (41,))
    phi = eval_weight(fs_weight, dom)
    with pytest.raises(EnvelopeBoxError):
        toric_equilibrium(phi, interval01)


def test_toric_equilibrium_dimension_mismatch(simplex2):
    dom = BoxDomain((-8.0,), (8.0,), (41,))
    with pytest.raises(ValueError):
        toric_equilibrium(GridField(dom, np.zeros(41)), simplex2)


def test_dual_axes_resolution(interval_sym):
    dom = BoxDomain((-8.0,), (8.0,), (101,))
    (ax,) = dual_axes_for(interval_sym, dom, dual_factor=4)
    assert ax.size == 2 * 4 * 100 + 1
    assert ax[0] == -1.0 and ax[-1] == 1.0


def test_default_contact_eps_clips_curvature():
    dom = BoxDomain((-1.0,), (1.0,), (201,))
    v = dom.axes()[0]
    h2 = dom.spacing[0] ** 2
    flat = GridField(dom, 0.01 * v**2)  # curvature 0.02, clipped up to 1/4
    assert default_contact_eps(flat, 0.0) == pytest.approx(10.0 * h2 * 0.25, rel=1e-6)
    steep = GridField(dom, 4.0 * v**2)  # curvature 8, clipped down to 1
    assert default_contact_eps(steep, 0.0) == pytest.approx(10.0 * h2, rel=1e-6)
    assert default_contact_eps(flat, 1.0) == pytest.approx(10.0, rel=1e-9)


def test_contact_set_thresholds(dw_env):
    phi, env = dw_env
    every = contact_set(phi, env.phi_e, eps=np.inf)
    assert every.values.all()
    same = contact_set(phi, env.phi_e, eps=env.eps_contact)
    np.testing.assert_array_equal(same.values, env.contact_mask.values)


def test_sor_envelope_inactive_obstacle():
    # the FS chart weight is subharmonic, so with ring data = phi the
    # envelope is phi itself and the contact set is everything
    dom = ChartDomain(-4.0, 4.0, 49, 24)
    phi = eval_weight(FSChart(), dom)
    env = sor_envelope(phi, phi.values[0], phi.values[-1])
    assert np.abs(env.phi_e.values - phi.values).max() <= 1e-6
    assert env.contact_mask.values.all()
    assert env.method == "sor" and env.iterations >= 1


def test_sor_envelope_comparison_principle():
    dom = ChartDomain(-4.0, 4.0, 49, 24)
    phi = eval_weight(FSChart(), dom)
    base = sor_envelope(phi, phi.values[0], phi.values[-1])
    c = 0.25
    lowered = sor_envelope(phi, phi.values[0] - c, phi.values[-1] - c)
    drop = base.phi_e.values - lowered.phi_e.values
    assert drop.min() >= -1e-6 and drop.max() <= c + 1e-6


def test_sor_envelope_validation():
    dom = ChartDomain(-4.0, 4.0, 25, 16)
    phi = eval_weight(FSChart(), dom)
    with pytest.raises(ValueError):
        sor_envelope(phi, phi.values[0] + 1.0, phi.values[-1])
    with pytest.raises(ValueError):
        sor_envelope(phi, phi.values[0], phi.values[-1], omega=2.5)
    box_field = GridField(BoxDomain((0.0,), (1.0,), (5,)), np.zeros(5))
    with pytest.raises(ValueError):
        sor_envelope(box_field, np.zeros(1), np.zeros(1))
    with pytest.raises(SorConvergenceError):
        sor_envelope(phi, phi.values[0] - 1.0, phi.values[-1] - 1.0, max_sweeps=2)


def test_chart_equilibrium_detaches_on_invariant_bump():
    # centered bump strong enough to break subharmonicity: the envelope
    # drops below phi on a ring and is harmonic there
    w = PerturbedChart((Bump(center=(0.0, 0.0), radius=1.5, amplitude=1.2, power=3),))
    dom = ChartDomain(-6.0, 6.0, 97, 48)
    env = chart_equilibrium(w, dom)
    phi = eval_weight(w, dom)
    gap = phi.values - env.phi_e.values
    assert gap.max() > 0.1  # genuinely detached
    assert not env.contact_mask.values.all()
    assert env.diagnostics["pde_residual_detached"] <= 1e-4
    assert env.diagnostics["boundary_gap"] <= 1e-12  # invariant weight: routes agree
    with pytest.raises(ValueError):
        chart_equilibrium(ToricPotential(LatticePolytope(((0,), (1,)))), dom)


def test_radial_boundary_envelope_invariant_exact():
    w = PerturbedChart((Bump(center=(0.0, 0.0), radius=1.5, amplitude=1.2, power=3),))
    dom = ChartDomain(-6.0, 6.0, 49, 24)
    lo, hi, gap = radial_boundary_envelope(w, dom)
    assert gap <= 1e-12
    assert lo.shape == (24,) and np.allclose(lo, lo[0])


def test_regularity_probe_smooth_passes(fs_weight, interval01):
    pairs = []
    for s in (81, 161, 321):
        dom = BoxDomain((-9.0,), (9.0,), (s,))
        phi = eval_weight(fs_weight, dom)
        env = toric_equilibrium(phi, interval01)
        pairs.append((phi, env.phi_e))
    rep = regularity_probe(pairs)
    assert rep.passed and max(rep.ratios) <= 1.2
    assert rep.env_second_diff[-1] <= rep.obstacle_second_diff[-1] * 1.35


def test_regularity_probe_kink_fails():
    # |v| + 0.02 v^2 has a gradient kink: second differences double per level
    pairs = []
    for s in (201, 401, 801):
        dom = BoxDomain((-4.0,), (4.0,), (s,))
        v = dom.axes()[0]
        u = GridField(dom, np.abs(v) + 0.02 * v**2)
        pairs.append((u, u))
    rep = regularity_probe(pairs)
    assert not rep.passed
    assert min(rep.ratios) > 1.5
    assert "kink" in rep.notes


def test_regularity_probe_validates_sequence(fs_weight):
    dom = BoxDomain((-9.0,), (9.0,), (81,))
    phi = eval_weight(fs_weight, dom)
    with pytest.raises(ValueError):
        regularity_probe([(phi, phi)])
    dom2 = BoxDomain((-9.0,), (9.0,), (101,))  # not a halving
    phi2 = eval_weight(fs_weight, dom2)
    with pytest.raises(ValueError):
        regularity_probe([(phi, phi), (phi2, phi2)])
    with pytest.raises(ValueError):
        regularity_probe([(phi, phi2), (phi, phi)])  # pair grids differ
