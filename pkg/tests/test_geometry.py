import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plurikit.geometry import (
    BoxDomain,
    Bump,
    ChartDomain,
    DegeneratePolytopeError,
    DomainMismatchError,
    FSChart,
    GridField,
    LatticePolytope,
    PerturbedChart,
    PerturbedToric,
    ToricPotential,
    chart_weight_values,
    eval_weight,
    hessian_field,
    interior_window,
    lattice_points,
    lattice_volume,
    toric_reference_hessian,
    toric_weight_values,
)

# closed forms for the unit-interval toric weight phi(v) = ln(1 + e^v)
PHI01_AT_0 = np.log(2.0)
PHI01_HESS_AT_0 = 0.25  # t(1-t) at t = 1/2

# simplex reference Hessian at v = 0: covariance of {(0,0),(1,0),(0,1)}
# under uniform softmax weights -> var 2/9, cov -1/9, det 1/27
SIMPLEX_HESS_DET_AT_0 = 1.0 / 27.0


def test_polytope_recomputes_hull_and_deduplicates():
    poly = LatticePolytope(((0, 0), (2, 0), (0, 2), (1, 1), (0, 0), (1, 0)))
    # (1,1) lies on the hull edge, (1,0) inside an edge: both dropped
    assert set(poly.hull_vertices) == {(0, 0), (2, 0), (0, 2)}
    assert poly.dim == 2


def test_polytope_rejects_degenerate_inputs():
    with pytest.raises(DegeneratePolytopeError):
        LatticePolytope(((1,), (1,)))  # a point
    with pytest.raises(DegeneratePolytopeError):
        LatticePolytope(((0, 0), (1, 1), (2, 2)))  # collinear
    with pytest.raises(DegeneratePolytopeError):
        LatticePolytope(((0.5,), (1,)))  # non-integer
    with pytest.raises(DegeneratePolytopeError):
        LatticePolytope(((0,), (1, 2)))  # mixed dimension
    with pytest.raises(DegeneratePolytopeError):
        LatticePolytope(((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)))  # 3-d


def test_polytope_geometry_helpers(simplex2):
    lo, hi = simplex2.bounding_box()
    assert lo.tolist() == [0, 0] and hi.tolist() == [1, 1]
    assert simplex2.contains((0.25, 0.25))
    assert not simplex2.contains((0.6, 0.6))
    assert simplex2.contains((0.6, 0.6), tol=0.5)
    d = simplex2.boundary_distance(np.array([[0.25, 0.25], [-1.0, 0.0]]))
    assert d[0] > 0 > d[1]
    assert simplex2.diameter() == pytest.approx(np.sqrt(2.0))
    assert simplex2.scaled(3).hull_vertices == ((0, 0), (3, 0), (0, 3))
    with pytest.raises(ValueError):
        simplex2.scaled(0)


def test_lattice_point_counts(interval01, simplex2):
    for k in (0, 1, 2, 5):
        assert len(lattice_points(interval01, k)) == k + 1
        assert len(lattice_points(simplex2, k)) == (k + 1) * (k + 2) // 2
    square = LatticePolytope(((0, 0), (1, 0), (0, 1), (1, 1)))
    assert len(lattice_points(square, 3)) == 16
    pts = lattice_points(simplex2, 2)
    assert pts.tolist() == sorted(pts.tolist())  # lexicographic
    with pytest.raises(ValueError):
        lattice_points(interval01, -1)


def test_lattice_volume(interval_sym, simplex2):
    assert lattice_volume(interval_sym) == 2.0
    assert lattice_volume(simplex2) == 0.5
    square = LatticePolytope(((0, 0), (1, 0), (0, 1), (1, 1)))
    assert lattice_volume(square) == 1.0


@given(m=st.integers(min_value=1, max_value=6))
@settings(max_examples=20, deadline=None)
def test_scaled_volume_homogeneity(m):
    poly = LatticePolytope(((0, 0), (2, 1), (1, 3)))
    assert lattice_volume(poly.scaled(m)) == pytest.approx(m**2 * lattice_volume(poly))


def test_bump_profile_and_support():
    b = Bump(center=(0.0,), radius=2.0, amplitude=0.5, power=3)
    assert b.value(np.array([[0.0]])) == pytest.approx(0.5)
    assert b.value(np.array([[2.0]])) == 0.0
    assert b.value(np.array([[3.0]])) == 0.0
    r = np.array([0.0, 1.0, 1.999, 2.5])
    p = b.profile(r)
    assert np.all(np.diff(p) <= 0) and p[-1] == 0.0
    with pytest.raises(ValueError):
        Bump(center=(0.0,), radius=-1.0, amplitude=0.1)
    with pytest.raises(ValueError):
        Bump(center=(0.0,), radius=1.0, amplitude=0.1, power=2)


def test_toric_weight_closed_form(interval01, interval_sym):
    w = ToricPotential(interval01)
    v = np.linspace(-3.0, 3.0, 11)
    np.testing.assert_allclose(toric_weight_values(w, v), np.log1p(np.exp(v)), rtol=1e-14)
    # symmetric interval includes the interior lattice point 0
    w2 = ToricPotential(interval_sym)
    assert toric_weight_values(w2, np.array([0.0]))[0] == pytest.approx(np.log(3.0))


def test_perturbed_toric_adds_bump(interval_sym):
    b = Bump(center=(0.0,), radius=1.0, amplitude=0.3, power=3)
    w = PerturbedToric(interval_sym, (b,))
    base = ToricPotential(interval_sym)
    v = np.array([0.0, 0.5, 2.0])
    np.testing.assert_allclose(
        toric_weight_values(w, v),
        toric_weight_values(base, v) + b.value(v[:, None]),
        rtol=1e-14,
    )
    with pytest.raises(ValueError):
        PerturbedToric(interval_sym, (Bump(center=(0.0, 0.0), radius=1.0, amplitude=0.1),))


def test_toric_reference_hessian(interval01, simplex2):
    H = toric_reference_hessian(interval01, np.array([[0.0]]))
    assert H[0, 0, 0] == pytest.approx(PHI01_HESS_AT_0)
    H2 = toric_reference_hessian(simplex2, np.array([[0.0, 0.0]]))
    det = H2[0, 0, 0] * H2[0, 1, 1] - H2[0, 0, 1] ** 2
    assert det == pytest.approx(SIMPLEX_HESS_DET_AT_0)
    # positive definite far out as well
    Hf = toric_reference_hessian(simplex2, np.array([[6.0, -5.0]]))
    assert np.linalg.eigvalsh(Hf[0]).min() > 0


def test_chart_weight_values():
    xy = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    np.testing.assert_allclose(
        chart_weight_values(FSChart(), xy), np.log1p([0.0, 1.0, 4.0]), rtol=1e-15
    )
    b = Bump(center=(1.0, 0.0), radius=0.5, amplitude=0.2, power=3)
    w = PerturbedChart((b,))
    assert w.growth_bound() == pytest.approx(0.2)
    assert chart_weight_values(w, xy)[1] == pytest.approx(np.log(2.0) + 0.2)
    with pytest.raises(DomainMismatchError):
        chart_weight_values(ToricPotential(LatticePolytope(((0,), (1,)))), xy)
    with pytest.raises(DomainMismatchError):
        toric_weight_values(FSChart(), np.array([0.0]))


def test_box_domain_validation():
    with pytest.raises(ValueError):
        BoxDomain((0.0,), (0.0,), (5,))
    with pytest.raises(ValueError):
        BoxDomain((0.0,), (1.0,), (1,))
    with pytest.raises(ValueError):
        BoxDomain((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (3, 3, 3))
    dom = BoxDomain((-1.0, 0.0), (1.0, 2.0), (5, 9))
    assert dom.spacing == (0.5, 0.25)
    assert dom.meshgrid().shape == (5, 9, 2)
    assert dom.axes()[1][0] == 0.0


def test_chart_domain_validation():
    with pytest.raises(ValueError):
        ChartDomain(-1.0, 1.0, 9, 7)  # odd theta count
    with pytest.raises(ValueError):
        ChartDomain(1.0, -1.0, 9, 8)
    dom = ChartDomain(-2.0, 2.0, 5, 8)
    assert dom.shape == (5, 8)
    xy = dom.meshgrid_xy()
    r = np.hypot(xy[..., 0], xy[..., 1])
    expected = np.broadcast_to(np.exp(0.5 * dom.v_axis())[:, None], dom.shape)
    np.testing.assert_allclose(r, expected, rtol=1e-14)


def test_grid_field_immutability_and_algebra():
    dom = BoxDomain((0.0,), (1.0,), (3,))
    f = GridField(dom, np.array([1.0, 2.0, 3.0]))
    assert not f.values.flags.writeable
    g = f + f * 2.0 - 1.0
    np.testing.assert_allclose(g.values, [2.0, 5.0, 8.0])
    assert (-f).min() == -3.0
    with pytest.raises(DomainMismatchError):
        GridField(dom, np.zeros(4))
    with pytest.raises(ValueError):
        GridField(dom, np.array([1.0, np.inf, 0.0]))
    other = GridField(BoxDomain((0.0,), (2.0,), (3,)), np.zeros(3))
    with pytest.raises(DomainMismatchError):
        f + other


def test_eval_weight_dispatch(interval01, fs_box):
    field = eval_weight(ToricPotential(interval01), fs_box)
    assert field.values.shape == fs_box.shape
    with pytest.raises(DomainMismatchError):
        eval_weight(FSChart(), fs_box)
    with pytest.raises(DomainMismatchError):
        eval_weight(ToricPotential(interval01), ChartDomain(-1.0, 1.0, 5, 8))


def test_hessian_field_quadratic_1d():
    dom = BoxDomain((-1.0,), (1.0,), (21,))
    v = dom.axes()[0]
    hf = hessian_field(GridField(dom, 1.5 * v**2))
    np.testing.assert_allclose(hf.det[hf.trusted], 3.0, rtol=1e-12)
    assert not hf.trusted[0] and not hf.trusted[-1]


def test_hessian_field_quadratic_2d():
    dom = BoxDomain((-1.0, -1.0), (1.0, 1.0), (11, 11))
    pts = dom.meshgrid()
    x, y = pts[..., 0], pts[..., 1]
    hf = hessian_field(GridField(dom, x**2 + 3.0 * y**2 + x * y))
    # uxx=2, uyy=6, uxy=1: det=11, eig_min=4-sqrt(5)
    np.testing.assert_allclose(hf.det[hf.trusted], 11.0, rtol=1e-10)
    np.testing.assert_allclose(hf.eig_min[hf.trusted], 4.0 - np.sqrt(5.0), rtol=1e-10)


def test_hessian_field_chart_wraps_theta():
    dom = ChartDomain(-1.0, 1.0, 9, 8)
    v = dom.v_axis()
    hf = hessian_field(GridField(dom, np.repeat((v**2)[:, None], 8, axis=1)))
    np.testing.assert_allclose(hf.det[hf.trusted], 8.0, rtol=1e-12)  # 4 * u_vv
    assert hf.trusted[1:-1].all() and not hf.trusted[0].any()


def test_interior_window():
    dom = BoxDomain((0.0,), (1.0,), (10,))
    (sl,) = interior_window(dom, 0.6)
    assert (sl.start, sl.stop) == (2, 8)
    assert interior_window(dom, 1.0) == (slice(0, 10),)
    cd = ChartDomain(-1.0, 1.0, 10, 8)
    slv, slt = interior_window(cd, 0.6)
    assert (slv.start, slv.stop) == (2, 8) and slt == slice(None)
    with pytest.raises(ValueError):
        interior_window(dom, 0.0)


@given(
    st.lists(st.integers(min_value=-4, max_value=4), min_size=2, max_size=6, unique=True)
)
@settings(max_examples=30, deadline=None)
def test_interval_polytope_contains_its_lattice_points(coords):
    poly = LatticePolytope(tuple((c,) for c in coords))
    pts = lattice_points(poly, 1)
    assert all(poly.contains(p) for p in pts)
    assert len(pts) == max(coords) - min(coords) + 1
