import numpy as np
import pytest

from plurikit.asymptotics import (
    DecayProfile,
    ExpansionWindowError,
    bergman_metric_field,
    bergman_volume_distance,
    convergence_table,
    decay_bounds,
    decay_profile,
    expansion_window,
    metric_distance,
    offdiag_concentration,
    scaled_bergman_field,
    tchebishev_estimate,
    tzc_fit,
)
from plurikit.envelope import toric_equilibrium
from plurikit.geometry import BoxDomain, GridField, eval_weight
from plurikit.mongeampere import interior_contact_mask
from plurikit.quadrature import toric_measure_density

# dyadic pair extrapolation of (k+1)^(1/k) at k = 8 -> 16
FS_EXTRAPOLATED = (289.0 / 81.0) ** (1.0 / 16.0)


@pytest.fixture(scope="module")
def fs_env(fs_weight, fs_box, interval01):
    phi = eval_weight(fs_weight, fs_box)
    return phi, toric_equilibrium(phi, interval01)


def test_scaled_bergman_field_is_flat(fs_models, fs_box):
    sb = scaled_bergman_field(fs_models[8], fs_box)
    np.testing.assert_allclose(sb.values, 9.0 / 8.0, rtol=1e-8)


def test_convergence_table_exact_rates(fs_models, fs_box, interval01):
    target = GridField(fs_box, np.ones(fs_box.shape))
    mu = toric_measure_density(interval01, fs_box)
    rows = convergence_table(list(fs_models.values())[::-1], target, mu)
    assert [r.k for r in rows] == [4, 8, 16]  # sorted regardless of input order
    for row in rows:
        # k^{-1} B_k = (k+1)/k against the unit target: both columns exact
        assert row.l1_error == pytest.approx(1.0 / row.k, rel=1e-6)
        assert row.sup_ratio == pytest.approx((row.k + 1.0) / row.k, rel=1e-6)
    l1 = [r.l1_error for r in rows]
    assert l1[0] > l1[1] > l1[2]


def test_convergence_table_ratio_floor(fs_models):
    dom = BoxDomain((-1.0,), (1.0,), (3,))
    target = GridField(dom, np.array([1e-6, 0.5, 1.0]))
    rows = convergence_table([fs_models[4]], target, np.ones(3), ratio_floor=0.05)
    # the near-zero node is excluded, so the sup is taken at target 0.5
    assert rows[0].sup_ratio == pytest.approx(1.25 / 0.5, rel=1e-6)
    with pytest.raises(ValueError):
        convergence_table([fs_models[4]], GridField(dom, np.zeros(3)), np.ones(3))


def test_decay_profile_double_well(dw_model, dw_env):
    phi, env = dw_env
    prof = decay_profile(dw_model, env)
    assert prof.k == 64 and prof.n == 1 and prof.n_excluded == 0
    np.testing.assert_array_equal(prof.gap.values, phi.values - env.phi_e.values)
    np.testing.assert_allclose(
        prof.bracket.values, prof.profile.values - prof.gap.values, atol=1e-12
    )
    # two-sided kernel bounds: |bracket| <= (n ln k + ln C)/k on the window
    inner = slice(160, 641)
    assert np.abs(prof.bracket.values[inner]).max() <= 0.2


def test_decay_bounds_fs_exact(fs_models, fs_env):
    _, env = fs_env
    profiles = [decay_profile(m, env) for m in fs_models.values()]
    bounds = decay_bounds(profiles)
    assert bounds.ks == (4, 8, 16)
    for k, need in zip(bounds.ks, bounds.needs):
        assert need == pytest.approx(np.log(1.0 + 1.0 / k), abs=5e-3)
    assert bounds.log_c == pytest.approx(np.log(1.25), abs=5e-3)
    assert bounds.saturating  # needs are decreasing, increments all zero


def _const_profile(k, c, dom):
    vals = np.full(dom.shape, c)
    f = GridField(dom, vals)
    return DecayProfile(k=k, n=1, profile=f, gap=f, bracket=f, n_excluded=0)


def test_decay_bounds_synthetic_arithmetic():
    dom = BoxDomain((0.0,), (1.0,), (11,))
    # constant positive bracket: needs = k c - ln k grows linearly, caught
    linear = [_const_profile(k, 0.5, dom) for k in (4, 8, 16)]
    b = decay_bounds(linear)
    np.testing.assert_allclose(
        b.needs, [2.0 - np.log(4.0), 4.0 - np.log(8.0), 8.0 - np.log(16.0)], rtol=1e-12
    )
    assert not b.saturating
    # negative brackets -d_k / k: needs = d_k, increments halving
    sat = [
        _const_profile(k, -d / k, dom)
        for k, d in zip((4, 8, 16), (0.5, 0.75, 0.875))
    ]
    b2 = decay_bounds(sat)
    np.testing.assert_allclose(b2.needs, [0.5, 0.75, 0.875], rtol=1e-12)
    assert b2.saturating and b2.log_c == pytest.approx(0.875)
    with pytest.raises(ValueError):
        decay_bounds([])
    with pytest.raises(ValueError):
        decay_bounds(linear, window=np.zeros(dom.shape, dtype=bool))


def test_bergman_metric_convex_and_offset(fs_models, fs_box, fs_env):
    phi, env = fs_env
    metric = bergman_metric_field(fs_models[8], fs_box)
    h = fs_box.spacing[0]
    assert np.diff(metric.values, 2).min() / h**2 >= -1e-10  # exactly convex
    offset = metric.values - phi.values
    np.testing.assert_allclose(offset, np.log(9.0) / 8.0, atol=1e-8)
    assert metric_distance(metric, env) == pytest.approx(np.log(9.0) / 8.0, abs=1e-3)


def test_bergman_metric_chart_offset(chart_fs_model, chart_domain_small):
    metric = bergman_metric_field(chart_fs_model, chart_domain_small)
    phi = eval_weight(chart_fs_model.spec.weight, chart_domain_small)
    np.testing.assert_allclose(
        metric.values - phi.values, np.log(9.0) / 8.0, atol=1e-7
    )


def test_bergman_volume_distance_fs(fs_models, fs_box, fs_env):
    _, env = fs_env
    metric = bergman_metric_field(fs_models[16], fs_box)
    vd = bergman_volume_distance(metric, env, k=16)
    assert vd.k == 16
    assert vd.adjusted_fraction == 0.0  # metric is exactly convex
    assert vd.bridge_gap == 0.0  # nothing is detached
    assert vd.sup_cdf <= 0.01
    assert vd.mass == pytest.approx(1.0, abs=0.01)


def test_bergman_volume_distance_rejects_chart(chart_fs_model, chart_domain_small, fs_env):
    _, env = fs_env
    metric = bergman_metric_field(chart_fs_model, chart_domain_small)
    with pytest.raises(ValueError):
        bergman_volume_distance(metric, env, k=8)


def test_expansion_window_avoids_detachment(dw_env):
    phi, env = dw_env
    win = expansion_window(env, phi)
    assert win.any()
    interior = interior_contact_mask(env.contact_mask.values, phi.domain)
    assert not (win & ~interior).any()
    assert not expansion_window(env, phi, margin=10.0).any()


def test_tzc_fit_fs_unit_coefficient(fs_models, fs_box):
    target = GridField(fs_box, np.ones(fs_box.shape))
    win = np.zeros(fs_box.shape, dtype=bool)
    win[240:480] = True
    rep = tzc_fit(fs_models.values(), target, win)
    # k ((k+1)/k - 1) = 1 at every node and every k: b1 is exactly one
    assert rep.b1 == pytest.approx(1.0, abs=1e-8)
    assert rep.spread <= 1e-8
    assert rep.window_size == 240
    assert [(p.k_low, p.k_high) for p in rep.pairs] == [(4, 8), (8, 16)]
    assert all(p.node_spread <= 1e-7 for p in rep.pairs)


def test_tzc_fit_rejections(fs_models, fs_box):
    target = GridField(fs_box, np.ones(fs_box.shape))
    win = np.zeros(fs_box.shape, dtype=bool)
    win[300:400] = True
    with pytest.raises(ValueError, match="dyadic"):
        tzc_fit([fs_models[4], fs_models[16]], target, win)
    with pytest.raises(ValueError):
        tzc_fit([fs_models[4]], target, win)
    with pytest.raises(ExpansionWindowError):
        tzc_fit(fs_models.values(), target, np.zeros(fs_box.shape, dtype=bool))
    bad = GridField(fs_box, np.zeros(fs_box.shape))
    with pytest.raises(ExpansionWindowError):
        tzc_fit(fs_models.values(), bad, win)


def test_offdiag_concentration_constant_functions(fs_models, fs_box, interval01):
    mu = toric_measure_density(interval01, fs_box)
    density = GridField(fs_box, np.ones(fs_box.shape))
    one = lambda pts: np.ones(len(pts))
    gaps = {}
    for k in (8, 16):
        res = offdiag_concentration(fs_models[k], one, one, density, mu)
        assert res.pair_integral == pytest.approx((k + 1.0) / k, rel=1e-8)
        assert res.reference_integral == pytest.approx(1.0, abs=2e-3)
        gaps[k] = res.relative_gap
    assert gaps[16] < gaps[8]  # concentration sharpens with k


def test_tchebishev_estimate_fs(fs_models, fs_env):
    phi, env = fs_env
    rep = tchebishev_estimate([fs_models[8], fs_models[16]], env, phi)
    assert rep.ks == (8, 16)
    np.testing.assert_allclose(
        rep.values, [9.0 ** (1.0 / 8.0), 17.0 ** (1.0 / 16.0)], rtol=1e-8
    )
    assert rep.extrapolated == pytest.approx(FS_EXTRAPOLATED, rel=1e-8)
    assert rep.oracle == pytest.approx(np.exp(-(phi.values - env.phi_e.values).max()))
    assert rep.relative_gap == pytest.approx(
        abs(rep.extrapolated - rep.oracle) / rep.oracle
    )
    assert "trivially 1" in rep.sign_note


def test_tchebishev_estimate_non_dyadic_fallback(fs_models, fs_env):
    phi, env = fs_env
    rep = tchebishev_estimate([fs_models[4], fs_models[16]], env, phi)
    # last pair is not dyadic: no extrapolation, plain k = 16 value
    assert rep.extrapolated == pytest.approx(17.0 ** (1.0 / 16.0), rel=1e-8)
