"""One-shot calibration of every number the acceptance tests will assert."""

import time

import numpy as np
from scipy.special import betaln

from plurikit.asymptotics import (
    bergman_metric_field,
    bergman_volume_distance,
    convergence_table,
    decay_profile,
    expansion_window,
    metric_distance,
    offdiag_concentration,
    tchebishev_estimate,
    tzc_fit,
)
from plurikit.config import load_config
from plurikit.envelope import (
    chart_equilibrium,
    convex_envelope_1d,
    regularity_probe,
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
    PerturbedToric,
    ToricPotential,
    eval_weight,
    hessian_field,
)
from plurikit.hilbert import (
    HilbertSpaceSpec,
    bergman_function,
    bergman_mass,
    build_model,
    reproducing_residual,
)
from plurikit.mongeampere import (
    equilibrium_measure,
    interior_contact_mask,
    volume_report,
)
from plurikit.quadrature import fs_measure_density, toric_measure_density

T0 = time.monotonic()


def lap(tag):
    print(f"--- {tag}  [t={time.monotonic() - T0:.1f}s]", flush=True)


# criterion 1: FS exactness -------------------------------------------------
lap("criterion 1")
t1 = time.monotonic()
interval01 = LatticePolytope(((0,), (1,)))
fs_weight = ToricPotential(interval01)
fs_ks = (2, 4, 8, 16, 32, 64)
fs_models = {k: build_model(HilbertSpaceSpec(fs_weight, k)) for k in fs_ks}
fs_dom = BoxDomain((-9.0,), (9.0,), (721,))
gram_worst = 0.0
bk_var_worst = 0.0
bk_val_worst = 0.0
for k, m in fs_models.items():
    a = np.arange(k + 1, dtype=float)
    gram_worst = max(gram_worst, float(np.max(np.abs(np.exp(m.log_norms - betaln(a + 1.0, k - a + 1.0)) - 1.0))))
    b = bergman_function(m, fs_dom).values
    bk_var_worst = max(bk_var_worst, float((b.max() - b.min()) / b.mean()))
    bk_val_worst = max(bk_val_worst, float(np.max(np.abs(b / (k + 1.0) - 1.0))))
fs_phi = eval_weight(fs_weight, fs_dom)
fs_env = toric_equilibrium(fs_phi, interval01)
fs_ref = eval_weight(ToricPotential(interval01), fs_dom)
fs_em = equilibrium_measure(fs_env, fs_phi, fs_ref)
fs_win = expansion_window(fs_env, fs_phi)
tzc = tzc_fit(list(fs_models.values()), fs_em.density, fs_win)
t_c1 = time.monotonic() - t1
print(f"gram_worst={gram_worst:.3e} bk_var={bk_var_worst:.3e} bk_val={bk_val_worst:.3e}")
print(f"tzc b1={tzc.b1!r} |b1-1|={abs(tzc.b1 - 1):.3e} elapsed={t_c1:.2f}s")

# criterion 3 setup: double-well suite ---------------------------------------
lap("criterion 3")
cfg = load_config("configs/double_well.yaml")
dw_dom = cfg.domain
dw_phi = eval_weight(cfg.weight, dw_dom)
dw_env = toric_equilibrium(dw_phi, cfg.weight.polytope, dual_factor=cfg.tolerances["dual_factor"])
dw_ref = eval_weight(ToricPotential(cfg.weight.polytope), dw_dom)
dw_em = equilibrium_measure(dw_env, dw_phi, dw_ref)
t1 = time.monotonic()
dw_models = {k: build_model(HilbertSpaceSpec(cfg.weight, k)) for k in cfg.k_list}
t_build = time.monotonic() - t1
t1 = time.monotonic()
mu = toric_measure_density(cfg.weight.polytope, dw_dom)
table = convergence_table(list(dw_models.values()), dw_em.density, mu)
t_table = time.monotonic() - t1
for r in table:
    print(f"k={r.k} l1={r.l1_error:.6f} sup={r.sup_ratio:.6f}")
vr = volume_report({k: m.dim for k, m in dw_models.items()}, 1, dw_em.mass, volume=2.0)
print(f"mass={dw_em.mass:.6f} volume_ok={vr.mass_ok} monotone={vr.monotone_ok} build={t_build:.1f}s table={t_table:.1f}s")

# criterion 4: bridge midpoint + tchebishev ----------------------------------
lap("criterion 4")
t1 = time.monotonic()
m1024 = build_model(HilbertSpaceSpec(cfg.weight, 1024))
print(f"k=1024 build {time.monotonic() - t1:.1f}s dim={m1024.dim}")
mask = dw_env.contact_mask.values
runs = []
i = 0
while i < mask.size:
    if not mask[i]:
        j = i
        while j < mask.size and not mask[j]:
            j += 1
        runs.append((i, j))
        i = j
    else:
        i += 1
lo, hi = max(runs, key=lambda r: r[1] - r[0])
mid = (lo + hi) // 2
prof = decay_profile(dw_models[512], dw_env)
relgap = abs(prof.profile.values[mid] - prof.gap.values[mid]) / prof.gap.values[mid]
print(f"bridge run {lo}:{hi} mid={mid} v={dw_dom.axes()[0][mid]:.3f} gap={prof.gap.values[mid]:.4f} relgap={relgap:.4f}")
tch = tchebishev_estimate([dw_models[512], m1024], dw_env, dw_phi)
print(f"tcheb ks={tch.ks} extrap={tch.extrapolated:.6f} oracle={tch.oracle:.6f} relgap={tch.relative_gap:.5f}")

# criterion 5: metric bound + volume distance --------------------------------
lap("criterion 5")
all_dw = dict(dw_models)
all_dw[1024] = m1024
dists = {}
for k, m in sorted(all_dw.items()):
    f = bergman_metric_field(m, dw_dom)
    dists[k] = metric_distance(f, dw_env)
    if k == 1024:
        vd = bergman_volume_distance(f, dw_env, k)
C = 64 * dists[64] - 2.0 * np.log(64)
for k, d in sorted(dists.items()):
    slack = (2.0 * np.log(k) + C) / k - d
    print(f"k={k} dist={d:.6f} k*d-2lnk={k * d - 2 * np.log(k):.4f} slack={slack:.2e}")
print(f"C={C:.4f} vd bridge_gap={vd.bridge_gap:.5f} sup_cdf={vd.sup_cdf:.5f} adj={vd.adjusted_fraction:.4f}")

# criterion 6: envelope cross-validation -------------------------------------
lap("criterion 6")
box6 = BoxDomain((-8.0,), (8.0,), (801,))
interval_sym = LatticePolytope(((-1,), (1,)))
dw_small = PerturbedToric(interval_sym, (Bump(center=(0.0,), radius=1.2, amplitude=0.4, power=3),))
offcenter = PerturbedToric(interval01, (Bump(center=(1.0,), radius=1.5, amplitude=0.25, power=3),))
h6 = box6.spacing[0]
for w, poly in ((fs_weight, interval01), (dw_small, interval_sym), (offcenter, interval01)):
    phi = eval_weight(w, box6)
    env = toric_equilibrium(phi, poly)
    hull = convex_envelope_1d(box6.axes()[0], phi.values)
    diam = float(poly.vertices_array().max() - poly.vertices_array().min()) if hasattr(poly, "vertices_array") else 0.0
    sup = float(np.max(np.abs(env.phi_e.values - hull)))
    print(f"toric-vs-hull sup={sup:.3e} bound={2 * h6 * (poly.points_array().max() - poly.points_array().min()) if hasattr(poly, 'points_array') else 'NA'}")

# polytope diameter helper: vertices attribute name check
print("poly attrs:", [a for a in dir(interval01) if not a.startswith("_")])

inv_w = PerturbedChart((Bump(center=(0.0, 0.0), radius=1.5, amplitude=1.2, power=3),))
cdom = ChartDomain(-6.0, 6.0, 97, 48)
t1 = time.monotonic()
cenv = chart_equilibrium(inv_w, cdom)
# radial route replicated on the padded v-line
h = cdom.spacing_v
n_extra = int(np.ceil(30.0 / h))
n_total = cdom.n_v + 2 * n_extra
v_lo, v_hi = cdom.v_lo - n_extra * h, cdom.v_hi + n_extra * h
wide = ChartDomain(v_lo, v_hi, n_total, cdom.n_theta)
wbox = BoxDomain((v_lo,), (v_hi,), (n_total,))
prof6 = eval_weight(inv_w, wide).values.min(axis=1)
radial = toric_equilibrium(GridField(wbox, prof6), interval01)
rad_win = radial.phi_e.values[n_extra:n_extra + cdom.n_v]
sup_rad = float(np.max(np.abs(cenv.phi_e.values - rad_win[:, None])))
print(f"sor-vs-radial sup={sup_rad:.3e} bound={10 * h * h:.3f} elapsed={time.monotonic() - t1:.1f}s")

dw6_phi = eval_weight(dw_small, box6)
dw6_env = toric_equilibrium(dw6_phi, interval_sym)
idem = toric_equilibrium(GridField(box6, dw6_env.phi_e.values.copy()), interval_sym)
print(f"idempotence sup={float(np.max(np.abs(idem.phi_e.values - dw6_env.phi_e.values))):.3e}")
base_env = toric_equilibrium(eval_weight(ToricPotential(interval_sym), box6), interval_sym)
mono = float(np.max(base_env.phi_e.values - dw6_env.phi_e.values))
print(f"monotonicity max(base-dw)={mono:.3e}")
for mfac in (2, 3):
    poly_m = LatticePolytope(((-mfac,), (mfac,)))
    env_m = toric_equilibrium(GridField(box6, mfac * dw6_phi.values), poly_m)
    sup_m = float(np.max(np.abs(env_m.phi_e.values - mfac * dw6_env.phi_e.values)))
    print(f"homogeneity m={mfac} sup={sup_m:.3e}")

# criterion 7: regularity ----------------------------------------------------
lap("criterion 7")
pairs1 = []
for s in (401, 801, 1601):
    d = BoxDomain((-8.0,), (8.0,), (s,))
    p = eval_weight(dw_small, d)
    e = toric_equilibrium(p, interval_sym)
    pairs1.append((p, e.phi_e))
rep1 = regularity_probe(pairs1)
print(f"dw ratios={tuple(f'{r:.4f}' for r in rep1.ratios)} passed={rep1.passed}")
simplex2 = LatticePolytope(((0, 0), (1, 0), (0, 1)))
w2 = PerturbedToric(simplex2, (Bump(center=(0.5, 0.5), radius=2.0, amplitude=0.3, power=3),))
t1 = time.monotonic()
pairs2 = []
env2d_161 = None
for s in (41, 81, 161):
    d = BoxDomain((-8.0, -8.0), (8.0, 8.0), (s, s))
    p = eval_weight(w2, d)
    e = toric_equilibrium(p, simplex2, dual_factor=4)
    pairs2.append((p, e.phi_e))
    if s == 161:
        env2d_161, phi2d_161 = e, p
rep2 = regularity_probe(pairs2)
print(f"2d ratios={tuple(f'{r:.4f}' for r in rep2.ratios)} passed={rep2.passed} elapsed={time.monotonic() - t1:.1f}s")
kpairs = []
for s in (201, 401, 801):
    d = BoxDomain((-4.0,), (4.0,), (s,))
    v = d.axes()[0]
    u = GridField(d, np.abs(v) + 0.02 * v**2)
    kpairs.append((u, u))
repk = regularity_probe(kpairs)
print(f"kink ratios={tuple(f'{r:.3f}' for r in repk.ratios)} passed={repk.passed} notes={repk.notes!r}")

# criterion 8: contact-set properties ----------------------------------------
lap("criterion 8")
off_frac = dw_em.off_mask_mass / dw_em.mass
hphi = hessian_field(dw_phi)
interior = interior_contact_mask(dw_env.contact_mask.values, dw_dom)
sel = interior & hphi.trusted
worst_eig = float(hphi.eig_min[sel].min())
curv = float(np.max(np.abs(hphi.eig_min)))
band = float(np.sqrt(2.0 * dw_env.eps_contact * curv))
print(f"1d off_frac={off_frac:.6f} worst_eig={worst_eig:+.6f} eps={dw_env.eps_contact:.5f} band={band:.4f}")
phi2, env2 = phi2d_161, env2d_161
em2 = equilibrium_measure(env2, phi2, eval_weight(ToricPotential(simplex2), phi2.domain))
h2 = hessian_field(phi2)
int2 = interior_contact_mask(env2.contact_mask.values, phi2.domain)
sel2 = int2 & h2.trusted
worst2 = float(h2.eig_min[sel2].min())
band2 = float(np.sqrt(2.0 * env2.eps_contact * np.max(np.abs(h2.eig_min))))
print(f"2d off_frac={em2.off_mask_mass / em2.mass:.4f} worst_eig={worst2:+.4f} band={band2:.4f} (diagnostic)")

# criterion 9: chart pipeline -------------------------------------------------
lap("criterion 9")
t1 = time.monotonic()
cw = PerturbedChart((Bump(center=(1.5, 0.0), radius=0.5, amplitude=0.5, power=3),))
cdom9 = ChartDomain(-9.0, 9.0, 95, 48)
cphi = eval_weight(cw, cdom9)
cenv9 = chart_equilibrium(cw, cdom9)
cref = eval_weight(FSChart(), cdom9)
cem = equilibrium_measure(cenv9, cphi, cref)
cmodels = {k: build_model(HilbertSpaceSpec(cw, k)) for k in (8, 16, 32)}
worst_repro = max(reproducing_residual(m) for m in cmodels.values())
fb = Bump(center=(-0.8, 0.0), radius=1.4, amplitude=1.0, power=3)
gb = Bump(center=(1.5, 0.0), radius=0.4, amplitude=1.0, power=3)


def mkcall(b):
    def f(pts):
        r2 = np.sum((np.asarray(pts, dtype=float) - np.asarray(b.center)) ** 2, axis=-1)
        t = np.maximum(1.0 - r2 / (b.radius * b.radius), 0.0)
        return b.amplitude * t**b.power
    return f


fmu = fs_measure_density(cdom9)
off = offdiag_concentration(cmodels[32], mkcall(fb), mkcall(gb), cem.density, fmu)
on = offdiag_concentration(cmodels[32], mkcall(fb), mkcall(fb), cem.density, fmu)
print(f"repro_worst={worst_repro:.3e} disjoint={abs(off.pair_integral):.5f} on_rel={on.relative_gap:.4f}")
print(f"chart masses:", {k: f"{abs(bergman_mass(m) - m.dim) / m.dim:.2e}" for k, m in cmodels.items()})
print(f"criterion 9 elapsed={time.monotonic() - t1:.1f}s")

# criterion 2: dimension identity for everything ------------------------------
lap("criterion 2")
t1 = time.monotonic()
simplex_models = {k: build_model(HilbertSpaceSpec(ToricPotential(simplex2), k)) for k in (8, 16)}
worst = {}
for tag, group in (("fs", fs_models), ("dw", all_dw), ("chart", cmodels), ("simplex", simplex_models)):
    rels = {k: abs(bergman_mass(m) - m.dim) / m.dim for k, m in group.items()}
    worst[tag] = max(rels.values())
    print(tag, {k: f"{v:.2e}" for k, v in rels.items()})
print(f"criterion 2 worst={max(worst.values()):.3e} elapsed={time.monotonic() - t1:.1f}s")

print(f"TOTAL {time.monotonic() - T0:.1f}s")
