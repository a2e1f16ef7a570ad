"""Config-driven experiment runner: deterministic CSVs, manifest, summary.

Every command reads one YAML config, writes schema-versioned CSV tables plus
a JSON manifest and a PASS/FAIL summary, and exits 0 (all gates pass),
1 (a gate failed), 2 (usage or config error) or 3 (numerical error).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .asymptotics import (
    ExpansionWindowError,
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
from .config import ConfigError, RunConfig, load_config
from .envelope import (
    EnvelopeBoxError,
    SorConvergenceError,
    chart_equilibrium,
    toric_equilibrium,
)
from .geometry import (
    ChartDomain,
    DegeneratePolytopeError,
    DomainMismatchError,
    FSChart,
    ToricPotential,
    eval_weight,
    lattice_volume,
)
from .hilbert import (
    GramNotPDError,
    HilbertSpaceSpec,
    bergman_mass,
    build_model,
    default_v_halfwidth,
    reproducing_residual,
)
from .mongeampere import DegenerateReferenceError, equilibrium_measure, volume_report
from .quadrature import QuadratureError, fs_measure_density, toric_measure_density

COMMANDS = ("envelope", "bergman", "converge", "volume", "expansion", "capacity", "offdiag")

NUMERICAL_ERRORS = (
    GramNotPDError,
    SorConvergenceError,
    EnvelopeBoxError,
    DegenerateReferenceError,
    DegeneratePolytopeError,
    DomainMismatchError,
    QuadratureError,
    ExpansionWindowError,
    np.linalg.LinAlgError,
    FloatingPointError,
)


class StageError(RuntimeError):
    """A numerical stage failed; the message names the stage."""


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(out_dir: Path, name: str, columns, rows) -> str:
    """Write one schema-versioned table; fixed float formatting keeps the
    bytes reproducible across runs and worker counts."""
    path = out_dir / f"{name}.csv"
    lines = [f"schema=plurikit.{name}.v1", ",".join(columns)]
    lines.extend(",".join(_fmt(x) for x in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path.name


class Summary:
    def __init__(self):
        self.lines: list[tuple[str, bool, str]] = []

    def gate(self, name: str, passed: bool, detail: str):
        self.lines.append((name, bool(passed), detail))

    @property
    def all_passed(self) -> bool:
        return all(p for _, p, _ in self.lines)

    def write(self, out_dir: Path) -> str:
        text = "\n".join(
            f"{'PASS' if p else 'FAIL'} {name}: {detail}" for name, p, detail in self.lines
        )
        (out_dir / "summary.txt").write_text(text + "\n", encoding="utf-8")
        return text


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except NUMERICAL_ERRORS as exc:
        raise StageError(f"stage `{name}`: {exc}") from exc


def build_models(cfg: RunConfig, k_list=None):
    ks = tuple(k_list if k_list is not None else cfg.k_list)
    tol = cfg.tolerances

    def one(k: int):
        spec = HilbertSpaceSpec(
            cfg.weight, k, quad_rtol=tol["quad_rtol"], tail_tol=tol["tail_tol"]
        )
        return build_model(spec)

    if cfg.workers == 1 or len(ks) == 1:
        models = [_stage(f"build_model(k={k})", one, k) for k in ks]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            models = list(pool.map(one, ks))  # map preserves k order
    return models


def solve_envelope(cfg: RunConfig):
    if cfg.is_toric:
        phi = eval_weight(cfg.weight, cfg.domain)
        env = _stage(
            "toric_equilibrium",
            toric_equilibrium,
            phi,
            cfg.weight.polytope,
            dual_factor=cfg.tolerances["dual_factor"],
        )
    else:
        phi = eval_weight(cfg.weight, cfg.domain)
        env = _stage(
            "chart_equilibrium", chart_equilibrium, cfg.weight, cfg.domain,
            tol=cfg.tolerances["tol_sor"],
        )
    return phi, env


def reference_measure(cfg: RunConfig) -> np.ndarray:
    if cfg.is_toric:
        return toric_measure_density(cfg.weight.polytope, cfg.domain)
    return fs_measure_density(cfg.domain)


def solve_measure(cfg: RunConfig, phi, env):
    if cfg.is_toric:
        ref = eval_weight(ToricPotential(cfg.weight.polytope), cfg.domain)
    else:
        ref = eval_weight(FSChart(), cfg.domain)
    return _stage("equilibrium_measure", equilibrium_measure, env, phi, ref)


def _node_coords_abs(cfg: RunConfig) -> np.ndarray:
    """|v| per node, used to carve expansion windows away from perturbations."""
    dom = cfg.domain
    if isinstance(dom, ChartDomain):
        return np.broadcast_to(np.abs(dom.v_axis())[:, None], dom.shape)
    pts = dom.meshgrid()
    return np.linalg.norm(pts, axis=-1)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_envelope(cfg: RunConfig, out: Path, summary: Summary) -> list[str]:
    phi, env = solve_envelope(cfg)
    dom = cfg.domain
    mask = env.contact_mask.values
    if isinstance(dom, ChartDomain):
        v, th = dom.v_axis(), dom.theta_axis()
        rows = [
            (v[i], th[j], phi.values[i, j], env.phi_e.values[i, j], bool(mask[i, j]))
            for i in range(dom.n_v)
            for j in range(dom.n_theta)
        ]
        cols = ("v", "theta", "phi", "phi_e", "contact")
    elif dom.dim == 1:
        v = dom.axes()[0]
        rows = [
            (v[i], phi.values[i], env.phi_e.values[i], bool(mask[i]))
            for i in range(dom.shape[0])
        ]
        cols = ("v", "phi", "phi_e", "contact")
    else:
        a1, a2 = dom.axes()
        rows = [
            (a1[i], a2[j], phi.values[i, j], env.phi_e.values[i, j], bool(mask[i, j]))
            for i in range(dom.shape[0])
            for j in range(dom.shape[1])
        ]
        cols = ("v1", "v2", "phi", "phi_e", "contact")
    files = [write_csv(out, "envelope", cols, rows)]
    gate = cfg.gates["envelope_residual"]
    summary.gate(
        "envelope.residual",
        env.residual <= gate,
        f"complementarity residual {env.residual:.3e} <= {gate:.1e} ({env.method})",
    )
    frac = float(mask.mean())
    summary.gate(
        "envelope.contact_nonempty", 0.0 < frac <= 1.0, f"contact fraction {frac:.4f}"
    )
    return files


def cmd_bergman(cfg: RunConfig, out: Path, summary: Summary) -> list[str]:
    models = build_models(cfg)
    rows = []
    worst_mass, worst_repro = 0.0, 0.0
    for m in models:
        mass = _stage(f"bergman_mass(k={m.spec.k})", bergman_mass, m)
        rel = abs(mass - m.dim) / m.dim
        repro = _stage(f"reproducing_residual(k={m.spec.k})", reproducing_residual, m)
        worst_mass, worst_repro = max(worst_mass, rel), max(worst_repro, repro)
        rows.append((m.spec.k, m.dim, mass, rel, repro))
    files = [write_csv(out, "bergman", ("k", "dim", "mass", "mass_rel_gap", "reproducing_residual"), rows)]
    summary.gate(
        "bergman.dimension_identity",
        worst_mass <= cfg.gates["bergman_mass_rel"],
        f"max |mass-dim|/dim {worst_mass:.3e} <= {cfg.gates['bergman_mass_rel']:.1e}",
    )
    summary.gate(
        "bergman.reproducing",
        worst_repro <= cfg.gates["reproducing_tol"],
        f"max reproducing residual {worst_repro:.3e} <= {cfg.gates['reproducing_tol']:.1e}",
    )
    return files


def cmd_converge(cfg: RunConfig, out: Path, summary: Summary) -> list[str]:
    phi, env = solve_envelope(cfg)
    em = solve_measure(cfg, phi, env)
    models = build_models(cfg)
    table = _stage(
        "convergence_table",
        convergence_table,
        models,
        em.density,
        reference_measure(cfg),
        ratio_floor=cfg.tolerances["ratio_floor"],
    )
    rows = [(r.k, r.l1_error, r.sup_ratio) for r in table]
    files = [write_csv(out, "converge", ("k", "l1_error", "sup_ratio"), rows)]
    l1 = [r.l1_error for r in table]
    sups = [r.sup_ratio for r in table]
    summary.gate(
        "converge.l1_decreasing",
        all(a > b for a, b in zip(l1, l1[1:])),
        "L1 errors " + " > ".join(f"{x:.4f}" for x in l1),
    )
    summary.gate(
        "converge.l1_final",
        l1[-1] < cfg.gates["l1_max"],
        f"L1 at k={table[-1].k} is {l1[-1]:.4f} < {cfg.gates['l1_max']}",
    )
    summary.gate(
        "converge.morse_nonincreasing",
        all(a >= b for a, b in zip(sups, sups[1:])),
        "sup ratios " + " >= ".join(f"{x:.4f}" for x in sups),
    )
    return files


def cmd_volume(cfg: RunConfig, out: Path, summary: Summary) -> list[str]:
    phi, env = solve_envelope(cfg)
    em = solve_measure(cfg, phi, env)
    models = build_models(cfg)
    dims = {m.spec.k: m.dim for m in models}
    n = cfg.weight.polytope.dim if cfg.is_toric else 1
    vol = lattice_volume(cfg.weight.polytope) if cfg.is_toric else 1.0
    report = _stage(
        "volume_report", volume_report, dims, n, em.mass, volume=vol,
        mass_tol=cfg.gates["mass_rtol"],
    )
    rows = [(r.k, dims[r.k], r.scaled_dim, r.gap) for r in report.rows]
    files = [write_csv(out, "volume", ("k", "dim", "scaled_dim", "gap"), rows)]
    summary.gate(
        "volume.mass",
        report.mass_ok,
        f"equilibrium mass {em.mass:.6f} vs volume {vol:.6f} (rtol {cfg.gates['mass_rtol']})",
    )
    summary.gate(
        "volume.dims_monotone",
        report.monotone_ok,
        "dimension gaps " + " >= ".join(f"{r.gap:.5f}" for r in report.rows),
    )
    off_frac = em.off_mask_mass / em.mass if em.mass > 0 else np.inf
    summary.gate(
        "volume.off_contact",
        off_frac <= cfg.gates["mass_rtol"],
        f"off-contact determinant mass fraction {off_frac:.2e} <= {cfg.gates['mass_rtol']}",
    )
    return files


def cmd_expansion(cfg: RunConfig, out: Path, summary: Summary) -> list[str]:
    phi, env = solve_envelope(cfg)
    em = solve_measure(cfg, phi, env)
    models = build_models(cfg)
    window = expansion_window(
        env,
        phi,
        fraction=cfg.tolerances["window_fraction"],
        margin=cfg.tolerances["window_margin"],
    )
    if cfg.expansion_min_abs_v is not None:
        window = window & (_node_coords_abs(cfg) >= cfg.expansion_min_abs_v)
    report = _stage("tzc_fit", tzc_fit, models, em.density, window)
    rows = [(p.k_low, p.k_high, p.b1, p.node_spread) for p in report.pairs]
    files = [write_csv(out, "expansion", ("k_low", "k_high", "b1", "node_spread"), rows)]
    summary.gate(
        "expansion.spread",
        report.relative_spread < cfg.gates["tzc_rel_spread"],
        f"b1 {report.b1:.5f}, relative spread {report.relative_spread:.4f}"
        f" < {cfg.gates['tzc_rel_spread']} on {int(window.sum())} nodes",
    )
    return files


def cmd_capacity(cfg: RunConfig, out: Path, summary: Summary) -> list[str]:
    phi, env = solve_envelope(cfg)
    models = build_models(cfg)
    report = _stage("tchebishev_estimate", tchebishev_estimate, models, env, phi)
    rows = list(zip(report.ks, report.values))
    files = [write_csv(out, "capacity", ("k", "t_k"), rows)]
    summary.gate(
        "capacity.tchebishev",
        report.relative_gap < cfg.gates["tchebishev_rel"],
        f"extrapolated {report.extrapolated:.6f} vs envelope defect {report.oracle:.6f},"
        f" relative gap {report.relative_gap:.4f} < {cfg.gates['tchebishev_rel']}",
    )

    # pointwise decay at the midpoint of the widest detached interval
    mask = env.contact_mask.values
    if cfg.is_toric and cfg.domain.dim == 1 and not mask.all():
        idx = np.where(~mask)[0]
        runs = np.split(idx, np.where(np.diff(idx) > 1)[0] + 1)
        widest = max(runs, key=len)
        mid = int(widest[len(widest) // 2])
        prof = _stage("decay_profile", decay_profile, models[-1], env)
        gap = phi.values[mid] - env.phi_e.values[mid]
        rel = abs(prof.profile.values[mid] / gap - 1.0) if gap > 0 else np.inf
        summary.gate(
            "capacity.midpoint_decay",
            rel < cfg.gates["midpoint_rel"],
            f"profile/gap at v={cfg.domain.axes()[0][mid]:.3f}: relative error {rel:.4f}"
            f" < {cfg.gates['midpoint_rel']} at k={models[-1].spec.k}",
        )
    else:
        summary.gate(
            "capacity.midpoint_decay", True, "no detached interval; pointwise check vacuous"
        )
    return files


def cmd_offdiag(cfg: RunConfig, out: Path, summary: Summary) -> list[str]:
    if cfg.is_toric:
        raise ConfigError("command `offdiag` requires a chart model")
    if cfg.offdiag_tests is None:
        raise ConfigError("command `offdiag` needs the `offdiag` config section")
    f, g = cfg.offdiag_tests
    phi, env = solve_envelope(cfg)
    em = solve_measure(cfg, phi, env)
    mu = reference_measure(cfg)
    models = build_models(cfg)
    rows = []
    last_disjoint, last_ondiag = np.inf, np.inf
    for m in models:
        pair = _stage(
            f"offdiag_concentration(k={m.spec.k})",
            offdiag_concentration, m, f.value, g.value, em.density, mu,
        )
        diag = _stage(
            f"offdiag_concentration(k={m.spec.k})",
            offdiag_concentration, m, f.value, f.value, em.density, mu,
        )
        rows.append(
            (m.spec.k, pair.pair_integral, pair.reference_integral,
             diag.pair_integral, diag.reference_integral, diag.relative_gap)
        )
        last_disjoint, last_ondiag = abs(pair.pair_integral), diag.relative_gap
    files = [
        write_csv(
            out,
            "offdiag",
            ("k", "fg_integral", "fg_reference", "ff_integral", "ff_reference", "ff_rel_gap"),
            rows,
        )
    ]
    summary.gate(
        "offdiag.disjoint",
        last_disjoint < cfg.gates["offdiag_disjoint"],
        f"disjoint-support pair integral {last_disjoint:.4f} < {cfg.gates['offdiag_disjoint']}"
        f" at k={rows[-1][0]}",
    )
    summary.gate(
        "offdiag.on_contact",
        last_ondiag < cfg.gates["offdiag_ondiag_rel"],
        f"matched-support relative gap {last_ondiag:.4f} < {cfg.gates['offdiag_ondiag_rel']}"
        f" at k={rows[-1][0]}",
    )
    return files


COMMAND_FNS = {
    "envelope": cmd_envelope,
    "bergman": cmd_bergman,
    "converge": cmd_converge,
    "volume": cmd_volume,
    "expansion": cmd_expansion,
    "capacity": cmd_capacity,
    "offdiag": cmd_offdiag,
}


def run_command(command: str, cfg: RunConfig, out: Path) -> tuple[Summary, dict]:
    out.mkdir(parents=True, exist_ok=True)
    summary = Summary()
    t0 = time.perf_counter()
    files = COMMAND_FNS[command](cfg, out, summary)
    elapsed = time.perf_counter() - t0
    manifest = {
        "command": command,
        "version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "config": cfg.echo,
        "csv_files": files,
        "gates": [
            {"name": name, "passed": passed, "detail": detail}
            for name, passed, detail in summary.lines
        ],
        "elapsed_seconds": elapsed,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary, manifest


def cmd_validate(cfg: RunConfig) -> str:
    echo = dict(cfg.echo)
    if cfg.is_toric:
        kmax = max(cfg.k_list)
        spec = HilbertSpaceSpec(cfg.weight, kmax)
        echo = dict(echo)
        echo["derived"] = dict(echo.get("derived") or {})
        echo["derived"]["quadrature_v_halfwidth_at_kmax"] = default_v_halfwidth(spec)
    return yaml.safe_dump(echo, sort_keys=True, default_flow_style=False)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plurikit",
        description="Bergman kernel asymptotics vs equilibrium potentials on grids",
    )
    parser.add_argument("command", choices=COMMANDS + ("validate",))
    parser.add_argument("--config", required=True, help="YAML config path")
    parser.add_argument("--out", help="output directory (required except for validate)")
    parser.add_argument("--workers", type=int, help="override the config worker count")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which matches the contract
        return int(exc.code or 0)

    try:
        cfg = load_config(args.config)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("key `workers` must be an integer >= 1")
            object.__setattr__(cfg, "workers", int(args.workers))
            cfg.echo["workers"] = int(args.workers)
        if args.command == "validate":
            sys.stdout.write(cmd_validate(cfg))
            return 0
        if not args.out:
            raise ConfigError("missing required option `--out`")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        summary, _ = run_command(args.command, cfg, Path(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    text = summary.write(Path(args.out))
    print(text)
    return 0 if summary.all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
