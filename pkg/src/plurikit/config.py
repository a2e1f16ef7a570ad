"""Declarative run configuration: one YAML file drives every command.

The loader validates strictly (unknown or malformed keys fail naming the key),
fills every default explicitly, and produces an echo dictionary that contains
each number needed to reproduce the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .geometry import (
    BoxDomain,
    Bump,
    ChartDomain,
    FSChart,
    LatticePolytope,
    PerturbedChart,
    PerturbedToric,
    ToricPotential,
    WeightSpec,
    lattice_volume,
)


class ConfigError(ValueError):
    """Schema violation; the message names the offending key."""


DEFAULT_TOLERANCES = {
    "tol_sor": 1e-10,
    "quad_rtol": 1e-10,
    "tail_tol": 1e-12,
    "dual_factor": 4,
    "window_fraction": 0.6,
    "window_margin": 0.05,
    "ratio_floor": 0.05,
}

DEFAULT_GATES = {
    "envelope_residual": 1e-8,
    "bergman_mass_rel": 1e-6,
    "reproducing_tol": 1e-6,
    "l1_max": 0.1,
    "mass_rtol": 0.01,
    "tzc_rel_spread": 0.10,
    "midpoint_rel": 0.05,
    "tchebishev_rel": 0.05,
    "bridge_gap": 0.02,
    "offdiag_disjoint": 0.05,
    "offdiag_ondiag_rel": 0.10,
}


@dataclass(frozen=True)
class RunConfig:
    weight: WeightSpec
    domain: object  # BoxDomain | ChartDomain
    k_list: tuple[int, ...]
    workers: int
    tolerances: dict
    gates: dict
    expansion_min_abs_v: float | None
    offdiag_tests: tuple[Bump, Bump] | None
    warnings: tuple[str, ...]
    echo: dict = field(repr=False)

    @property
    def is_toric(self) -> bool:
        return self.weight.is_toric


def _section(raw: dict, key: str, required: bool = True) -> dict:
    val = raw.get(key)
    if val is None:
        if required:
            raise ConfigError(f"missing section `{key}`")
        return {}
    if not isinstance(val, dict):
        raise ConfigError(f"section `{key}` must be a mapping")
    return val


def _reject_unknown(section: dict, allowed, where: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key `{where}.{key}`")


def _number(section: dict, key: str, where: str, default=None):
    val = section.get(key, default)
    if val is None:
        raise ConfigError(f"missing key `{where}.{key}`")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"key `{where}.{key}` must be a number")
    return val


def _parse_bump(entry, where: str, dim: int) -> Bump:
    if not isinstance(entry, dict):
        raise ConfigError(f"`{where}` entries must be mappings")
    _reject_unknown(entry, {"center", "radius", "amplitude", "power"}, where)
    center = entry.get("center")
    if not isinstance(center, (list, tuple)) or len(center) != dim:
        raise ConfigError(f"key `{where}.center` must be a list of {dim} numbers")
    try:
        return Bump(
            center=tuple(float(c) for c in center),
            radius=float(_number(entry, "radius", where)),
            amplitude=float(_number(entry, "amplitude", where)),
            power=int(entry.get("power", 3)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid `{where}`: {exc}") from exc


def _parse_toric(model: dict, grid: dict, warnings: list):
    verts = model.get("polytope")
    if not isinstance(verts, (list, tuple)) or not verts:
        raise ConfigError("key `model.polytope` must be a non-empty vertex list")
    try:
        polytope = LatticePolytope(tuple(tuple(int(c) for c in v) for v in verts))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid `model.polytope`: {exc}") from exc
    bumps = tuple(
        _parse_bump(b, "model.bumps", polytope.dim) for b in model.get("bumps") or ()
    )
    weight = PerturbedToric(polytope, bumps) if bumps else ToricPotential(polytope)

    _reject_unknown(grid, {"lo", "hi", "shape"}, "grid")
    try:
        domain = BoxDomain(
            tuple(float(x) for x in np.atleast_1d(grid.get("lo"))),
            tuple(float(x) for x in np.atleast_1d(grid.get("hi"))),
            tuple(int(s) for s in np.atleast_1d(grid.get("shape"))),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid `grid`: {exc}") from exc
    if domain.dim != polytope.dim:
        raise ConfigError("key `grid.shape` dimension must match `model.polytope`")
    for b in bumps:
        inside = all(
            lo < c - b.radius and c + b.radius < hi
            for c, lo, hi in zip(b.center, domain.lo, domain.hi)
        )
        if not inside:
            warnings.append(
                f"bump at {b.center} with radius {b.radius} overlaps the v-box edge"
            )
    return weight, domain


def _parse_chart(model: dict, grid: dict, warnings: list):
    bumps = tuple(_parse_bump(b, "model.bumps", 2) for b in model.get("bumps") or ())
    weight = PerturbedChart(bumps) if bumps else FSChart()

    _reject_unknown(grid, {"v_lo", "v_hi", "n_v", "n_theta"}, "grid")
    try:
        domain = ChartDomain(
            v_lo=_number(grid, "v_lo", "grid"),
            v_hi=_number(grid, "v_hi", "grid"),
            n_v=int(_number(grid, "n_v", "grid")),
            n_theta=int(_number(grid, "n_theta", "grid")),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid `grid`: {exc}") from exc
    r_hi = float(np.exp(0.5 * domain.v_hi))
    r_lo = float(np.exp(0.5 * domain.v_lo))
    for b in bumps:
        rad = float(np.hypot(*b.center))
        if rad + b.radius >= r_hi or rad - b.radius <= r_lo:
            warnings.append(
                f"bump at {b.center} with radius {b.radius} overlaps the chart annulus edge"
            )
    return weight, domain


def normalize_config(raw: dict) -> RunConfig:
    """Validate a parsed mapping and fill every default."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _reject_unknown(
        raw,
        {"model", "grid", "k_list", "workers", "tolerances", "gates", "expansion", "offdiag"},
        "config",
    )
    model = _section(raw, "model")
    grid = _section(raw, "grid")
    kind = model.get("kind")
    if kind not in ("toric", "chart"):
        raise ConfigError("key `model.kind` must be `toric` or `chart`")
    _reject_unknown(model, {"kind", "polytope", "bumps"}, "model")

    warnings: list[str] = []
    if kind == "toric":
        weight, domain = _parse_toric(model, grid, warnings)
    else:
        if "polytope" in model:
            raise ConfigError("key `model.polytope` is not valid for chart models")
        weight, domain = _parse_chart(model, grid, warnings)

    k_list = raw.get("k_list")
    if not isinstance(k_list, (list, tuple)) or not k_list:
        raise ConfigError("key `k_list` must be a non-empty list")
    for k in k_list:
        if isinstance(k, bool) or not isinstance(k, int) or k < 1:
            raise ConfigError(f"key `k_list` entries must be integers >= 1 (offending: {k!r})")
    k_list = tuple(sorted(set(int(k) for k in k_list)))

    workers = raw.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ConfigError("key `workers` must be an integer >= 1")

    tolerances = dict(DEFAULT_TOLERANCES)
    for key, val in _section(raw, "tolerances", required=False).items():
        if key not in DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown key `tolerances.{key}`")
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"key `tolerances.{key}` must be a number")
        tolerances[key] = type(DEFAULT_TOLERANCES[key])(val)

    gates = dict(DEFAULT_GATES)
    for key, val in _section(raw, "gates", required=False).items():
        if key not in DEFAULT_GATES:
            raise ConfigError(f"unknown key `gates.{key}`")
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"key `gates.{key}` must be a number")
        gates[key] = float(val)

    expansion = _section(raw, "expansion", required=False)
    _reject_unknown(expansion, {"min_abs_v"}, "expansion")
    min_abs_v = expansion.get("min_abs_v")
    if min_abs_v is not None:
        min_abs_v = float(_number(expansion, "min_abs_v", "expansion"))

    offdiag = _section(raw, "offdiag", required=False)
    _reject_unknown(offdiag, {"f", "g"}, "offdiag")
    offdiag_tests = None
    if offdiag:
        if kind != "chart":
            raise ConfigError("section `offdiag` is only valid for chart models")
        offdiag_tests = (
            _parse_bump(_section(offdiag, "f"), "offdiag.f", 2),
            _parse_bump(_section(offdiag, "g"), "offdiag.g", 2),
        )

    echo = {
        "model": {
            "kind": kind,
            "polytope": [list(v) for v in weight.polytope.vertices] if kind == "toric" else None,
            "bumps": [
                {
                    "center": list(b.center),
                    "radius": b.radius,
                    "amplitude": b.amplitude,
                    "power": b.power,
                }
                for b in getattr(weight, "bumps", ())
            ],
        },
        "grid": (
            {"lo": list(domain.lo), "hi": list(domain.hi), "shape": list(domain.shape)}
            if kind == "toric"
            else {
                "v_lo": domain.v_lo,
                "v_hi": domain.v_hi,
                "n_v": domain.n_v,
                "n_theta": domain.n_theta,
            }
        ),
        "k_list": list(k_list),
        "workers": workers,
        "tolerances": dict(tolerances),
        "gates": dict(gates),
        "expansion": {"min_abs_v": min_abs_v},
        "offdiag": (
            {
                "f": {"center": list(offdiag_tests[0].center), "radius": offdiag_tests[0].radius,
                      "amplitude": offdiag_tests[0].amplitude, "power": offdiag_tests[0].power},
                "g": {"center": list(offdiag_tests[1].center), "radius": offdiag_tests[1].radius,
                      "amplitude": offdiag_tests[1].amplitude, "power": offdiag_tests[1].power},
            }
            if offdiag_tests
            else None
        ),
        "contact_eps_rule": "10*max(residual, h^2*clip(max_abs_curvature, 0.25, 1.0))",
        "warnings": list(warnings),
    }
    if kind == "toric":
        echo["derived"] = {
            "lattice_volume": lattice_volume(weight.polytope),
            "dim_v": weight.polytope.dim,
        }
    return RunConfig(
        weight=weight,
        domain=domain,
        k_list=k_list,
        workers=workers,
        tolerances=tolerances,
        gates=gates,
        expansion_min_abs_v=min_abs_v,
        offdiag_tests=offdiag_tests,
        warnings=tuple(warnings),
        echo=echo,
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if raw is None:
        raise ConfigError("config file is empty")
    return normalize_config(raw)
