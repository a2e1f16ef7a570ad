"""Shared small models and grids; everything here is cheap to build."""

import numpy as np
import pytest

from plurikit.envelope import toric_equilibrium
from plurikit.geometry import (
    BoxDomain,
    Bump,
    ChartDomain,
    FSChart,
    LatticePolytope,
    PerturbedChart,
    PerturbedToric,
    ToricPotential,
    eval_weight,
)
from plurikit.hilbert import HilbertSpaceSpec, build_model


@pytest.fixture(scope="session")
def interval01():
    return LatticePolytope(((0,), (1,)))


@pytest.fixture(scope="session")
def interval_sym():
    return LatticePolytope(((-1,), (1,)))


@pytest.fixture(scope="session")
def simplex2():
    return LatticePolytope(((0, 0), (1, 0), (0, 1)))


@pytest.fixture(scope="session")
def fs_weight(interval01):
    return ToricPotential(interval01)


@pytest.fixture(scope="session")
def fs_box():
    return BoxDomain((-9.0,), (9.0,), (721,))


@pytest.fixture(scope="session")
def fs_models(fs_weight):
    return {k: build_model(HilbertSpaceSpec(fs_weight, k)) for k in (4, 8, 16)}


@pytest.fixture(scope="session")
def double_well(interval_sym):
    return PerturbedToric(
        interval_sym, (Bump(center=(0.0,), radius=1.2, amplitude=0.4, power=3),)
    )


@pytest.fixture(scope="session")
def dw_box():
    return BoxDomain((-8.0,), (8.0,), (801,))


@pytest.fixture(scope="session")
def dw_env(double_well, dw_box, interval_sym):
    phi = eval_weight(double_well, dw_box)
    return phi, toric_equilibrium(phi, interval_sym)


@pytest.fixture(scope="session")
def dw_model(double_well):
    return build_model(HilbertSpaceSpec(double_well, 64))


@pytest.fixture(scope="session")
def chart_domain_small():
    return ChartDomain(-6.0, 6.0, 49, 24)


@pytest.fixture(scope="session")
def chart_fs_model():
    return build_model(HilbertSpaceSpec(FSChart(), 8))


@pytest.fixture(scope="session")
def chart_bump_weight():
    return PerturbedChart((Bump(center=(1.5, 0.0), radius=0.5, amplitude=0.5, power=3),))


@pytest.fixture(scope="session")
def chart_bump_model(chart_bump_weight):
    return build_model(HilbertSpaceSpec(chart_bump_weight, 8))
