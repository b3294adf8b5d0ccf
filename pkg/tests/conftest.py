import numpy as np
import pytest

from modalsos import benchmarks
from modalsos.problem import normalize
from modalsos.relaxation import assemble
from modalsos.sdp import solve


@pytest.fixture(scope="session")
def chattering_pipeline():
    p = benchmarks.load("chattering")
    sp, maps = normalize(p)
    return p, sp, maps


@pytest.fixture(scope="session")
def chattering_solved(chattering_pipeline):
    """Solved chattering hierarchy, shared across modules: d -> (inst, info, sol)."""
    _, sp, _ = chattering_pipeline
    out = {}
    for d in (1, 2, 3, 4, 5):
        inst, info = assemble(sp, d)
        out[d] = (inst, info, solve(inst))
    return out


@pytest.fixture(scope="session")
def double_integrator_pipeline():
    p = benchmarks.load("double_integrator")
    sp, maps = normalize(p)
    return p, sp, maps


@pytest.fixture(scope="session")
def double_integrator_solved(double_integrator_pipeline):
    _, sp, _ = double_integrator_pipeline
    out = {}
    for d in (1, 2, 3, 4, 5):
        inst, info = assemble(sp, d)
        out[d] = (inst, info, solve(inst))
    return out
