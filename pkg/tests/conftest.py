import numpy as np
import pytest

from ncpd.constraints import FeasibleSet, project
from ncpd.tensors import CpdPoint, CpdStructure, tensor_from_cpd

TINY_DIMS = (4, 3, 2)
TINY_RANK = 2


def tiny_structure() -> CpdStructure:
    return CpdStructure(TINY_DIMS, TINY_RANK)


def random_feasible(structure: CpdStructure, rng) -> CpdPoint:
    return project(FeasibleSet(structure), rng.uniform(0.1, 1.0, size=structure.size))


def strictly_positive_point(structure: CpdStructure, rng) -> CpdPoint:
    """Feasible point with every entry bounded away from zero, so every
    projection-related quantity is smooth in a neighborhood."""
    return project(FeasibleSet(structure), rng.uniform(0.5, 1.5, size=structure.size))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def tiny_problem(rng):
    """A tiny exact-fit problem: (structure, tensor, planted point)."""
    structure = tiny_structure()
    planted = strictly_positive_point(structure, rng)
    return structure, tensor_from_cpd(planted), planted
