import numpy as np
import pytest

from obstaclegames import load_instance, registry_names, solve_vi
from obstaclegames.problem import (
    Box,
    CoefficientField,
    ControlSet,
    ObstaclePair,
    ProblemSpec,
)


def constant_spec(
    d=1,
    a=0.0,
    b=0.0,
    r=0.0,
    lam=1.0,
    psi_upper=1.0,
    psi_lower=-1.0,
    box=(-1.0, 1.0),
):
    """Constant-coefficient instance; a may be a scalar (diagonal) or matrix."""
    a_mat = np.asarray(a, dtype=float)
    if a_mat.ndim == 0:
        a_mat = np.eye(d) * float(a_mat)
    b_vec = np.asarray(b, dtype=float)
    if b_vec.ndim == 0:
        b_vec = np.full(d, float(b_vec))

    def drift(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(b_vec, x.shape).copy()

    def diffusion(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(a_mat, x.shape[:-1] + (d, d)).copy()

    def cost(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(r))

    return ProblemSpec(
        dimension=d,
        coefficients=CoefficientField(drift, diffusion, cost),
        obstacles=ObstaclePair(
            lambda x: np.full(np.asarray(x, float).shape[:-1], float(psi_upper)),
            lambda x: np.full(np.asarray(x, float).shape[:-1], float(psi_lower)),
        ),
        controls=(ControlSet([[0.0]]), ControlSet([[0.0]])),
        discount=lam,
        box=Box([box[0]] * d, [box[1]] * d),
    )


@pytest.fixture(scope="session")
def solved_registry():
    """Every registry instance solved once per session."""
    out = {}
    for name in registry_names():
        inst = load_instance(name)
        report = solve_vi(inst.spec, inst.lattice, inst.solve)
        out[name] = (inst, report)
    return out
