import numpy as np
import pytest

from obstaclegames.hamiltonian import (
    HamiltonianArgs,
    ResidualTriple,
    clamp_hamiltonian,
    eval_H_bar_brute,
    eval_H_minus,
    eval_H_plus,
    eval_inner,
    median3,
    residual,
)
from obstaclegames.identities import (
    clamp_identity_suite,
    median_identity_suite,
    ordering_suite,
)
from obstaclegames.problem import (
    ObstacleOrderError,
    STOP,
    extend_coefficients,
)
from obstaclegames import load_instance
from conftest import constant_spec


def test_args_validation():
    with pytest.raises(ValueError):
        HamiltonianArgs([0.0], [0.0, 1.0], [[0.0]])
    with pytest.raises(ValueError):
        HamiltonianArgs([0.0, 0.0], [0.0, 0.0], [[0.0, 1.0], [0.0, 0.0]])


def test_eval_inner_constant_cost():
    spec = constant_spec(a=0.0, b=0.0, r=4.5)
    for p, X in [(0.0, 0.0), (3.0, -2.0)]:
        assert eval_inner([0.2], [0.0], [0.0], [p], [[X]], spec) == 4.5


def test_eval_inner_arithmetic():
    # 0.5*2*4 + 3*1 + 0 = 7
    spec = constant_spec(a=2.0, b=3.0, r=0.0)
    assert eval_inner([0.0], [0.0], [0.0], [1.0], [[4.0]], spec) == pytest.approx(7.0)


def test_eval_inner_stop_pays_upper_rate():
    lam = 1.4
    spec = constant_spec(a=2.0, b=3.0, r=9.9, lam=lam, psi_upper=0.6, psi_lower=-0.8)
    ext = extend_coefficients(spec)
    # stop controls kill drift and diffusion, so (p, X) cannot matter
    for p, X in [(0.0, 0.0), (100.0, -50.0)]:
        val = eval_inner([0.1], STOP, [0.0], [p], [[X]], ext)
        assert val == pytest.approx(lam * 0.6)
    with pytest.raises(ValueError):
        eval_inner([0.1], STOP, [0.0], [0.0], [[0.0]], spec)


def test_eval_inner_dimension_mismatch():
    spec = constant_spec()
    with pytest.raises(ValueError):
        eval_inner([0.0, 0.0], [0.0], [0.0], [0.0], [[0.0]], spec)


def test_matching_pennies_table():
    inst = load_instance("matching-pennies")
    args = HamiltonianArgs([0.0], [0.0], [[0.0]])
    # exhaustive enumeration oracle for the 2x2 table [[0,1],[1,0]]
    table = np.array([[0.0, 1.0], [1.0, 0.0]])
    h_plus_expected = min(max(row) for row in table)
    h_minus_expected = max(min(col) for col in table.T)
    assert h_plus_expected == 1.0 and h_minus_expected == 0.0
    hp = eval_H_plus(args, inst.spec)
    hm = eval_H_minus(args, inst.spec)
    assert hp.value == 1.0
    assert hm.value == 0.0
    assert hp.value >= hm.value


def test_singleton_controls_collapse():
    spec = constant_spec(a=0.3, b=-0.7, r=0.2)
    args = HamiltonianArgs([0.4], [1.5], [[2.0]])
    hp = eval_H_plus(args, spec)
    hm = eval_H_minus(args, spec)
    assert hp.value == hm.value
    assert (hp.u1_index, hp.u2_index) == (0, 0)


def test_tie_break_lowest_index():
    inst = load_instance("matching-pennies")
    spec = inst.spec

    def flat_cost(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    spec.coefficients.running_cost = flat_cost
    args = HamiltonianArgs([0.0], [0.0], [[0.0]])
    hp = eval_H_plus(args, spec)
    assert (hp.u1_index, hp.u2_index) == (0, 0)


def test_clamp_examples():
    # lambda=1, psi_lower=1, psi_upper=3 gives clamp window [1, 3]
    spec = constant_spec(lam=1.0, psi_upper=3.0, psi_lower=1.0)
    assert clamp_hamiltonian(5.0, [0.0], spec, "plus") == 3.0
    assert clamp_hamiltonian(2.0, [0.0], spec, "plus") == 2.0
    assert clamp_hamiltonian(0.0, [0.0], spec, "plus") == 1.0
    assert clamp_hamiltonian(5.0, [0.0], spec, "minus") == 3.0


def test_clamp_rejects_bad_obstacles():
    spec = constant_spec(psi_upper=-1.0, psi_lower=1.0)
    with pytest.raises(ObstacleOrderError):
        clamp_hamiltonian(0.0, [0.0], spec, "plus")


@pytest.mark.parametrize("r,expected", [(0.0, 0.0), (10.0, 1.0), (-10.0, -1.0)])
def test_brute_force_extension_caps(r, expected):
    # singleton base controls, lambda*psi in {-1, +1}: the stop symbols cap
    # the Hamiltonian at the obstacle rates
    spec = constant_spec(a=0.0, b=0.0, r=r, lam=1.0, psi_upper=1.0, psi_lower=-1.0)
    ext = extend_coefficients(spec)
    args = HamiltonianArgs([0.0], [0.0], [[0.0]])
    for sign in ("plus", "minus"):
        assert eval_H_bar_brute(args, ext, sign) == expected


def test_brute_requires_extended():
    spec = constant_spec()
    args = HamiltonianArgs([0.0], [0.0], [[0.0]])
    with pytest.raises(ValueError):
        eval_H_bar_brute(args, spec, "plus")


def test_residual_examples():
    assert residual(ResidualTriple(0.0, 2.0, -2.0)) == 0.0
    assert residual(ResidualTriple(5.0, 0.0, -2.0)) == 0.0
    assert residual(ResidualTriple(-5.0, 2.0, 0.0)) == 0.0
    assert residual(ResidualTriple(1.5, 2.0, -2.0), "min_max") == 1.5


def test_residual_rejects_inverted_triple():
    with pytest.raises(ValueError):
        ResidualTriple(0.0, -1.0, 1.0)


def test_median_helper():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b, c = rng.normal(size=3)
        assert median3(a, b, c) == float(np.median([a, b, c]))


def test_median_identity_suite():
    res = median_identity_suite(100_000, seed=1)
    assert res.max_deviation <= 1e-12


def test_clamp_identity_suite():
    res = clamp_identity_suite(20_000, seed=2)
    assert res.max_deviation <= 1e-12


def test_ordering_h_plus_dominates():
    res = ordering_suite(10_000, seed=3)
    assert res.max_deviation <= 0.0


def test_residual_monotonicity():
    rng = np.random.default_rng(4)
    F = rng.uniform(-5, 5, 2000)
    s1 = rng.uniform(-5, 5, 2000)
    s2 = rng.uniform(-5, 5, 2000)
    sl, su = np.maximum(s1, s2), np.minimum(s1, s2)
    base = np.maximum(np.minimum(F, sl), su)
    bump = rng.uniform(0, 1, 2000)
    up_F = np.maximum(np.minimum(F + bump, sl), su)
    up_sl = np.maximum(np.minimum(F, sl + bump), su)
    up_su = np.maximum(np.minimum(F, sl), su + bump)
    assert np.all(up_F >= base)
    assert np.all(up_sl >= base)
    assert np.all(up_su >= base)


def test_residual_sign_dichotomy():
    # the four VI cases are recoverable from the single residual
    rng = np.random.default_rng(5)
    for _ in range(500):
        sl = rng.uniform(0.1, 3.0)
        su = -rng.uniform(0.1, 3.0)
        # interior: residual == F, so residual 0 forces the equation
        F = rng.uniform(-3, 3)
        assert residual(ResidualTriple(F, sl, su)) == (min(max(F, su), sl))
        assert residual(ResidualTriple(0.0, sl, su)) == 0.0
        # lower contact (s_lower = 0): residual 0 iff F >= 0
        F = rng.uniform(0.0, 3.0)
        assert residual(ResidualTriple(F, 0.0, su)) == 0.0
        assert residual(ResidualTriple(-F - 0.1, 0.0, su)) < 0.0
        # upper contact (s_upper = 0): residual 0 iff F <= 0
        assert residual(ResidualTriple(-F, sl, 0.0)) == 0.0
        assert residual(ResidualTriple(F + 0.1, sl, 0.0)) > 0.0
