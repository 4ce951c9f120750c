import numpy as np
import pytest

from obstaclegames.problem import (
    Box,
    CoefficientField,
    ControlSet,
    ObstaclePair,
    ProblemSpec,
    ProblemValidationError,
    STOP,
    build_cost,
    build_diffusion,
    build_drift,
    build_scalar_field,
    extend_coefficients,
    validate_problem,
)
from conftest import constant_spec


def test_control_set_invariants():
    cs = ControlSet([[0.0], [1.0]])
    assert cs.size == 2 and not cs.has_stop
    with pytest.raises(ValueError):
        ControlSet([])
    with pytest.raises(ValueError):
        ControlSet([[0.0], [0.0]])
    with pytest.raises(ValueError):
        ControlSet([[0.0, 1.0, 2.0, 3.0]])
    ext = ControlSet([[0.0]], has_stop=True)
    assert ext.size == 2
    assert ext.members[-1] is STOP


def test_validate_zero_diffusion_passes():
    report = validate_problem(constant_spec(a=0.0))
    assert report.passed
    names = [e.name for e in report.entries]
    assert any("positive semidefinite" in n for n in names)


def test_validate_obstacle_order():
    ok = constant_spec(psi_upper=1.0, psi_lower=-1.0)
    assert validate_problem(ok).passed
    bad = constant_spec(psi_upper=-1.0, psi_lower=1.0)
    with pytest.raises(ProblemValidationError) as err:
        validate_problem(bad)
    assert any(
        "obstacle order" in e.name and not e.passed for e in err.value.report.entries
    )


def test_validate_quadratic_degenerate_flagged():
    def diffusion(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return (x[..., 0] ** 2)[..., None, None]

    spec = constant_spec()
    spec.coefficients = CoefficientField(
        spec.coefficients.drift, diffusion, spec.coefficients.running_cost
    )
    report = validate_problem(spec)
    assert report.passed
    assert report.degenerate_diffusion


def test_validate_bound_warnings_are_soft():
    spec = constant_spec(b=2.0)
    spec.coefficients.bound_estimates = {"drift": 0.5}
    with pytest.warns(UserWarning, match="declared bound"):
        report = validate_problem(spec)
    assert report.passed
    assert len(report.warnings) == 1


def test_extension_sizes_and_sentinel_position():
    spec = constant_spec()
    ext = extend_coefficients(spec)
    for k in range(2):
        assert ext.controls[k].size == spec.controls[k].size + 1
        assert ext.controls[k].members[-1] is STOP
    assert ext.is_extended
    with pytest.raises(ValueError):
        extend_coefficients(ext)


def test_extension_coefficient_rules():
    lam = 1.3
    psi_up = lambda x: 0.5 + 0.0 * np.asarray(x, float)[..., 0]
    psi_lo = lambda x: -0.25 + 0.1 * np.asarray(x, float)[..., 0]
    spec = constant_spec(a=0.7, b=0.4, r=0.2, lam=lam)
    spec.obstacles = ObstaclePair(psi_up, psi_lo)
    ext = extend_coefficients(spec)
    u = np.array([0.0])
    x = np.array([[0.3], [-0.8]])

    # drift and diffusion vanish whenever either control is the stop symbol
    assert np.array_equal(ext.coefficients.drift(x, STOP, u), np.zeros((2, 1)))
    assert np.array_equal(ext.coefficients.drift(x, u, STOP), np.zeros((2, 1)))
    assert np.array_equal(
        ext.coefficients.diffusion_matrix(x, u, STOP), np.zeros((2, 1, 1))
    )
    # player 1 stopping pays lambda * psi_upper against a regular control
    assert np.allclose(ext.coefficients.running_cost(x, STOP, u), lam * psi_up(x))
    # player 2 stopping pays lambda * psi_lower, including the joint stop pair
    assert np.allclose(ext.coefficients.running_cost(x, u, STOP), lam * psi_lo(x))
    assert np.allclose(ext.coefficients.running_cost(x, STOP, STOP), lam * psi_lo(x))


def test_extension_recovers_base_bitwise():
    rng = np.random.default_rng(2)
    spec = constant_spec(a=0.6, b=-0.3, r=0.9)
    ext = extend_coefficients(spec)
    x = rng.uniform(-1, 1, size=(17, 1))
    u1 = spec.controls[0].points[0]
    u2 = spec.controls[1].points[0]
    assert np.array_equal(
        ext.coefficients.drift(x, u1, u2), spec.coefficients.drift(x, u1, u2)
    )
    assert np.array_equal(
        ext.coefficients.diffusion_matrix(x, u1, u2),
        spec.coefficients.diffusion_matrix(x, u1, u2),
    )
    assert np.array_equal(
        ext.coefficients.running_cost(x, u1, u2),
        spec.coefficients.running_cost(x, u1, u2),
    )


def test_validate_passes_after_extension():
    spec = constant_spec(a=0.5, b=0.2, r=-0.4)
    assert validate_problem(spec).passed
    assert validate_problem(extend_coefficients(spec)).passed


def test_box_helpers():
    box = Box([-1.0, 0.0], [1.0, 2.0])
    assert box.corners().shape == (4, 2)
    inside = box.contains(np.array([[0.0, 1.0], [2.0, 1.0]]))
    assert inside.tolist() == [True, False]
    with pytest.raises(ValueError):
        Box([1.0], [1.0])


def test_scalar_families():
    x = np.array([[0.5], [-0.25]])
    f = build_scalar_field({"family": "constant", "value": 2.5}, 1)
    assert np.allclose(f(x), 2.5)
    f = build_scalar_field({"family": "affine", "coeffs": [2.0], "offset": 1.0}, 1)
    assert np.allclose(f(x), 2.0 * x[:, 0] + 1.0)
    f = build_scalar_field(
        {"family": "cosine", "amplitude": 2.0, "frequency": [3.0], "offset": -1.0}, 1
    )
    assert np.allclose(f(x), 2.0 * np.cos(3.0 * x[:, 0]) - 1.0)
    f = build_scalar_field(
        {"family": "clamped_linear", "coeffs": [4.0], "lower": -1.0, "upper": 1.0}, 1
    )
    assert np.allclose(f(x), np.clip(4.0 * x[:, 0], -1.0, 1.0))
    with pytest.raises(ValueError):
        build_scalar_field({"family": "nope"}, 1)


def test_drift_and_diffusion_families():
    x = np.array([[0.5, -1.0], [0.0, 2.0]])
    u = np.array([0.0])
    f = build_drift({"family": "mean_revert", "rate": 2.0, "center": [1.0, 0.0]}, 2)
    assert np.allclose(f(x, u, u), -2.0 * (x - np.array([1.0, 0.0])))
    g = build_diffusion({"family": "axis_quadratic", "scale": [1.0, 2.0]}, 2)
    a = g(x, u, u)
    assert np.allclose(a[:, 0, 0], x[:, 0] ** 2)
    assert np.allclose(a[:, 1, 1], 2.0 * x[:, 1] ** 2)
    assert np.allclose(a[:, 0, 1], 0.0)
    bump = build_diffusion({"family": "axis_bump", "scale": [1.0], "half_width": [2.0]}, 1)
    a = bump(np.array([[2.0], [0.0]]), u, u)
    assert a[0, 0, 0] == pytest.approx(0.0)
    assert a[1, 0, 0] == pytest.approx(1.0)


def test_cost_families():
    controls = (ControlSet([[0.0], [1.0]]), ControlSet([[0.0], [1.0]]))
    x = np.array([[0.1]])
    table = build_cost(
        {"family": "control_table", "values": [[0.0, 1.0], [1.0, 0.0]]}, 1, controls
    )
    assert table(x, [0.0], [1.0])[0] == 1.0
    assert table(x, [1.0], [1.0])[0] == 0.0
    with pytest.raises(ValueError):
        build_cost({"family": "control_table", "values": [[0.0]]}, 1, controls)
    bil = build_cost(
        {"family": "bilinear", "scale": 2.0, "field": {"family": "constant", "value": 3.0}},
        1,
        controls,
    )
    assert bil(x, [1.0], [1.0])[0] == pytest.approx(6.0)
