import math

import numpy as np
import pytest

from obstaclegames.grid import GridFunction, Lattice, second_difference, upwind_gradient
from obstaclegames.problem import CoefficientField, validate_problem
from obstaclegames.solver import (
    DiscreteOperator,
    NonConvergenceError,
    SolveOptions,
    convergence_study,
    manufactured_instance,
    manufactured_lattice,
    solve_vi,
    upper_lower_gap,
    verify_vi_conditions,
)
from obstaclegames import load_instance
from conftest import constant_spec


def _cosine_cost_spec(lam=1.25, psi_upper=0.4, psi_lower=-0.3):
    spec = constant_spec(a=0.0, b=0.0, lam=lam, psi_upper=psi_upper, psi_lower=psi_lower)

    def cost(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return 0.8 * np.cos(3.0 * x[..., 0]) + 0.1

    spec.coefficients = CoefficientField(
        spec.coefficients.drift, spec.coefficients.diffusion_matrix, cost
    )
    return spec


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.5])
def test_degenerate_closed_form(lam):
    # a = b = 0: no spatial coupling, the solution is clamp(r/lambda, psi2, psi1)
    spec = _cosine_cost_spec(lam=lam)
    lattice = Lattice([-1.0], [1.0], (101,))
    report = solve_vi(spec, lattice, SolveOptions(tolerance=1e-9))
    x = lattice.nodes()
    expected = np.clip((0.8 * np.cos(3.0 * x[:, 0]) + 0.1) / lam, -0.3, 0.4)
    assert np.max(np.abs(report.solution.values - expected)) <= 1e-8


def test_equal_obstacles_pinch(solved_registry):
    inst, report = solved_registry["equal-obstacles"]
    assert np.max(np.abs(report.solution.values - inst.exact.values)) <= 1e-8
    assert report.vi_audit.n_dual == inst.lattice.node_count


def test_brownian_zero_solution(solved_registry):
    inst, report = solved_registry["brownian-dynkin"]
    assert np.max(np.abs(report.solution.values)) <= 1e-8
    assert report.contact_lower.size == 0
    assert report.contact_upper.size == 0
    assert report.final_residual <= report.tolerance


def test_registry_sandwich(solved_registry):
    for name, (inst, report) in solved_registry.items():
        nodes = inst.lattice.nodes()
        psi_up = np.asarray(inst.spec.obstacles.psi_upper(nodes), dtype=float)
        psi_lo = np.asarray(inst.spec.obstacles.psi_lower(nodes), dtype=float)
        v = report.solution.values
        assert np.all(v >= psi_lo - 1e-8), name
        assert np.all(v <= psi_up + 1e-8), name


def test_registry_audits_pass(solved_registry):
    for name, (inst, report) in solved_registry.items():
        assert report.vi_audit.passed, f"{name}: {report.vi_audit.summary()}"


def test_audit_conditions_tight_on_closed_form():
    spec = _cosine_cost_spec()
    lattice = Lattice([-1.0], [1.0], (101,))
    report = solve_vi(spec, lattice, SolveOptions(tolerance=1e-10))
    audit = report.vi_audit
    for cond in audit.conditions:
        assert cond.worst <= 1e-9, cond


def test_manufactured_exact_matches_generator():
    lattice = manufactured_lattice("smooth-1d-interior")
    spec, exact, dirichlet = manufactured_instance("smooth-1d-interior", lattice)
    assert dirichlet is None
    x = lattice.nodes()
    assert np.allclose(exact.values, 0.5 * np.cos(0.5 * np.pi * x[:, 0]), atol=0)
    assert validate_problem(spec).passed


def test_manufactured_error_decreases_under_refinement():
    errs = []
    for nodes in ((51,), (101,)):
        lattice = manufactured_lattice("smooth-1d-interior", nodes)
        spec, exact, dirichlet = manufactured_instance("smooth-1d-interior", lattice)
        report = solve_vi(spec, lattice, SolveOptions(tolerance=1e-9))
        mask = lattice.interior_subbox_mask()
        errs.append(float(np.max(np.abs(report.solution.values[mask] - exact.values[mask]))))
    assert errs[1] < errs[0]


def test_lower_contact_profile_has_contact(solved_registry):
    inst, report = solved_registry["lower-contact-band"]
    assert report.contact_lower.size > 0
    assert report.contact_upper.size == 0
    # the contact band |x| <= 0.35 must be inside the detected set
    xs = inst.lattice.nodes()[report.contact_lower, 0]
    assert xs.min() <= -0.3 and xs.max() >= 0.3


def test_upper_contact_profile_has_contact(solved_registry):
    inst, report = solved_registry["upper-contact-band"]
    assert report.contact_upper.size > 0
    assert report.contact_lower.size == 0


def test_unknown_profile_rejected():
    with pytest.raises(KeyError):
        manufactured_lattice("no-such-profile")
    lattice = manufactured_lattice("smooth-1d-interior")
    with pytest.raises(KeyError):
        manufactured_instance("no-such-profile", lattice)


def test_gap_zero_for_singleton_opponent():
    # inf-sup equals sup-inf when player 2 has one control
    inst = load_instance("controlled-drift")
    spec = inst.spec
    spec.controls = (spec.controls[0], type(spec.controls[1])([[1.0]]))
    gap = upper_lower_gap(spec, inst.lattice, SolveOptions(tolerance=1e-9))
    assert gap <= 2e-9


def test_matching_pennies_gap(solved_registry):
    inst, _ = solved_registry["matching-pennies"]
    gap = upper_lower_gap(inst.spec, inst.lattice, inst.solve)
    # H+ = 1, H- = 0, both interior after clamping: gap = 1/lambda
    assert gap == pytest.approx(1.0, abs=2e-9)


def test_plus_dominates_minus_nodewise():
    from dataclasses import replace

    inst = load_instance("controlled-drift")
    plus = solve_vi(inst.spec, inst.lattice, replace(inst.solve, sign="plus"))
    minus = solve_vi(inst.spec, inst.lattice, replace(inst.solve, sign="minus"))
    tol = inst.solve.tolerance
    assert np.all(plus.solution.values >= minus.solution.values - 2 * tol)


def test_comparison_raising_cost_raises_solution():
    inst1 = load_instance("ou-lower-contact")
    inst2 = load_instance("ou-lower-contact")
    base_cost = inst2.spec.coefficients.running_cost

    def higher(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return base_cost(x, u1, u2) + 0.3 * (1.0 + np.cos(x[..., 0]))

    inst2.spec.coefficients = CoefficientField(
        inst2.spec.coefficients.drift,
        inst2.spec.coefficients.diffusion_matrix,
        higher,
    )
    rep1 = solve_vi(inst1.spec, inst1.lattice, inst1.solve)
    rep2 = solve_vi(inst2.spec, inst2.lattice, inst2.solve)
    tol = inst1.solve.tolerance
    assert np.all(rep2.solution.values >= rep1.solution.values - 2 * tol)


def test_residual_forms_bitwise_identical():
    from dataclasses import replace

    inst = load_instance("smooth-interior")
    rep_mm = solve_vi(inst.spec, inst.lattice, replace(inst.solve, residual_form="max_min"))
    rep_xm = solve_vi(inst.spec, inst.lattice, replace(inst.solve, residual_form="min_max"))
    assert rep_mm.iterations == rep_xm.iterations
    assert np.array_equal(rep_mm.solution.values, rep_xm.solution.values)


def test_contraction_iteration_bound():
    inst = load_instance("smooth-interior")
    report = solve_vi(inst.spec, inst.lattice, inst.solve)
    res0 = report.residual_history[0][1]
    lam = inst.spec.discount
    bound = math.log(res0 / inst.solve.tolerance) / (report.timestep * lam) + 1.0
    assert report.iterations <= bound


def test_monotone_node_update():
    # increasing any neighbour value never decreases the updated value
    rng = np.random.default_rng(8)
    for name in ("ou-lower-contact", "smooth-2d"):
        inst = load_instance(name)
        op = DiscreteOperator(inst.spec, inst.lattice, dirichlet=inst.solve.dirichlet)
        dt = op.timestep()
        psi_up = op.psi_upper
        psi_lo = op.psi_lower
        v = np.clip(rng.normal(size=inst.lattice.node_count), psi_lo, psi_up)
        base = v - dt * op.residual_vector(v, "plus", "max_min")
        for _ in range(20):
            j = int(rng.integers(0, v.size))
            if op.pinned[j]:
                continue
            v2 = v.copy()
            v2[j] += 0.05
            upd = v2 - dt * op.residual_vector(v2, "plus", "max_min")
            assert np.all(upd >= base - 1e-12), name


def test_nonconvergence_carries_report():
    inst = load_instance("smooth-interior")
    with pytest.raises(NonConvergenceError) as err:
        solve_vi(inst.spec, inst.lattice, SolveOptions(tolerance=1e-12, max_iterations=3))
    assert err.value.report.iterations == 3
    assert not err.value.report.converged


def test_operator_matches_pointwise_stencils():
    # the sparse per-pair stencil agrees with the pointwise grid operators
    rng = np.random.default_rng(12)
    for name in ("controlled-drift", "cross-2d"):
        inst = load_instance(name)
        op = DiscreteOperator(inst.spec, inst.lattice, dirichlet=None)
        gf = GridFunction(inst.lattice, rng.normal(size=inst.lattice.node_count))
        nodes = inst.lattice.nodes()
        scale = float(np.max(np.abs(gf.values))) / min(inst.lattice.spacing) ** 2
        for (i1, i2), L in op.stencils.items():
            u1 = op.u1s[i1]
            u2 = op.u2s[i2]
            lhs = L @ gf.values + op.costs[(i1, i2)]
            for node in rng.integers(0, inst.lattice.node_count, size=12):
                node = int(node)
                x = nodes[node]
                b = np.asarray(inst.spec.coefficients.drift(x, u1, u2), dtype=float).reshape(-1)
                a = np.asarray(
                    inst.spec.coefficients.diffusion_matrix(x, u1, u2), dtype=float
                ).reshape(inst.spec.dimension, inst.spec.dimension)
                r = float(np.asarray(inst.spec.coefficients.running_cost(x, u1, u2)))
                expected = (
                    second_difference(gf, node, a)
                    + float(b @ upwind_gradient(gf, node, b))
                    + r
                )
                assert lhs[node] == pytest.approx(expected, abs=1e-11 * max(1.0, scale))


def test_dirichlet_default_pins_boundary():
    inst = load_instance("quadratic-degenerate")
    report = solve_vi(inst.spec, inst.lattice, inst.solve)
    v = report.solution.values
    x = inst.lattice.nodes()
    r = np.clip(2.0 * x[:, 0], -0.8, 0.8)
    expected = np.clip(r / 1.0, -0.9, 0.9)
    assert v[0] == expected[0]
    assert v[-1] == expected[-1]
    assert report.dirichlet_used


def test_convergence_study_orders():
    rows = convergence_study("smooth-1d-interior", 2, base_nodes=(51,))
    assert rows[1]["error"] < rows[0]["error"]
    assert rows[1]["order"] >= 0.8


def test_report_manifest_and_csv(tmp_path):
    from obstaclegames.solver import write_audit_csv, write_solution_csv

    inst = load_instance("clamp-closed-form")
    report = solve_vi(inst.spec, inst.lattice, inst.solve)
    text = report.manifest_text()
    assert "final_residual" in text and "iterations" in text
    write_solution_csv(report, tmp_path / "solution.csv")
    write_audit_csv(report, tmp_path / "audit.csv")
    assert (tmp_path / "solution.csv").read_text().startswith("x,value")
    lines = (tmp_path / "audit.csv").read_text().splitlines()
    assert len(lines) == inst.lattice.node_count + 1
