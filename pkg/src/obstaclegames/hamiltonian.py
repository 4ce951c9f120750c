"""Pointwise Hamiltonian algebra for the double-obstacle Isaacs equations.

The upper Hamiltonian H+ is the min over player 1's controls of the max over
player 2's controls of the generator-plus-cost term; H- swaps the order, so
H+ >= H- always.  Clamping H into [lambda*psi_lower, lambda*psi_upper]
reproduces exactly the Hamiltonian of the stop-symbol-extended game, and the
double-obstacle residual in either max-min or min-max form equals the median
of the equation term and the two obstacle terms.  Those identities are exact
in floating point because min/max/median merely select one of their
arguments; the test suite asserts them at 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import STOP, ObstacleOrderError, ProblemSpec


@dataclass(frozen=True)
class HamiltonianArgs:
    """State x, gradient surrogate p, and symmetric Hessian surrogate X."""

    x: np.ndarray
    p: np.ndarray
    X: np.ndarray

    def __init__(self, x, p, X):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p = np.atleast_1d(np.asarray(p, dtype=float))
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if p.shape != x.shape or X.shape != (x.size, x.size):
            raise ValueError("argument dimensions are inconsistent")
        if np.max(np.abs(X - X.T), initial=0.0) > 1e-12:
            raise ValueError("Hessian surrogate must be symmetric to 1e-12")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "X", X)


@dataclass(frozen=True)
class HamiltonianValue:
    value: float
    u1_index: int
    u2_index: int


def eval_inner(x, u1, u2, p, X, spec: ProblemSpec) -> float:
    """0.5*tr(a X) + b.p + r at one state/control/argument tuple.

    Accepts STOP controls only on extended specs, where drift and diffusion
    vanish and the cost pays the obstacle rate.
    """
    if (u1 is STOP or u2 is STOP) and not spec.is_extended:
        raise ValueError("stop symbols are only valid on an extended spec")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = spec.dimension
    if x.size != d or p.size != d or X.shape != (d, d):
        raise ValueError("argument dimensions do not match the problem dimension")
    a = np.asarray(spec.coefficients.diffusion_matrix(x, u1, u2), dtype=float).reshape(d, d)
    b = np.asarray(spec.coefficients.drift(x, u1, u2), dtype=float).reshape(d)
    r = float(np.asarray(spec.coefficients.running_cost(x, u1, u2)))
    return 0.5 * float(np.trace(a @ X)) + float(b @ p) + r


def _minimax(args: HamiltonianArgs, spec: ProblemSpec, outer_min: bool) -> HamiltonianValue:
    u1s = spec.controls[0].members
    u2s = spec.controls[1].members
    if outer_min:
        # H+: min over u1 of max over u2; ties keep the lowest index
        best_val = None
        best = (0, 0)
        for i, u1 in enumerate(u1s):
            row_val = None
            row_j = 0
            for j, u2 in enumerate(u2s):
                v = eval_inner(args.x, u1, u2, args.p, args.X, spec)
                if row_val is None or v > row_val:
                    row_val, row_j = v, j
            if best_val is None or row_val < best_val:
                best_val, best = row_val, (i, row_j)
        return HamiltonianValue(best_val, best[0], best[1])
    best_val = None
    best = (0, 0)
    for j, u2 in enumerate(u2s):
        col_val = None
        col_i = 0
        for i, u1 in enumerate(u1s):
            v = eval_inner(args.x, u1, u2, args.p, args.X, spec)
            if col_val is None or v < col_val:
                col_val, col_i = v, i
        if best_val is None or col_val > best_val:
            best_val, best = col_val, (col_i, j)
    return HamiltonianValue(best_val, best[0], best[1])


def eval_H_plus(args: HamiltonianArgs, spec: ProblemSpec) -> HamiltonianValue:
    """Upper Isaacs Hamiltonian: exact min-max over the finite control sets."""
    return _minimax(args, spec, outer_min=True)


def eval_H_minus(args: HamiltonianArgs, spec: ProblemSpec) -> HamiltonianValue:
    """Lower Isaacs Hamiltonian: exact max-min over the finite control sets."""
    return _minimax(args, spec, outer_min=False)


def obstacle_bounds(x, spec: ProblemSpec) -> tuple[float, float]:
    """(lambda*psi_lower, lambda*psi_upper) at x, with the order enforced."""
    lam = spec.discount
    lo = lam * float(np.asarray(spec.obstacles.psi_lower(np.atleast_1d(np.asarray(x, float)))))
    hi = lam * float(np.asarray(spec.obstacles.psi_upper(np.atleast_1d(np.asarray(x, float)))))
    if lo > hi:
        raise ObstacleOrderError(f"psi_lower > psi_upper at x={x}")
    return lo, hi


def clamp_hamiltonian(h: float, x, spec: ProblemSpec, sign: str) -> float:
    """Clamp H into [lambda*psi_lower, lambda*psi_upper].

    sign "plus" uses (H v lambda*psi2) ^ lambda*psi1, sign "minus" uses
    (H ^ lambda*psi1) v lambda*psi2; with ordered obstacles both equal the
    median of the three values, which is asserted.
    """
    if sign not in ("plus", "minus"):
        raise ValueError("sign must be 'plus' or 'minus'")
    lo, hi = obstacle_bounds(x, spec)
    plus_form = min(max(h, lo), hi)
    minus_form = max(min(h, hi), lo)
    assert plus_form == minus_form, "clamp forms must coincide for ordered obstacles"
    return plus_form if sign == "plus" else minus_form


def eval_H_bar_brute(args: HamiltonianArgs, extended_spec: ProblemSpec, sign: str) -> float:
    """Extended-control Hamiltonian by exhaustive enumeration.

    Ranges over the stop-extended control sets; must coincide with
    clamp_hamiltonian applied to the base Hamiltonian (the executable content
    of the equivalence between the constrained and extended formulations).
    """
    if not extended_spec.is_extended:
        raise ValueError("eval_H_bar_brute requires an extended spec")
    if sign == "plus":
        return _minimax(args, extended_spec, outer_min=True).value
    if sign == "minus":
        return _minimax(args, extended_spec, outer_min=False).value
    raise ValueError("sign must be 'plus' or 'minus'")


@dataclass(frozen=True)
class ResidualTriple:
    """Equation term F = lambda*v - H and the two obstacle terms.

    s_lower = lambda*(v - psi_lower) >= s_upper = lambda*(v - psi_upper).
    """

    F: float
    s_lower: float
    s_upper: float

    def __post_init__(self):
        if self.s_upper > self.s_lower + 1e-12:
            raise ValueError(
                f"ill-formed residual triple: s_upper={self.s_upper} > s_lower={self.s_lower}"
            )


def median3(a: float, b: float, c: float) -> float:
    return max(min(a, b), min(max(a, b), c))


def residual(triple: ResidualTriple, form: str = "max_min") -> float:
    """Double-obstacle residual; zero exactly at solutions.

    max_min: max(min(F, s_lower), s_upper); min_max: min(max(F, s_upper),
    s_lower).  Both equal the median of the three values, which is asserted.
    """
    F, sl, su = triple.F, triple.s_lower, triple.s_upper
    max_min = max(min(F, sl), su)
    min_max = min(max(F, su), sl)
    assert max_min == min_max, "residual forms must coincide for ordered triples"
    if form == "max_min":
        return max_min
    if form == "min_max":
        return min_max
    raise ValueError("form must be 'max_min' or 'min_max'")
