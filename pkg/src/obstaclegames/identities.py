"""Randomised identity suites for the pointwise Hamiltonian algebra.

Three exact identities are exercised on randomly generated finite-control
instances and arguments:

* the max-min and min-max double-obstacle residuals both equal the median of
  the equation term and the two obstacle terms,
* the brute-force Hamiltonian over the stop-extended control sets equals the
  base Hamiltonian clamped into [lambda*psi_lower, lambda*psi_upper],
* the upper Hamiltonian dominates the lower one.

All are selections among identical floating-point values, so the observed
deviation should be exactly zero; the suites report the maximum deviation
and the callers assert it against 1e-12.  The bulk runs vectorised; each
instance also routes one argument through the scalar module API
(eval_H_plus / eval_H_bar_brute / clamp_hamiltonian / residual) to tie the
suites to the public functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hamiltonian import (
    HamiltonianArgs,
    ResidualTriple,
    clamp_hamiltonian,
    eval_H_bar_brute,
    eval_H_minus,
    eval_H_plus,
    residual,
)
from .problem import (
    Box,
    CoefficientField,
    ControlSet,
    ObstaclePair,
    ProblemSpec,
    extend_coefficients,
)


@dataclass
class SuiteResult:
    cases: int
    max_deviation: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= 1e-12


def median_identity_suite(trials: int, seed: int = 0) -> SuiteResult:
    """max(min(F, s_l), s_u) == min(max(F, s_u), s_l) == median, elementwise."""
    rng = np.random.default_rng(seed)
    F = rng.uniform(-10.0, 10.0, trials)
    s1 = rng.uniform(-10.0, 10.0, trials)
    s2 = rng.uniform(-10.0, 10.0, trials)
    s_lower = np.maximum(s1, s2)
    s_upper = np.minimum(s1, s2)
    max_min = np.maximum(np.minimum(F, s_lower), s_upper)
    min_max = np.minimum(np.maximum(F, s_upper), s_lower)
    med = np.median(np.stack([F, s_lower, s_upper]), axis=0)
    dev = max(
        float(np.max(np.abs(max_min - med))),
        float(np.max(np.abs(min_max - med))),
    )
    # tie a sample back to the module function
    for i in range(0, trials, max(1, trials // 200)):
        t = ResidualTriple(float(F[i]), float(s_lower[i]), float(s_upper[i]))
        dev = max(
            dev,
            abs(residual(t, "max_min") - max_min[i]),
            abs(residual(t, "min_max") - min_max[i]),
        )
    return SuiteResult(cases=trials, max_deviation=dev)


def _random_tables(rng: np.random.Generator):
    d = int(rng.integers(1, 3))
    n1 = int(rng.integers(1, 4))
    n2 = int(rng.integers(1, 4))
    a_tab = np.zeros((n1, n2, d, d))
    for i in range(n1):
        for j in range(n2):
            if rng.random() < 0.25:
                continue  # keep degenerate (zero) diffusion a first-class case
            L = rng.normal(size=(d, d))
            a_tab[i, j] = L @ L.T
    b_tab = rng.normal(size=(n1, n2, d))
    r0 = rng.normal(size=(n1, n2))
    r1 = rng.normal(size=(n1, n2))
    lam = float(rng.uniform(0.3, 3.0))
    c0 = float(rng.uniform(-1.0, 1.0))
    gap_up = float(rng.uniform(0.0, 2.0))
    gap_dn = float(rng.uniform(0.0, 2.0))
    return d, n1, n2, a_tab, b_tab, r0, r1, lam, c0, gap_up, gap_dn


def _table_spec(d, n1, n2, a_tab, b_tab, r0, r1, lam, c0, gap_up, gap_dn) -> ProblemSpec:
    def _idx(u):
        return int(round(float(np.atleast_1d(u)[0])))

    def drift(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(b_tab[_idx(u1), _idx(u2)], x.shape).copy()

    def diffusion(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(
            a_tab[_idx(u1), _idx(u2)], x.shape[:-1] + (d, d)
        ).copy()

    def cost(x, u1, u2):
        x = np.asarray(x, dtype=float)
        mod = 1.0 + 0.3 * np.cos(np.sum(x, axis=-1))
        return r0[_idx(u1), _idx(u2)] * mod + r1[_idx(u1), _idx(u2)]

    def psi_upper(x):
        x = np.asarray(x, dtype=float)
        return c0 + gap_up * (1.0 + 0.2 * np.sin(np.sum(x, axis=-1)))

    def psi_lower(x):
        x = np.asarray(x, dtype=float)
        return c0 - gap_dn * (1.0 + 0.2 * np.cos(np.sum(x, axis=-1)))

    return ProblemSpec(
        dimension=d,
        coefficients=CoefficientField(drift, diffusion, cost),
        obstacles=ObstaclePair(psi_upper, psi_lower),
        controls=(
            ControlSet([[float(i)] for i in range(n1)]),
            ControlSet([[float(j)] for j in range(n2)]),
        ),
        discount=lam,
        box=Box([-1.0] * d, [1.0] * d),
    )


def _vectorised_values(d, n1, n2, a_tab, b_tab, r0, r1, lam, c0, gap_up, gap_dn, rng, K):
    x = rng.uniform(-1.0, 1.0, size=(K, d))
    p = rng.normal(size=(K, d))
    A = rng.normal(size=(K, d, d))
    X = 0.5 * (A + np.swapaxes(A, 1, 2))

    mod = 1.0 + 0.3 * np.cos(np.sum(x, axis=-1))
    vals = np.empty((n1, n2, K))
    for i in range(n1):
        for j in range(n2):
            vals[i, j] = (
                0.5 * np.einsum("ab,kab->k", a_tab[i, j], X)
                + p @ b_tab[i, j]
                + r0[i, j] * mod
                + r1[i, j]
            )
    lam_psi_up = lam * (c0 + gap_up * (1.0 + 0.2 * np.sin(np.sum(x, axis=-1))))
    lam_psi_lo = lam * (c0 - gap_dn * (1.0 + 0.2 * np.cos(np.sum(x, axis=-1))))

    h_plus = np.min(np.max(vals, axis=1), axis=0)
    h_minus = np.max(np.min(vals, axis=0), axis=0)

    # extended table: one stop row for player 1 (pays lambda*psi_upper against
    # regular controls), one stop column for player 2 (pays lambda*psi_lower,
    # including against player 1's stop symbol)
    ext = np.empty((n1 + 1, n2 + 1, K))
    ext[:n1, :n2] = vals
    ext[n1, :n2] = lam_psi_up
    ext[:, n2] = lam_psi_lo
    hbar_plus = np.min(np.max(ext, axis=1), axis=0)
    hbar_minus = np.max(np.min(ext, axis=0), axis=0)

    clamp_plus = np.minimum(np.maximum(h_plus, lam_psi_lo), lam_psi_up)
    clamp_minus = np.maximum(np.minimum(h_minus, lam_psi_up), lam_psi_lo)
    return x, p, X, h_plus, h_minus, hbar_plus, hbar_minus, clamp_plus, clamp_minus


def clamp_identity_suite(trials: int, seed: int = 0, args_per_instance: int = 50) -> SuiteResult:
    """Brute-force extended Hamiltonians vs clamped base Hamiltonians."""
    rng = np.random.default_rng(seed)
    n_instances = max(1, trials // args_per_instance)
    dev = 0.0
    cases = 0
    for _ in range(n_instances):
        tables = _random_tables(rng)
        out = _vectorised_values(*tables, rng, args_per_instance)
        x, p, X, h_plus, h_minus, hbar_plus, hbar_minus, clamp_plus, clamp_minus = out
        dev = max(
            dev,
            float(np.max(np.abs(hbar_plus - clamp_plus))),
            float(np.max(np.abs(hbar_minus - clamp_minus))),
        )
        cases += 2 * args_per_instance

        # route one argument through the scalar module API
        spec = _table_spec(*tables)
        ext_spec = extend_coefficients(spec)
        args = HamiltonianArgs(x[0], p[0], X[0])
        hp = eval_H_plus(args, spec).value
        hm = eval_H_minus(args, spec).value
        dev = max(
            dev,
            abs(eval_H_bar_brute(args, ext_spec, "plus")
                - clamp_hamiltonian(hp, x[0], spec, "plus")),
            abs(eval_H_bar_brute(args, ext_spec, "minus")
                - clamp_hamiltonian(hm, x[0], spec, "minus")),
            abs(hp - h_plus[0]),
            abs(hm - h_minus[0]),
        )
    return SuiteResult(cases=cases, max_deviation=dev)


def ordering_suite(trials: int, seed: int = 0, args_per_instance: int = 10) -> SuiteResult:
    """H+ >= H- pointwise; the reported deviation is the worst violation."""
    rng = np.random.default_rng(seed)
    n_instances = max(1, trials // args_per_instance)
    worst = 0.0
    cases = 0
    for _ in range(n_instances):
        tables = _random_tables(rng)
        out = _vectorised_values(*tables, rng, args_per_instance)
        _, _, _, h_plus, h_minus, *_ = out
        worst = max(worst, float(np.max(h_minus - h_plus, initial=0.0)))
        cases += args_per_instance
    return SuiteResult(cases=cases, max_deviation=worst)
