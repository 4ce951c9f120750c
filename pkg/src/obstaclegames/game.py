"""Stochastic stopping game: simulation, payoffs, saddle checks, chain oracle.

The uncontrolled diffusion dX = b(X)dt + sigma(X)dW is simulated by
Euler-Maruyama with Gaussian increments drawn from a counter-based generator
keyed by (seed, path, step, axis): scheduling, batching and thread count
cannot change any draw, so estimates are bit-reproducible.

Player 1 stops at theta and pays the upper obstacle; player 2 stops at tau
and collects the lower obstacle; ties pay the lower obstacle.  The saddle
strategies hit the contact sets of a solved double-obstacle equation.  The
infinite horizon is truncated at T with the explicit bias bound
exp(-lambda*T)*(||r||/lambda + max ||psi||) folded into every tolerance.

``dynkin_oracle`` re-derives the solver's fixed point through an explicit
Markov-chain stopping game (Kushner-Dupuis style) and value iteration - an
implementation-independent cross-check.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .grid import GridFunction, Lattice, MonotonicityViolation
from .problem import Box, ProblemSpec

__all__ = [
    "CounterRng",
    "SDEModel",
    "MCConfig",
    "MCEstimate",
    "PayoffSpec",
    "StoppingRule",
    "NeverRule",
    "FixedTimeRule",
    "ThresholdRule",
    "FirstExitRule",
    "ContactHittingRule",
    "SimulationAbortError",
    "simulate_paths",
    "payoff",
    "estimate_value",
    "saddle_check",
    "SaddleReport",
    "dynkin_oracle",
    "game_from_spec",
    "hitting_rules",
]


class SimulationAbortError(RuntimeError):
    """More than the tolerated fraction of paths hit non-finite states."""


# ---------------------------------------------------------------------------
# Counter-based Gaussian stream
# ---------------------------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))

_MAX_PATH = 1 << 36
_MAX_STEP = 1 << 26


def _mix(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> _S30
    z *= _M1
    z ^= z >> _S27
    z *= _M2
    z ^= z >> _S31
    return z


class CounterRng:
    """Stateless Gaussian increments addressed by (seed, path, step, axis).

    Each address maps through a splitmix64-style finaliser to one 64-bit
    word, then to a uniform in (0, 1) and through the inverse normal CDF.
    Identical addresses give identical draws on any machine, in any batch
    order, under any thread count.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        s = np.array([self.seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        self.key = _mix(s * _GOLD + np.uint64(0x1B873593))[0]

    def normals(self, path_ids: np.ndarray, step: int, d: int) -> np.ndarray:
        """Standard normal increments, shape (len(path_ids), d)."""
        path_ids = np.asarray(path_ids, dtype=np.uint64)
        if step >= _MAX_STEP:
            raise ValueError(f"step index {step} exceeds the counter layout")
        if path_ids.size and int(path_ids.max()) >= _MAX_PATH:
            raise ValueError("path index exceeds the counter layout")
        out = np.empty((path_ids.size, d))
        base = (path_ids << np.uint64(28)) | np.uint64(int(step) << 2)
        for axis in range(d):
            z = _mix((base | np.uint64(axis)) * _GOLD + self.key)
            u = ((z >> _S11).astype(np.float64) + 0.5) * 2.0 ** -53
            out[:, axis] = ndtri(u)
        return out


# ---------------------------------------------------------------------------
# Model, payoff data, configuration
# ---------------------------------------------------------------------------

@dataclass
class SDEModel:
    """Uncontrolled dynamics: drift x -> (..., d), diffusion x -> (..., d, d)."""

    drift: Callable
    diffusion: Callable
    dimension: int


@dataclass
class PayoffSpec:
    """Running reward, obstacle payments and discount for the stopping game."""

    running_cost: Callable
    psi_upper: Callable
    psi_lower: Callable
    discount: float
    r_sup: float = 0.0
    psi_sup: float = 0.0

    def truncation_bias(self, horizon: float) -> float:
        """Pathwise bound for everything the game can pay after `horizon`."""
        return math.exp(-self.discount * horizon) * (
            self.r_sup / self.discount + self.psi_sup
        )


@dataclass
class MCConfig:
    path_count: int
    dt: float
    horizon: float
    seed: int
    antithetic: bool = False

    def __post_init__(self):
        if self.path_count < 1:
            raise ValueError("path_count must be >= 1")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.horizon < self.dt:
            raise ValueError("horizon must be at least one step")
        if self.antithetic and self.path_count % 2 != 0:
            raise ValueError("antithetic pairing needs an even path count")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon / self.dt - 1e-12))


@dataclass
class StopStatistics:
    theta_fraction: float
    tau_fraction: float
    never_fraction: float
    mean_theta_time: float
    mean_tau_time: float


@dataclass
class MCEstimate:
    mean: float
    std_error: float
    n_effective: int
    seed: int
    stop_stats: StopStatistics
    n_aborted: int = 0
    box_exit_fraction: float = 0.0
    truncation_bias: float = 0.0
    payoffs: Optional[np.ndarray] = field(default=None, repr=False)
    theta_steps: Optional[np.ndarray] = field(default=None, repr=False)
    tau_steps: Optional[np.ndarray] = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# Stopping rules
# ---------------------------------------------------------------------------

class StoppingRule:
    """Stop/continue decision fed one step at a time.

    ``fires(step, t, x)`` sees only the current step index, time and the
    current states of the still-running paths, so decisions cannot depend on
    the future (non-anticipativity is structural).
    """

    kind = "abstract"

    def fires(self, step: int, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def first_fire(self, times: np.ndarray, path: np.ndarray) -> Optional[int]:
        """Replay on one explicit path: first step index at which the rule fires."""
        path = np.asarray(path, dtype=float)
        for n, t in enumerate(times):
            if bool(self.fires(n, float(t), path[None, n])[0]):
                return n
        return None

    def describe(self) -> str:
        return self.kind


class NeverRule(StoppingRule):
    kind = "never"

    def fires(self, step, t, x):
        return np.zeros(x.shape[0], dtype=bool)


class FixedTimeRule(StoppingRule):
    kind = "fixed_time"

    def __init__(self, t0: float):
        self.t0 = float(t0)

    def fires(self, step, t, x):
        return np.full(x.shape[0], t >= self.t0 - 1e-12, dtype=bool)

    def describe(self):
        return f"fixed_time({self.t0:g})"


class ThresholdRule(StoppingRule):
    kind = "threshold"

    def __init__(self, axis: int, level: float, direction: str = "ge"):
        if direction not in ("ge", "le"):
            raise ValueError("direction must be 'ge' or 'le'")
        self.axis = int(axis)
        self.level = float(level)
        self.direction = direction

    def fires(self, step, t, x):
        if self.direction == "ge":
            return x[:, self.axis] >= self.level
        return x[:, self.axis] <= self.level

    def describe(self):
        return f"threshold(x[{self.axis}] {self.direction} {self.level:g})"


class FirstExitRule(StoppingRule):
    kind = "first_exit"

    def __init__(self, box: Box):
        self.box = box

    def fires(self, step, t, x):
        return ~self.box.contains(x)

    def describe(self):
        return f"first_exit({self.box.lower.tolist()}..{self.box.upper.tolist()})"


class ContactHittingRule(StoppingRule):
    """Fires when the solved value touches an obstacle at the current state.

    The condition |w(x) - psi(x)| <= contact_eps (w multilinearly
    interpolated) is consulted only inside the computational box.  In 1-D the
    fire set is precomputed as a union of intervals (bisected to ~1e-12), so
    the per-step check is a sorted lookup.
    """

    def __init__(self, side: str, w: GridFunction, psi: Callable, contact_eps: float, box: Box):
        if side not in ("upper", "lower"):
            raise ValueError("side must be 'upper' or 'lower'")
        self.kind = f"hit_{side}_contact"
        self.side = side
        self.w = w
        self.psi = psi
        self.contact_eps = float(contact_eps)
        self.box = box
        self._endpoints = None
        self._f0 = False
        if w.lattice.dimension == 1:
            self._build_intervals()

    def _condition(self, x: np.ndarray) -> np.ndarray:
        inside = self.box.contains(x)
        vals = np.abs(self.w.interpolate(x) - np.asarray(self.psi(x), dtype=float))
        return inside & (vals <= self.contact_eps)

    def _build_intervals(self, per_cell: int = 16):
        lo = float(self.box.lower[0])
        hi = float(self.box.upper[0])
        n = (self.w.lattice.counts[0] - 1) * per_cell + 1
        xs = np.linspace(lo, hi, n)
        f = self._condition(xs[:, None])
        flips = np.nonzero(f[:-1] != f[1:])[0]
        endpoints = []
        for i in flips:
            xa, xb = xs[i], xs[i + 1]
            sa = bool(f[i])
            for _ in range(60):
                xm = 0.5 * (xa + xb)
                if bool(self._condition(np.array([[xm]]))[0]) == sa:
                    xa = xm
                else:
                    xb = xm
                if xb - xa <= 1e-13 * max(1.0, abs(hi - lo)):
                    break
            endpoints.append(0.5 * (xa + xb))
        self._endpoints = np.asarray(endpoints)
        self._f0 = bool(f[0])

    def fires(self, step, t, x):
        if self._endpoints is None:
            return self._condition(x)
        q = x[:, 0]
        idx = np.searchsorted(self._endpoints, q, side="right")
        state = ((idx & 1) == 1) ^ self._f0
        state &= (q >= self.box.lower[0]) & (q <= self.box.upper[0])
        return state

    def describe(self):
        return f"{self.kind}(eps={self.contact_eps:g})"


def hitting_rules(
    w: GridFunction, spec: ProblemSpec, contact_eps: float
) -> tuple[ContactHittingRule, ContactHittingRule]:
    """(theta_hat, tau_hat): hit the upper resp. lower contact set of w."""
    theta = ContactHittingRule("upper", w, spec.obstacles.psi_upper, contact_eps, spec.box)
    tau = ContactHittingRule("lower", w, spec.obstacles.psi_lower, contact_eps, spec.box)
    return theta, tau


# ---------------------------------------------------------------------------
# Simulation and payoff
# ---------------------------------------------------------------------------

def _advance(model: SDEModel, x: np.ndarray, g: np.ndarray, dt: float, sqrt_dt: float) -> np.ndarray:
    """One Euler-Maruyama step for a batch of states (A, d)."""
    b = np.asarray(model.drift(x), dtype=float).reshape(x.shape)
    sig = np.asarray(model.diffusion(x), dtype=float)
    d = x.shape[1]
    if d == 1:
        inc = sig.reshape(x.shape[0]) * g[:, 0]
        return x + b * dt + (sqrt_dt * inc)[:, None]
    sig = sig.reshape(x.shape[0], d, d)
    inc = np.einsum("aij,aj->ai", sig, g)
    return x + b * dt + sqrt_dt * inc


def simulate_paths(model: SDEModel, x0, mc: MCConfig) -> tuple[np.ndarray, np.ndarray]:
    """Materialised Euler-Maruyama batch: (times (S+1,), states (N, S+1, d)).

    Intended for diagnostics and tests; estimate_value streams instead.  The
    increment at (path i, step n) comes from the counter stream, so a path's
    trajectory does not depend on the batch it was simulated in.
    """
    d = model.dimension
    n_steps = mc.n_steps
    total = mc.path_count * (n_steps + 1) * d
    if total > 50_000_000:
        raise ValueError("path batch too large to materialise; use estimate_value")
    rng = CounterRng(mc.seed)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    times = np.arange(n_steps + 1) * mc.dt
    states = np.empty((mc.path_count, n_steps + 1, d))
    states[:, 0, :] = x0
    sqrt_dt = math.sqrt(mc.dt)
    n_base = mc.path_count // 2 if mc.antithetic else mc.path_count
    ids = np.arange(mc.path_count, dtype=np.uint64)
    base_ids = np.where(ids < n_base, ids, ids - np.uint64(n_base)) if mc.antithetic else ids
    signs = np.where(np.arange(mc.path_count) < n_base, 1.0, -1.0)[:, None]
    x = states[:, 0, :].copy()
    for n in range(n_steps):
        g = rng.normals(base_ids, n, d)
        x = _advance(model, x, g * signs if mc.antithetic else g, mc.dt, sqrt_dt)
        states[:, n + 1, :] = x
    return times, states


def payoff(
    path: np.ndarray,
    times: np.ndarray,
    rule_theta: StoppingRule,
    rule_tau: StoppingRule,
    pay: PayoffSpec,
    horizon: Optional[float] = None,
) -> float:
    """Reference discounted payoff of one explicit path (scalar loop).

    Running reward accrues by the left-endpoint rule until the first stop or
    the horizon; a stop at step n pays the lower obstacle when tau fires
    (ties included) and the upper obstacle otherwise.  The streaming engine
    reproduces this computation exactly.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    lam = pay.discount
    n_last = len(times) - 1
    if horizon is not None:
        n_last = min(n_last, int(math.ceil(horizon / (times[1] - times[0]) - 1e-12)))
    dt = float(times[1] - times[0])
    total = 0.0
    for n in range(n_last + 1):
        t = float(times[n])
        x = path[None, n]
        disc = math.exp(-lam * t)
        th = bool(rule_theta.fires(n, t, x)[0])
        ta = bool(rule_tau.fires(n, t, x)[0])
        if th or ta:
            psi = pay.psi_lower(x) if ta else pay.psi_upper(x)
            return total + disc * float(np.asarray(psi).reshape(()))
        if n < n_last:
            r = float(np.asarray(pay.running_cost(x)).reshape(()))
            total += disc * r * dt
    return total


def _block_payoffs(
    model: SDEModel,
    pay: PayoffSpec,
    rule_theta: StoppingRule,
    rule_tau: StoppingRule,
    x0: np.ndarray,
    mc: MCConfig,
    rng: CounterRng,
    ids: np.ndarray,
    box: Optional[Box],
):
    """Payoffs and stop data for one block of true path indices."""
    d = model.dimension
    n_steps = mc.n_steps
    dt = mc.dt
    sqrt_dt = math.sqrt(dt)
    lam = pay.discount
    A = ids.size

    n_base = mc.path_count // 2 if mc.antithetic else mc.path_count
    base_ids = np.where(ids < n_base, ids, ids - n_base).astype(np.uint64)
    signs = np.where(ids < n_base, 1.0, -1.0)

    payoffs = np.zeros(A)
    theta_steps = np.full(A, -1, dtype=np.int64)
    tau_steps = np.full(A, -1, dtype=np.int64)
    aborted = np.zeros(A, dtype=bool)
    exited = np.zeros(A, dtype=bool)

    local = np.arange(A)
    x = np.broadcast_to(x0, (A, d)).copy()
    run_local = local
    run_base = base_ids
    run_sign = signs
    for n in range(n_steps + 1):
        if run_local.size == 0:
            break
        t = n * dt
        disc = math.exp(-lam * t)
        th = rule_theta.fires(n, t, x)
        ta = rule_tau.fires(n, t, x)
        stopped = th | ta
        if np.any(stopped):
            stop_idx = run_local[stopped]
            ta_s = ta[stopped]
            xs = x[stopped]
            psi_vals = np.where(
                ta_s,
                np.asarray(pay.psi_lower(xs), dtype=float),
                np.asarray(pay.psi_upper(xs), dtype=float),
            )
            payoffs[stop_idx] += disc * psi_vals
            tau_steps[stop_idx[ta_s]] = n
            theta_steps[stop_idx[th[stopped] & ~ta_s]] = n
            keep = ~stopped
            run_local = run_local[keep]
            run_base = run_base[keep]
            run_sign = run_sign[keep]
            x = x[keep]
            if run_local.size == 0:
                break
        if n == n_steps:
            break
        r_vals = np.asarray(pay.running_cost(x), dtype=float)
        payoffs[run_local] += disc * r_vals * dt
        g = rng.normals(run_base, n, d)
        if mc.antithetic:
            g = g * run_sign[:, None]
        x = _advance(model, x, g, dt, sqrt_dt)
        bad = ~np.all(np.isfinite(x), axis=1)
        if np.any(bad):
            aborted[run_local[bad]] = True
            payoffs[run_local[bad]] = np.nan
            keep = ~bad
            run_local = run_local[keep]
            run_base = run_base[keep]
            run_sign = run_sign[keep]
            x = x[keep]
        if box is not None and run_local.size:
            out = ~box.contains(x)
            if np.any(out):
                exited[run_local[out]] = True
    return payoffs, theta_steps, tau_steps, aborted, exited


def _mean_and_se(payoffs: np.ndarray, antithetic: bool) -> tuple[float, float, int]:
    if antithetic:
        n_base = payoffs.size // 2
        pairs = 0.5 * (payoffs[:n_base] + payoffs[n_base:])
        pairs = pairs[np.isfinite(pairs)]
        n = pairs.size
        mean = float(np.mean(pairs)) if n else math.nan
        se = float(np.std(pairs, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return mean, se, n
    valid = payoffs[np.isfinite(payoffs)]
    n = valid.size
    mean = float(np.mean(valid)) if n else math.nan
    se = float(np.std(valid, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se, n


def estimate_value(
    model: SDEModel,
    x0,
    rule_theta: StoppingRule,
    rule_tau: StoppingRule,
    pay: PayoffSpec,
    mc: MCConfig,
    box: Optional[Box] = None,
    workers: int = 1,
    block_size: int = 16384,
    keep_payoffs: bool = True,
) -> MCEstimate:
    """Monte Carlo estimate of the stopped payoff from x0.

    Deterministic given (seed, path_count, dt, horizon): per-path payoffs are
    computed independently with counter-keyed increments and reduced in a
    fixed order, so results are bit-identical for any worker count or block
    size.  Paths reaching non-finite states abort; more than 1% aborts is a
    hard error.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    rng = CounterRng(mc.seed)
    N = mc.path_count
    payoffs = np.empty(N)
    theta_steps = np.empty(N, dtype=np.int64)
    tau_steps = np.empty(N, dtype=np.int64)
    aborted = np.empty(N, dtype=bool)
    exited = np.empty(N, dtype=bool)

    blocks = [
        np.arange(a, min(a + block_size, N), dtype=np.int64)
        for a in range(0, N, block_size)
    ]

    def run(ids):
        return _block_payoffs(model, pay, rule_theta, rule_tau, x0, mc, rng, ids, box)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(ids) for ids in blocks]
    for ids, (p, th, ta, ab, ex) in zip(blocks, results):
        payoffs[ids[0]: ids[-1] + 1] = p
        theta_steps[ids[0]: ids[-1] + 1] = th
        tau_steps[ids[0]: ids[-1] + 1] = ta
        aborted[ids[0]: ids[-1] + 1] = ab
        exited[ids[0]: ids[-1] + 1] = ex

    n_aborted = int(np.sum(aborted))
    if n_aborted > 0.01 * N:
        raise SimulationAbortError(
            f"{n_aborted} of {N} paths reached non-finite states"
        )
    mean, se, n_eff = _mean_and_se(payoffs, mc.antithetic)

    th_stopped = theta_steps >= 0
    ta_stopped = tau_steps >= 0
    stats = StopStatistics(
        theta_fraction=float(np.mean(th_stopped)),
        tau_fraction=float(np.mean(ta_stopped)),
        never_fraction=float(np.mean(~(th_stopped | ta_stopped))),
        mean_theta_time=float(np.mean(theta_steps[th_stopped]) * mc.dt) if np.any(th_stopped) else math.nan,
        mean_tau_time=float(np.mean(tau_steps[ta_stopped]) * mc.dt) if np.any(ta_stopped) else math.nan,
    )
    return MCEstimate(
        mean=mean,
        std_error=se,
        n_effective=n_eff,
        seed=mc.seed,
        stop_stats=stats,
        n_aborted=n_aborted,
        box_exit_fraction=float(np.mean(exited)),
        truncation_bias=pay.truncation_bias(mc.n_steps * mc.dt),
        payoffs=payoffs if keep_payoffs else None,
        theta_steps=theta_steps if keep_payoffs else None,
        tau_steps=tau_steps if keep_payoffs else None,
    )


# ---------------------------------------------------------------------------
# Saddle verification
# ---------------------------------------------------------------------------

@dataclass
class SaddleRow:
    side: str  # "theta" or "tau"
    description: str
    mean: float
    std_error: float
    diff: float
    se_combined: float
    margin: float
    ok: bool
    expected_slack: Optional[float] = None
    slack_ok: Optional[bool] = None


@dataclass
class SaddleReport:
    baseline: MCEstimate
    value_target: float
    value_diff: float
    value_margin: float
    value_ok: bool
    tol_num: float
    rows: list

    @property
    def passed(self) -> bool:
        return self.value_ok and all(
            r.ok and (r.slack_ok is not False) for r in self.rows
        )

    def summary(self) -> str:
        lines = [
            f"baseline R(theta_hat, tau_hat) = {self.baseline.mean:.6f} "
            f"(se {self.baseline.std_error:.2e})",
            f"value check: |mean - w(x0)| = {abs(self.value_diff):.4g} "
            f"<= {self.value_margin:.4g}: {'pass' if self.value_ok else 'FAIL'}",
        ]
        for r in self.rows:
            lines.append(
                f"[{'pass' if r.ok else 'FAIL'}] {r.side} deviation {r.description}: "
                f"mean {r.mean:.6f}, diff {r.diff:+.4g}, margin {r.margin:.4g}"
                + (
                    f", slack vs expected {r.expected_slack:+.4g}: "
                    f"{'pass' if r.slack_ok else 'FAIL'}"
                    if r.expected_slack is not None
                    else ""
                )
            )
        return "\n".join(lines)


def _diff_se(est_a: MCEstimate, est_b: MCEstimate, antithetic: bool) -> float:
    diffs = est_a.payoffs - est_b.payoffs
    _, se, _ = _mean_and_se(diffs, antithetic)
    return se


def default_battery(mc: MCConfig, x0, side: str) -> list:
    """never, three fixed times, one threshold - five deviations per player."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    level = x0[0] + (0.5 if side == "tau" else -0.5)
    direction = "ge" if side == "tau" else "le"
    T = mc.horizon
    return [
        NeverRule(),
        FixedTimeRule(0.0),
        FixedTimeRule(T / 8.0),
        FixedTimeRule(T / 2.0),
        ThresholdRule(0, level, direction),
    ]


def saddle_check(
    model: SDEModel,
    spec: ProblemSpec,
    w: GridFunction,
    x0,
    mc: MCConfig,
    contact_eps: float,
    alternatives_theta: Optional[Sequence[StoppingRule]] = None,
    alternatives_tau: Optional[Sequence[StoppingRule]] = None,
    c_tol: float = 10.0,
    workers: int = 1,
) -> SaddleReport:
    """Monte Carlo saddle-point verification around the hitting strategies.

    Checks (i) R(theta_hat, tau_hat) matches the solved value at x0, (ii) no
    tau deviation improves player 2's payoff, (iii) no theta deviation
    improves player 1's, all within 3 standard errors of the common-random-
    number difference plus the numerical tolerance C*(h + sqrt(dt)) plus the
    horizon-truncation bias.  A finite battery cannot prove the saddle
    property, only probe it; violations are reported, not raised.
    """
    pay = payoff_from_spec(spec)
    theta_hat, tau_hat = hitting_rules(w, spec, contact_eps)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    h_max = float(np.max(w.lattice.spacing))
    tol_num = c_tol * (h_max + math.sqrt(mc.dt)) + pay.truncation_bias(mc.n_steps * mc.dt)

    base = estimate_value(
        model, x0, theta_hat, tau_hat, pay, mc, box=spec.box, workers=workers
    )
    w_x0 = float(w.interpolate(x0[None, :])[0])
    value_diff = base.mean - w_x0
    value_margin = 3.0 * base.std_error + tol_num

    psi1_x0 = float(np.asarray(spec.obstacles.psi_upper(x0[None, :]))[0])
    psi2_x0 = float(np.asarray(spec.obstacles.psi_lower(x0[None, :]))[0])

    if alternatives_tau is None:
        alternatives_tau = default_battery(mc, x0, "tau")
    if alternatives_theta is None:
        alternatives_theta = default_battery(mc, x0, "theta")

    rows = []
    for rule in alternatives_tau:
        est = estimate_value(
            model, x0, theta_hat, rule, pay, mc, box=spec.box, workers=workers
        )
        se_c = _diff_se(est, base, mc.antithetic)
        margin = 3.0 * se_c + tol_num
        diff = est.mean - base.mean
        row = SaddleRow(
            side="tau",
            description=rule.describe(),
            mean=est.mean,
            std_error=est.std_error,
            diff=diff,
            se_combined=se_c,
            margin=margin,
            ok=diff <= margin,
        )
        if isinstance(rule, FixedTimeRule) and rule.t0 == 0.0:
            # immediate stop by the maximiser pays psi_lower(x0) outright
            row.expected_slack = psi2_x0 - w_x0
            row.slack_ok = abs(diff - (psi2_x0 - base.mean)) <= margin
        rows.append(row)
    for rule in alternatives_theta:
        est = estimate_value(
            model, x0, rule, tau_hat, pay, mc, box=spec.box, workers=workers
        )
        se_c = _diff_se(est, base, mc.antithetic)
        margin = 3.0 * se_c + tol_num
        diff = est.mean - base.mean
        row = SaddleRow(
            side="theta",
            description=rule.describe(),
            mean=est.mean,
            std_error=est.std_error,
            diff=diff,
            se_combined=se_c,
            margin=margin,
            ok=diff >= -margin,
        )
        if isinstance(rule, FixedTimeRule) and rule.t0 == 0.0:
            row.expected_slack = psi1_x0 - w_x0
            row.slack_ok = abs(diff - (psi1_x0 - base.mean)) <= margin
        rows.append(row)

    return SaddleReport(
        baseline=base,
        value_target=w_x0,
        value_diff=value_diff,
        value_margin=value_margin,
        value_ok=abs(value_diff) <= value_margin,
        tol_num=tol_num,
        rows=rows,
    )


# ---------------------------------------------------------------------------
# Problem -> game adapters
# ---------------------------------------------------------------------------

def payoff_from_spec(spec: ProblemSpec, probe: int = 512) -> PayoffSpec:
    """Running cost and obstacle payments of an uncontrolled instance."""
    if not spec.is_uncontrolled:
        raise ValueError("the stopping game needs singleton control sets")
    u1 = spec.controls[0].points[0]
    u2 = spec.controls[1].points[0]
    r = lambda x: np.asarray(spec.coefficients.running_cost(x, u1, u2), dtype=float)
    rng = np.random.default_rng(0)
    xs = np.vstack([spec.box.sample(rng, probe), spec.box.corners()])
    r_sup = float(np.max(np.abs(r(xs))))
    psi_sup = float(
        max(
            np.max(np.abs(np.asarray(spec.obstacles.psi_upper(xs), dtype=float))),
            np.max(np.abs(np.asarray(spec.obstacles.psi_lower(xs), dtype=float))),
        )
    )
    return PayoffSpec(
        running_cost=r,
        psi_upper=lambda x: np.asarray(spec.obstacles.psi_upper(x), dtype=float),
        psi_lower=lambda x: np.asarray(spec.obstacles.psi_lower(x), dtype=float),
        discount=spec.discount,
        r_sup=r_sup,
        psi_sup=psi_sup,
    )


def game_from_spec(spec: ProblemSpec, sigma: Optional[Callable] = None) -> tuple[SDEModel, PayoffSpec]:
    """SDE model and payoff data for an uncontrolled instance.

    When sigma is not supplied, it is taken as the square root of a diagonal
    diffusion matrix; instances with off-diagonal diffusion must provide
    their own sigma evaluator.
    """
    if not spec.is_uncontrolled:
        raise ValueError("the stopping game needs singleton control sets")
    u1 = spec.controls[0].points[0]
    u2 = spec.controls[1].points[0]
    d = spec.dimension

    def drift(x):
        return np.asarray(spec.coefficients.drift(x, u1, u2), dtype=float)

    if sigma is None:
        rng = np.random.default_rng(1)
        xs = spec.box.sample(rng, 64)
        a_probe = np.asarray(
            spec.coefficients.diffusion_matrix(xs, u1, u2), dtype=float
        ).reshape(-1, d, d)
        off = a_probe.copy()
        for k in range(d):
            off[:, k, k] = 0.0
        if np.max(np.abs(off)) > 1e-12:
            raise NotImplementedError(
                "automatic sigma derivation supports diagonal diffusion only; "
                "pass an explicit sigma evaluator"
            )

        def sigma(x):
            a = np.asarray(spec.coefficients.diffusion_matrix(x, u1, u2), dtype=float)
            a = a.reshape(np.asarray(x).shape[:-1] + (d, d))
            out = np.zeros_like(a)
            for k in range(d):
                out[..., k, k] = np.sqrt(np.maximum(a[..., k, k], 0.0))
            return out

    return SDEModel(drift=drift, diffusion=sigma, dimension=d), payoff_from_spec(spec)


# ---------------------------------------------------------------------------
# Discrete Dynkin oracle
# ---------------------------------------------------------------------------

def dynkin_oracle(
    spec: ProblemSpec,
    lattice: Lattice,
    dt_chain: Optional[float] = None,
    tolerance: float = 1e-10,
    dirichlet=None,
    max_iterations: int = 5_000_000,
) -> GridFunction:
    """Value of the explicit Markov-chain stopping game on the lattice.

    The chain moves with the probabilities induced by the monotone stencil
    (upwind first differences, central second differences), is killed at rate
    lambda, collects the running reward, and either player may stop for the
    obstacle payments.  Its fixed point is algebraically identical to the
    solver's discrete equation for every valid interpolation step dt_chain,
    but the construction and iteration are independent of the solver.  Value
    iteration stops when the a-posteriori contraction bound certifies that
    the values are within `tolerance` of the fixed point in sup norm.
    """
    if spec.dimension != 1 or lattice.dimension != 1:
        raise ValueError("the chain oracle supports 1-D instances only")
    if not spec.is_uncontrolled:
        raise ValueError("the chain oracle supports uncontrolled instances only")

    from .solver import DiscreteOperator  # shared dirichlet conventions

    op = DiscreteOperator(spec, lattice, dirichlet=dirichlet)
    M = lattice.node_count
    h = float(lattice.spacing[0])
    x = lattice.nodes()
    u1 = spec.controls[0].points[0]
    u2 = spec.controls[1].points[0]
    b = np.asarray(spec.coefficients.drift(x, u1, u2), dtype=float).reshape(M)
    a = np.asarray(spec.coefficients.diffusion_matrix(x, u1, u2), dtype=float).reshape(M)
    r = np.asarray(spec.coefficients.running_cost(x, u1, u2), dtype=float).reshape(M)
    lam = float(spec.discount)
    psi_lo, psi_up = op.psi_lower, op.psi_upper
    free = op.free

    c_up = a / (2.0 * h * h) + np.maximum(b, 0.0) / h
    c_dn = a / (2.0 * h * h) + np.maximum(-b, 0.0) / h
    # boundary rows: the one-sided second difference has no probabilistic
    # interpretation, so a must vanish at an unpinned face; drift must point
    # into the domain there for the same reason
    for node, inward in ((0, b[0] >= 0.0), (M - 1, b[M - 1] <= 0.0)):
        if not free[node]:
            continue
        if a[node] != 0.0 or not inward:
            raise MonotonicityViolation(
                f"chain probabilities undefined at boundary node {node}: "
                "diffusion must vanish and drift must point inward, or pin "
                "the boundary with a Dirichlet override"
            )
    c_up[0] = max(b[0], 0.0) / h
    c_dn[0] = 0.0
    c_dn[M - 1] = max(-b[M - 1], 0.0) / h
    c_up[M - 1] = 0.0

    S = c_up + c_dn
    max_rate = float(np.max(lam + S))
    if dt_chain is None:
        dt_chain = 0.9 / max_rate
    if not 0.0 < dt_chain * max_rate <= 1.0:
        raise ValueError(f"dt_chain must lie in (0, {1.0 / max_rate:g}]")

    p_up = dt_chain * c_up
    p_dn = dt_chain * c_dn
    p_stay = 1.0 - p_up - p_dn - dt_chain * lam
    if np.any(p_up < 0) or np.any(p_dn < 0) or np.any(p_stay < -1e-15):
        raise MonotonicityViolation("negative chain probabilities")
    reward = dt_chain * r

    q = 1.0 - dt_chain * lam  # per-sweep contraction factor
    stop_at = tolerance * (1.0 - q) / q if q > 0 else np.inf

    g = op.pinned_values
    V = np.clip(r / lam, psi_lo, psi_up)
    V[op.pinned] = g[op.pinned]
    for _ in range(max_iterations):
        cont = reward + p_stay * V
        cont[:-1] += p_up[:-1] * V[1:]
        cont[1:] += p_dn[1:] * V[:-1]
        V_new = np.maximum(psi_lo, np.minimum(psi_up, cont))
        V_new[op.pinned] = g[op.pinned]
        delta = float(np.max(np.abs(V_new - V)))
        V = V_new
        if delta <= stop_at:
            return GridFunction(lattice, V)
    raise RuntimeError(
        f"chain value iteration did not certify tolerance {tolerance:g} "
        f"within {max_iterations} sweeps (last update {delta:.3e})"
    )
