"""Problem instances: coefficients, obstacles, control sets, validation, extension.

A :class:`ProblemSpec` collects everything the solver and the game need:
drift b(x, u1, u2), diffusion matrix a(x, u1, u2), running cost r(x, u1, u2),
the obstacle pair psi_lower <= psi_upper, two finite control sets, a discount
rate and a computational box.  All evaluators are pure functions vectorised
over a leading batch axis of states.

:func:`extend_coefficients` appends a stop symbol to each control set and
extends the coefficients so that choosing a stop symbol freezes the dynamics
and pays the corresponding obstacle rate: the device that turns the bilateral
variational inequality into an unconstrained equation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ObstacleOrderError(ValueError):
    """psi_lower > psi_upper somewhere: the bilateral constraint is empty."""


class ProblemValidationError(ValueError):
    """A hard assumption check failed; carries the full report."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        failed = [e.name for e in report.entries if e.severity == "hard" and not e.passed]
        super().__init__("problem validation failed: " + ", ".join(failed))


class _StopSymbol:
    """Sentinel control value appended by :func:`extend_coefficients`."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "STOP"


STOP = _StopSymbol()


@dataclass(frozen=True)
class ControlSet:
    """Finite ordered list of control vectors, optionally ending in STOP."""

    points: tuple
    has_stop: bool = False

    def __init__(self, points: Sequence, has_stop: bool = False):
        pts = tuple(np.atleast_1d(np.asarray(p, dtype=float)) for p in points)
        if not pts:
            raise ValueError("control set must be non-empty")
        dims = {p.size for p in pts}
        if len(dims) != 1:
            raise ValueError("control vectors must share a dimension")
        if next(iter(dims)) > 3:
            raise ValueError("control dimension > 3 is not supported")
        seen = set()
        for p in pts:
            key = p.tobytes()
            if key in seen:
                raise ValueError("control points must be distinct")
            seen.add(key)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "has_stop", bool(has_stop))

    @property
    def members(self) -> tuple:
        """Control points, with STOP last when present."""
        return self.points + ((STOP,) if self.has_stop else self.points[:0])

    @property
    def size(self) -> int:
        return len(self.points) + (1 if self.has_stop else 0)

    def member(self, index: int):
        return self.members[index]


@dataclass
class CoefficientField:
    """Drift, diffusion and running-cost evaluators plus declared bounds.

    Evaluator contracts (x has shape (..., d); u1/u2 are control vectors, or
    STOP for extended fields):

    * ``drift(x, u1, u2) -> (..., d)``
    * ``diffusion_matrix(x, u1, u2) -> (..., d, d)`` symmetric PSD
    * ``running_cost(x, u1, u2) -> (...,)``

    ``bound_estimates`` is declared metadata (sup norms / Lipschitz constants)
    that is spot-checked, not proven.
    """

    drift: Callable
    diffusion_matrix: Callable
    running_cost: Callable
    bound_estimates: dict = field(default_factory=dict)


@dataclass
class ObstaclePair:
    """Upper obstacle psi_upper (psi1) and lower obstacle psi_lower (psi2)."""

    psi_upper: Callable
    psi_lower: Callable


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape:
            raise ValueError("box bounds must have matching shapes")
        if np.any(upper <= lower):
            raise ValueError("box must have positive volume")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dimension(self) -> int:
        return self.lower.size

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ok = np.ones(x.shape[:-1], dtype=bool)
        for k in range(self.dimension):
            ok &= (x[..., k] >= self.lower[k]) & (x[..., k] <= self.upper[k])
        return ok

    def corners(self) -> np.ndarray:
        if self.dimension == 1:
            return np.array([[self.lower[0]], [self.upper[0]]])
        lo, hi = self.lower, self.upper
        return np.array(
            [[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]]
        )

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dimension))


@dataclass
class ProblemSpec:
    """Full description of one double-obstacle game instance."""

    dimension: int
    coefficients: CoefficientField
    obstacles: ObstaclePair
    controls: tuple[ControlSet, ControlSet]
    discount: float
    box: Box

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if not self.discount > 0.0:
            raise ValueError("discount rate must be positive")
        if self.box.dimension != self.dimension:
            raise ValueError("box dimension mismatch")
        self.controls = (self.controls[0], self.controls[1])

    @property
    def is_extended(self) -> bool:
        return self.controls[0].has_stop and self.controls[1].has_stop

    @property
    def is_uncontrolled(self) -> bool:
        return len(self.controls[0].points) == 1 and len(self.controls[1].points) == 1


@dataclass
class CheckResult:
    name: str
    passed: bool
    severity: str  # "hard" or "soft"
    detail: str = ""


@dataclass
class ValidationReport:
    entries: list
    degenerate_diffusion: bool = False

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries if e.severity == "hard")

    @property
    def warnings(self) -> list:
        return [e for e in self.entries if e.severity == "soft" and not e.passed]

    def summary(self) -> str:
        lines = []
        for e in self.entries:
            status = "pass" if e.passed else ("FAIL" if e.severity == "hard" else "warn")
            lines.append(f"[{status}] {e.name}" + (f": {e.detail}" if e.detail else ""))
        if self.degenerate_diffusion:
            lines.append("[info] diffusion is degenerate (singular a) somewhere")
        return "\n".join(lines)


def _control_pairs(spec: ProblemSpec, include_stop: bool = True):
    for u1 in spec.controls[0].members:
        for u2 in spec.controls[1].members:
            if not include_stop and (u1 is STOP or u2 is STOP):
                continue
            yield u1, u2


def validate_problem(
    spec: ProblemSpec,
    sample_count: int = 200,
    seed: int = 0,
    probe_nodes: int = 101,
) -> ValidationReport:
    """Check the standing assumptions on a sampled basis.

    Hard failures (raised): obstacle order psi_lower <= psi_upper, symmetric
    PSD diffusion (smallest eigenvalue >= -1e-10), positive discount, finite
    evaluator output.  Declared bound estimates are spot-checked and produce
    soft warnings only.
    """
    entries: list[CheckResult] = []
    rng = np.random.default_rng(seed)
    d = spec.dimension

    n_axis = probe_nodes if d == 1 else max(9, int(round(probe_nodes ** 0.5)))
    axes = [np.linspace(spec.box.lower[k], spec.box.upper[k], n_axis) for k in range(d)]
    if d == 1:
        probe = axes[0][:, None]
    else:
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        probe = np.column_stack([xx.ravel(), yy.ravel()])
    probe = np.vstack([probe, spec.box.sample(rng, max(sample_count, 1))])

    p1 = np.asarray(spec.obstacles.psi_upper(probe), dtype=float)
    p2 = np.asarray(spec.obstacles.psi_lower(probe), dtype=float)
    gap = p1 - p2
    order_ok = bool(np.all(gap >= 0.0)) and np.all(np.isfinite(gap))
    worst = int(np.argmin(gap))
    entries.append(
        CheckResult(
            "obstacle order psi_lower <= psi_upper",
            order_ok,
            "hard",
            "" if order_ok else
            f"violated by {-gap[worst]:.3e} at x={probe[worst]}",
        )
    )

    sample_x = spec.box.sample(rng, sample_count)
    corners = spec.box.corners()
    xs = np.vstack([sample_x, corners, probe[:: max(1, probe.shape[0] // 128)]])
    min_eig = np.inf
    sym_ok = True
    psd_ok = True
    finite_ok = True
    detail = ""
    for u1, u2 in _control_pairs(spec):
        a = np.asarray(spec.coefficients.diffusion_matrix(xs, u1, u2), dtype=float)
        a = a.reshape(xs.shape[0], d, d)
        b = np.asarray(spec.coefficients.drift(xs, u1, u2), dtype=float)
        r = np.asarray(spec.coefficients.running_cost(xs, u1, u2), dtype=float)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(r))):
            finite_ok = False
        asym = np.max(np.abs(a - np.swapaxes(a, -1, -2)))
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(a)))):
            sym_ok = False
            detail = f"asymmetry {asym:.3e} at controls ({u1}, {u2})"
        eigs = np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, -1, -2)))
        low = float(np.min(eigs))
        min_eig = min(min_eig, low)
        if low < -1e-10:
            psd_ok = False
            detail = f"min eigenvalue {low:.3e} at controls ({u1}, {u2})"
    entries.append(CheckResult("diffusion matrix symmetric", sym_ok, "hard", detail if not sym_ok else ""))
    entries.append(
        CheckResult(
            "diffusion matrix positive semidefinite (tol -1e-10)",
            psd_ok,
            "hard",
            detail if not psd_ok else f"min sampled eigenvalue {min_eig:.3e}",
        )
    )
    entries.append(CheckResult("coefficient evaluations finite", finite_ok, "hard"))
    entries.append(
        CheckResult("discount rate positive", spec.discount > 0.0, "hard", f"lambda={spec.discount}")
    )

    bounds = spec.coefficients.bound_estimates
    def _spot(name, observed, declared):
        ok = observed <= declared * (1.0 + 1e-12) + 1e-300
        entries.append(
            CheckResult(
                f"declared bound for {name}",
                ok,
                "soft",
                f"observed {observed:.4g} vs declared {declared:.4g}",
            )
        )
        if not ok:
            warnings.warn(
                f"declared bound for {name} exceeded: {observed:.4g} > {declared:.4g}",
                stacklevel=3,
            )

    if bounds:
        obs_b = obs_a = obs_r = 0.0
        for u1, u2 in _control_pairs(spec):
            obs_b = max(obs_b, float(np.max(np.abs(spec.coefficients.drift(xs, u1, u2)))))
            obs_a = max(obs_a, float(np.max(np.abs(spec.coefficients.diffusion_matrix(xs, u1, u2)))))
            obs_r = max(obs_r, float(np.max(np.abs(spec.coefficients.running_cost(xs, u1, u2)))))
        if "drift" in bounds:
            _spot("drift", obs_b, float(bounds["drift"]))
        if "diffusion" in bounds:
            _spot("diffusion", obs_a, float(bounds["diffusion"]))
        if "cost" in bounds:
            _spot("cost", obs_r, float(bounds["cost"]))
        if "psi_upper" in bounds:
            _spot("psi_upper", float(np.max(np.abs(p1))), float(bounds["psi_upper"]))
        if "psi_lower" in bounds:
            _spot("psi_lower", float(np.max(np.abs(p2))), float(bounds["psi_lower"]))

    report = ValidationReport(entries, degenerate_diffusion=bool(min_eig < 1e-12))
    if not report.passed:
        raise ProblemValidationError(report)
    return report


def extend_coefficients(spec: ProblemSpec) -> ProblemSpec:
    """Append stop symbols to both control sets and extend the coefficients.

    The extended drift and diffusion vanish whenever either control is STOP.
    The extended running cost pays lambda*psi_upper when player 1 stops
    against a regular control, and lambda*psi_lower whenever player 2 stops,
    including against player 1's stop symbol.
    """
    if spec.controls[0].has_stop or spec.controls[1].has_stop:
        raise ValueError("spec is already extended")

    base = spec.coefficients
    lam = spec.discount
    psi1, psi2 = spec.obstacles.psi_upper, spec.obstacles.psi_lower
    d = spec.dimension

    def drift(x, u1, u2):
        if u1 is STOP or u2 is STOP:
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape if x.ndim else (d,))
        return base.drift(x, u1, u2)

    def diffusion_matrix(x, u1, u2):
        if u1 is STOP or u2 is STOP:
            x = np.asarray(x, dtype=float)
            batch = x.shape[:-1] if x.ndim > 1 else ()
            return np.zeros(batch + (d, d))
        return base.diffusion_matrix(x, u1, u2)

    def running_cost(x, u1, u2):
        if u2 is STOP:
            # the "identically lambda*psi_lower" clause governs the joint
            # stop pair as well
            return lam * np.asarray(psi2(x), dtype=float)
        if u1 is STOP:
            return lam * np.asarray(psi1(x), dtype=float)
        return base.running_cost(x, u1, u2)

    ext_bounds = dict(base.bound_estimates)
    if "cost" in ext_bounds and ("psi_upper" in ext_bounds or "psi_lower" in ext_bounds):
        stop_pay = lam * max(ext_bounds.get("psi_upper", 0.0), ext_bounds.get("psi_lower", 0.0))
        ext_bounds["cost"] = max(float(ext_bounds["cost"]), stop_pay)

    return ProblemSpec(
        dimension=spec.dimension,
        coefficients=CoefficientField(drift, diffusion_matrix, running_cost, ext_bounds),
        obstacles=spec.obstacles,
        controls=(
            ControlSet(spec.controls[0].points, has_stop=True),
            ControlSet(spec.controls[1].points, has_stop=True),
        ),
        discount=spec.discount,
        box=spec.box,
    )


# ---------------------------------------------------------------------------
# Named coefficient families (config-facing registry)
# ---------------------------------------------------------------------------

def _as_vec(value, d):
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if v.size == 1 and d > 1:
        v = np.full(d, v[0])
    if v.size != d:
        raise ValueError(f"expected vector of length {d}, got {value!r}")
    return v


def build_scalar_field(params: dict, d: int) -> Callable:
    """Scalar field x -> real from a named family.

    Families: constant, affine, cosine, clamped_linear, quadratic.
    """
    family = params.get("family")
    if family == "constant":
        c = float(params["value"])
        return lambda x: np.full(np.asarray(x, dtype=float).shape[:-1], c)
    if family == "affine":
        a = _as_vec(params.get("coeffs", 0.0), d)
        b = float(params.get("offset", 0.0))
        return lambda x: np.asarray(x, dtype=float) @ a + b
    if family == "cosine":
        amp = float(params.get("amplitude", 1.0))
        freq = _as_vec(params.get("frequency", 1.0), d)
        phase = float(params.get("phase", 0.0))
        off = float(params.get("offset", 0.0))
        return lambda x: amp * np.cos(np.asarray(x, dtype=float) @ freq + phase) + off
    if family == "clamped_linear":
        a = _as_vec(params.get("coeffs", 1.0), d)
        b = float(params.get("offset", 0.0))
        lo = float(params["lower"])
        hi = float(params["upper"])
        return lambda x: np.clip(np.asarray(x, dtype=float) @ a + b, lo, hi)
    if family == "quadratic":
        c = _as_vec(params.get("curvature", 1.0), d)
        m = _as_vec(params.get("center", 0.0), d)
        off = float(params.get("offset", 0.0))
        return lambda x: ((np.asarray(x, dtype=float) - m) ** 2) @ c + off
    raise ValueError(f"unknown scalar field family {family!r}")


def build_drift(params: dict, d: int) -> Callable:
    """Drift family (x, u1, u2) -> (..., d): zero, constant, linear, mean_revert."""
    family = params.get("family")
    if family == "zero":
        return lambda x, u1, u2: np.zeros(np.asarray(x, dtype=float).shape)
    if family == "constant":
        c = _as_vec(params["vector"], d)
        return lambda x, u1, u2: np.broadcast_to(c, np.asarray(x, dtype=float).shape).copy()
    if family == "linear":
        A = np.asarray(params["matrix"], dtype=float).reshape(d, d)
        c = _as_vec(params.get("offset", 0.0), d)
        return lambda x, u1, u2: np.asarray(x, dtype=float) @ A.T + c
    if family == "mean_revert":
        rate = float(params.get("rate", 1.0))
        m = _as_vec(params.get("center", 0.0), d)
        return lambda x, u1, u2: -rate * (np.asarray(x, dtype=float) - m)
    raise ValueError(f"unknown drift family {family!r}")


def build_diffusion(params: dict, d: int) -> Callable:
    """Diffusion-matrix family (x, u1, u2) -> (..., d, d).

    Families: zero, constant (full matrix), axis_quadratic (a_kk = s_k x_k^2),
    axis_bump (a_kk = s_k max(0, 1-(x_k/w_k)^2)^p, degenerate at the edges).
    """
    family = params.get("family")
    if family == "zero":
        def f(x, u1, u2):
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape[:-1] + (d, d))
        return f
    if family == "constant":
        A = np.asarray(params["matrix"], dtype=float).reshape(d, d)
        def f(x, u1, u2):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(A, x.shape[:-1] + (d, d)).copy()
        return f
    if family == "axis_quadratic":
        s = _as_vec(params.get("scale", 1.0), d)
        def f(x, u1, u2):
            x = np.asarray(x, dtype=float)
            out = np.zeros(x.shape[:-1] + (d, d))
            for k in range(d):
                out[..., k, k] = s[k] * x[..., k] ** 2
            return out
        return f
    if family == "axis_bump":
        s = _as_vec(params.get("scale", 1.0), d)
        w = _as_vec(params.get("half_width", 1.0), d)
        p = float(params.get("power", 1.0))
        def f(x, u1, u2):
            x = np.asarray(x, dtype=float)
            out = np.zeros(x.shape[:-1] + (d, d))
            for k in range(d):
                bump = np.maximum(0.0, 1.0 - (x[..., k] / w[k]) ** 2)
                out[..., k, k] = s[k] * bump ** p
            return out
        return f
    raise ValueError(f"unknown diffusion family {family!r}")


def build_cost(params: dict, d: int, controls: tuple[ControlSet, ControlSet]) -> Callable:
    """Running-cost family (x, u1, u2) -> (...,).

    Families: any scalar field family (control-independent), control_table
    (values indexed by control indices), bilinear (scale*u1[0]*u2[0]*field).
    """
    family = params.get("family")
    if family == "control_table":
        table = np.asarray(params["values"], dtype=float)
        if table.shape != (len(controls[0].points), len(controls[1].points)):
            raise ValueError("control_table shape must match the control set sizes")
        index1 = {p.tobytes(): i for i, p in enumerate(controls[0].points)}
        index2 = {p.tobytes(): i for i, p in enumerate(controls[1].points)}
        def f(x, u1, u2):
            x = np.asarray(x, dtype=float)
            val = table[index1[np.asarray(u1, dtype=float).tobytes()],
                        index2[np.asarray(u2, dtype=float).tobytes()]]
            return np.full(x.shape[:-1], val)
        return f
    if family == "bilinear":
        scale = float(params.get("scale", 1.0))
        base = build_scalar_field(params.get("field", {"family": "constant", "value": 1.0}), d)
        def f(x, u1, u2):
            return scale * float(np.atleast_1d(u1)[0]) * float(np.atleast_1d(u2)[0]) * base(x)
        return f
    base = build_scalar_field(params, d)
    return lambda x, u1, u2: base(x)
