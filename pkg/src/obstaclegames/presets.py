"""Named test-registry instances used by the tests, the demos and the CLI.

Each preset bundles a problem, a default lattice and solver options, plus
game data (explicit sigma, start point, contact tolerance) where the
instance doubles as a stopping game.  Instances are designed so the scheme
stays monotone at the truncation boundary: diffusion degenerates at the
faces with inward drift, or the boundary is pinned by a Dirichlet override.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .grid import GridFunction, Lattice
from .problem import (
    Box,
    CoefficientField,
    ControlSet,
    ObstaclePair,
    ProblemSpec,
)
from .solver import SolveOptions, manufactured_instance, manufactured_lattice


@dataclass
class GameSetup:
    x0: np.ndarray
    contact_eps: float
    sigma: Optional[Callable] = None  # explicit diffusion square root


@dataclass
class RegistryInstance:
    name: str
    spec: ProblemSpec
    lattice: Lattice
    solve: SolveOptions
    description: str
    oracle_eligible: bool = False
    exact: Optional[GridFunction] = None
    game: Optional[GameSetup] = None


def _const(value):
    return lambda x: np.full(np.asarray(x, dtype=float).shape[:-1], float(value))


def _zero_drift(x, u1, u2):
    return np.zeros(np.asarray(x, dtype=float).shape)


def _zero_diffusion_1d(x, u1, u2):
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape[:-1] + (1, 1))


def _build_clamp_closed_form(nodes=None) -> RegistryInstance:
    lam = 1.25
    cost = lambda x: 0.8 * np.cos(3.0 * np.asarray(x, dtype=float)[..., 0]) + 0.1
    spec = ProblemSpec(
        dimension=1,
        coefficients=CoefficientField(
            _zero_drift,
            _zero_diffusion_1d,
            lambda x, u1, u2: cost(x),
            bound_estimates={"drift": 0.0, "diffusion": 0.0, "cost": 0.9},
        ),
        obstacles=ObstaclePair(_const(0.4), _const(-0.3)),
        controls=(ControlSet([[0.0]]), ControlSet([[0.0]])),
        discount=lam,
        box=Box([-1.0], [1.0]),
    )
    lattice = Lattice([-1.0], [1.0], nodes or (101,))
    return RegistryInstance(
        name="clamp-closed-form",
        spec=spec,
        lattice=lattice,
        solve=SolveOptions(tolerance=1e-9),
        description="a=b=0: solution is clamp(r/lambda, psi_lower, psi_upper) nodewise",
        oracle_eligible=True,
        exact=GridFunction(lattice, np.clip(cost(lattice.nodes()) / lam, -0.3, 0.4)),
    )


def _build_equal_obstacles(nodes=None) -> RegistryInstance:
    psi = lambda x: 0.25 * np.cos(np.asarray(x, dtype=float)[..., 0])

    def drift(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return -0.3 * x

    def diffusion(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return (0.2 * (1.0 - x[..., 0] ** 2))[..., None, None]

    spec = ProblemSpec(
        dimension=1,
        coefficients=CoefficientField(
            drift,
            diffusion,
            lambda x, u1, u2: 0.5 * np.cos(2.0 * np.asarray(x, dtype=float)[..., 0]),
            bound_estimates={"drift": 0.3, "diffusion": 0.2, "cost": 0.5},
        ),
        obstacles=ObstaclePair(psi, psi),
        controls=(ControlSet([[0.0]]), ControlSet([[0.0]])),
        discount=1.0,
        box=Box([-1.0], [1.0]),
    )
    lattice = Lattice([-1.0], [1.0], nodes or (81,))
    return RegistryInstance(
        name="equal-obstacles",
        spec=spec,
        lattice=lattice,
        solve=SolveOptions(tolerance=1e-9),
        description="psi_upper == psi_lower pinches the solution to the obstacle",
        oracle_eligible=True,
        exact=GridFunction(lattice, psi(lattice.nodes())),
    )


def _build_brownian_dynkin(nodes=None) -> RegistryInstance:
    def diffusion(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1] + (1, 1))

    spec = ProblemSpec(
        dimension=1,
        coefficients=CoefficientField(
            _zero_drift,
            diffusion,
            lambda x, u1, u2: np.zeros(np.asarray(x, dtype=float).shape[:-1]),
            bound_estimates={"drift": 0.0, "diffusion": 1.0, "cost": 0.0},
        ),
        obstacles=ObstaclePair(_const(1.0), _const(-1.0)),
        controls=(ControlSet([[0.0]]), ControlSet([[0.0]])),
        discount=1.0,
        box=Box([-3.0], [3.0]),
    )
    lattice = Lattice([-3.0], [3.0], nodes or (241,))

    def sigma(x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1] + (1, 1))

    return RegistryInstance(
        name="brownian-dynkin",
        spec=spec,
        lattice=lattice,
        solve=SolveOptions(tolerance=1e-9, dirichlet="default"),
        description="Brownian motion, r=0, obstacles at +-1: game value is 0 with empty contact sets",
        oracle_eligible=True,
        exact=GridFunction(lattice, np.zeros(lattice.node_count)),
        game=GameSetup(x0=np.array([0.0]), contact_eps=0.05, sigma=sigma),
    )


def _build_ou_lower_contact(nodes=None) -> RegistryInstance:
    lam = 1.0
    sig0, half_width = 0.8, 3.0

    def wstar(x):
        return 0.5 * np.cos(np.pi * np.asarray(x, dtype=float)[..., 0] / 6.0)

    def wstar_d1(x):
        return -0.5 * (np.pi / 6.0) * np.sin(np.pi * np.asarray(x, dtype=float)[..., 0] / 6.0)

    def wstar_d2(x):
        return -0.5 * (np.pi / 6.0) ** 2 * np.cos(np.pi * np.asarray(x, dtype=float)[..., 0] / 6.0)

    def sigma_scalar(x):
        x = np.asarray(x, dtype=float)
        return sig0 * np.maximum(0.0, 1.0 - (x[..., 0] / half_width) ** 2)

    def a_scalar(x):
        return sigma_scalar(x) ** 2

    def drift(x, u1, u2):
        return -np.asarray(x, dtype=float)

    def diffusion(x, u1, u2):
        return a_scalar(x)[..., None, None]

    def cost(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return lam * wstar(x) - 0.5 * a_scalar(x) * wstar_d2(x) + x[..., 0] * wstar_d1(x)

    def psi_lower(x):
        x = np.asarray(x, dtype=float)
        hinge = np.minimum(np.maximum(np.abs(x[..., 0]) - 0.5, 0.0), 2.0)
        return wstar(x) - 2.0 * hinge ** 2

    spec = ProblemSpec(
        dimension=1,
        coefficients=CoefficientField(
            drift,
            diffusion,
            cost,
            bound_estimates={"drift": 3.0, "diffusion": sig0 ** 2, "cost": 2.5},
        ),
        obstacles=ObstaclePair(_const(1.0), psi_lower),
        controls=(ControlSet([[0.0]]), ControlSet([[0.0]])),
        discount=lam,
        box=Box([-3.0], [3.0]),
    )
    lattice = Lattice([-3.0], [3.0], nodes or (301,))

    def sigma(x):
        return sigma_scalar(np.asarray(x, dtype=float))[..., None, None]

    return RegistryInstance(
        name="ou-lower-contact",
        spec=spec,
        lattice=lattice,
        solve=SolveOptions(tolerance=1e-9),
        description=(
            "mean-reverting diffusion, degenerate at the faces; the lower "
            "obstacle touches the manufactured solution on |x| <= 0.5"
        ),
        oracle_eligible=True,
        exact=GridFunction(lattice, wstar(lattice.nodes())),
        game=GameSetup(x0=np.array([1.2]), contact_eps=0.05, sigma=sigma),
    )


def _build_manufactured(name: str, profile: str, nodes=None) -> RegistryInstance:
    lattice = manufactured_lattice(profile, nodes)
    spec, exact, dirichlet = manufactured_instance(profile, lattice)
    return RegistryInstance(
        name=name,
        spec=spec,
        lattice=lattice,
        solve=SolveOptions(tolerance=1e-9, dirichlet=dirichlet),
        description=f"manufactured profile {profile}",
        oracle_eligible=(spec.dimension == 1),
        exact=exact,
    )


def _build_quadratic_degenerate(nodes=None) -> RegistryInstance:
    def diffusion(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return (x[..., 0] ** 2)[..., None, None]

    cost = lambda x: np.clip(2.0 * np.asarray(x, dtype=float)[..., 0], -0.8, 0.8)
    spec = ProblemSpec(
        dimension=1,
        coefficients=CoefficientField(
            _zero_drift,
            diffusion,
            lambda x, u1, u2: cost(x),
            bound_estimates={"drift": 0.0, "diffusion": 1.0, "cost": 0.8},
        ),
        obstacles=ObstaclePair(_const(0.9), _const(-0.9)),
        controls=(ControlSet([[0.0]]), ControlSet([[0.0]])),
        discount=1.0,
        box=Box([-1.0], [1.0]),
    )
    lattice = Lattice([-1.0], [1.0], nodes or (101,))
    return RegistryInstance(
        name="quadratic-degenerate",
        spec=spec,
        lattice=lattice,
        solve=SolveOptions(tolerance=1e-9, dirichlet="default"),
        description="a(x) = x^2 degenerates at the origin; boundary pinned",
        oracle_eligible=True,
    )


def _build_matching_pennies(nodes=None) -> RegistryInstance:
    table = np.array([[0.0, 1.0], [1.0, 0.0]])

    def cost(x, u1, u2):
        x = np.asarray(x, dtype=float)
        i = int(round(float(np.atleast_1d(u1)[0])))
        j = int(round(float(np.atleast_1d(u2)[0])))
        return np.full(x.shape[:-1], table[i, j])

    spec = ProblemSpec(
        dimension=1,
        coefficients=CoefficientField(
            _zero_drift,
            _zero_diffusion_1d,
            cost,
            bound_estimates={"drift": 0.0, "diffusion": 0.0, "cost": 1.0},
        ),
        obstacles=ObstaclePair(_const(2.0), _const(-2.0)),
        controls=(ControlSet([[0.0], [1.0]]), ControlSet([[0.0], [1.0]])),
        discount=1.0,
        box=Box([-1.0], [1.0]),
    )
    lattice = Lattice([-1.0], [1.0], nodes or (51,))
    return RegistryInstance(
        name="matching-pennies",
        spec=spec,
        lattice=lattice,
        solve=SolveOptions(tolerance=1e-9),
        description="x-independent 2x2 cost with H+ = 1, H- = 0: upper/lower solutions split",
    )


def _build_controlled_drift(nodes=None) -> RegistryInstance:
    def drift(x, u1, u2):
        x = np.asarray(x, dtype=float)
        gain = 0.5 * (float(np.atleast_1d(u1)[0]) - float(np.atleast_1d(u2)[0]))
        return (gain * (1.0 - x[..., 0] ** 2))[..., None]

    def diffusion(x, u1, u2):
        x = np.asarray(x, dtype=float)
        return (0.15 * (1.0 - x[..., 0] ** 2))[..., None, None]

    def cost(x, u1, u2):
        x = np.asarray(x, dtype=float)
        coupling = 0.4 * float(np.atleast_1d(u1)[0]) * float(np.atleast_1d(u2)[0])
        return coupling * (0.5 + 0.5 * x[..., 0] ** 2) + 0.2 * np.sin(2.0 * x[..., 0])

    spec = ProblemSpec(
        dimension=1,
        coefficients=CoefficientField(
            drift,
            diffusion,
            cost,
            bound_estimates={"drift": 1.0, "diffusion": 0.15, "cost": 0.6},
        ),
        obstacles=ObstaclePair(_const(0.5), _const(-0.5)),
        controls=(ControlSet([[-1.0], [1.0]]), ControlSet([[-1.0], [1.0]])),
        discount=1.0,
        box=Box([-1.0], [1.0]),
    )
    lattice = Lattice([-1.0], [1.0], nodes or (81,))
    return RegistryInstance(
        name="controlled-drift",
        spec=spec,
        lattice=lattice,
        solve=SolveOptions(tolerance=1e-9),
        description="coupled controls in drift and cost; genuine H+ > H- gap",
    )


_BUILDERS = {
    "clamp-closed-form": _build_clamp_closed_form,
    "equal-obstacles": _build_equal_obstacles,
    "brownian-dynkin": _build_brownian_dynkin,
    "ou-lower-contact": _build_ou_lower_contact,
    "smooth-interior": lambda nodes=None: _build_manufactured(
        "smooth-interior", "smooth-1d-interior", nodes
    ),
    "lower-contact-band": lambda nodes=None: _build_manufactured(
        "lower-contact-band", "lower-contact-1d", nodes
    ),
    "upper-contact-band": lambda nodes=None: _build_manufactured(
        "upper-contact-band", "upper-contact-1d", nodes
    ),
    "quadratic-degenerate": _build_quadratic_degenerate,
    "matching-pennies": _build_matching_pennies,
    "controlled-drift": _build_controlled_drift,
    "smooth-2d": lambda nodes=None: _build_manufactured(
        "smooth-2d", "smooth-2d-interior", nodes
    ),
    "cross-2d": lambda nodes=None: _build_manufactured("cross-2d", "cross-2d", nodes),
}


def registry_names() -> list:
    return sorted(_BUILDERS)


def load_instance(name: str, nodes=None) -> RegistryInstance:
    if name not in _BUILDERS:
        raise KeyError(
            f"unknown registry instance {name!r}; available: {', '.join(registry_names())}"
        )
    return _BUILDERS[name](nodes=nodes)
