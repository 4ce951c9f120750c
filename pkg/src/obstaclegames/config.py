"""Instance definition files: TOML with nested sections, one schema for all commands.

Two ways to define the instance:

* ``[instance] preset = "name"`` picks a registry instance (optionally
  overriding the lattice node counts), or
* explicit sections name a coefficient family and its parameters::

      [instance]
      dimension = 1
      discount = 1.0
      box_lower = [-3.0]
      box_upper = [3.0]

      [instance.controls]
      u1 = [[0.0]]
      u2 = [[0.0]]

      [instance.drift]       # zero | constant | linear | mean_revert
      family = "zero"

      [instance.diffusion]   # zero | constant | axis_quadratic | axis_bump
      family = "constant"
      matrix = [[1.0]]

      [instance.cost]        # scalar families | control_table | bilinear
      family = "constant"
      value = 0.0

      [instance.obstacles.upper]
      family = "constant"
      value = 1.0

      [instance.obstacles.lower]
      family = "constant"
      value = -1.0

      [lattice]
      nodes = [241]

``[solver]`` keys: tolerance, max_iterations, sign, relaxation,
residual_form, dirichlet ("none" or "default"), contact_eps (0 = automatic).
``[game]`` keys: x0, paths, dt, horizon, seed, antithetic, contact_eps.
Command-line flags override config keys, which override defaults.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):  # pragma: no cover
    import tomllib
else:
    import tomli as tomllib

from .grid import Lattice
from .presets import GameSetup, RegistryInstance, load_instance
from .problem import (
    Box,
    CoefficientField,
    ControlSet,
    ObstaclePair,
    ProblemSpec,
    build_cost,
    build_diffusion,
    build_drift,
    build_scalar_field,
)
from .solver import SolveOptions


class ConfigError(ValueError):
    """Bad or missing configuration data; the message names the key."""


@dataclass
class GameRunConfig:
    x0: np.ndarray
    paths: int = 100_000
    dt: float = 1e-3
    horizon: float = 10.0
    seed: int = 20260809
    antithetic: bool = False
    contact_eps: Optional[float] = None


@dataclass
class RunConfig:
    instance: RegistryInstance
    game: GameRunConfig
    raw: dict = field(default_factory=dict)


def _require(table: dict, key: str, context: str):
    if key not in table:
        raise ConfigError(f"missing key '{context}.{key}'")
    return table[key]


def _build_explicit_instance(inst: dict, lattice_nodes) -> RegistryInstance:
    d = int(_require(inst, "dimension", "instance"))
    if d not in (1, 2):
        raise ConfigError("'instance.dimension' must be 1 or 2")
    lam = float(_require(inst, "discount", "instance"))
    lo = _require(inst, "box_lower", "instance")
    hi = _require(inst, "box_upper", "instance")
    box = Box(lo, hi)

    ctrl = _require(inst, "controls", "instance")
    try:
        controls = (
            ControlSet(_require(ctrl, "u1", "instance.controls")),
            ControlSet(_require(ctrl, "u2", "instance.controls")),
        )
    except ValueError as exc:
        raise ConfigError(f"bad control sets: {exc}") from exc

    def _section(name, builder, *extra):
        params = _require(inst, name, "instance")
        try:
            return builder(params, d, *extra)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad 'instance.{name}' section: {exc}") from exc

    drift = _section("drift", build_drift)
    diffusion = _section("diffusion", build_diffusion)
    cost = _section("cost", build_cost, controls)
    obstacles = _require(inst, "obstacles", "instance")
    try:
        psi_up = build_scalar_field(_require(obstacles, "upper", "instance.obstacles"), d)
        psi_lo = build_scalar_field(_require(obstacles, "lower", "instance.obstacles"), d)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad 'instance.obstacles' section: {exc}") from exc

    spec = ProblemSpec(
        dimension=d,
        coefficients=CoefficientField(
            drift, diffusion, cost, dict(inst.get("bounds", {}))
        ),
        obstacles=ObstaclePair(psi_up, psi_lo),
        controls=controls,
        discount=lam,
        box=box,
    )
    nodes = lattice_nodes or inst.get("nodes") or (101,) * d
    try:
        lattice = Lattice(box.lower, box.upper, nodes)
    except ValueError as exc:
        raise ConfigError(f"bad 'lattice.nodes': {exc}") from exc
    return RegistryInstance(
        name=str(inst.get("name", "config-instance")),
        spec=spec,
        lattice=lattice,
        solve=SolveOptions(),
        description="instance defined by config file",
        oracle_eligible=(d == 1 and spec.is_uncontrolled),
    )


def _solve_options(section: dict, base: SolveOptions) -> SolveOptions:
    kwargs = {}
    for key in ("tolerance", "relaxation"):
        if key in section:
            kwargs[key] = float(section[key])
    if "max_iterations" in section:
        kwargs["max_iterations"] = int(section["max_iterations"])
    if "sign" in section:
        kwargs["sign"] = str(section["sign"])
    if "residual_form" in section:
        kwargs["residual_form"] = str(section["residual_form"])
    if "dirichlet" in section:
        mode = section["dirichlet"]
        if mode not in ("none", "default"):
            raise ConfigError("'solver.dirichlet' must be 'none' or 'default'")
        kwargs["dirichlet"] = None if mode == "none" else "default"
    if "contact_eps" in section:
        eps = float(section["contact_eps"])
        kwargs["contact_eps"] = None if eps == 0.0 else eps
    try:
        merged = {
            "tolerance": base.tolerance,
            "max_iterations": base.max_iterations,
            "sign": base.sign,
            "relaxation": base.relaxation,
            "residual_form": base.residual_form,
            "dirichlet": base.dirichlet,
            "contact_eps": base.contact_eps,
            **kwargs,
        }
        return SolveOptions(**merged)
    except ValueError as exc:
        raise ConfigError(f"bad 'solver' section: {exc}") from exc


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc

    inst_table = raw.get("instance")
    if not inst_table:
        raise ConfigError("missing '[instance]' section")
    lattice_nodes = raw.get("lattice", {}).get("nodes")

    if "preset" in inst_table:
        try:
            instance = load_instance(str(inst_table["preset"]), nodes=lattice_nodes)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from exc
    else:
        instance = _build_explicit_instance(inst_table, lattice_nodes)

    instance.solve = _solve_options(raw.get("solver", {}), instance.solve)

    game_table = raw.get("game", {})
    default_x0 = (
        instance.game.x0
        if instance.game is not None
        else np.zeros(instance.spec.dimension)
    )
    default_eps = instance.game.contact_eps if instance.game is not None else None
    game = GameRunConfig(
        x0=np.atleast_1d(np.asarray(game_table.get("x0", default_x0), dtype=float)),
        paths=int(game_table.get("paths", 100_000)),
        dt=float(game_table.get("dt", 1e-3)),
        horizon=float(game_table.get("horizon", 10.0)),
        seed=int(game_table.get("seed", 20260809)),
        antithetic=bool(game_table.get("antithetic", False)),
        contact_eps=(
            float(game_table["contact_eps"]) if "contact_eps" in game_table else default_eps
        ),
    )
    if game.x0.size != instance.spec.dimension:
        raise ConfigError("'game.x0' length must match the instance dimension")
    return RunConfig(instance=instance, game=game, raw=raw)
