"""Rectangular lattices, grid functions, and monotone finite-difference stencils.

Conventions used throughout the package:

* nodes are stored row-major (axis 0 outermost),
* first derivatives are first-order upwind, selected per axis by the sign of
  the drift component; where the upwind neighbour would fall outside the
  lattice the one-sided difference into the domain is used instead,
* second derivatives are central; at a face the stencil is shifted one node
  into the interior (still exact on quadratics),
* the mixed derivative uses the positive/negative 7-point splitting, which is
  monotone iff the diffusion matrix is diagonally dominant in the scaled
  sense |a12| <= min(a11*h2/h1, a22*h1/h2).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .problem import ProblemSpec


class MonotonicityViolation(RuntimeError):
    """Raised when the cross-diffusion term is too large for the monotone stencil."""


@dataclass(frozen=True)
class Lattice:
    """Uniform rectangular lattice on a box, 1 or 2 dimensional."""

    lower: np.ndarray
    upper: np.ndarray
    counts: tuple[int, ...]

    def __init__(self, lower, upper, counts):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        counts = tuple(int(n) for n in np.atleast_1d(counts))
        if lower.shape != upper.shape or len(counts) != lower.size:
            raise ValueError("lattice bounds and counts must have matching length")
        if lower.size not in (1, 2):
            raise ValueError("only dimensions 1 and 2 are supported")
        if np.any(upper <= lower):
            raise ValueError("lattice box must have positive volume")
        if any(n < 3 for n in counts):
            raise ValueError("need at least 3 nodes per axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def spacing(self) -> np.ndarray:
        n = np.array(self.counts, dtype=float)
        return (self.upper - self.lower) / (n - 1.0)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.counts))

    def axis_coords(self, k: int) -> np.ndarray:
        return np.linspace(self.lower[k], self.upper[k], self.counts[k])

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (node_count, dimension), row-major."""
        axes = [self.axis_coords(k) for k in range(self.dimension)]
        if self.dimension == 1:
            return axes[0][:, None]
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def flat_index(self, multi: tuple[int, ...]) -> int:
        if self.dimension == 1:
            return int(multi[0])
        return int(multi[0]) * self.counts[1] + int(multi[1])

    def multi_index(self, flat: int) -> tuple[int, ...]:
        if self.dimension == 1:
            return (int(flat),)
        return (int(flat) // self.counts[1], int(flat) % self.counts[1])

    def boundary_mask(self) -> np.ndarray:
        """True at nodes lying on any face of the box."""
        mask = np.zeros(self.counts, dtype=bool)
        for k in range(self.dimension):
            sl = [slice(None)] * self.dimension
            sl[k] = 0
            mask[tuple(sl)] = True
            sl[k] = -1
            mask[tuple(sl)] = True
        return mask.ravel()

    def interior_subbox_mask(self, margin: float = 0.1) -> np.ndarray:
        """Nodes at least ``margin`` * box-width away from every face.

        This is the region on which discretisation errors are reported; the
        truncation of the unbounded state space makes values near the
        artificial boundary untrustworthy.
        """
        nodes = self.nodes()
        width = self.upper - self.lower
        lo = self.lower + margin * width
        hi = self.upper - margin * width
        ok = np.ones(self.node_count, dtype=bool)
        for k in range(self.dimension):
            ok &= (nodes[:, k] >= lo[k] - 1e-12) & (nodes[:, k] <= hi[k] + 1e-12)
        return ok

    def shifted_flat(self, k: int, offset: int) -> np.ndarray:
        """Flat indices of the neighbour ``offset`` steps along axis k, clipped."""
        idx = np.arange(self.node_count).reshape(self.counts)
        grid = np.indices(self.counts)
        moved = np.clip(grid[k] + offset, 0, self.counts[k] - 1)
        sl = [grid[j] for j in range(self.dimension)]
        sl[k] = moved
        return idx[tuple(sl)].ravel()


@dataclass
class GridFunction:
    """Scalar values attached to every lattice node, row-major."""

    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.lattice.node_count:
            raise ValueError(
                f"value count {self.values.size} does not match lattice "
                f"({self.lattice.node_count} nodes)"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")

    def copy(self) -> "GridFunction":
        return GridFunction(self.lattice, self.values.copy())

    def reshaped(self) -> np.ndarray:
        return self.values.reshape(self.lattice.counts)

    def interpolate(self, x: np.ndarray) -> np.ndarray:
        """Multilinear interpolation at query points, shape (..., d)."""
        x = np.asarray(x, dtype=float)
        if self.lattice.dimension == 1:
            q = x.reshape(-1)
            out = np.interp(q, self.lattice.axis_coords(0), self.values)
            return out.reshape(x.shape[:-1]) if x.ndim > 1 else out
        q = x.reshape(-1, 2)
        h = self.lattice.spacing
        t0 = (q[:, 0] - self.lattice.lower[0]) / h[0]
        t1 = (q[:, 1] - self.lattice.lower[1]) / h[1]
        i0 = np.clip(np.floor(t0).astype(int), 0, self.lattice.counts[0] - 2)
        i1 = np.clip(np.floor(t1).astype(int), 0, self.lattice.counts[1] - 2)
        f0 = np.clip(t0 - i0, 0.0, 1.0)
        f1 = np.clip(t1 - i1, 0.0, 1.0)
        vv = self.reshaped()
        out = (
            vv[i0, i1] * (1 - f0) * (1 - f1)
            + vv[i0 + 1, i1] * f0 * (1 - f1)
            + vv[i0, i1 + 1] * (1 - f0) * f1
            + vv[i0 + 1, i1 + 1] * f0 * f1
        )
        return out.reshape(x.shape[:-1])


def _axis_first_diffs(gf: GridFunction, multi: tuple[int, ...], k: int) -> tuple[float, float]:
    """(forward, backward) one-sided slopes along axis k with boundary fallback."""
    lat = gf.lattice
    h = lat.spacing[k]
    vv = gf.reshaped()
    i = list(multi)
    n = lat.counts[k]
    here = vv[tuple(i)]

    if multi[k] + 1 < n:
        i[k] = multi[k] + 1
        fwd = (vv[tuple(i)] - here) / h
        i[k] = multi[k]
    else:
        fwd = None
    if multi[k] - 1 >= 0:
        i[k] = multi[k] - 1
        bwd = (here - vv[tuple(i)]) / h
        i[k] = multi[k]
    else:
        bwd = None
    # at a face only one of the two exists; it serves for both directions
    if fwd is None:
        fwd = bwd
    if bwd is None:
        bwd = fwd
    return float(fwd), float(bwd)


def upwind_gradient(gf: GridFunction, node, drift) -> np.ndarray:
    """First-order upwind gradient at a node, selected by the drift sign.

    Axis k uses the forward difference when drift[k] >= 0 and the backward
    difference otherwise; at a face where the upwind neighbour is missing the
    one-sided difference into the domain is used.
    """
    lat = gf.lattice
    multi = lat.multi_index(node) if np.isscalar(node) else tuple(int(i) for i in node)
    drift = np.atleast_1d(np.asarray(drift, dtype=float))
    if drift.size != lat.dimension:
        raise ValueError("drift length does not match lattice dimension")
    grad = np.empty(lat.dimension)
    for k in range(lat.dimension):
        fwd, bwd = _axis_first_diffs(gf, multi, k)
        grad[k] = fwd if drift[k] >= 0.0 else bwd
    return grad


def _axis_second_diff(gf: GridFunction, multi: tuple[int, ...], k: int) -> float:
    """Central second difference; shifted one node inward at a face."""
    lat = gf.lattice
    h2 = lat.spacing[k] ** 2
    vv = gf.reshaped()
    n = lat.counts[k]
    c = min(max(multi[k], 1), n - 2)
    i = list(multi)
    i[k] = c - 1
    vm = vv[tuple(i)]
    i[k] = c
    v0 = vv[tuple(i)]
    i[k] = c + 1
    vp = vv[tuple(i)]
    return float((vp - 2.0 * v0 + vm) / h2)


def check_cross_dominance(a: np.ndarray, h: np.ndarray, where: str = "") -> None:
    """Diagonal-dominance precondition for the monotone cross stencil."""
    a12 = a[0, 1]
    bound = min(a[0, 0] * h[1] / h[0], a[1, 1] * h[0] / h[1])
    if abs(a12) > bound * (1.0 + 1e-12) + 1e-300:
        raise MonotonicityViolation(
            f"cross-diffusion term |a12|={abs(a12):g} exceeds the monotone "
            f"stencil bound {bound:g}{(' at ' + where) if where else ''}"
        )


def _cross_diff(gf: GridFunction, multi: tuple[int, ...], a12: float) -> float:
    """Mixed second derivative via the sign-split 7-point stencil.

    The stencil centre is shifted to the nearest interior node at faces;
    exact on quadratics either way.
    """
    lat = gf.lattice
    h0, h1 = lat.spacing
    vv = gf.reshaped()
    c0 = min(max(multi[0], 1), lat.counts[0] - 2)
    c1 = min(max(multi[1], 1), lat.counts[1] - 2)
    v = lambda d0, d1: vv[c0 + d0, c1 + d1]
    if a12 >= 0.0:
        num = (
            v(1, 1) + v(-1, -1) + 2.0 * v(0, 0)
            - v(1, 0) - v(-1, 0) - v(0, 1) - v(0, -1)
        )
        return float(num / (2.0 * h0 * h1))
    num = (
        v(1, -1) + v(-1, 1) + 2.0 * v(0, 0)
        - v(1, 0) - v(-1, 0) - v(0, 1) - v(0, -1)
    )
    return float(-num / (2.0 * h0 * h1))


def second_difference(gf: GridFunction, node, a) -> float:
    """Discrete 0.5*tr(a D^2 v) at a node (monotone assembly).

    Per-axis central second differences weighted by a_kk plus, in 2-D, the
    sign-split cross stencil weighted by a12.  Exact on quadratic grid
    functions at every node.
    """
    lat = gf.lattice
    multi = lat.multi_index(node) if np.isscalar(node) else tuple(int(i) for i in node)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape != (lat.dimension, lat.dimension):
        raise ValueError("diffusion matrix shape does not match lattice dimension")
    total = 0.0
    for k in range(lat.dimension):
        if a[k, k] != 0.0:
            total += 0.5 * a[k, k] * _axis_second_diff(gf, multi, k)
    if lat.dimension == 2 and a[0, 1] != 0.0:
        check_cross_dominance(a, lat.spacing, where=str(multi))
        total += a[0, 1] * _cross_diff(gf, multi, a[0, 1])
    return total


def cfl_timestep(spec: "ProblemSpec", lattice: Lattice, relaxation: float = 0.9) -> float:
    """Pseudo-time step keeping the explicit update a monotone contraction.

    dt = relaxation / (lambda + max over nodes and control pairs of
    [sum_k a_kk/h_k^2 + |a12|/(h1 h2) + sum_k |b_k|/h_k]).
    """
    from .problem import STOP  # local import to avoid a cycle

    h = lattice.spacing
    x = lattice.nodes()
    worst = 0.0
    for u1 in spec.controls[0].members:
        for u2 in spec.controls[1].members:
            if u1 is STOP or u2 is STOP:
                continue  # extended coefficients vanish at stop symbols
            b = np.atleast_2d(spec.coefficients.drift(x, u1, u2))
            a = spec.coefficients.diffusion_matrix(x, u1, u2)
            a = np.asarray(a, dtype=float).reshape(x.shape[0], lattice.dimension, lattice.dimension)
            term = np.zeros(x.shape[0])
            for k in range(lattice.dimension):
                term += a[:, k, k] / h[k] ** 2 + np.abs(b[:, k]) / h[k]
            if lattice.dimension == 2:
                term += np.abs(a[:, 0, 1]) / (h[0] * h[1])
            worst = max(worst, float(np.max(term)))
    return relaxation / (spec.discount + worst)


def write_grid_csv(gf: GridFunction, path) -> None:
    """Write ``x[,y],value`` rows, row-major, 17 significant digits."""
    lat = gf.lattice
    nodes = lat.nodes()
    header = ["x", "value"] if lat.dimension == 1 else ["x", "y", "value"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(lat.node_count):
            coords = [f"{c:.17g}" for c in nodes[i]]
            writer.writerow(coords + [f"{gf.values[i]:.17g}"])


def read_grid_csv(path) -> GridFunction:
    """Inverse of :func:`write_grid_csv`; reconstructs the lattice from coordinates."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    d = len(header) - 1
    if d not in (1, 2):
        raise ValueError(f"unsupported grid CSV header {header!r}")
    arr = np.array([[float(c) for c in row] for row in data])
    coords, values = arr[:, :d], arr[:, d]
    axes = []
    for k in range(d):
        ax = np.unique(coords[:, k])
        steps = np.diff(ax)
        if ax.size < 3 or not np.allclose(steps, steps[0], rtol=1e-10, atol=0.0):
            raise ValueError("grid CSV coordinates are not a uniform lattice")
        axes.append(ax)
    counts = tuple(ax.size for ax in axes)
    lat = Lattice([ax[0] for ax in axes], [ax[-1] for ax in axes], counts)
    expected = lat.nodes()
    if coords.shape != expected.shape or not np.array_equal(coords, expected):
        raise ValueError("grid CSV rows are not in row-major lattice order")
    return GridFunction(lat, values)
