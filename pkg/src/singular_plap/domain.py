"""Box grids, trapezoidal quadrature, discrete norms and the distance field.

Nodes are stored lexicographically: in 2D the flat index of node ``(i, j)``
is ``i * ny + j`` with ``i`` running along x.  Gradients live on
"pieces": the cells in 1D, and in 2D the four corner triangles of every
rectangle (both diagonal splits averaged), each carrying a quarter of the
cell area.  Every discrete energy in the package is a weighted sum over
pieces, which makes the discrete p-Laplacian an exact energy gradient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class Grid:
    dim: int
    extent: tuple[float, ...]
    n: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.extent) != self.dim or len(self.n) != self.dim:
            raise ValueError("extent and n must have one entry per axis")
        if any(not np.isfinite(L) or L <= 0 for L in self.extent):
            raise ValueError(f"extent must be positive, got {self.extent}")
        if any(k < 3 for k in self.n):
            raise ValueError(f"need at least 3 nodes per axis, got {self.n}")

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(L / (k - 1) for L, k in zip(self.extent, self.n))

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.n))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @cached_property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(0.0, L, k) for L, k in zip(self.extent, self.n)]

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(num_nodes, dim)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        idx = np.indices(self.n)
        mask = np.zeros(self.n, dtype=bool)
        for axis, k in enumerate(self.n):
            mask |= (idx[axis] == 0) | (idx[axis] == k - 1)
        return mask.ravel()

    @cached_property
    def interior(self) -> np.ndarray:
        """Flat indices of interior nodes."""
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def dist(self) -> np.ndarray:
        """Exact Euclidean distance to the box boundary."""
        x = self.coords
        faces = []
        for axis, L in enumerate(self.extent):
            faces.append(x[:, axis])
            faces.append(L - x[:, axis])
        d = np.min(np.stack(faces, axis=1), axis=1)
        d[self.boundary_mask] = 0.0
        return d

    @cached_property
    def mass(self) -> np.ndarray:
        """Trapezoidal (tensor-trapezoidal in 2D) quadrature weights."""
        ws = []
        for hk, k in zip(self.h, self.n):
            w = np.full(k, hk)
            w[0] = w[-1] = 0.5 * hk
            ws.append(w)
        if self.dim == 1:
            return ws[0]
        return np.outer(ws[0], ws[1]).ravel()

    @cached_property
    def gradient_pieces(self) -> tuple[list[sp.csr_matrix], np.ndarray]:
        """Sparse gradient components and piece weights.

        Returns ``(G, w)`` where ``G[c] @ u`` is the c-th gradient component
        on every piece and ``w`` the piece measure.
        """
        if self.dim == 1:
            (k,) = self.n
            (hx,) = self.h
            G = sp.diags([-np.ones(k - 1), np.ones(k - 1)], [0, 1], shape=(k - 1, k)) / hx
            return [sp.csr_matrix(G)], np.full(k - 1, hx)

        nx, ny = self.n
        hx, hy = self.h
        node = np.arange(nx * ny).reshape(nx, ny)
        n00 = node[:-1, :-1].ravel()
        n10 = node[1:, :-1].ravel()
        n01 = node[:-1, 1:].ravel()
        n11 = node[1:, 1:].ravel()
        ncell = n00.size
        # corner -> (x-edge endpoints, y-edge endpoints)
        corners = [
            ((n00, n10), (n00, n01)),
            ((n00, n10), (n10, n11)),
            ((n01, n11), (n00, n01)),
            ((n01, n11), (n10, n11)),
        ]
        rows_all = np.arange(4 * ncell)
        comps = []
        for c, hc in ((0, hx), (1, hy)):
            heads = np.concatenate([corner[c][1] for corner in corners])
            tails = np.concatenate([corner[c][0] for corner in corners])
            data = np.concatenate([np.full(4 * ncell, 1.0 / hc), np.full(4 * ncell, -1.0 / hc)])
            G = sp.csr_matrix(
                (data, (np.concatenate([rows_all, rows_all]), np.concatenate([heads, tails]))),
                shape=(4 * ncell, nx * ny),
            )
            comps.append(G)
        return comps, np.full(4 * ncell, 0.25 * hx * hy)

    def function(self, values, dirichlet: bool = True) -> "GridFunction":
        return GridFunction(self, np.asarray(values, dtype=float), dirichlet=dirichlet)

    def evaluate(self, fn, dirichlet: bool = True) -> "GridFunction":
        """Sample ``fn(*coords)`` at the nodes; Dirichlet fields are zeroed on the boundary."""
        vals = np.asarray(fn(*self.coords.T), dtype=float) * np.ones(self.num_nodes)
        if dirichlet:
            vals = vals.copy()
            vals[self.boundary_mask] = 0.0
        return GridFunction(self, vals, dirichlet=dirichlet)

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.num_nodes))

    def same_as(self, other: "Grid") -> bool:
        return self.dim == other.dim and self.n == other.n and np.allclose(self.extent, other.extent)


@dataclass(eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray
    dirichlet: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.num_nodes,):
            raise ValueError(
                f"expected {self.grid.num_nodes} nodal values, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")
        if self.dirichlet and np.any(self.values[self.grid.boundary_mask] != 0.0):
            raise ValueError("Dirichlet field must vanish on boundary nodes")

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy(), self.dirichlet)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values, self.dirichlet)

    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior]

    def to_csv(self, path) -> None:
        write_csv(self, path)


def build_grid(dim: int, extent, n) -> Grid:
    """Uniform box grid ``[0, L1] (x [0, L2])`` with ``n`` nodes per axis."""
    extent = tuple(float(L) for L in np.atleast_1d(extent))
    if np.isscalar(n):
        n = (int(n),) * dim
    n = tuple(int(k) for k in n)
    if len(extent) == 1 and dim == 2:
        extent = extent * 2
    return Grid(dim=dim, extent=extent, n=n)


def _vals(f) -> np.ndarray:
    return f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)


def integrate(f: GridFunction, grid: Grid | None = None) -> float:
    grid = f.grid if grid is None else grid
    # fixed left-to-right reduction keeps results bit-reproducible
    return float(np.add.reduce(grid.mass * _vals(f)))


def norm_Linf(f) -> float:
    v = _vals(f)
    return float(np.max(np.abs(v))) if v.size else 0.0


def norm_Lq(f: GridFunction, q: float) -> float:
    if q < 1:
        raise ValueError("q must be >= 1")
    return integrate(f.with_values(np.abs(f.values) ** q)) ** (1.0 / q)


def piece_gradients(grid: Grid, values: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-piece gradient components and their Euclidean magnitude."""
    G, _ = grid.gradient_pieces
    comps = [Gc @ values for Gc in G]
    if len(comps) == 1:
        mag = np.abs(comps[0])
    else:
        mag = np.hypot(comps[0], comps[1])
    return comps, mag


def seminorm_W1p(f: GridFunction, p: float) -> float:
    """Discrete ``(sum_pieces |grad_h f|^p * vol)^(1/p)``."""
    if p <= 1:
        raise ValueError("p must be > 1")
    _, w = f.grid.gradient_pieces
    _, mag = piece_gradients(f.grid, f.values)
    return float(np.add.reduce(w * mag**p)) ** (1.0 / p)


def write_csv(f: GridFunction, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = ["x", "y"][: f.grid.dim]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_index", *names, "value"])
        for k, (xyz, v) in enumerate(zip(f.grid.coords, f.values)):
            w.writerow([k, *(repr(float(c)) for c in xyz), repr(float(v))])


def read_csv(path, grid: Grid, dirichlet: bool = True) -> GridFunction:
    values = np.zeros(grid.num_nodes)
    seen = np.zeros(grid.num_nodes, dtype=bool)
    with Path(path).open() as fh:
        for row in csv.DictReader(fh):
            k = int(row["node_index"])
            values[k] = float(row["value"])
            seen[k] = True
    if not seen.all():
        raise ValueError(f"{path}: missing {int((~seen).sum())} nodes for this grid")
    return GridFunction(grid, values, dirichlet=dirichlet)
