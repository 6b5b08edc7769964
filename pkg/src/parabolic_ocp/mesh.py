"""Structured space-time grids and the discrete elliptic operator.

Space is a rectangle (0, lx) x (0, ly) (or the interval (0, lx)) with
homogeneous Dirichlet data; only interior nodes are unknowns. Interior nodes
are numbered row-major, ``flat = j * nx + i`` with ``i`` along x.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]


class UnsupportedDimension(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    dim: int
    nx: int
    ny: int
    lx: float
    ly: float
    T: float
    nt: int

    @property
    def hx(self) -> float:
        return self.lx / (self.nx + 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny + 1) if self.dim == 2 else 1.0

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def n(self) -> int:
        """Number of interior unknowns per time level."""
        return self.nx * self.ny if self.dim == 2 else self.nx

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy if self.dim == 2 else self.hx

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.ny, self.nx) if self.dim == 2 else (self.nx,)

    @cached_property
    def coords(self) -> np.ndarray:
        """Interior node coordinates, shape ``(n, dim)``."""
        xs = self.hx * np.arange(1, self.nx + 1)
        if self.dim == 1:
            return xs[:, None]
        ys = self.hy * np.arange(1, self.ny + 1)
        X, Y = np.meshgrid(xs, ys)  # row-major: y slow, x fast
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    def flat_index(self, i: int, j: int = 0) -> int:
        """Flat index of interior node (i, j), zero-based along each axis."""
        if not (0 <= i < self.nx) or (self.dim == 2 and not 0 <= j < self.ny):
            raise IndexError(f"node ({i}, {j}) outside interior grid {self.grid_shape[::-1]}")
        return j * self.nx + i if self.dim == 2 else i

    def grid_index(self, k: int) -> tuple[int, ...]:
        if not 0 <= k < self.n:
            raise IndexError(k)
        return (k % self.nx, k // self.nx) if self.dim == 2 else (k,)

    def refined(self, factor: int = 2, time_factor: int | None = None) -> "Mesh":
        """Mesh with spacings divided by ``factor`` (nodes ``n -> factor*(n+1)-1``)."""
        tf = factor if time_factor is None else time_factor
        return build_mesh(self.dim, self.lx, self.ly, factor * (self.nx + 1) - 1,
                          factor * (self.ny + 1) - 1 if self.dim == 2 else 1,
                          self.T, tf * self.nt)

    def describe(self) -> dict:
        return {"dim": self.dim, "nx": self.nx, "ny": self.ny, "lx": self.lx, "ly": self.ly,
                "T": self.T, "nt": self.nt, "hx": self.hx, "hy": self.hy, "dt": self.dt}


def build_mesh(dim: int, lx: float = 1.0, ly: float = 1.0, nx: int = 16, ny: int = 16,
               T: float = 1.0, nt: int = 16) -> Mesh:
    if dim not in (1, 2):
        raise UnsupportedDimension(f"unsupported dimension {dim}: only 1 and 2 are implemented")
    if nx < 2 or (dim == 2 and ny < 2):
        raise ValueError(f"need at least 2 interior nodes per axis, got nx={nx}, ny={ny}")
    if nt < 1:
        raise ValueError(f"need nt >= 1, got {nt}")
    if lx <= 0 or (dim == 2 and ly <= 0) or T <= 0:
        raise ValueError(f"lengths and horizon must be positive (lx={lx}, ly={ly}, T={T})")
    if dim == 1:
        ny, ly = 1, 1.0
    return Mesh(dim=dim, nx=int(nx), ny=int(ny), lx=float(lx), ly=float(ly), T=float(T), nt=int(nt))


@dataclass(frozen=True)
class EllipticOperator:
    """Sparse SPD matrix of ``-div(a grad .)`` on interior nodes."""

    matrix: sp.csr_matrix
    mesh: Mesh
    coefficient: Coefficient
    averaging: str
    min_face_coefficient: float
    _scaled: dict = field(default_factory=dict, repr=False, compare=False)

    def __matmul__(self, y):
        return self.matrix @ y

    def scaled(self, s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR arrays of ``s * A`` (cached), as consumed by the CG kernel."""
        key = float(s)
        if key not in self._scaled:
            M = (s * self.matrix).tocsr()
            M.sort_indices()
            self._scaled[key] = (M.indptr.astype(np.int32), M.indices.astype(np.int32),
                                 np.ascontiguousarray(M.data, dtype=float))
        return self._scaled[key]

    @property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()


def _nodal_coefficient(coeff: Coefficient, pts: np.ndarray) -> np.ndarray:
    if callable(coeff):
        vals = np.asarray(coeff(pts), dtype=float)
        return np.broadcast_to(vals, pts.shape[:-1]).astype(float)
    return np.full(pts.shape[:-1], float(coeff))


def _face_average(left: np.ndarray, right: np.ndarray, averaging: str) -> np.ndarray:
    if averaging == "arithmetic":
        return 0.5 * (left + right)
    if averaging == "harmonic":
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where((left > 0) & (right > 0), 2.0 * left * right / (left + right), 0.0)
    raise ValueError(f"unknown face averaging {averaging!r}")


def _axis_operator(faces: np.ndarray, h: float) -> sp.csr_matrix:
    """3-point operator from face coefficients ``faces`` (length m+1) on m nodes."""
    m = faces.size - 1
    main = (faces[:-1] + faces[1:]) / h**2
    off = -faces[1:-1] / h**2
    return sp.diags([off, main, off], [-1, 0, 1], shape=(m, m), format="csr")


def assemble_elliptic(mesh: Mesh, coeff: Coefficient = 1.0,
                      averaging: str = "arithmetic") -> EllipticOperator:
    """Assemble the divergence-form stencil for ``A y = -div(a(x) grad y)``.

    Face values of ``a`` come from the two adjacent nodal values (boundary
    nodes included), which keeps the matrix symmetric with nonpositive
    off-diagonals.
    """
    if mesh.dim == 1:
        xs = mesh.hx * np.arange(mesh.nx + 2)
        a_nodes = _nodal_coefficient(coeff, xs[:, None])
        faces = _face_average(a_nodes[:-1], a_nodes[1:], averaging)
        fmin = float(faces.min())
        if not np.all(np.isfinite(faces)) or fmin <= 0:
            raise ValueError(f"diffusion coefficient must be positive at every face (min {fmin:g})")
        A = _axis_operator(faces, mesh.hx)
    else:
        nx, ny, hx, hy = mesh.nx, mesh.ny, mesh.hx, mesh.hy
        xs = hx * np.arange(nx + 2)
        ys = hy * np.arange(ny + 2)
        X, Y = np.meshgrid(xs, ys)
        a_nodes = _nodal_coefficient(coeff, np.stack([X, Y], axis=-1))  # (ny+2, nx+2)
        # x-faces between columns c and c+1, for interior rows
        fx = _face_average(a_nodes[1:-1, :-1], a_nodes[1:-1, 1:], averaging)  # (ny, nx+1)
        fy = _face_average(a_nodes[:-1, 1:-1], a_nodes[1:, 1:-1], averaging)  # (ny+1, nx)
        fmin = float(min(fx.min(), fy.min()))
        if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fy))) or fmin <= 0:
            raise ValueError(f"diffusion coefficient must be positive at every face (min {fmin:g})")
        n = nx * ny
        idx = np.arange(n).reshape(ny, nx)
        diag = ((fx[:, :-1] + fx[:, 1:]) / hx**2 + (fy[:-1, :] + fy[1:, :]) / hy**2).ravel()
        rows = [idx.ravel()]
        cols = [idx.ravel()]
        vals = [diag]
        # east/west neighbours
        w = -fx[:, 1:-1] / hx**2
        rows += [idx[:, :-1].ravel(), idx[:, 1:].ravel()]
        cols += [idx[:, 1:].ravel(), idx[:, :-1].ravel()]
        vals += [w.ravel(), w.ravel()]
        # north/south neighbours
        s = -fy[1:-1, :] / hy**2
        rows += [idx[:-1, :].ravel(), idx[1:, :].ravel()]
        cols += [idx[1:, :].ravel(), idx[:-1, :].ravel()]
        vals += [s.ravel(), s.ravel()]
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
    A.sort_indices()
    return EllipticOperator(matrix=A, mesh=mesh, coefficient=coeff, averaging=averaging,
                            min_face_coefficient=fmin)


def gershgorin_lower_bound(op: EllipticOperator, shift: float = 0.0) -> float:
    """Gershgorin lower bound on the spectrum of ``A + shift*I``."""
    A = op.matrix
    d = A.diagonal() + shift
    offsum = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(A.diagonal())
    return float(np.min(d - offsum))
