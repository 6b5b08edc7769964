"""Space-time grid functions and their on-disk layout.

A :class:`Field` stores ``values[k, i]`` for time level ``k = 0..nt`` and
interior node ``i``. States live on every level (level 0 is the initial
datum). Controls and multipliers act on the implicit-Euler intervals
``(t_{k-1}, t_k]`` and are meaningful on levels ``1..nt`` only; by
convention their level-0 row repeats level 1.

CSV layout::

    # parabolic_ocp field v1
    # dim=2 nx=16 ny=16 nt=32 lx=1.0 ly=1.0 T=1.0 hx=... hy=... dt=...
    <nt+1 rows, one per time level, n comma-separated values each>
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .mesh import Mesh, build_mesh

_MAGIC = "# parabolic_ocp field v1"


@dataclass(frozen=True, eq=False)
class Field:
    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expected = (self.mesh.nt + 1, self.mesh.n)
        if v.shape != expected:
            raise ValueError(f"field shape {v.shape} does not match mesh {expected}")
        if not np.all(np.isfinite(v)):
            bad = np.argwhere(~np.isfinite(v))[0]
            raise ValueError(f"non-finite field value at level {bad[0]}, node {bad[1]}")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "Field":
        return cls(np.zeros((mesh.nt + 1, mesh.n)), mesh)

    @classmethod
    def constant(cls, mesh: Mesh, value: float) -> "Field":
        return cls(np.full((mesh.nt + 1, mesh.n), float(value)), mesh)

    @classmethod
    def from_function(cls, mesh: Mesh, fn: Callable) -> "Field":
        """Sample ``fn(x, t)``; ``x[..., k]`` is coordinate k, broadcastable against ``t``."""
        x, t = space_time(mesh)
        vals = np.broadcast_to(np.asarray(fn(x, t), dtype=float), (mesh.nt + 1, mesh.n))
        return cls(vals.copy(), mesh)

    @property
    def q(self) -> np.ndarray:
        """Values on the space-time nodes of Q carrying controls (levels 1..nt)."""
        return self.values[1:]

    def level(self, k: int) -> np.ndarray:
        return self.values[k]

    def grid(self, k: int) -> np.ndarray:
        return self.values[k].reshape(self.mesh.grid_shape)

    def copy(self) -> "Field":
        return Field(self.values.copy(), self.mesh)

    def with_values(self, values) -> "Field":
        return Field(values, self.mesh)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __neg__(self):
        return Field(-self.values, self.mesh)

    def _binary(self, other, op):
        o = other.values if isinstance(other, Field) else other
        return Field(op(self.values, o), self.mesh)

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__


FieldLike = Union[Field, np.ndarray]


def space_time(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates ``x`` of shape (1, n, dim) and times ``t`` of shape (nt+1, 1)."""
    return mesh.coords[None, :, :], mesh.times[:, None]


def values_of(f: FieldLike, mesh: Mesh | None = None) -> np.ndarray:
    if isinstance(f, Field):
        return f.values
    arr = np.asarray(f, dtype=float)
    if mesh is not None and arr.shape != (mesh.nt + 1, mesh.n):
        raise ValueError(f"array shape {arr.shape} does not match mesh {(mesh.nt + 1, mesh.n)}")
    return arr


def control_field(q_values: np.ndarray, mesh: Mesh) -> Field:
    """Field from levels 1..nt, repeating level 1 on level 0."""
    q_values = np.asarray(q_values, dtype=float)
    return Field(np.vstack([q_values[:1], q_values]), mesh)


def l2_norm_q(values: np.ndarray, mesh: Mesh) -> float:
    """Discrete L2(Q) norm over levels 1..nt (uniform weights dt*h^dim)."""
    v = values[1:] if values.shape[0] == mesh.nt + 1 else values
    return float(np.sqrt(mesh.dt * mesh.cell_volume * np.sum(v * v)))


def _header(mesh: Mesh) -> str:
    d = mesh.describe()
    return " ".join(f"{k}={d[k]!r}" for k in ("dim", "nx", "ny", "nt", "lx", "ly", "T", "hx", "hy", "dt"))


def save_field(path, field: Field) -> Path:
    """Write a field as CSV (``.csv``) or NumPy archive (``.npz``)."""
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, values=field.values, **{k: v for k, v in field.mesh.describe().items()})
        return path
    lines = [_MAGIC, "# " + _header(field.mesh)]
    for row in field.values:
        lines.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_field(path) -> Field:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            mesh = build_mesh(int(z["dim"]), float(z["lx"]), float(z["ly"]), int(z["nx"]),
                              int(z["ny"]), float(z["T"]), int(z["nt"]))
            return Field(z["values"], mesh)
    lines = path.read_text().splitlines()
    if len(lines) < 3 or lines[0] != _MAGIC:
        raise ValueError(f"{path}: not a field file (missing header)")
    meta = dict(tok.split("=", 1) for tok in lines[1].lstrip("# ").split())
    mesh = build_mesh(int(meta["dim"]), float(meta["lx"]), float(meta["ly"]), int(meta["nx"]),
                      int(meta["ny"]), float(meta["T"]), int(meta["nt"]))
    try:
        vals = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:] if ln.strip()])
    except ValueError as exc:
        raise ValueError(f"{path}: corrupt field data ({exc})") from None
    return Field(vals, mesh)
