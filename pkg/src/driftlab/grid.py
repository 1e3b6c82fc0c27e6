"""
Uniform cell-centred grids on a periodic box.

Cells are indexed so that cell ``N // 2`` along every axis sits exactly on
the box centre.  Velocity components live on cell faces: ``faces[d][i]`` is
the normal component on the face between cell ``i`` and ``i + e_d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_CELLS = 8


class GridError(ValueError):
    """Raised for inconsistent grid specifications."""


@dataclass(frozen=True)
class DirichletBall:
    """Absorbing ball inside the periodic box; values outside are pinned to 0."""

    center: tuple[float, ...]
    radius: float


@dataclass(frozen=True)
class GridSpec:
    """
    Uniform grid of ``cells`` per axis on a box of side ``L``.

    Parameters
    ----------
    n : int
        Spatial dimension, 1 to 3.
    cells : int
        Cells per axis (at least 8).
    L : float
        Box side length.
    center : tuple of float, optional
        Coordinates of the box centre; cell ``cells // 2`` sits there.
    boundary : None or DirichletBall
        ``None`` for a fully periodic grid.
    """

    n: int
    cells: int
    L: float
    center: tuple[float, ...] = field(default=())
    boundary: DirichletBall | None = None

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise GridError(f"dimension must be 1, 2 or 3, got {self.n}")
        if int(self.cells) != self.cells or self.cells < MIN_CELLS:
            raise GridError(f"need at least {MIN_CELLS} cells per axis, got {self.cells}")
        if not self.L > 0:
            raise GridError("box side must be positive")
        if not self.center:
            object.__setattr__(self, "center", (0.0,) * self.n)
        center = tuple(float(c) for c in self.center)
        if len(center) != self.n:
            raise GridError("center has wrong length")
        object.__setattr__(self, "center", center)
        if self.boundary is not None:
            ball = self.boundary
            bc = tuple(float(c) for c in ball.center)
            if len(bc) != self.n or not ball.radius > 0:
                raise GridError("malformed Dirichlet ball")
            # ball must sit strictly inside the box
            lo = np.asarray(center) - self.L / 2
            hi = np.asarray(center) + self.L / 2 - self.h
            if np.any(np.asarray(bc) - ball.radius <= lo) or np.any(np.asarray(bc) + ball.radius >= hi):
                raise GridError("Dirichlet ball does not fit strictly inside the box")
            object.__setattr__(self, "boundary", DirichletBall(bc, float(ball.radius)))

    @property
    def h(self) -> float:
        return self.L / self.cells

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells,) * self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def size(self) -> int:
        return self.cells**self.n

    @property
    def is_periodic(self) -> bool:
        return self.boundary is None

    def axis(self, d: int) -> np.ndarray:
        """Cell-centre coordinates along axis ``d``."""
        return self.center[d] + (np.arange(self.cells) - self.cells // 2) * self.h

    def mesh(self) -> list[np.ndarray]:
        """Cell-centre coordinate arrays, one per axis, each of grid shape."""
        return list(np.meshgrid(*[self.axis(d) for d in range(self.n)], indexing="ij"))

    def points(self) -> np.ndarray:
        """Cell centres stacked as an array of shape ``(n, *shape)``."""
        return np.stack(self.mesh())

    def face_points(self, d: int) -> np.ndarray:
        """Centres of the ``+e_d`` faces, shape ``(n, *shape)``."""
        pts = self.points()
        pts[d] = pts[d] + 0.5 * self.h
        return pts

    def displacement(self, origin) -> np.ndarray:
        """Minimum-image displacement ``x - origin`` for every cell, shape ``(n, *shape)``."""
        origin = np.asarray(origin, dtype=float).reshape((self.n,) + (1,) * self.n)
        dx = self.points() - origin
        return dx - self.L * np.round(dx / self.L)

    def distance(self, origin) -> np.ndarray:
        return np.sqrt(np.sum(self.displacement(origin) ** 2, axis=0))

    def index_of(self, point, tol: float = 1e-9) -> tuple[int, ...]:
        """Index of the cell whose centre is ``point``; raises if ``point`` is off-centre."""
        point = np.asarray(point, dtype=float)
        if point.shape != (self.n,):
            raise GridError("point has wrong dimension")
        rel = (point - np.asarray(self.center)) / self.h + self.cells // 2
        idx = np.round(rel)
        if np.any(np.abs(rel - idx) > tol):
            raise GridError(f"point {point.tolist()} is not a cell centre")
        return tuple(int(i) % self.cells for i in idx)

    def center_of(self, index) -> np.ndarray:
        return np.array([self.axis(d)[index[d]] for d in range(self.n)])

    def mask(self) -> np.ndarray | None:
        """Boolean mask of cells inside the Dirichlet ball, or ``None`` when periodic."""
        if self.boundary is None:
            return None
        return self.distance(self.boundary.center) < self.boundary.radius - 1e-12 * self.h

    def with_boundary(self, boundary: DirichletBall | None) -> "GridSpec":
        return GridSpec(self.n, self.cells, self.L, self.center, boundary)

    def refined(self, factor: float) -> "GridSpec":
        cells = int(round(self.cells * factor))
        return GridSpec(self.n, cells, self.L, self.center, self.boundary)

    def to_dict(self) -> dict:
        out = {"n": self.n, "cells": self.cells, "L": self.L, "center": list(self.center)}
        if self.boundary is None:
            out["boundary"] = "periodic"
        else:
            out["boundary"] = {"center": list(self.boundary.center), "radius": self.boundary.radius}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        bnd = data.get("boundary", "periodic")
        ball = None
        if isinstance(bnd, dict):
            ball = DirichletBall(tuple(bnd["center"]), float(bnd["radius"]))
        elif bnd != "periodic":
            raise GridError(f"unknown boundary mode {bnd!r}")
        n = int(data["n"])
        center = tuple(data.get("center", (0.0,) * n))
        return cls(n, int(data["cells"]), float(data["L"]), center, ball)
