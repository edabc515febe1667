"""Graphons, label-space quantization and the discretized graphon operator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

KINDS = ("uniform", "ranked", "er", "threshold", "step", "tabulated")


class GraphonError(ValueError):
    """Invalid graphon construction or evaluation outside the unit square."""


def _check_unit(name: str, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise GraphonError(f"{name} must lie in [0, 1], got {x!r}")
    return arr


def bin_index(x, n: int) -> np.ndarray:
    """Index of the bin [(i-1)/n, i/n) containing x, last bin closed (0-based)."""
    return np.minimum(np.floor(np.asarray(x, dtype=float) * n).astype(np.int64), n - 1)


@dataclass(frozen=True, eq=False)
class Graphon:
    """Nonnegative kernel on [0,1]^2.

    Use the classmethods (``uniform``, ``ranked``, ``er``, ``threshold``,
    ``step``, ``tabulated``) rather than the raw constructor.
    """

    kind: str
    p: float | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphonError(f"unknown graphon kind {self.kind!r}")
        if self.kind == "er":
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise GraphonError(f"er graphon needs p in [0, 1], got {self.p!r}")
        if self.kind in ("step", "tabulated"):
            if self.matrix is None:
                raise GraphonError(f"{self.kind} graphon needs a matrix")
            mat = np.array(self.matrix, dtype=float)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
                raise GraphonError(f"{self.kind} matrix must be square and non-empty, got shape {mat.shape}")
            if not np.all(np.isfinite(mat)) or np.any(mat < 0):
                raise GraphonError(f"{self.kind} matrix must have nonnegative finite entries")
            mat.setflags(write=False)
            object.__setattr__(self, "matrix", mat)

    @classmethod
    def uniform(cls) -> Graphon:
        return cls("uniform")

    @classmethod
    def ranked(cls) -> Graphon:
        return cls("ranked")

    @classmethod
    def er(cls, p: float) -> Graphon:
        return cls("er", p=float(p))

    @classmethod
    def threshold(cls) -> Graphon:
        return cls("threshold")

    @classmethod
    def step(cls, matrix) -> Graphon:
        return cls("step", matrix=matrix)

    @classmethod
    def tabulated(cls, grid) -> Graphon:
        return cls("tabulated", matrix=grid)

    def __call__(self, u, v):
        u = _check_unit("u", u)
        v = _check_unit("v", v)
        return self._eval(u, v)

    def _eval(self, u: np.ndarray, v: np.ndarray):
        if self.kind == "uniform":
            out = 1.0 - np.maximum(u, v)
        elif self.kind == "ranked":
            out = 1.0 - u * v
        elif self.kind == "er":
            out = np.full(np.broadcast(u, v).shape, self.p)
        elif self.kind == "threshold":
            out = np.where(u + v < 1.0, 1.0, 0.0)
        else:
            # step and tabulated share the nearest-cell lookup on a uniform grid
            n = self.matrix.shape[0]
            out = self.matrix[bin_index(u, n), bin_index(v, n)]
        if np.ndim(out) == 0:
            return float(out)
        return out

    @property
    def max_value(self) -> float:
        if self.kind in ("uniform", "ranked", "threshold"):
            return 1.0
        if self.kind == "er":
            return float(self.p)
        return float(self.matrix.max())

    def to_config(self) -> dict[str, Any]:
        cfg: dict[str, Any] = {"kind": self.kind}
        if self.kind == "er":
            cfg["p"] = self.p
        elif self.kind == "step":
            cfg["matrix"] = self.matrix.tolist()
        elif self.kind == "tabulated":
            cfg["grid"] = self.matrix.tolist()
        return cfg

    @classmethod
    def from_config(cls, cfg: dict[str, Any]) -> Graphon:
        kind = cfg.get("kind")
        if kind == "er":
            return cls.er(cfg.get("p", 1.0))
        if kind == "step":
            return cls.step(cfg["matrix"])
        if kind == "tabulated":
            return cls.tabulated(cfg["grid"])
        if kind in KINDS:
            return cls(kind)
        raise GraphonError(f"unknown graphon kind {kind!r}")


def eval_graphon(g: Graphon, u: float, v: float) -> float:
    return g(u, v)


@dataclass(frozen=True)
class LabelDiscretization:
    """Uniform quantization of [0,1] into ``D`` classes represented by bin midpoints."""

    D: int

    def __post_init__(self):
        if int(self.D) != self.D or self.D < 1:
            raise ValueError(f"D must be a positive integer, got {self.D!r}")

    @property
    def midpoints(self) -> np.ndarray:
        return (2.0 * np.arange(1, self.D + 1) - 1.0) / (2.0 * self.D)

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.D + 1) / self.D

    def index(self, u):
        """0-based class index of label(s) ``u``."""
        idx = bin_index(_check_unit("u", u), self.D)
        return int(idx) if np.ndim(idx) == 0 else idx

    def project(self, u):
        idx = self.index(u)
        mid = (2.0 * np.asarray(idx) + 1.0) / (2.0 * self.D)
        return float(mid) if np.ndim(mid) == 0 else mid


def project_label(disc: LabelDiscretization, u: float) -> float:
    return disc.project(u)


def precompute_weights(g: Graphon, disc: LabelDiscretization, quadrature_points: int = 1) -> np.ndarray:
    """D x D table ``w[d, d'] ~ integral of W(u_d, v) over bin d'``.

    Uses ``q`` midpoint nodes per bin; ``q=1`` is W(u_d, u_d') / D.
    """
    q = int(quadrature_points)
    if q < 1:
        raise ValueError(f"quadrature_points must be >= 1, got {quadrature_points!r}")
    D = disc.D
    u = disc.midpoints
    offsets = (np.arange(q) + 0.5) / q
    v = (np.arange(D)[:, None] + offsets[None, :]) / D  # (D, q) nodes per bin
    vals = np.asarray(g(u[:, None, None], v[None, :, :]), dtype=float)  # (D, D, q)
    # bins where the graphon is constant keep the exact value, free of summation rounding
    flat = np.all(vals == vals[..., :1], axis=2)
    w = np.where(flat, vals[..., 0], vals.mean(axis=2)) / D
    w.setflags(write=False)
    return w


def neighborhood_measure(w: np.ndarray, M: np.ndarray, d: int | None = None) -> np.ndarray:
    """Weighted neighborhood measure seen by class ``d`` (all classes if ``d`` is None).

    The result is a nonnegative measure whose mass equals the row sum of ``w``.
    ``M`` may carry extra leading axes (e.g. time); the class axis is the
    second-to-last one.
    """
    w = np.asarray(w, dtype=float)
    M = np.asarray(M, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1] or M.ndim < 2 or M.shape[-2] != w.shape[1]:
        raise ValueError(f"dimension mismatch: weights {w.shape} vs population {M.shape}")
    if d is None:
        return w @ M
    if not 0 <= d < w.shape[0]:
        raise IndexError(f"class index {d} out of range for D={w.shape[0]}")
    return w[d] @ M


def denseness_second_moment(xi) -> float:
    """(1/n^3) * sum_ij xi_ij^2; must vanish along a graph sequence with a graphon limit."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 2 or xi.shape[0] != xi.shape[1]:
        raise ValueError(f"interaction matrix must be square, got shape {xi.shape}")
    n = xi.shape[0]
    return float(np.sum(xi * xi) / n**3)
