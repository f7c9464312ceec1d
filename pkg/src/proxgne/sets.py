"""Local constraint sets and exact Euclidean projections onto them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadBounds, DimensionMismatch, Infeasible

SUM_TOL = 1e-12
BISECTION_CAP = 100


def project_box(y, lo, hi) -> np.ndarray:
    """Componentwise clamp of ``y`` onto ``[lo, hi]``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise BadBounds("lower bound exceeds upper bound")
    return np.minimum(np.maximum(np.asarray(y, dtype=float), lo), hi)


def _hyperplane_shift(Y, lo, hi, level):
    """Batched multiplier search for the box-hyperplane projection.

    Rows of ``Y`` are independent problems. Returns ``t`` such that
    ``sum(clip(Y - t, lo, hi), axis=1) == level``. The clipped sum is
    nonincreasing and piecewise affine in ``t`` with breakpoints ``Y - hi``
    and ``Y - lo``; a bisection over the sorted breakpoints brackets the
    root between two consecutive ones, where it is solved exactly.
    """
    R, n = Y.shape
    bp = np.sort(np.concatenate([Y - hi, Y - lo], axis=1), axis=1)
    # clipped sum at every breakpoint, nonincreasing along each row
    S = np.clip(Y[:, None, :] - bp[:, :, None], lo[:, None, :], hi[:, None, :]).sum(axis=2)
    rows = np.arange(R)
    left = np.zeros(R, dtype=np.int64)           # S[left] >= level
    right = np.full(R, 2 * n - 1, dtype=np.int64)
    for _ in range(BISECTION_CAP):
        open_ = right - left > 1
        if not open_.any():
            break
        mid = (left + right) // 2
        go_right = open_ & (S[rows, mid] >= level)
        left = np.where(go_right, mid, left)
        right = np.where(open_ & ~go_right, mid, right)
    else:
        raise Infeasible("box-hyperplane bisection did not converge")
    s_l, s_r = S[rows, left], S[rows, right]
    t_l, t_r = bp[rows, left], bp[rows, right]
    if np.any(level > s_l + SUM_TOL * max(1, n)) or np.any(level < s_r - SUM_TOL * max(1, n)):
        raise Infeasible("level outside the attainable range of the box")
    span = s_l - s_r
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(span > 0, (s_l - level) / span, 0.0)
    return t_l + np.clip(frac, 0.0, 1.0) * (t_r - t_l)


def project_box_hyperplane(y, lo, hi, level: float) -> np.ndarray:
    """Project ``y`` onto ``{z : lo <= z <= hi, sum(z) == level}``.

    The multiplier of the hyperplane is located by bisection on the (monotone)
    clipped sum over its breakpoints; between two consecutive breakpoints the
    sum is affine and the multiplier is computed in closed form.
    """
    y = np.asarray(y, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), y.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), y.shape)
    if np.any(lo > hi):
        raise BadBounds("lower bound exceeds upper bound")
    if not (lo.sum() - SUM_TOL <= level <= hi.sum() + SUM_TOL):
        raise Infeasible(f"level {level} outside [{lo.sum()}, {hi.sum()}]")
    t = _hyperplane_shift(y[None, :], lo[None, :], hi[None, :], np.array([level], dtype=float))
    return np.clip(y - t[0], lo, hi)


@dataclass(frozen=True)
class FullSpace:
    dim: int

    def project(self, y):
        return np.array(y, dtype=float)

    def contains(self, y, tol=1e-9):
        return True

    def to_dict(self):
        return {"type": "full", "dim": self.dim}


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("box bounds must be 1-d arrays of equal length")
        if np.any(lo > hi):
            raise BadBounds("lower bound exceeds upper bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    def project(self, y):
        return np.minimum(np.maximum(y, self.lo), self.hi)

    def contains(self, y, tol=1e-9):
        return bool(np.all(y >= self.lo - tol) and np.all(y <= self.hi + tol))

    def to_dict(self):
        return {"type": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class BoxHyperplane:
    lo: np.ndarray
    hi: np.ndarray
    level: float

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("box bounds must be 1-d arrays of equal length")
        if np.any(lo > hi):
            raise BadBounds("lower bound exceeds upper bound")
        if not (lo.sum() <= self.level <= hi.sum()):
            raise Infeasible(f"level {self.level} outside [{lo.sum()}, {hi.sum()}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "level", float(self.level))

    @property
    def dim(self):
        return self.lo.size

    def project(self, y):
        return project_box_hyperplane(y, self.lo, self.hi, self.level)

    def contains(self, y, tol=1e-9):
        return bool(np.all(y >= self.lo - tol) and np.all(y <= self.hi + tol)
                    and abs(y.sum() - self.level) <= tol)

    def to_dict(self):
        return {"type": "box_hyperplane", "lo": self.lo.tolist(), "hi": self.hi.tolist(),
                "level": self.level}


LocalSet = FullSpace | Box | BoxHyperplane


def local_set_from_dict(d: dict):
    kind = d["type"]
    if kind == "full":
        return FullSpace(int(d["dim"]))
    if kind == "box":
        return Box(np.array(d["lo"]), np.array(d["hi"]))
    if kind == "box_hyperplane":
        return BoxHyperplane(np.array(d["lo"]), np.array(d["hi"]), float(d["level"]))
    raise ValueError(f"unknown local set type {kind!r}")


class ProductSet:
    """Cartesian product of per-agent local sets over a stacked vector.

    Projections are vectorized: all boxes are clamped at once and all
    box-hyperplane blocks of equal dimension share one batched multiplier
    search.
    """

    def __init__(self, sets, offsets):
        self.sets = list(sets)
        self.offsets = np.asarray(offsets)
        n = int(self.offsets[-1])
        self.lo = np.full(n, -np.inf)
        self.hi = np.full(n, np.inf)
        groups: dict[int, list[int]] = {}
        for i, s in enumerate(self.sets):
            a, b = self.offsets[i], self.offsets[i + 1]
            if s.dim != b - a:
                raise DimensionMismatch(f"set {i} has dim {s.dim}, expected {b - a}")
            if isinstance(s, (Box, BoxHyperplane)):
                self.lo[a:b] = s.lo
                self.hi[a:b] = s.hi
            if isinstance(s, BoxHyperplane):
                groups.setdefault(s.dim, []).append(i)
        self._hyper = []
        for dim, agents in groups.items():
            cols = np.concatenate([np.arange(self.offsets[i], self.offsets[i + 1]) for i in agents])
            cols = cols.reshape(len(agents), dim)
            level = np.array([self.sets[i].level for i in agents])
            self._hyper.append((cols, self.lo[cols], self.hi[cols], level))

    @property
    def dim(self):
        return int(self.offsets[-1])

    def project(self, y: np.ndarray) -> np.ndarray:
        out = np.minimum(np.maximum(y, self.lo), self.hi)
        for cols, lo, hi, level in self._hyper:
            Y = y[cols]
            t = _hyperplane_shift(Y, lo, hi, level)
            out[cols] = np.clip(Y - t[:, None], lo, hi)
        return out

    def project_masked(self, y: np.ndarray, agents: np.ndarray) -> np.ndarray:
        """Project only the blocks of the listed agents (others untouched)."""
        out = np.array(y, dtype=float)
        for i in agents:
            a, b = self.offsets[i], self.offsets[i + 1]
            out[a:b] = self.sets[i].project(y[a:b])
        return out

    def contains(self, y, tol=1e-9) -> bool:
        return all(s.contains(y[self.offsets[i]:self.offsets[i + 1]], tol)
                   for i, s in enumerate(self.sets))
