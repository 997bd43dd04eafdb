"""Kinematics of moving scene entities.

Every mobile entity (transceiver or facet) carries a piecewise sequence of
constant-acceleration states.  Positions are evaluated by direct polynomial
evaluation of the active segment, so there is no numerical drift between
queries: asking for t then t' gives exactly the same answer as asking for t'
directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class MotionState:
    """Position/velocity/acceleration of an entity at a reference time.

    Position at time t is r0 + v0*(t-t_ref) + 0.5*a0*(t-t_ref)^2; higher-order
    terms are dropped.
    """

    r0: np.ndarray
    v0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_ref: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "r0", _vec3(self.r0))
        object.__setattr__(self, "v0", _vec3(self.v0))
        object.__setattr__(self, "a0", _vec3(self.a0))
        object.__setattr__(self, "t_ref", float(self.t_ref))


def position_at(m: MotionState, t) -> np.ndarray:
    """Evaluate the constant-acceleration position law at time t.

    t may be a scalar (returns shape (3,)) or an array of shape (T,)
    (returns shape (T, 3)).
    """
    dt = np.asarray(t, dtype=float) - m.t_ref
    if dt.ndim == 0:
        return m.r0 + m.v0 * dt + 0.5 * m.a0 * dt * dt
    dt = dt[:, None]
    return m.r0 + m.v0 * dt + 0.5 * m.a0 * dt * dt


def velocity_at(m: MotionState, t) -> np.ndarray:
    dt = np.asarray(t, dtype=float) - m.t_ref
    if dt.ndim == 0:
        return m.v0 + m.a0 * dt
    return m.v0 + m.a0 * dt[:, None]


@dataclass(frozen=True)
class Motion:
    """Piecewise constant-acceleration motion: a sorted tuple of segments.

    Segment i is active for t in [t_ref_i, t_ref_{i+1}); the first segment
    also covers t < t_ref_0 and the last extends to +inf.
    """

    segments: tuple[MotionState, ...]
    is_static: bool = field(init=False, repr=False)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("Motion needs at least one segment")
        ts = [s.t_ref for s in self.segments]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("motion segments must have strictly increasing t_ref")
        static = (all(not s.v0.any() and not s.a0.any() for s in self.segments)
                  and all(np.array_equal(s.r0, self.segments[0].r0)
                          for s in self.segments))
        object.__setattr__(self, "is_static", static)

    @classmethod
    def stationary(cls, r0) -> "Motion":
        return cls((MotionState(_vec3(r0)),))

    def _segment_index(self, t):
        if len(self.segments) == 1:
            return np.zeros(np.shape(t), dtype=int)
        starts = np.array([s.t_ref for s in self.segments])
        return np.clip(np.searchsorted(starts, np.asarray(t, float), side="right") - 1, 0, None)

    def position(self, t) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        if t_arr.ndim == 0:
            seg = self.segments[int(self._segment_index(t_arr))]
            return position_at(seg, float(t_arr))
        idx = self._segment_index(t_arr)
        out = np.empty((t_arr.size, 3))
        for i in np.unique(idx):
            sel = idx == i
            out[sel] = position_at(self.segments[int(i)], t_arr[sel])
        return out

    def velocity(self, t) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        if t_arr.ndim == 0:
            seg = self.segments[int(self._segment_index(t_arr))]
            return velocity_at(seg, float(t_arr))
        idx = self._segment_index(t_arr)
        out = np.empty((t_arr.size, 3))
        for i in np.unique(idx):
            sel = idx == i
            out[sel] = velocity_at(self.segments[int(i)], t_arr[sel])
        return out

    def displacement(self, t) -> np.ndarray:
        """Offset relative to the scene epoch t=0 (exactly zero at t=0)."""
        if self.is_static:
            t_arr = np.asarray(t, float)
            if t_arr.ndim == 0:
                return np.zeros(3)
            return np.zeros((t_arr.size, 3))
        return self.position(t) - self.position(0.0)
