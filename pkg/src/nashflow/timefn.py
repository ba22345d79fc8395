"""Exact piecewise-constant and piecewise-linear functions over the rationals.

Every quantity in the model is either a rate (right-continuous step function)
or a cumulative/label curve (continuous piecewise-linear function).  Both
types are defined on all of the real line: a step function holds a default
value before its first breakpoint, a piecewise-linear function extends its
outermost segments with explicit slopes.  Instances are canonicalized on
construction so that structural equality coincides with pointwise equality.

All breakpoints and values are ``fractions.Fraction``; there is no floating
point anywhere.
"""

from __future__ import annotations

import os
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction

ZERO = Fraction(0)
ONE = Fraction(1)


class ValueNotAttained(ValueError):
    """A preimage query lies outside the range attained by the function."""


def breakpoint_budget() -> int:
    """Global cap on breakpoint counts, tunable via NASHFLOW_MAX_BREAKPOINTS."""
    return int(os.environ.get("NASHFLOW_MAX_BREAKPOINTS", "200000"))


def _as_fractions(seq) -> tuple[Fraction, ...]:
    return tuple(Fraction(x) for x in seq)


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function: value ``values[k]`` on [b_k, b_{k+1}).

    ``initial`` is the value on (-inf, b_0); ``values[-1]`` persists on
    [b_{n-1}, inf).  Adjacent equal values are merged, so two step functions
    are equal as dataclasses iff they are equal pointwise.
    """

    breakpoints: tuple[Fraction, ...] = ()
    values: tuple[Fraction, ...] = ()
    initial: Fraction = ZERO

    def __post_init__(self):
        bps = _as_fractions(self.breakpoints)
        vals = _as_fractions(self.values)
        init = Fraction(self.initial)
        if len(bps) != len(vals):
            raise ValueError("breakpoints and values must have equal length")
        if any(b >= c for b, c in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        keep_b, keep_v = [], []
        prev = init
        for b, v in zip(bps, vals):
            if v != prev:
                keep_b.append(b)
                keep_v.append(v)
                prev = v
        object.__setattr__(self, "breakpoints", tuple(keep_b))
        object.__setattr__(self, "values", tuple(keep_v))
        object.__setattr__(self, "initial", init)

    @classmethod
    def constant(cls, c) -> "StepFunction":
        return cls((), (), Fraction(c))

    @classmethod
    def zero(cls) -> "StepFunction":
        return cls.constant(ZERO)

    @classmethod
    def from_pieces(cls, pieces, initial=ZERO) -> "StepFunction":
        """Build from [(breakpoint, value), ...] sorted by breakpoint."""
        bps = [p[0] for p in pieces]
        vals = [p[1] for p in pieces]
        return cls(bps, vals, initial)

    @property
    def final(self) -> Fraction:
        return self.values[-1] if self.values else self.initial

    def __call__(self, x) -> Fraction:
        x = Fraction(x)
        i = bisect_right(self.breakpoints, x) - 1
        return self.initial if i < 0 else self.values[i]

    def pieces(self):
        """Yield (lo, hi, value) with lo=None / hi=None for the infinite ends."""
        if not self.breakpoints:
            yield (None, None, self.initial)
            return
        yield (None, self.breakpoints[0], self.initial)
        for k, b in enumerate(self.breakpoints):
            hi = self.breakpoints[k + 1] if k + 1 < len(self.breakpoints) else None
            yield (b, hi, self.values[k])

    def _merge_bps(self, other: "StepFunction"):
        return sorted(set(self.breakpoints) | set(other.breakpoints))

    def __add__(self, other: "StepFunction") -> "StepFunction":
        bps = self._merge_bps(other)
        return StepFunction(bps, [self(b) + other(b) for b in bps],
                            self.initial + other.initial)

    def __neg__(self) -> "StepFunction":
        return StepFunction(self.breakpoints, [-v for v in self.values], -self.initial)

    def __sub__(self, other: "StepFunction") -> "StepFunction":
        return self + (-other)

    def scale(self, c) -> "StepFunction":
        c = Fraction(c)
        return StepFunction(self.breakpoints, [c * v for v in self.values], c * self.initial)

    def shift(self, delta) -> "StepFunction":
        """Return g with g(x) = f(x - delta)."""
        delta = Fraction(delta)
        return StepFunction([b + delta for b in self.breakpoints], self.values, self.initial)

    def is_nonnegative(self) -> bool:
        return self.initial >= 0 and all(v >= 0 for v in self.values)

    def vanishes_beyond(self, x) -> bool:
        """True iff f == 0 on [x, inf)."""
        x = Fraction(x)
        if self(x) != 0:
            return False
        return all(v == 0 for b, v in zip(self.breakpoints, self.values) if b >= x)

    @staticmethod
    def sum_of(funcs) -> "StepFunction":
        funcs = list(funcs)
        if not funcs:
            return StepFunction.zero()
        bps = sorted({b for f in funcs for b in f.breakpoints})
        init = sum((f.initial for f in funcs), ZERO)
        return StepFunction(bps, [sum((f(b) for f in funcs), ZERO) for b in bps], init)

    def to_json(self) -> dict:
        from .rationals import format_rational
        return {
            "breakpoints": [format_rational(b) for b in self.breakpoints],
            "values": [format_rational(v) for v in self.values],
            "initial": format_rational(self.initial),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "StepFunction":
        from .rationals import parse_rational
        return cls([parse_rational(b) for b in doc.get("breakpoints", [])],
                   [parse_rational(v) for v in doc.get("values", [])],
                   parse_rational(doc.get("initial", 0)))

    def csv_rows(self):
        yield ("breakpoint", "value")
        for b, v in zip(self.breakpoints, self.values):
            from .rationals import format_rational
            yield (format_rational(b), format_rational(v))


@dataclass(frozen=True)
class PwlFunction:
    """Continuous piecewise-linear function anchored at its breakpoints.

    Linear interpolation between (breakpoints[k], values[k]); the function
    continues to the left of the first breakpoint with ``initial_slope`` and
    to the right of the last with ``final_slope``.  Collinear breakpoints are
    removed on construction (at least one anchor is always kept).
    """

    breakpoints: tuple[Fraction, ...]
    values: tuple[Fraction, ...]
    initial_slope: Fraction = ZERO
    final_slope: Fraction = ZERO

    def __post_init__(self):
        bps = _as_fractions(self.breakpoints)
        vals = _as_fractions(self.values)
        if not bps:
            raise ValueError("a piecewise-linear function needs at least one breakpoint")
        if len(bps) != len(vals):
            raise ValueError("breakpoints and values must have equal length")
        if any(b >= c for b, c in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        s0 = Fraction(self.initial_slope)
        s1 = Fraction(self.final_slope)
        # drop interior collinear anchors, then collinear outermost anchors
        keep = [True] * len(bps)
        for k in range(1, len(bps) - 1):
            left = _seg_slope(bps[k - 1], vals[k - 1], bps[k], vals[k])
            right = _seg_slope(bps[k], vals[k], bps[k + 1], vals[k + 1])
            if left == right:
                keep[k] = False
        bps = [b for b, k in zip(bps, keep) if k]
        vals = [v for v, k in zip(vals, keep) if k]
        while len(bps) > 1 and _seg_slope(bps[0], vals[0], bps[1], vals[1]) == s0:
            bps.pop(0)
            vals.pop(0)
        while len(bps) > 1 and _seg_slope(bps[-2], vals[-2], bps[-1], vals[-1]) == s1:
            bps.pop()
            vals.pop()
        if len(bps) == 1 and s0 == s1 and bps[0] != 0:
            # a globally linear function: normalize the anchor to x = 0
            vals = [vals[0] - s0 * bps[0]]
            bps = [ZERO]
        object.__setattr__(self, "breakpoints", tuple(bps))
        object.__setattr__(self, "values", tuple(vals))
        object.__setattr__(self, "initial_slope", s0)
        object.__setattr__(self, "final_slope", s1)

    @classmethod
    def line(cls, slope, anchor_x=ZERO, anchor_y=ZERO) -> "PwlFunction":
        slope = Fraction(slope)
        return cls((Fraction(anchor_x),), (Fraction(anchor_y),), slope, slope)

    @classmethod
    def constant(cls, c) -> "PwlFunction":
        return cls.line(ZERO, ZERO, c)

    def __call__(self, x) -> Fraction:
        x = Fraction(x)
        bps, vals = self.breakpoints, self.values
        i = bisect_right(bps, x) - 1
        if i < 0:
            return vals[0] + self.initial_slope * (x - bps[0])
        if i == len(bps) - 1:
            return vals[-1] + self.final_slope * (x - bps[-1])
        return vals[i] + _seg_slope(bps[i], vals[i], bps[i + 1], vals[i + 1]) * (x - bps[i])

    def slope_right(self, x) -> Fraction:
        """Right derivative at x."""
        x = Fraction(x)
        bps = self.breakpoints
        i = bisect_right(bps, x) - 1
        if i < 0:
            return self.initial_slope
        if i == len(bps) - 1:
            return self.final_slope
        return _seg_slope(bps[i], self.values[i], bps[i + 1], self.values[i + 1])

    def slope_left(self, x) -> Fraction:
        """Left derivative at x."""
        x = Fraction(x)
        bps = self.breakpoints
        i = bisect_right(bps, x) - 1
        if i >= 0 and x == bps[i]:
            i -= 1
        if i < 0:
            return self.initial_slope
        if i == len(bps) - 1:
            return self.final_slope
        return _seg_slope(bps[i], self.values[i], bps[i + 1], self.values[i + 1])

    def segment_slopes(self) -> list[Fraction]:
        """Slopes on [b_k, b_{k+1}] for consecutive anchors."""
        bps, vals = self.breakpoints, self.values
        return [_seg_slope(bps[k], vals[k], bps[k + 1], vals[k + 1])
                for k in range(len(bps) - 1)]

    def __add__(self, other: "PwlFunction") -> "PwlFunction":
        bps = sorted(set(self.breakpoints) | set(other.breakpoints))
        return PwlFunction(bps, [self(b) + other(b) for b in bps],
                           self.initial_slope + other.initial_slope,
                           self.final_slope + other.final_slope)

    def __neg__(self) -> "PwlFunction":
        return PwlFunction(self.breakpoints, [-v for v in self.values],
                           -self.initial_slope, -self.final_slope)

    def __sub__(self, other: "PwlFunction") -> "PwlFunction":
        return self + (-other)

    def scale(self, c) -> "PwlFunction":
        c = Fraction(c)
        return PwlFunction(self.breakpoints, [c * v for v in self.values],
                           c * self.initial_slope, c * self.final_slope)

    def shift(self, delta) -> "PwlFunction":
        """Return g with g(x) = f(x - delta)."""
        delta = Fraction(delta)
        return PwlFunction([b + delta for b in self.breakpoints], self.values,
                           self.initial_slope, self.final_slope)

    def add_constant(self, c) -> "PwlFunction":
        c = Fraction(c)
        return PwlFunction(self.breakpoints, [v + c for v in self.values],
                           self.initial_slope, self.final_slope)

    def is_nondecreasing(self) -> bool:
        if self.initial_slope < 0 or self.final_slope < 0:
            return False
        return all(a <= b for a, b in zip(self.values, self.values[1:]))

    def is_zero_on(self, lo, hi) -> bool:
        """True iff the function vanishes identically on [lo, hi]."""
        lo, hi = Fraction(lo), Fraction(hi)
        if self(lo) != 0 or self(hi) != 0:
            return False
        return all(self(b) == 0 for b in self.breakpoints if lo < b < hi)

    def to_json(self) -> dict:
        from .rationals import format_rational
        return {
            "breakpoints": [format_rational(b) for b in self.breakpoints],
            "values": [format_rational(v) for v in self.values],
            "initial_slope": format_rational(self.initial_slope),
            "final_slope": format_rational(self.final_slope),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PwlFunction":
        from .rationals import parse_rational
        return cls([parse_rational(b) for b in doc["breakpoints"]],
                   [parse_rational(v) for v in doc["values"]],
                   parse_rational(doc.get("initial_slope", 0)),
                   parse_rational(doc.get("final_slope", 0)))

    def csv_rows(self):
        from .rationals import format_rational
        yield ("breakpoint", "value")
        for b, v in zip(self.breakpoints, self.values):
            yield (format_rational(b), format_rational(v))


def _seg_slope(x0, y0, x1, y1) -> Fraction:
    return (y1 - y0) / (x1 - x0)


def integrate(f: StepFunction, start) -> PwlFunction:
    """Exact antiderivative F(x) = integral of f from ``start`` to x."""
    start = Fraction(start)
    bps = sorted(set(f.breakpoints) | {start})
    vals = []
    # accumulate from the anchor outwards in both directions
    idx = bps.index(start)
    acc = ZERO
    vals_right = [acc]
    for k in range(idx + 1, len(bps)):
        acc += f(bps[k - 1]) * (bps[k] - bps[k - 1])
        vals_right.append(acc)
    acc = ZERO
    vals_left = []
    for k in range(idx - 1, -1, -1):
        acc -= f(bps[k]) * (bps[k + 1] - bps[k])
        vals_left.append(acc)
    vals = list(reversed(vals_left)) + vals_right
    return PwlFunction(bps, vals, f.initial, f.final)


def differentiate(F: PwlFunction) -> StepFunction:
    """Slope function of a piecewise-linear function (right-continuous)."""
    bps = F.breakpoints
    if len(bps) == 1:
        # single anchor: initial slope left of it, final slope from it on
        return StepFunction((bps[0],), (F.final_slope,), F.initial_slope)
    vals = F.segment_slopes() + [F.final_slope]
    return StepFunction(bps, vals, F.initial_slope)


def compose(outer: PwlFunction, inner: PwlFunction) -> PwlFunction:
    """Exact composition outer(inner(x)) for non-decreasing ``inner``."""
    if not inner.is_nondecreasing():
        raise ValueError("compose requires a non-decreasing inner function")
    pts = set(inner.breakpoints)
    for beta in outer.breakpoints:
        x = _strict_preimage(inner, beta)
        if x is not None:
            pts.add(x)
    mesh = sorted(pts)
    vals = [outer(inner(x)) for x in mesh]
    y_lo = inner(mesh[0])
    y_hi = inner(mesh[-1])
    s0 = outer.slope_left(y_lo) * inner.initial_slope if inner.initial_slope != 0 \
        else ZERO
    s1 = outer.slope_right(y_hi) * inner.final_slope if inner.final_slope != 0 \
        else ZERO
    return PwlFunction(mesh, vals, s0, s1)


def _strict_preimage(F: PwlFunction, y) -> Fraction | None:
    """An x with F(x) = y where F crosses y strictly inside a segment.

    Level sets hitting breakpoints or flat segments need no extra mesh point;
    returns None in those cases and when y is outside the attained range.
    """
    y = Fraction(y)
    bps, vals = F.breakpoints, F.values
    if F.initial_slope > 0 and y < vals[0]:
        return bps[0] - (vals[0] - y) / F.initial_slope
    if F.final_slope > 0 and y > vals[-1]:
        return bps[-1] + (y - vals[-1]) / F.final_slope
    for k in range(len(bps) - 1):
        lo, hi = vals[k], vals[k + 1]
        if lo < y < hi:
            return bps[k] + (y - lo) * (bps[k + 1] - bps[k]) / (hi - lo)
    return None


def min_preimage(F: PwlFunction, value, lo=None) -> Fraction:
    """Smallest x (with x >= lo if given) such that F(x) == value.

    F must be non-decreasing.  On a flat stretch at ``value`` the left
    endpoint (clipped to ``lo``) is returned.  Raises ValueNotAttained when
    the value is below F(lo) or never reached.
    """
    value = Fraction(value)
    if not F.is_nondecreasing():
        raise ValueError("min_preimage requires a non-decreasing function")
    if lo is not None:
        lo = Fraction(lo)
        flo = F(lo)
        if flo > value:
            raise ValueNotAttained(f"value {value} below F({lo}) = {flo}")
        if flo == value:
            return lo
    # from here on any preimage lies strictly above lo (F is non-decreasing)
    bps, vals = F.breakpoints, F.values
    if value < vals[0]:
        if F.initial_slope > 0:
            return bps[0] - (vals[0] - value) / F.initial_slope
        raise ValueNotAttained(f"value {value} below the function range")
    if value == vals[0]:
        if F.initial_slope > 0:
            return bps[0]
        raise ValueNotAttained("value attained on an unbounded leading flat")
    for k in range(len(bps)):
        if vals[k] == value:
            return bps[k]
        if vals[k] > value:
            # first reached inside segment (k-1, k); k >= 1 since value > vals[0]
            span = bps[k] - bps[k - 1]
            rise = vals[k] - vals[k - 1]
            return bps[k - 1] + (value - vals[k - 1]) * span / rise
    if F.final_slope > 0:
        return bps[-1] + (value - vals[-1]) / F.final_slope
    raise ValueNotAttained(f"value {value} above the function range")


def min_compose(candidates) -> tuple[PwlFunction, list]:
    """Pointwise minimum of continuous piecewise-linear functions.

    Returns (minimum, segments) where segments is a list of
    (lo, hi, argmin_indices) covering the line; lo is None on the leftmost
    segment and hi is None on the rightmost.  On each segment every reported
    index attains the minimum throughout.
    """
    funcs = list(candidates)
    if not funcs:
        raise ValueError("min_compose needs at least one candidate")
    mesh = sorted({b for f in funcs for b in f.breakpoints})
    # refine by pairwise crossings so that the order is constant per cell
    extra = set()
    cells = _cells(mesh)
    for lo, hi in cells:
        for a in range(len(funcs)):
            for b in range(a + 1, len(funcs)):
                x = _crossing_in_cell(funcs[a], funcs[b], lo, hi)
                if x is not None:
                    extra.add(x)
    mesh = sorted(set(mesh) | extra)
    vals = [min(f(x) for f in funcs) for x in mesh]
    # outer slopes from the winning candidate on the unbounded cells
    left_probe = mesh[0] - 1
    right_probe = mesh[-1] + 1
    left_min = min(f(left_probe) for f in funcs)
    right_min = min(f(right_probe) for f in funcs)
    s0 = min(f.slope_right(left_probe) for f in funcs if f(left_probe) == left_min)
    s1 = min(f.slope_right(right_probe) for f in funcs if f(right_probe) == right_min)
    result = PwlFunction(mesh, vals, s0, s1)
    segments = []
    for lo, hi in _cells(mesh):
        a = mesh[0] - 1 if lo is None else lo
        b = mesh[-1] + 1 if hi is None else hi
        mv_a = min(f(a) for f in funcs)
        mv_b = min(f(b) for f in funcs)
        members = frozenset(i for i, f in enumerate(funcs)
                            if f(a) == mv_a and f(b) == mv_b)
        segments.append((lo, hi, members))
    return result, segments


def _cells(mesh):
    cells = [(None, mesh[0])]
    for a, b in zip(mesh, mesh[1:]):
        cells.append((a, b))
    cells.append((mesh[-1], None))
    return cells


def _crossing_in_cell(f: PwlFunction, g: PwlFunction, lo, hi) -> Fraction | None:
    """Crossing point of two functions linear on the open cell (lo, hi).

    Crossings at cell boundaries need no refinement and yield None.
    """
    if lo is None:  # (-inf, hi): difference is linear with the left-tail slope
        sl = f.slope_left(hi) - g.slope_left(hi)
        dv = f(hi) - g(hi)
        if sl == 0 or dv == 0:
            return None
        x = hi - dv / sl
        return x if x < hi else None
    if hi is None:  # (lo, inf)
        sl = f.slope_right(lo) - g.slope_right(lo)
        dv = f(lo) - g(lo)
        if sl == 0 or dv == 0:
            return None
        x = lo - dv / sl
        return x if x > lo else None
    da = f(lo) - g(lo)
    db = f(hi) - g(hi)
    if da == 0 or db == 0 or (da > 0) == (db > 0):
        return None
    return lo + (hi - lo) * (-da) / (db - da)
