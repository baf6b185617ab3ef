"""Piecewise control waveforms and the flux-phase quadrature.

A waveform is an ordered list of non-overlapping segments, each constant,
linear, or raised-cosine in time.  ``integrate_cos_pi`` supplies the
integral of cos(pi * f(t)) that converts a flux schedule into accumulated
coupling phase; constant segments integrate in closed form, the smooth
shapes with an adaptive Simpson rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SHAPES = ("const", "linear", "raised_cosine")


class WaveformGapError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    t0: float
    t1: float
    shape: str
    v0: float
    v1: float

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown segment shape {self.shape!r}")
        if not (self.t1 > self.t0):
            raise ValueError(f"segment needs t1 > t0, got [{self.t0}, {self.t1}]")

    def value(self, t: float) -> float:
        if self.shape == "const":
            return self.v0
        u = (t - self.t0) / (self.t1 - self.t0)
        if self.shape == "linear":
            return self.v0 + (self.v1 - self.v0) * u
        # raised_cosine: smooth ramp with zero slope at both ends
        return self.v0 + (self.v1 - self.v0) * 0.5 * (1.0 - np.cos(np.pi * u))

    @property
    def is_constant(self) -> bool:
        return self.shape == "const" or self.v0 == self.v1


@dataclass(frozen=True)
class Waveform:
    """Sorted, non-overlapping segments; value defined on [t0_min, t1_max]."""

    segments: tuple

    def __post_init__(self):
        segs = tuple(sorted(self.segments, key=lambda s: s.t0))
        if not segs:
            raise ValueError("waveform needs at least one segment")
        for a, b in zip(segs, segs[1:]):
            if b.t0 < a.t1 - 1e-12:
                raise ValueError(f"segments overlap at t = {b.t0}")
        object.__setattr__(self, "segments", segs)

    @property
    def t_start(self) -> float:
        return self.segments[0].t0

    @property
    def t_end(self) -> float:
        return self.segments[-1].t1

    def gaps(self) -> list[tuple[float, float]]:
        out = []
        for a, b in zip(self.segments, self.segments[1:]):
            if b.t0 > a.t1 + 1e-12:
                out.append((a.t1, b.t0))
        return out

    def value(self, t: float, hold: bool = False) -> float:
        """Sample at t; inside a gap, ``hold`` extends the previous value."""
        if t < self.t_start - 1e-12 or t > self.t_end + 1e-12:
            raise WaveformGapError(f"t = {t} outside the waveform span")
        prev = None
        for seg in self.segments:
            if seg.t0 - 1e-12 <= t <= seg.t1 + 1e-12:
                return seg.value(min(max(t, seg.t0), seg.t1))
            if t > seg.t1:
                prev = seg
        if hold and prev is not None:
            return prev.v1
        raise WaveformGapError(f"t = {t} falls in a waveform gap")

    def breakpoints(self) -> list[float]:
        pts = set()
        for seg in self.segments:
            pts.add(seg.t0)
            pts.add(seg.t1)
        return sorted(pts)


def constant(value: float, t0: float, t1: float) -> Waveform:
    return Waveform((Segment(t0, t1, "const", value, value),))


def _adaptive_simpson(f, a, b, fa, fm, fb, whole, abs_tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    if depth <= 0 or abs(left + right - whole) <= 15.0 * abs_tol:
        return left + right + (left + right - whole) / 15.0
    half = 0.5 * abs_tol
    return (
        _adaptive_simpson(f, a, m, fa, flm, fm, left, half, depth - 1)
        + _adaptive_simpson(f, m, b, fm, frm, fb, right, half, depth - 1)
    )


def adaptive_simpson(f, a, b, abs_tol=1e-12, max_depth=40) -> float:
    if b <= a:
        return 0.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _adaptive_simpson(f, a, b, fa, fm, fb, whole, abs_tol, max_depth)


def integrate_cos_pi(w: Waveform, t0: float, t1: float, abs_tol: float = 1e-12) -> float:
    """Integral of cos(pi * w(t)) over [t0, t1]; gaps are errors."""
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    if t1 == t0:
        return 0.0
    if t0 < w.t_start - 1e-12 or t1 > w.t_end + 1e-12:
        raise WaveformGapError("integration range outside the waveform span")
    for ga, gb in w.gaps():
        if ga < t1 and gb > t0:
            raise WaveformGapError(f"waveform gap ({ga}, {gb}) inside integration range")
    total = 0.0
    for seg in w.segments:
        a = max(t0, seg.t0)
        b = min(t1, seg.t1)
        if b <= a:
            continue
        if seg.is_constant:
            total += np.cos(np.pi * seg.v0) * (b - a)
        else:
            total += adaptive_simpson(
                lambda t, s=seg: np.cos(np.pi * s.value(t)), a, b, abs_tol
            )
    return total
