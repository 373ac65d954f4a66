"""Spherical-head binaural rendering.

Interaural time difference follows Woodworth's formula; the level
difference comes from a one-pole/one-zero head-shadow filter per ear whose
high-frequency gain goes from 2 (ear facing the source) down to 0.1
(opposite side), with unity gain at DC. Rear azimuths reuse the mirrored
frontal ITD, so left/right placement is kept but front/back is not.
Elevation is carried through but has no effect.

Azimuth is measured in the listener's horizontal plane: 0 straight ahead,
positive to the right, range (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .dsp import smoothing_coefficient

SPEED_OF_SOUND = 343.0
HEAD_RADIUS = 0.0875
LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class ListenerFrameDirection:
    azimuth: float
    elevation: float = 0.0

    def __post_init__(self):
        if not -math.pi < self.azimuth <= math.pi:
            raise ValueError(f"azimuth {self.azimuth} outside (-pi, pi]")


def to_listener_frame(vector, yaw):
    """Direction of world ``vector`` as seen by a listener facing ``yaw``.

    The listener faces (cos yaw, sin yaw, 0) with +z up, so their right
    hand points along (sin yaw, -cos yaw, 0).
    """
    x, y, z = (float(v) for v in vector)
    c, s = math.cos(yaw), math.sin(yaw)
    fwd = c * x + s * y
    right = s * x - c * y
    if fwd == 0.0 and right == 0.0:
        az = 0.0
    else:
        az = math.atan2(right, fwd)
        if az == -math.pi:
            az = math.pi
    el = math.atan2(z, math.hypot(fwd, right)) if (fwd or right or z) else 0.0
    return ListenerFrameDirection(az, el)


def _sin_odd(azimuth):
    # sin evaluated on the folded |azimuth| so that mirrored azimuths give
    # exactly negated values and the rear axis gives exactly 0
    a = abs(azimuth)
    return math.copysign(math.sin(min(a, math.pi - a)), azimuth)


def itd(azimuth, head_radius=HEAD_RADIUS, c=SPEED_OF_SOUND):
    """Interaural time difference in seconds; positive when the left ear lags."""
    a = abs(azimuth)
    folded = min(a, math.pi - a)
    magnitude = head_radius / c * (folded + math.sin(folded))
    if azimuth == 0.0 or magnitude == 0.0:
        return 0.0
    return math.copysign(magnitude, azimuth)


def shadow_alpha(azimuth, ear):
    """Head-shadow parameter: 1.05 + 0.95 cos(angle between source and ear axis)."""
    s = _sin_odd(azimuth)
    cos_rel = s if ear == RIGHT else -s
    return 1.05 + 0.95 * cos_rel


def _shadow_k(sample_rate, head_radius, c):
    # bilinear transform of (1 + s a / (2 w0)) / (1 + s / (2 w0)), w0 = c / r
    return 2.0 * sample_rate / (2.0 * c / head_radius)


def head_shadow_coeff(azimuth, ear, sample_rate=44100.0, head_radius=HEAD_RADIUS,
                      c=SPEED_OF_SOUND):
    """Digital (b0, b1, a1) for y[n] = b0 x[n] + b1 x[n-1] - a1 y[n-1]."""
    alpha = shadow_alpha(azimuth, ear)
    k = _shadow_k(sample_rate, head_radius, c)
    return (1.0 + alpha * k) / (1.0 + k), (1.0 - alpha * k) / (1.0 + k), (1.0 - k) / (1.0 + k)


def ear_delays(azimuth, sample_rate, head_radius=HEAD_RADIUS, c=SPEED_OF_SOUND):
    """(left, right) delay in samples; only the lagging ear is delayed."""
    d = itd(azimuth, head_radius, c) * sample_rate
    return (d, 0.0) if d > 0 else (0.0, -d)


@numba.njit(cache=True, nogil=True)
def _binaural_kernel(xs, bufs, heads, cur, tgt, fstate, k, smooth, out):
    n_items = xs.shape[0]
    cap = bufs.shape[2]
    a1 = (1.0 - k) / (1.0 + k)
    norm = 1.0 / (1.0 + k)
    one_minus = 1.0 - smooth
    for j in range(n_items):
        head = heads[j]
        for n in range(xs.shape[1]):
            bufs[j, 0, head] = xs[j, n]
            bufs[j, 1, head] = xs[j, n]
            head += 1
            if head == cap:
                head = 0
            for ear in range(2):
                d = smooth * cur[j, ear, 0] + one_minus * tgt[j, ear, 0]
                al = smooth * cur[j, ear, 1] + one_minus * tgt[j, ear, 1]
                cur[j, ear, 0] = d
                cur[j, ear, 1] = al
                # first-order allpass fractional delay (Thiran) at d + 1 samples,
                # flat in magnitude so the delayed ear keeps its treble
                dd = d + 1.0
                di = int(math.floor(dd - 0.5))
                fr = dd - di
                eta = (1.0 - fr) / (1.0 + fr)
                i0 = head - 1 - di
                if i0 < 0:
                    i0 += cap
                i1 = i0 - 1
                if i1 < 0:
                    i1 += cap
                v = eta * bufs[j, ear, i0] + bufs[j, ear, i1] - eta * fstate[j, ear, 2]
                fstate[j, ear, 2] = v
                y = (1.0 + al * k) * norm * v + (1.0 - al * k) * norm * fstate[j, ear, 0] \
                    - a1 * fstate[j, ear, 1]
                fstate[j, ear, 0] = v
                fstate[j, ear, 1] = y
                out[ear, n] += y
        heads[j] = head


class SpatializerBank:
    """``n`` independent mono-to-binaural channels mixed into one stereo bus.

    Per-ear delay and head-shadow parameter glide towards their targets with
    the exponential smoother (``smoothing_tau``); a channel jumps straight
    to its first target. The fractional ITD delay is a first-order allpass,
    which costs one sample of common latency on both ears.
    """

    def __init__(self, n, sample_rate, head_radius=HEAD_RADIUS, c=SPEED_OF_SOUND,
                 smoothing_tau=0.010):
        self.n = n
        self.sample_rate = float(sample_rate)
        self.head_radius = float(head_radius)
        self.c = float(c)
        max_itd = self.head_radius / self.c * (math.pi / 2 + 1.0) * self.sample_rate
        cap = 1 << int(math.ceil(math.log2(max_itd + 4)))
        self.buffers = np.zeros((n, 2, cap))
        self.heads = np.zeros(n, dtype=np.int64)
        self.current = np.zeros((n, 2, 2))
        self.target = np.zeros((n, 2, 2))
        self.target[:, :, 1] = 1.05
        self.filter_state = np.zeros((n, 2, 3))
        self.primed = np.zeros(n, dtype=bool)
        self.k = _shadow_k(self.sample_rate, self.head_radius, self.c)
        self.smooth = smoothing_coefficient(smoothing_tau, self.sample_rate)

    def set_direction(self, i, direction):
        az = direction.azimuth if isinstance(direction, ListenerFrameDirection) else \
            float(direction)
        dl, dr = ear_delays(az, self.sample_rate, self.head_radius, self.c)
        self.target[i, LEFT] = (dl, shadow_alpha(az, LEFT))
        self.target[i, RIGHT] = (dr, shadow_alpha(az, RIGHT))
        if not self.primed[i]:
            self.current[i] = self.target[i]
            self.primed[i] = True

    def process(self, xs, out=None):
        """Spatialize (n, N) mono inputs; returns (or adds into) a (2, N) block."""
        xs = np.ascontiguousarray(xs, dtype=np.float64).reshape(self.n, -1)
        if out is None:
            out = np.zeros((2, xs.shape[1]))
        _binaural_kernel(xs, self.buffers, self.heads, self.current, self.target,
                         self.filter_state, self.k, self.smooth, out)
        return out


class Spatializer(SpatializerBank):
    """Single-channel spatializer state."""

    def __init__(self, sample_rate, head_radius=HEAD_RADIUS, c=SPEED_OF_SOUND,
                 smoothing_tau=0.010):
        super().__init__(1, sample_rate, head_radius, c, smoothing_tau)


def spatialize(state, block, direction):
    """Render mono ``block`` at ``direction`` (azimuth or ListenerFrameDirection)."""
    state.set_direction(0, direction)
    return state.process(np.asarray(block, dtype=np.float64)[None, :])
