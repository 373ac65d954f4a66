"""Block-based DSP building blocks.

Everything here keeps its state between calls, so a signal processed in one
long block or several short ones gives the same result.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np
import scipy.signal

from .materials import N_BANDS

DEFAULT_BLOCK = 1024
OCTAVE_EDGES = (176.8, 353.6, 707.1, 1414.2, 2828.4)
FDN_DELAYS_44K = (1013, 1201, 1307, 1459, 1597, 1733, 1889, 2039)


class DSPWarning(UserWarning):
    pass


@dataclass
class AudioBlock:
    """Channel-major samples, shape (channels, frames)."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2 or s.shape[0] not in (1, 2):
            raise ValueError("an AudioBlock holds 1 or 2 channels")
        if not np.all(np.isfinite(s)):
            raise ValueError("AudioBlock samples must be finite")
        self.samples = s

    @property
    def channels(self):
        return self.samples.shape[0]

    @property
    def frames(self):
        return self.samples.shape[1]

    def interleaved(self):
        return np.ascontiguousarray(self.samples.T)


def smoothing_coefficient(tau, fs):
    """Per-sample pole of an exponential smoother with time constant ``tau``."""
    return math.exp(-1.0 / (tau * fs)) if tau > 0 else 0.0


# --------------------------------------------------------------------------
# one-pole low-pass

class OnePole:
    """y[n] = (1 - a) x[n] + a y[n-1] with a = exp(-2 pi fc / fs)."""

    def __init__(self, sample_rate, cutoff):
        self.sample_rate = float(sample_rate)
        self.y = 0.0
        self.set_cutoff(cutoff)

    def set_cutoff(self, cutoff):
        fs = self.sample_rate
        lo, hi = 10.0, fs / 2.0 - 1.0
        if not lo <= cutoff <= hi:
            warnings.warn(f"cutoff {cutoff} Hz clamped to [{lo}, {hi}]", DSPWarning, stacklevel=2)
            cutoff = min(max(cutoff, lo), hi)
        self.cutoff = cutoff
        self.a = math.exp(-2.0 * math.pi * cutoff / fs)

    def process(self, x):
        x = np.asarray(x, dtype=np.float64)
        y, zf = scipy.signal.lfilter([1.0 - self.a], [1.0, -self.a], x, zi=[self.a * self.y])
        if len(y):
            self.y = float(y[-1])
        return y


def one_pole_lowpass(state, cutoff, block):
    """Filter ``block`` through ``state`` (a :class:`OnePole`) at ``cutoff`` Hz."""
    if cutoff != state.cutoff:
        state.set_cutoff(cutoff)
    return state.process(block)


# --------------------------------------------------------------------------
# fractional delay line

@numba.njit(cache=True, nogil=True)
def delay_tap(buf, head, delay):
    """Linearly interpolated sample ``delay`` samples before the last write."""
    n = buf.shape[0]
    di = int(math.floor(delay))
    frac = delay - di
    i0 = (head - 1 - di) % n
    i1 = (i0 - 1) % n
    return (1.0 - frac) * buf[i0] + frac * buf[i1]


@numba.njit(cache=True, nogil=True)
def _delay_process(buf, head, x, delays, out):
    n = buf.shape[0]
    for i in range(x.shape[0]):
        buf[head] = x[i]
        head = (head + 1) % n
        out[i] = delay_tap(buf, head, delays[i])
    return head


class DelayLine:
    """Circular buffer read with linear interpolation.

    Linear interpolation rolls off high frequencies slightly at fractional
    delays (worst at half a sample: -3 dB at fs/4).
    """

    def __init__(self, capacity):
        self.capacity = int(capacity)
        if self.capacity < 3:
            raise ValueError("capacity must be at least 3")
        self.buffer = np.zeros(self.capacity)
        self.head = 0

    @property
    def max_delay(self):
        return self.capacity - 2

    def _clamp(self, delay):
        delay = np.asarray(delay, dtype=np.float64)
        if np.any(delay > self.max_delay) or np.any(delay < 0):
            warnings.warn(f"delay clamped to [0, {self.max_delay}] samples", DSPWarning,
                          stacklevel=3)
            delay = np.clip(delay, 0.0, self.max_delay)
        return delay

    def write(self, samples):
        samples = np.atleast_1d(np.asarray(samples, dtype=np.float64))
        for s in samples[-self.capacity:] if len(samples) > self.capacity else samples:
            self.buffer[self.head] = s
            self.head = (self.head + 1) % self.capacity

    def read(self, delay):
        return float(delay_tap(self.buffer, self.head, float(self._clamp(delay))))

    def process(self, block, delay):
        """Write ``block`` sample by sample, reading at ``delay`` after each write."""
        x = np.ascontiguousarray(block, dtype=np.float64)
        delays = np.ascontiguousarray(np.broadcast_to(self._clamp(delay), x.shape))
        out = np.empty_like(x)
        self.head = int(_delay_process(self.buffer, self.head, x, delays, out))
        return out


def delay_read_fractional(line, delay):
    return line.read(delay)


# --------------------------------------------------------------------------
# octave filterbank

class OctaveFilterbank:
    """Six-band split: low-pass, four octave band-passes, high-pass.

    Band edges are :data:`OCTAVE_EDGES`. The band-passes use a second-order
    Butterworth prototype (fourth-order filters) and the outer bands
    fourth-order low/high-passes, so neighbouring bands cross at -3 dB and
    the band energies sum close to the input energy.
    """

    def __init__(self, sample_rate):
        fs = float(sample_rate)
        if fs < 16000:
            raise ValueError("octave filterbank needs fs >= 16 kHz")
        self.sample_rate = fs
        e = OCTAVE_EDGES
        sos = [scipy.signal.butter(4, e[0], "lowpass", fs=fs, output="sos")]
        sos += [scipy.signal.butter(2, (e[i], e[i + 1]), "bandpass", fs=fs, output="sos")
                for i in range(4)]
        sos.append(scipy.signal.butter(4, e[-1], "highpass", fs=fs, output="sos"))
        self.sos = sos
        self.zi = [np.zeros((s.shape[0], 2)) for s in sos]

    def process(self, block):
        x = np.asarray(block, dtype=np.float64)
        out = np.empty((N_BANDS, len(x)))
        for b, sos in enumerate(self.sos):
            out[b], self.zi[b] = scipy.signal.sosfilt(sos, x, zi=self.zi[b])
        return out

    def reset(self):
        for z in self.zi:
            z[:] = 0.0


def octave_filterbank(state, block):
    return state.process(block)


# --------------------------------------------------------------------------
# feedback delay network

def fdn_delays(sample_rate):
    """The eight prime delay lengths scaled to ``sample_rate``, rounded to odd.

    Each length is the odd integer nearest the scaled prime. If that shares
    a factor with an earlier length, the next-nearest odd integers are tried
    until the set stays mutually coprime (at 44.1 kHz nothing moves).
    """
    out = []
    for d in FDN_DELAYS_44K:
        x = d * sample_rate / 44100.0
        base = 2 * math.floor((x - 1.0) / 2.0 + 0.5) + 1     # nearest odd
        cands = sorted({base + k for k in range(-40, 41, 2) if base + k > 1},
                       key=lambda n: (abs(n - x), n))
        out.append(next(n for n in cands if all(math.gcd(n, m) == 1 for m in out)))
    return np.array(out, dtype=np.int64)


def householder(n=8):
    return np.eye(n) - (2.0 / n) * np.ones((n, n))


def fdn_gains(rt60, delays, sample_rate):
    """Per-band, per-line feedback gains giving -60 dB after ``rt60`` seconds."""
    rt = np.asarray(rt60, dtype=np.float64).reshape(-1, 1)
    d = np.asarray(delays, dtype=np.float64).reshape(1, -1)
    with np.errstate(divide="ignore"):
        g = np.where(rt > 0, 10.0 ** (-3.0 * d / (sample_rate * np.where(rt > 0, rt, 1.0))), 0.0)
    return g


@numba.njit(cache=True, nogil=True)
def _fdn_kernel(buf, heads, delays, gains, x, left, right):
    nbands = buf.shape[0]
    nl = buf.shape[1]
    o = np.empty(nl)
    scale = 2.0 / nl
    for n in range(x.shape[1]):
        sl = 0.0
        sr = 0.0
        for b in range(nbands):
            acc = 0.0
            for i in range(nl):
                v = gains[b, i] * buf[b, i, heads[b, i]]
                o[i] = v
                if i % 2 == 0:
                    sr += v
                else:
                    sr -= v
                sl += v
                acc += v
            s = acc * scale
            xin = x[b, n]
            for i in range(nl):
                h = heads[b, i]
                buf[b, i, h] = o[i] - s + xin
                h += 1
                if h == delays[i]:
                    h = 0
                heads[b, i] = h
        left[n] = sl
        right[n] = sr


class FdnBank:
    """One 8-line Householder FDN per octave band.

    Line ``i`` of band ``b`` feeds back with gain ``gains[b, i]``. Every band's
    input goes to all its lines. The output taps are the line outputs after
    their gains, so an echo that has travelled ``t`` seconds through the
    network is attenuated by 60 dB per RT60. The wet output is the tap sum
    (left) and the alternating-sign tap sum (right), both scaled by
    1/sqrt(8).
    """

    def __init__(self, sample_rate, rt60=None):
        self.sample_rate = float(sample_rate)
        self.delays = fdn_delays(sample_rate)
        self.matrix = householder(len(self.delays))
        self.buffers = np.zeros((N_BANDS, len(self.delays), int(self.delays.max())))
        self.heads = np.zeros((N_BANDS, len(self.delays)), dtype=np.int64)
        self.rt60 = np.zeros(N_BANDS)
        self.gains = np.zeros((N_BANDS, len(self.delays)))
        if rt60 is not None:
            self.set_rt60(rt60)

    def set_rt60(self, rt60):
        rt60 = np.asarray(rt60, dtype=np.float64)
        if rt60.shape != (N_BANDS,) or np.any(rt60 < 0):
            raise ValueError("need 6 non-negative RT60 values")
        self.rt60 = rt60.copy()
        self.gains = fdn_gains(rt60, self.delays, self.sample_rate)

    def process(self, bands):
        """(6, N) band inputs -> (2, N) wet output."""
        x = np.ascontiguousarray(bands, dtype=np.float64)
        if x.shape[0] != N_BANDS:
            raise ValueError("expected one input row per band")
        left = np.empty(x.shape[1])
        right = np.empty(x.shape[1])
        _fdn_kernel(self.buffers, self.heads, self.delays, self.gains, x, left, right)
        scale = 1.0 / math.sqrt(len(self.delays))
        return np.stack([left * scale, right * scale])

    def internal_energy(self, band=None):
        """Sum of squares of every sample currently held in the delay lines."""
        bands = range(N_BANDS) if band is None else [band]
        total = 0.0
        for b in bands:
            for i, d in enumerate(self.delays):
                total += float(np.sum(self.buffers[b, i, :d] ** 2))
        return total

    def reset(self):
        self.buffers[:] = 0.0
        self.heads[:] = 0


def design_fdn(rt60, sample_rate):
    return FdnBank(sample_rate, rt60)


def fdn_process(bank, bands):
    return bank.process(bands)
