"""Run-time renderer.

Each block, every source goes through:

1. a propagation delay line (fractional allpass interpolation, so moving
   sources Doppler-shift),
2. distance gain, near-field low shelf and occlusion low-pass,
3. binaural spatialization of the direct path,
4. six first-order image sources off the nearest probe's proxy box, each
   with per-band wall reflection gains, each spatialized separately,
5. a distance-weighted send into the shared per-band FDN, tuned to the
   nearest probe's RT60s.

Gains, delays, shelf depth, the occlusion filter pole and the binaural
parameters all glide to their per-block targets with a one-pole smoother
(time constant ``smoothing_tau``). A source's first block starts at its
targets. Output is not limited.

Pose updates are staged and take effect at the next block boundary, so a
render is a pure function of its inputs and the staging calls.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np

from .bake import BakedData, ReverbProbe
from .binaural import SpatializerBank, to_listener_frame
from .dsp import AudioBlock, FdnBank, OctaveFilterbank, delay_tap, smoothing_coefficient
from .materials import N_BANDS
from .scene import Transform, as_vec3
from .spatial import SpatialIndex

NEAR_FIELD_RADIUS = 1.0
STAGES = ("raycast", "direct", "reflections", "reverb", "binaural")


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    sample_rate: float = 44100.0
    block_size: int = 1024
    speed_of_sound: float = 343.0
    ref_distance: float = 1.0
    min_distance: float = 0.25
    occlusion_open_cutoff: float = 8000.0
    occlusion_gain_db_per_occluder: float = -3.0
    max_occluders: int = 4
    nearfield_shelf_hz: float = 300.0
    nearfield_max_boost_db: float = 9.0
    reflection_order: int = 1
    reverb_send_gain: float = 0.25
    smoothing_tau: float = 0.010
    propagation_delay_enabled: bool = True
    reflections_enabled: bool = True
    reverb_enabled: bool = True
    max_delay: float = 1.0      # seconds of delay-line history per source

    def __post_init__(self):
        b = self.block_size
        if not (64 <= b <= 8192 and b & (b - 1) == 0):
            raise ValueError("block_size must be a power of two in [64, 8192]")
        if not 0 < self.min_distance <= self.ref_distance:
            raise ValueError("min_distance must be in (0, ref_distance]")
        if self.reflection_order != 1:
            raise ValueError("only first-order reflections are supported")
        if self.sample_rate < 16000:
            raise ValueError("sample_rate must be at least 16 kHz")


# --------------------------------------------------------------------------
# parameter models

def select_probe(probes, listener_pos):
    """Id of the probe nearest ``listener_pos``; ties go to the lowest id."""
    if not probes:
        raise EngineError("no probes to select from")
    p = np.asarray(listener_pos, dtype=np.float64)
    best_id, best_d = None, math.inf
    for probe in sorted(probes, key=lambda q: q.id):
        q = probe.position
        d = (q[0] - p[0]) ** 2 + (q[1] - p[1]) ** 2 + (q[2] - p[2]) ** 2
        if d < best_d:
            best_id, best_d = probe.id, d
    return best_id


@dataclass(frozen=True)
class DirectParams:
    distance: float
    clamped_distance: float
    gain: float
    nearfield_boost_db: float


def direct_params(src_pos, listener_pos, config, near_field_enabled=True):
    d = math.dist(src_pos, listener_pos)
    dc = max(d, config.min_distance)
    gain = config.ref_distance / dc
    boost = 0.0
    if near_field_enabled and d < NEAR_FIELD_RADIUS:
        boost = min(20.0 * math.log10(config.ref_distance / dc), config.nearfield_max_boost_db)
        boost = max(boost, 0.0)
    return DirectParams(d, dc, gain, boost)


@dataclass(frozen=True)
class OcclusionParams:
    occluders: int
    gain: float
    cutoff: float | None     # None: filter bypassed


def occlusion_filter_params(k, config):
    k = min(max(int(k), 0), config.max_occluders)
    if k == 0:
        return OcclusionParams(0, 1.0, None)
    gain = 10.0 ** (k * config.occlusion_gain_db_per_occluder / 20.0)
    return OcclusionParams(k, gain, config.occlusion_open_cutoff * 2.0 ** (-k))


@dataclass(frozen=True)
class Reflection:
    face: int
    delay: float              # seconds, source to listener via the image
    path_length: float
    gains: tuple              # per band
    direction: object         # ListenerFrameDirection
    valid: bool


def image_sources(probe, src_pos, listener_pos, config, listener_yaw=0.0):
    """First-order image sources of ``src_pos`` in the probe's proxy box.

    Faces are ordered -x, +x, -y, +y, -z, +z. A reflection whose image path
    is shorter than the direct path (source or listener outside the box) is
    marked invalid and carries zero gain.
    """
    src = np.asarray(src_pos, dtype=np.float64)
    lis = np.asarray(listener_pos, dtype=np.float64)
    direct = float(np.linalg.norm(src - lis))
    out = []
    for face in range(6):
        axis = face // 2
        plane = (probe.box_min if face % 2 == 0 else probe.box_max)[axis]
        image = src.copy()
        image[axis] = 2.0 * plane - src[axis]
        v = image - lis
        length = float(np.linalg.norm(v))
        valid = length >= direct
        scale = config.ref_distance / max(length, config.min_distance) if valid else 0.0
        gains = tuple(scale * r for r in probe.face_reflection[face])
        out.append(Reflection(face, length / config.speed_of_sound, length, gains,
                              to_listener_frame(v, listener_yaw), valid))
    return out


# --------------------------------------------------------------------------
# kernels

_G, _DELAY, _SHELF, _OCC = 0, 1, 2, 3


@numba.njit(cache=True, nogil=True)
def _direct_kernel(x, buf, head, cur, tgt, smooth, shelf_a, state, out):
    cap = buf.shape[0]
    om = 1.0 - smooth
    for n in range(x.shape[0]):
        buf[head] = x[n]
        head += 1
        if head == cap:
            head = 0
        for p in range(4):
            cur[p] = smooth * cur[p] + om * tgt[p]
        d = cur[_DELAY]
        if d < 0.5:
            v = delay_tap(buf, head, d)
        else:
            # first-order allpass (Thiran) fractional delay: flat magnitude,
            # so the level does not depend on the fractional part of d
            di = int(math.floor(d - 0.5))
            fr = d - di
            eta = (1.0 - fr) / (1.0 + fr)
            i0 = head - 1 - di
            if i0 < 0:
                i0 += cap
            i1 = i0 - 1
            if i1 < 0:
                i1 += cap
            v = eta * buf[i0] + buf[i1] - eta * state[2]
        state[2] = v
        v = v * cur[_G]
        # low shelf: v + (G - 1) * lowpass(v); exact identity at G = 1
        state[0] = (1.0 - shelf_a) * v + shelf_a * state[0]
        v = v + (cur[_SHELF] - 1.0) * state[0]
        # occlusion one-pole; pole 0 passes the signal unchanged
        a = cur[_OCC]
        state[1] = (1.0 - a) * v + a * state[1]
        out[n] = state[1]
    return head


@numba.njit(cache=True, nogil=True)
def _reflection_kernel(bands, bufs, head, cur_d, tgt_d, cur_g, tgt_g, smooth, out):
    nb = bands.shape[0]
    cap = bufs.shape[1]
    nr = cur_d.shape[0]
    om = 1.0 - smooth
    for n in range(bands.shape[1]):
        for b in range(nb):
            bufs[b, head] = bands[b, n]
        head += 1
        if head == cap:
            head = 0
        for r in range(nr):
            d = smooth * cur_d[r] + om * tgt_d[r]
            cur_d[r] = d
            di = int(math.floor(d))
            fr = d - di
            i0 = head - 1 - di
            while i0 < 0:
                i0 += cap
            i1 = i0 - 1
            if i1 < 0:
                i1 += cap
            acc = 0.0
            for b in range(nb):
                g = smooth * cur_g[r, b] + om * tgt_g[r, b]
                cur_g[r, b] = g
                acc += g * ((1.0 - fr) * bufs[b, i0] + fr * bufs[b, i1])
            out[r, n] = acc
    return head


def _ramp(cur, tgt, smooth, n):
    """Exponential glide from ``cur`` to ``tgt`` over ``n`` samples."""
    if cur == tgt:
        return np.full(n, tgt)
    return tgt + (cur - tgt) * smooth ** np.arange(1, n + 1)


# --------------------------------------------------------------------------
# engine

class SignalStream:
    """Scheduled playback of mono clips for one source."""

    def __init__(self):
        self.clips = []          # (start sample, samples, gain)
        self.stops = []

    def add(self, samples, start=0, gain=1.0):
        self.clips.append((int(start), np.asarray(samples, dtype=np.float64), float(gain)))

    def stop(self, at):
        self.stops.append(int(at))

    def read(self, pos, n):
        out = np.zeros(n)
        for start, data, gain in self.clips:
            end = start + len(data)
            for s in self.stops:
                if s >= start:
                    end = min(end, s)
            lo, hi = max(pos, start), min(pos + n, end)
            if lo < hi:
                out[lo - pos:hi - pos] += gain * data[lo - start:hi - start]
        return out


@dataclass
class _SourceState:
    id: int
    position: tuple
    gain: float
    near_field: bool
    line: np.ndarray
    band_lines: np.ndarray | None
    filterbank: OctaveFilterbank | None
    spatializer: SpatializerBank
    head: int = 0
    band_head: int = 0
    cur: np.ndarray = field(default_factory=lambda: np.zeros(4))
    tgt: np.ndarray = field(default_factory=lambda: np.zeros(4))
    filt: np.ndarray = field(default_factory=lambda: np.zeros(3))
    refl_cur_d: np.ndarray = field(default_factory=lambda: np.zeros(6))
    refl_tgt_d: np.ndarray = field(default_factory=lambda: np.zeros(6))
    refl_cur_g: np.ndarray = field(default_factory=lambda: np.zeros((6, N_BANDS)))
    refl_tgt_g: np.ndarray = field(default_factory=lambda: np.zeros((6, N_BANDS)))
    send_cur: float = 0.0
    send_tgt: float = 0.0
    occluders: int = 0
    primed: bool = False


@dataclass(frozen=True)
class ListenerPose:
    position: tuple
    yaw: float = 0.0


class Engine:
    """Stateful block renderer for one scene.

    ``baked=None`` renders the direct path only (no reflections, no reverb).
    """

    def __init__(self, scene, baked=None, config=None):
        self.config = config or RenderConfig()
        cfg = self.config
        self.scene = scene
        self.baked = baked if (baked is not None and baked.probes) else None
        self.index = SpatialIndex(scene, include_dynamic=True)
        self._has_occluders = bool(self.index.occluder.any())
        fs = cfg.sample_rate
        self.fs = fs
        self.smooth = smoothing_coefficient(cfg.smoothing_tau, fs)
        self.shelf_a = math.exp(-2.0 * math.pi * cfg.nearfield_shelf_hz / fs)
        self.with_reflections = self.baked is not None and cfg.reflections_enabled
        self.with_reverb = self.baked is not None and cfg.reverb_enabled
        self.fdn = FdnBank(fs) if self.with_reverb else None
        self.listener = ListenerPose(scene.listener.position, scene.listener.yaw)
        self.head_radius = scene.listener.head_radius
        self.probe_id = None
        self._probes = {p.id: p for p in self.baked.probes} if self.baked else {}
        self.sources = {}
        for spec in scene.sources:
            self._add_source(spec)
        self.streams = {}
        self.position = 0       # samples rendered so far
        self._staged_listener = None
        self._staged_sources = {}
        self._staged_objects = {}
        self.transforms = {o.id: o.transform for o in scene.objects if o.dynamic}
        self.timings = dict.fromkeys(STAGES, 0.0)

    def _add_source(self, spec):
        cfg = self.config
        cap = int(math.ceil(cfg.max_delay * self.fs)) + 4
        n_spat = 7 if self.with_reflections else 1
        need_bands = self.with_reflections or self.with_reverb
        self.sources[spec.id] = _SourceState(
            id=spec.id, position=tuple(spec.position), gain=float(spec.gain),
            near_field=bool(spec.near_field_enabled),
            line=np.zeros(cap),
            band_lines=np.zeros((N_BANDS, cap)) if self.with_reflections else None,
            filterbank=OctaveFilterbank(self.fs) if need_bands else None,
            spatializer=SpatializerBank(n_spat, self.fs, self.head_radius,
                                        cfg.speed_of_sound, cfg.smoothing_tau))

    # --- staging ----------------------------------------------------------

    def set_listener_pose(self, position, yaw=0.0):
        self._staged_listener = ListenerPose(as_vec3(position, "listener position"), float(yaw))

    def set_source_state(self, source_id, position=None, gain=None):
        if source_id not in self.sources:
            raise EngineError(f"unknown source id {source_id}")
        staged = self._staged_sources.setdefault(source_id, {})
        if position is not None:
            staged["position"] = as_vec3(position, "source position")
        if gain is not None:
            if not gain >= 0:
                raise EngineError("source gain must be >= 0")
            staged["gain"] = float(gain)

    def set_object_transform(self, object_id, transform):
        try:
            obj = self.scene.object(object_id)
        except KeyError:
            raise EngineError(f"unknown object id {object_id}") from None
        if not obj.dynamic:
            raise EngineError(f"object {object_id} is static")
        if not isinstance(transform, Transform):
            transform = Transform(*transform)
        self._staged_objects[object_id] = transform

    def attach_signal(self, source_id, samples, start=0, gain=1.0):
        """Schedule ``samples`` to play on ``source_id`` from absolute sample ``start``."""
        if source_id not in self.sources:
            raise EngineError(f"unknown source id {source_id}")
        self.streams.setdefault(source_id, SignalStream()).add(samples, start, gain)

    def stop_signal(self, source_id, at):
        if source_id not in self.sources:
            raise EngineError(f"unknown source id {source_id}")
        self.streams.setdefault(source_id, SignalStream()).stop(at)

    def _apply_staged(self):
        if self._staged_listener is not None:
            self.listener = self._staged_listener
            self._staged_listener = None
        for sid, upd in self._staged_sources.items():
            s = self.sources[sid]
            if "position" in upd:
                s.position = upd["position"]
            if "gain" in upd:
                s.gain = upd["gain"]
        self._staged_sources = {}
        for oid, tr in self._staged_objects.items():
            self.transforms[oid] = tr
            self.index.refit_dynamic(oid, tr)
        self._staged_objects = {}

    # --- rendering --------------------------------------------------------

    def occluder_count(self, source_id):
        return self.sources[source_id].occluders

    def _update_targets(self, s, probe):
        cfg = self.config
        lis = self.listener.position
        t0 = time.perf_counter()
        s.occluders = self.index.count_occluders(s.position, lis) if self._has_occluders else 0
        self.timings["raycast"] += time.perf_counter() - t0

        dp = direct_params(s.position, lis, cfg, s.near_field)
        occ = occlusion_filter_params(s.occluders, cfg)
        delay_s = dp.clamped_distance / cfg.speed_of_sound if cfg.propagation_delay_enabled else 0.0
        s.tgt[_G] = s.gain * dp.gain * occ.gain
        s.tgt[_DELAY] = delay_s * self.fs
        s.tgt[_SHELF] = 10.0 ** (dp.nearfield_boost_db / 20.0)
        s.tgt[_OCC] = 0.0 if occ.cutoff is None else math.exp(-2.0 * math.pi * occ.cutoff / self.fs)
        vec = np.subtract(s.position, lis)
        s.spatializer.set_direction(0, to_listener_frame(vec, self.listener.yaw))

        if self.with_reflections:
            refl = image_sources(probe, s.position, lis, cfg, self.listener.yaw)
            for r in refl:
                arrival = delay_s + (r.path_length - dp.distance) / cfg.speed_of_sound
                s.refl_tgt_d[r.face] = max(arrival, 0.0) * self.fs
                s.refl_tgt_g[r.face] = np.asarray(r.gains) * s.gain
                s.spatializer.set_direction(1 + r.face, r.direction)
        if self.with_reverb:
            s.send_tgt = cfg.reverb_send_gain * min(1.0, cfg.ref_distance / dp.clamped_distance) \
                * s.gain
        max_d = len(s.line) - 3
        if s.tgt[_DELAY] > max_d or np.any(s.refl_tgt_d > max_d):
            s.tgt[_DELAY] = min(s.tgt[_DELAY], max_d)
            np.minimum(s.refl_tgt_d, max_d, out=s.refl_tgt_d)
        if not s.primed:
            s.cur[:] = s.tgt
            s.refl_cur_d[:] = s.refl_tgt_d
            s.refl_cur_g[:] = s.refl_tgt_g
            s.send_cur = s.send_tgt
            s.primed = True

    def render_block(self, inputs):
        """Render one block. ``inputs`` maps every source id to ``block_size`` samples."""
        n = self.config.block_size
        self._apply_staged()
        probe = None
        if self.baked is not None:
            pid = select_probe(self.baked.probes, self.listener.position)
            probe = self._probes[pid]
            if pid != self.probe_id:
                self.probe_id = pid
                if self.fdn is not None:
                    self.fdn.set_rt60(probe.rt60)
        mix = np.zeros((2, n))
        fdn_in = np.zeros((N_BANDS, n)) if self.fdn is not None else None
        for sid in sorted(self.sources):
            if sid not in inputs:
                raise EngineError(f"missing input block for source {sid}")
            x = np.ascontiguousarray(inputs[sid], dtype=np.float64)
            if x.shape != (n,):
                raise EngineError(f"source {sid}: expected {n} samples, got {x.shape}")
            s = self.sources[sid]
            self._update_targets(s, probe)

            t0 = time.perf_counter()
            direct = np.empty(n)
            s.head = _direct_kernel(x, s.line, s.head, s.cur, s.tgt, self.smooth,
                                    self.shelf_a, s.filt, direct)
            t1 = time.perf_counter()
            self.timings["direct"] += t1 - t0

            stack = direct[None, :]
            if s.filterbank is not None:
                bands = s.filterbank.process(x)
                if self.with_reflections:
                    refl = np.empty((6, n))
                    s.band_head = _reflection_kernel(bands, s.band_lines, s.band_head,
                                                     s.refl_cur_d, s.refl_tgt_d, s.refl_cur_g,
                                                     s.refl_tgt_g, self.smooth, refl)
                    stack = np.concatenate([stack, refl])
                t2 = time.perf_counter()
                self.timings["reflections"] += t2 - t1
                if fdn_in is not None:
                    ramp = _ramp(s.send_cur, s.send_tgt, self.smooth, n)
                    s.send_cur = float(ramp[-1])
                    fdn_in += bands * ramp
                    self.timings["reverb"] += time.perf_counter() - t2
            t3 = time.perf_counter()
            s.spatializer.process(stack, out=mix)
            self.timings["binaural"] += time.perf_counter() - t3
        if self.fdn is not None:
            t4 = time.perf_counter()
            mix += self.fdn.process(fdn_in)
            self.timings["reverb"] += time.perf_counter() - t4
        self.position += n
        return AudioBlock(mix, self.fs)

    def step(self, n_blocks=1):
        """Render ``n_blocks`` from the attached signals; returns (frames, 2) samples."""
        n = self.config.block_size
        out = np.empty((n_blocks * n, 2))
        for b in range(n_blocks):
            inputs = {}
            for sid in self.sources:
                stream = self.streams.get(sid)
                inputs[sid] = stream.read(self.position, n) if stream else np.zeros(n)
            block = self.render_block(inputs)
            out[b * n:(b + 1) * n] = block.samples.T
        return out


def initialize(scene, baked=None, config=None):
    return Engine(scene, baked, config)
