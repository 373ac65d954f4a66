"""Offline rendering of trajectories and the synthetic benchmark."""

from __future__ import annotations

import hashlib
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .engine import STAGES, Engine, RenderConfig
from .scene import Scene, SourceSpec
from .wavio import WavError, read_wav


class RenderError(RuntimeError):
    pass


def _load_clips(traj, scene, fs):
    known = {s.id for s in scene.sources}
    clips = []
    cache = {}
    for e in traj.events:
        if e.source_id not in known:
            raise RenderError(f"trajectory line {e.line}: source {e.source_id} is not "
                              "defined in the scene")
        if e.kind != "start":
            continue
        path = e.path if os.path.isabs(e.path) else os.path.join(traj.base_dir, e.path)
        if path not in cache:
            try:
                samples, spec = read_wav(path, expected_rate=fs)
            except (OSError, WavError) as exc:
                raise RenderError(str(exc)) from None
            if spec.channels != 1:
                raise RenderError(f"{path}: source signals must be mono "
                                  f"(file has {spec.channels} channels)")
            cache[path] = samples[:, 0]
        clips.append((e, cache[path]))
    return clips


def render_trajectory(scene, baked, traj, config=None):
    """Render ``traj`` to a (frames, 2) array.

    The output length is ``round(duration * fs)``. The duration is the
    trajectory's ``duration`` statement, else the end of its last keyframe,
    event or clip.
    """
    cfg = config or RenderConfig()
    fs = cfg.sample_rate
    clips = _load_clips(traj, scene, fs)
    engine = Engine(scene, baked, cfg)
    stops = {}
    for e in traj.events:
        if e.kind == "stop":
            stops.setdefault(e.source_id, []).append(int(round(e.t * fs)))
    end = traj.end_time()
    for e, data in clips:
        start = int(round(e.t * fs))
        engine.attach_signal(e.source_id, data, start, e.gain)
        later = [s for s in stops.get(e.source_id, []) if s >= start]
        end = max(end, (min(later) if later else start + len(data)) / fs)
    for sid, ss in stops.items():
        for s in ss:
            engine.stop_signal(sid, s)
    duration = traj.duration if traj.duration is not None else end
    frames = int(round(duration * fs))
    if frames <= 0:
        raise RenderError("trajectory duration is 0; nothing to render")

    block = cfg.block_size
    n_blocks = math.ceil(frames / block)
    moves = [e for e in traj.events if e.kind == "move"]
    mi = 0
    default = (scene.listener.position, scene.listener.yaw)
    out = np.empty((n_blocks * block, 2))
    for b in range(n_blocks):
        t = b * block / fs
        pos, yaw = traj.listener_pose(t, default)
        engine.set_listener_pose(pos, yaw)
        while mi < len(moves) and moves[mi].t <= t:
            engine.set_source_state(moves[mi].source_id, position=moves[mi].position)
            mi += 1
        out[b * block:(b + 1) * block] = engine.step(1)
    return out[:frames]


# --------------------------------------------------------------------------
# benchmark

def pink_noise(n, rng):
    """Unit-peak pink (1/f power) noise from a spectrally shaped white sequence."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n)
    x -= x.mean()
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


@dataclass
class BenchReport:
    sources: int
    audio_seconds: float
    wall_seconds: float
    stages: dict
    checksum: str

    @property
    def rtf(self):
        if self.sources == 0 or self.wall_seconds <= 0:
            return None
        return self.audio_seconds / self.wall_seconds

    def format(self):
        rtf = "n/a (no sources)" if self.rtf is None else f"{self.rtf:.2f}"
        lines = [f"sources        {self.sources}",
                 f"audio seconds  {self.audio_seconds:.3f}",
                 f"wall seconds   {self.wall_seconds:.3f}",
                 f"RTF            {rtf}"]
        for k in STAGES:
            lines.append(f"  {k:<12} {self.stages.get(k, 0.0):.4f} s")
        lines.append(f"checksum       {self.checksum}")
        return "\n".join(lines)


def _waypoints(rng, lo, hi, n):
    return rng.uniform(lo, hi, size=(n, 3))


def bench(scene, baked, n_sources=4, seconds=10.0, seed=0, config=None, warmup_blocks=2):
    """Render ``seconds`` of ``n_sources`` pink-noise sources on seeded random paths.

    Sources wander between random points inside the scene bounds (shrunk by
    0.5 m), one waypoint every 2 s. Timing excludes a short warm-up render
    on a throw-away engine, which absorbs JIT compilation.
    """
    cfg = config or RenderConfig()
    fs, block = cfg.sample_rate, cfg.block_size
    rng = np.random.default_rng(seed)
    lo, hi = scene.bounds
    lo = np.minimum(lo + 0.5, (lo + hi) / 2)
    hi = np.maximum(hi - 0.5, (lo + hi) / 2)
    frames = int(round(seconds * fs))
    n_blocks = math.ceil(frames / block)
    n_way = int(math.ceil(seconds / 2.0)) + 2
    paths = [_waypoints(rng, lo, hi, n_way) for _ in range(n_sources)]
    signals = [pink_noise(n_blocks * block, rng) * 0.25 for _ in range(n_sources)]
    sources = [SourceSpec(i, tuple(paths[i][0])) for i in range(n_sources)]
    bench_scene = Scene(scene.objects, scene.material_table, sources, scene.listener)

    if warmup_blocks:
        warm = Engine(bench_scene, baked, cfg)
        for i, x in enumerate(signals):
            warm.attach_signal(i, x)
        warm.step(warmup_blocks)

    engine = Engine(bench_scene, baked, cfg)
    for i, x in enumerate(signals):
        engine.attach_signal(i, x)
    out = np.empty((n_blocks * block, 2))
    t0 = time.perf_counter()
    for b in range(n_blocks):
        t = b * block / fs
        k = t / 2.0
        j = int(k)
        f = k - j
        for i, p in enumerate(paths):
            engine.set_source_state(i, position=tuple(p[j] + f * (p[j + 1] - p[j])))
        out[b * block:(b + 1) * block] = engine.step(1)
    wall = time.perf_counter() - t0
    out = out[:frames]
    digest = hashlib.sha256(out.astype(np.float32).tobytes()).hexdigest()
    return BenchReport(n_sources, frames / fs, wall, dict(engine.timings), digest)
