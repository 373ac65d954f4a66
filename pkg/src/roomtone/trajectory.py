"""Trajectory files: listener keyframes and source events over time.

Grammar (one statement per line, whitespace-separated, ``#`` starts a
comment; times in seconds, lengths in meters, yaw in radians)::

    duration T
    listener T X Y Z YAW
    source T ID start WAV [GAIN]
    source T ID stop
    source T ID move X Y Z

Listener keyframe times must strictly increase, as must the event times of
each source. ``start`` while a clip is playing and ``stop`` with nothing
playing are errors. WAV paths are relative to the trajectory file.

Between keyframes the listener position is interpolated linearly and the
yaw along the shorter arc. Before the first keyframe the first pose holds,
after the last one the last pose holds.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np


class TrajectoryError(ValueError):
    def __init__(self, message, source="<string>", line=None):
        self.source, self.line = source, line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class Keyframe:
    t: float
    position: tuple
    yaw: float


@dataclass(frozen=True)
class SourceEvent:
    t: float
    source_id: int
    kind: str                    # "start" | "stop" | "move"
    path: str | None = None
    gain: float = 1.0
    position: tuple | None = None
    line: int | None = None


@dataclass
class Trajectory:
    keyframes: list = field(default_factory=list)
    events: list = field(default_factory=list)
    duration: float | None = None
    base_dir: str = "."

    def end_time(self):
        times = [k.t for k in self.keyframes] + [e.t for e in self.events]
        return max(times, default=0.0)

    def listener_pose(self, t, default=((0.0, 0.0, 0.0), 0.0)):
        """(position, yaw) at time ``t``."""
        kf = self.keyframes
        if not kf:
            return tuple(default[0]), float(default[1])
        if t <= kf[0].t:
            return kf[0].position, kf[0].yaw
        if t >= kf[-1].t:
            return kf[-1].position, kf[-1].yaw
        i = int(np.searchsorted([k.t for k in kf], t, side="right")) - 1
        a, b = kf[i], kf[i + 1]
        f = (t - a.t) / (b.t - a.t)
        pos = tuple(pa + f * (pb - pa) for pa, pb in zip(a.position, b.position))
        return pos, interpolate_yaw(a.yaw, b.yaw, f)

    def source_ids(self):
        return sorted({e.source_id for e in self.events})


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w <= -math.pi else w


def interpolate_yaw(y0, y1, f):
    return wrap_angle(y0 + f * wrap_angle(y1 - y0))


def _floats(tokens, what, src, ln):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise TrajectoryError(f"{what}: expected numbers, got {' '.join(tokens)!r}", src, ln) \
            from None
    if not all(math.isfinite(v) for v in vals):
        raise TrajectoryError(f"{what}: values must be finite", src, ln)
    return vals


def parse_trajectory_text(text, base_dir=".", source="<string>"):
    traj = Trajectory(base_dir=base_dir)
    last_event = {}
    playing = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        kw = tokens[0]
        if kw == "duration":
            if len(tokens) != 2:
                raise TrajectoryError("duration takes exactly one value", source, ln)
            (d,) = _floats(tokens[1:], "duration", source, ln)
            if d <= 0:
                raise TrajectoryError("duration must be positive", source, ln)
            traj.duration = d
        elif kw == "listener":
            if len(tokens) != 6:
                raise TrajectoryError(f"listener expects 5 fields (t x y z yaw), got "
                                      f"{len(tokens) - 1}", source, ln)
            t, x, y, z, yaw = _floats(tokens[1:], "listener", source, ln)
            if t < 0:
                raise TrajectoryError("times must be >= 0", source, ln)
            if traj.keyframes and t <= traj.keyframes[-1].t:
                raise TrajectoryError(f"listener time {t} does not increase (previous "
                                      f"{traj.keyframes[-1].t})", source, ln)
            traj.keyframes.append(Keyframe(t, (x, y, z), wrap_angle(yaw)))
        elif kw == "source":
            if len(tokens) < 4:
                raise TrajectoryError("source expects: source T ID start|stop|move ...",
                                      source, ln)
            (t,) = _floats(tokens[1:2], "source time", source, ln)
            try:
                sid = int(tokens[2])
            except ValueError:
                raise TrajectoryError(f"bad source id {tokens[2]!r}", source, ln) from None
            if t < 0:
                raise TrajectoryError("times must be >= 0", source, ln)
            if sid in last_event and t <= last_event[sid]:
                raise TrajectoryError(f"source {sid}: event time {t} does not increase "
                                      f"(previous {last_event[sid]})", source, ln)
            last_event[sid] = t
            action, rest = tokens[3], tokens[4:]
            if action == "start":
                if len(rest) not in (1, 2):
                    raise TrajectoryError("start expects a WAV path and optional gain",
                                          source, ln)
                if playing.get(sid):
                    raise TrajectoryError(f"source {sid}: start while already playing",
                                          source, ln)
                gain = _floats(rest[1:], "gain", source, ln)[0] if len(rest) == 2 else 1.0
                if gain < 0:
                    raise TrajectoryError("gain must be >= 0", source, ln)
                playing[sid] = True
                traj.events.append(SourceEvent(t, sid, "start", path=rest[0], gain=gain,
                                               line=ln))
            elif action == "stop":
                if rest:
                    raise TrajectoryError("stop takes no further fields", source, ln)
                if not playing.get(sid):
                    raise TrajectoryError(f"source {sid}: stop without start", source, ln)
                playing[sid] = False
                traj.events.append(SourceEvent(t, sid, "stop", line=ln))
            elif action == "move":
                if len(rest) != 3:
                    raise TrajectoryError(f"move expects 3 coordinates, got {len(rest)}",
                                          source, ln)
                pos = tuple(_floats(rest, "move", source, ln))
                traj.events.append(SourceEvent(t, sid, "move", position=pos, line=ln))
            else:
                raise TrajectoryError(f"unknown source action {action!r}", source, ln)
        else:
            raise TrajectoryError(f"unknown statement {kw!r}", source, ln)
    traj.events.sort(key=lambda e: (e.t, e.source_id))
    return traj


def parse_trajectory(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_trajectory_text(text, os.path.dirname(os.path.abspath(path)), str(path))
