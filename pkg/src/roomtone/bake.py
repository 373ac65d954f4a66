"""Offline reverb baking.

Probes are placed on a grid over the static geometry. From each probe a
fan of rays is traced: every surface hit deposits the ray's per-band energy
into a time histogram, then attenuates it by ``1 - absorption`` and reflects
the ray specularly or diffusely (cosine-weighted) according to the
surface's scattering. Schroeder backward integration of the histogram gives
the per-band RT60. Each probe also gets an axis-aligned proxy box, found by
casting short ray bundles along the six axis directions, which the renderer
uses for first-order image sources.

Random numbers come from a counter-based generator keyed by (seed, probe
id, ray id), so results do not depend on the order probes or rays are
processed in.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .materials import N_BANDS
from .spatial import SpatialIndex, closest_hit_range

log = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
RT60_MAX = 10.0
MISS_DISTANCE = 50.0
TRACE_OFFSET = 1e-6     # restart offset along the surface normal after a bounce
TRACE_TMIN = 1e-9
THREADS_ENV = "ROOMTONE_THREADS"

BAKED_MAGIC = b"RTBAKED\x00"
BAKED_VERSION = 1
FACE_NAMES = ("-x", "+x", "-y", "+y", "-z", "+z")

# per-band quality flag: the decay never spanned the fit range
FLAG_DECAY_RANGE = 1


class BakeError(RuntimeError):
    pass


class BakedFormatError(ValueError):
    pass


class BakedDataWarning(UserWarning):
    pass


class RT60QualityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BakeConfig:
    probe_count: int | None = None
    probe_spacing: float | None = None
    rays_per_probe: int = 10_000
    max_bounces: int = 200
    max_path_time: float = 3.0
    histogram_bin: float = 0.005
    energy_floor: float = 1e-6
    rng_seed: int = 0
    probe_height: float = 1.2
    clearance: float = 0.3

    def __post_init__(self):
        if (self.probe_count is None) == (self.probe_spacing is None):
            raise ValueError("set exactly one of probe_count and probe_spacing")
        if self.probe_count is not None and self.probe_count < 1:
            raise ValueError("probe_count must be >= 1")
        if self.probe_spacing is not None and not self.probe_spacing > 0:
            raise ValueError("probe_spacing must be positive")
        if self.rays_per_probe < 100:
            raise ValueError("rays_per_probe must be >= 100")
        if not 0 < self.histogram_bin <= 0.05:
            raise ValueError("histogram_bin must be in (0, 0.05]")
        if self.max_bounces < 1 or not self.max_path_time > 0:
            raise ValueError("max_bounces and max_path_time must be positive")
        if not (self.clearance > 0 and self.probe_height > 0 and self.energy_floor > 0):
            raise ValueError("clearance, probe_height and energy_floor must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class EnergyDecayHistogram:
    energy: np.ndarray          # (bands, bins), linear energy
    bin_width: float
    max_path_time: float

    @property
    def times(self):
        return np.arange(self.energy.shape[1]) * self.bin_width


@dataclass(frozen=True)
class ReverbProbe:
    id: int
    position: tuple
    rt60: tuple
    box_min: tuple
    box_max: tuple
    face_reflection: tuple      # 6 faces x 6 bands, face order FACE_NAMES
    flags: int = 0

    @property
    def box_size(self):
        return tuple(b - a for a, b in zip(self.box_min, self.box_max))


@dataclass
class BakedData:
    scene_hash: str
    config: dict
    probes: list = field(default_factory=list)

    def positions(self):
        return np.array([p.position for p in self.probes], dtype=np.float64).reshape(-1, 3)


# --------------------------------------------------------------------------
# random numbers

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_K_PROBE = np.uint64(0xD6E8FEB86659FD93)
_K_RAY = np.uint64(0xA0761D6478BD642F)


@numba.njit(cache=True, nogil=True)
def _mix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def ray_key(seed, probe, ray):
    s = _mix64(seed)
    s = _mix64(s ^ (np.uint64(probe) * _K_PROBE))
    return _mix64(s ^ (np.uint64(ray) * _K_RAY))


@numba.njit(cache=True, nogil=True)
def _uniform(state):
    """Advance a splitmix64 stream; returns (state, value in [0, 1))."""
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    z = z ^ (z >> np.uint64(31))
    return state, float(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


# --------------------------------------------------------------------------
# tracing

@numba.njit(cache=True, nogil=True, error_model="numpy")
def _trace_kernel(g, tri_mat, tri_inst, absorption, specular_prob, p0, p1, p2,
                  n_rays, seed, probe, max_bounces, max_time, bin_width, floor, c, hist):
    tris = g[0]
    cs = g[11]
    n_bins = hist.shape[1]
    nb = hist.shape[0]
    e = np.empty(nb)
    for r in range(n_rays):
        st = ray_key(seed, probe, r)
        st, u1 = _uniform(st)
        st, u2 = _uniform(st)
        z = 1.0 - 2.0 * u1
        rr = math.sqrt(max(0.0, 1.0 - z * z))
        phi = 2.0 * math.pi * u2
        d0, d1, d2 = rr * math.cos(phi), rr * math.sin(phi), z
        o0, o1, o2 = p0, p1, p2
        for b in range(nb):
            e[b] = 1.0
        time = 0.0
        bounces = 0
        while True:
            t, k = closest_hit_range(g, o0, o1, o2, d0, d1, d2, TRACE_TMIN, np.inf)
            if k < 0:
                break
            time += t / c
            if time > max_time:
                break
            bi = int(time / bin_width)
            if bi >= n_bins:
                break
            bounces += 1
            if bounces > max_bounces:
                break
            m = tri_mat[k]
            alive = False
            for b in range(nb):
                hist[b, bi] += e[b]
                e[b] *= 1.0 - absorption[m, b]
                if e[b] >= floor:
                    alive = True
            if not alive:
                break
            # world-space geometric normal facing the incoming ray
            tri = tris[k]
            ux = tri[1, 0] - tri[0, 0]
            uy = tri[1, 1] - tri[0, 1]
            uz = tri[1, 2] - tri[0, 2]
            vx = tri[2, 0] - tri[0, 0]
            vy = tri[2, 1] - tri[0, 1]
            vz = tri[2, 2] - tri[0, 2]
            nx = uy * vz - uz * vy
            ny = uz * vx - ux * vz
            nz = ux * vy - uy * vx
            inst = tri_inst[k]
            ca = cs[inst, 0]
            sa = cs[inst, 1]
            nx, ny = ca * nx - sa * ny, sa * nx + ca * ny
            inv = 1.0 / math.sqrt(nx * nx + ny * ny + nz * nz)
            nx *= inv
            ny *= inv
            nz *= inv
            dn = nx * d0 + ny * d1 + nz * d2
            if dn > 0.0:
                nx, ny, nz = -nx, -ny, -nz
                dn = -dn
            # restart just off the surface, on the side the ray came from;
            # a distance guard instead would let rays slip out at corners
            o0 += t * d0 + TRACE_OFFSET * nx
            o1 += t * d1 + TRACE_OFFSET * ny
            o2 += t * d2 + TRACE_OFFSET * nz
            st, u = _uniform(st)
            if u < specular_prob[m]:
                d0 -= 2.0 * dn * nx
                d1 -= 2.0 * dn * ny
                d2 -= 2.0 * dn * nz
            else:
                st, u1 = _uniform(st)
                st, u2 = _uniform(st)
                sgn = 1.0 if nz >= 0.0 else -1.0
                a = -1.0 / (sgn + nz)
                bb = nx * ny * a
                t0, t1, t2 = 1.0 + sgn * nx * nx * a, sgn * bb, -sgn * nx
                b0, b1, b2 = bb, sgn + ny * ny * a, -ny
                rad = math.sqrt(u1)
                ph = 2.0 * math.pi * u2
                lx = rad * math.cos(ph)
                ly = rad * math.sin(ph)
                lz = math.sqrt(max(0.0, 1.0 - u1))
                d0 = lx * t0 + ly * b0 + lz * nx
                d1 = lx * t1 + ly * b1 + lz * ny
                d2 = lx * t2 + ly * b2 + lz * nz
            norm = 1.0 / math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
            d0 *= norm
            d1 *= norm
            d2 *= norm


def _u64(seed):
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


def _tri_instances(index):
    inst = np.zeros(index.n_triangles, dtype=np.int64)
    for i, base in enumerate(index._tri_base):
        inst[base:] = i
    return inst


def trace_energy_decay(index, probe_pos, material_table, config, probe_id=0):
    """Stochastic energy-decay histogram for one probe.

    The reflection branch uses the band-mean scattering of the hit surface,
    so all bands share ray paths and differ only in their energies.
    """
    absorption = material_table.absorption_array()
    specular = 1.0 - material_table.scattering_array().mean(axis=1)
    n_bins = int(math.ceil(config.max_path_time / config.histogram_bin - 1e-9))
    hist = np.zeros((N_BANDS, n_bins))
    p = np.asarray(probe_pos, dtype=np.float64)
    if index.n_triangles:
        _trace_kernel(index.geometry(), index.tri_material, _tri_instances(index),
                      absorption, specular, p[0], p[1], p[2], config.rays_per_probe,
                      _u64(config.rng_seed), np.uint64(probe_id), config.max_bounces,
                      config.max_path_time, config.histogram_bin, config.energy_floor,
                      SPEED_OF_SOUND, hist)
    return EnergyDecayHistogram(hist, config.histogram_bin, config.max_path_time)


# --------------------------------------------------------------------------
# decay analysis

def schroeder_curve(energy):
    """Backward-integrated energy decay in dB relative to its start.

    ``energy`` is (..., bins). Bins after the last nonzero one are -inf.
    """
    energy = np.asarray(energy, dtype=np.float64)
    s = np.cumsum(energy[..., ::-1], axis=-1)[..., ::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return 10.0 * np.log10(s / s[..., :1])


def decay_time(energy, dt, upper_db=-5.0, lower_db=-35.0):
    """RT60 of one energy sequence by a line fit to its Schroeder curve.

    Returns (rt60 or None, number of bins used). ``None`` means fewer than
    three bins fell in the fit range; a zero-energy input gives (0.0, 0).
    """
    energy = np.asarray(energy, dtype=np.float64)
    if not energy.sum() > 0:
        return 0.0, 0
    level = schroeder_curve(energy)
    t = np.arange(len(energy)) * dt
    use = np.isfinite(level) & (level <= upper_db) & (level >= lower_db)
    n = int(use.sum())
    if n < 3:
        return None, n
    slope = np.polyfit(t[use], level[use], 1)[0]
    if slope >= 0:
        return RT60_MAX, n
    return float(np.clip(60.0 / -slope, 0.0, RT60_MAX)), n


def estimate_rt60(hist, return_flags=False):
    """Per-band RT60 (seconds) from an energy-decay histogram.

    Bands whose decay never spans -5..-35 dB get ``2 * max_path_time`` and
    raise :class:`RT60QualityWarning`.
    """
    rt = np.zeros(hist.energy.shape[0])
    flags = 0
    for b, row in enumerate(hist.energy):
        value, _ = decay_time(row, hist.bin_width)
        if value is None:
            warnings.warn(f"band {b}: decay range not reached, RT60 set to "
                          f"{2 * hist.max_path_time:g} s", RT60QualityWarning, stacklevel=2)
            value = min(2.0 * hist.max_path_time, RT60_MAX)
            flags |= FLAG_DECAY_RANGE << b
        rt[b] = value
    return (rt, flags) if return_flags else rt


# --------------------------------------------------------------------------
# proxy box

def _cone_directions(axis_dir):
    """Center ray plus 4 rays at 5 deg and 4 at 10 deg around ``axis_dir``."""
    a = np.asarray(axis_dir, dtype=np.float64)
    helper = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(a, helper)
    u /= np.linalg.norm(u)
    v = np.cross(a, u)
    dirs = [a]
    for k in range(8):
        half = math.radians(5.0 if k % 2 == 0 else 10.0)
        ph = k * math.pi / 4
        d = math.cos(half) * a + math.sin(half) * (math.cos(ph) * u + math.sin(ph) * v)
        dirs.append(d / np.linalg.norm(d))
    return np.array(dirs)


AXIS_DIRECTIONS = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]],
                           dtype=np.float64)


@dataclass
class ProxyBoxFit:
    box_min: np.ndarray
    box_max: np.ndarray
    distances: np.ndarray          # median hit distance per face
    face_material: np.ndarray      # material index per face, -1 for a miss
    face_reflection: np.ndarray    # (6 faces, 6 bands)


def fit_proxy_box(index, probe_pos, material_table):
    """Axis-aligned room approximation around ``probe_pos``.

    Each face sits at the median first-hit distance of a 9-ray bundle along
    its axis; misses count as :data:`MISS_DISTANCE`. A face's per-band
    reflection is ``sqrt(1 - absorption)`` of the material hit by the
    median ray, and 0 when the median ray escaped.
    """
    p = np.asarray(probe_pos, dtype=np.float64)
    absorption = material_table.absorption_array()
    dist = np.empty(6)
    face_mat = np.full(6, -1, dtype=np.int64)
    refl = np.zeros((6, N_BANDS))
    for f, axis in enumerate(AXIS_DIRECTIONS):
        dirs = _cone_directions(axis)
        t, obj, tri = index.raycast_batch(np.broadcast_to(p, dirs.shape), dirs)
        hit = obj >= 0
        t = np.where(hit, t, MISS_DISTANCE)
        order = np.argsort(t, kind="stable")
        med = order[len(order) // 2]
        dist[f] = min(float(t[med]), MISS_DISTANCE)
        if hit[med]:
            slot = _slot_of(index, obj[med], tri[med])
            face_mat[f] = index.tri_material[slot]
            refl[f] = np.sqrt(1.0 - absorption[face_mat[f]])
    lo = p - dist[[0, 2, 4]]
    hi = p + dist[[1, 3, 5]]
    return ProxyBoxFit(lo, hi, dist, face_mat, refl)


def _slot_of(index, object_id, triangle):
    slots = np.flatnonzero((index.tri_object == object_id) & (index.tri_local == triangle))
    return int(slots[0])


# --------------------------------------------------------------------------
# probe placement

def _floor_candidates(index, bounds, xs, ys, height):
    lo, hi = bounds
    out = []
    z0 = lo[2] - 1.0
    reach = hi[2] - lo[2] + 2.0
    up = np.array([0.0, 0.0, 1.0])
    for y in ys:
        for x in xs:
            origin = np.array([x, y, z0])
            travelled = 0.0
            while travelled < reach:
                t, obj, _ = index.raycast_batch(origin[None], up[None], reach - travelled)
                if obj[0] < 0:
                    break
                origin = origin + t[0] * up
                travelled += t[0]
                cand = origin + height * up
                # must be enclosed: something overhead
                _, above, _ = index.raycast_batch(cand[None], up[None])
                if above[0] >= 0:
                    out.append(cand)
    return out


def _grid_axis(lo, hi, spacing):
    extent = hi - lo
    n = max(1, int(math.floor(extent / spacing + 1e-9)))
    offset = (extent - n * spacing) / 2.0
    if offset < 0:
        # a single point when the cell is larger than the extent: centre it
        return np.array([lo + extent / 2.0])
    return lo + offset + spacing * (np.arange(n) + 0.5)


def _valid_grid(index, bounds, spacing, config):
    lo, hi = bounds
    xs = _grid_axis(lo[0], hi[0], spacing)
    ys = _grid_axis(lo[1], hi[1], spacing)
    cands = _floor_candidates(index, bounds, xs, ys, config.probe_height)
    return [c for c in cands if index.free_space(c, config.clearance)]


def place_probes(scene, index, config):
    """Probe positions on a floor-following grid over the scene bounds.

    Only static geometry counts, including for the bounds. With
    ``probe_spacing`` the grid uses that spacing, centred in the bounds.
    With ``probe_count`` the spacing starts at sqrt(area / count) and
    shrinks in 15% steps (down to half the clearance) until enough free
    points exist; the points kept are chosen by farthest-point sampling
    starting from the one nearest the bounds centre.
    """
    bounds = scene.static_bounds
    lo, hi = bounds
    if config.probe_spacing is not None:
        pts = _valid_grid(index, bounds, config.probe_spacing, config)
    else:
        area = max((hi[0] - lo[0]) * (hi[1] - lo[1]), 1e-6)
        spacing = math.sqrt(area / config.probe_count)
        pts = []
        # grid points closer than half the clearance add nothing new
        while True:
            pts = _valid_grid(index, bounds, spacing, config)
            if len(pts) >= config.probe_count or spacing * 0.85 < 0.5 * config.clearance:
                break
            spacing *= 0.85
        if pts:
            pts = _farthest_points(np.array(pts), config.probe_count, (lo + hi) / 2.0)
            if len(pts) < config.probe_count:
                log.warning("only %d of %d requested probes fit", len(pts), config.probe_count)
    if len(pts) == 0:
        raise BakeError("no valid probe positions (no floor-bounded free space); "
                        "try a smaller clearance or a different spacing")
    return [np.asarray(p, dtype=np.float64) for p in pts]


def _farthest_points(pts, k, centre):
    d0 = np.linalg.norm(pts - centre, axis=1)
    chosen = [int(np.argmin(d0))]
    dmin = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    while len(chosen) < min(k, len(pts)):
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(pts - pts[nxt], axis=1))
    return list(pts[chosen])


# --------------------------------------------------------------------------
# bake

def _bake_probe(index, table, config, probe_id, pos):
    hist = trace_energy_decay(index, pos, table, config, probe_id)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RT60QualityWarning)
        rt60, flags = estimate_rt60(hist, return_flags=True)
    fit = fit_proxy_box(index, pos, table)
    return ReverbProbe(
        id=probe_id,
        position=tuple(float(v) for v in pos),
        rt60=tuple(float(v) for v in rt60),
        box_min=tuple(float(v) for v in fit.box_min),
        box_max=tuple(float(v) for v in fit.box_max),
        face_reflection=tuple(tuple(float(v) for v in row) for row in fit.face_reflection),
        flags=int(flags),
    )


def resolve_threads(threads=None):
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(threads))


def bake(scene, config, threads=None):
    """Bake reverb probes for the static part of ``scene``.

    Probes are processed independently (optionally on ``threads`` worker
    threads, default from ``ROOMTONE_THREADS``); the result is identical for
    any thread count.
    """
    index = SpatialIndex(scene, include_dynamic=False)
    positions = place_probes(scene, index, config)
    table = scene.material_table
    n = resolve_threads(threads)
    if n == 1:
        probes = [_bake_probe(index, table, config, i, p) for i, p in enumerate(positions)]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            probes = list(pool.map(lambda ip: _bake_probe(index, table, config, *ip),
                                   enumerate(positions)))
    return BakedData(scene.static_hash(), config.to_dict(), probes)


# --------------------------------------------------------------------------
# file format
#
#   magic      8 bytes  b"RTBAKED\0"
#   version    u32
#   header_len u32
#   header     JSON, UTF-8, sorted keys: {"config": ..., "n_bands": 6, "scene_hash": ...}
#   n_probes   u32
#   probes     n_probes records of PROBE_DTYPE (little-endian, packed)

PROBE_DTYPE = np.dtype([
    ("id", "<i8"),
    ("position", "<f8", (3,)),
    ("rt60", "<f8", (N_BANDS,)),
    ("box_min", "<f8", (3,)),
    ("box_max", "<f8", (3,)),
    ("face_reflection", "<f8", (6, N_BANDS)),
    ("flags", "<u8"),
])


def dumps_baked(data):
    header = json.dumps({"scene_hash": data.scene_hash, "config": data.config,
                         "n_bands": N_BANDS}, sort_keys=True).encode()
    rec = np.zeros(len(data.probes), dtype=PROBE_DTYPE)
    for i, p in enumerate(data.probes):
        rec[i] = (p.id, p.position, p.rt60, p.box_min, p.box_max, p.face_reflection, p.flags)
    return (BAKED_MAGIC + struct.pack("<II", BAKED_VERSION, len(header)) + header
            + struct.pack("<I", len(rec)) + rec.tobytes())


def loads_baked(blob, scene=None, source="<bytes>"):
    def need(n):
        if len(blob) < n:
            raise BakedFormatError(f"{source}: truncated baked file: expected at least "
                                   f"{n} bytes, got {len(blob)}")
    need(16)
    if blob[:8] != BAKED_MAGIC:
        raise BakedFormatError(f"{source}: not a baked reverb file")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != BAKED_VERSION:
        raise BakedFormatError(f"{source}: baked format version {version}, "
                               f"expected {BAKED_VERSION}")
    need(16 + hlen + 4)
    try:
        header = json.loads(blob[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BakedFormatError(f"{source}: corrupt header: {exc}") from None
    (count,) = struct.unpack_from("<I", blob, 16 + hlen)
    start = 16 + hlen + 4
    expected = start + count * PROBE_DTYPE.itemsize
    if len(blob) != expected:
        raise BakedFormatError(f"{source}: truncated baked file: expected {expected} bytes, "
                               f"got {len(blob)}")
    rec = np.frombuffer(blob, dtype=PROBE_DTYPE, count=count, offset=start)
    probes = [ReverbProbe(int(r["id"]), tuple(map(float, r["position"])),
                          tuple(map(float, r["rt60"])), tuple(map(float, r["box_min"])),
                          tuple(map(float, r["box_max"])),
                          tuple(tuple(map(float, row)) for row in r["face_reflection"]),
                          int(r["flags"]))
              for r in rec]
    data = BakedData(header["scene_hash"], header["config"], probes)
    if scene is not None and scene.static_hash() != data.scene_hash:
        warnings.warn(f"{source}: baked data was made for a different scene "
                      "(hash mismatch)", BakedDataWarning, stacklevel=2)
    return data


def save_baked(data, path):
    with open(path, "wb") as fh:
        fh.write(dumps_baked(data))


def load_baked(path, scene=None):
    with open(path, "rb") as fh:
        blob = fh.read()
    return loads_baked(blob, scene, str(path))
