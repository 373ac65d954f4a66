"""Independent reference implementations used as test oracles."""

import numpy as np

EPS = 1e-4


def world_triangles(scene, include_dynamic=True):
    """(T, 3, 3) world-space corners plus (object_id, triangle index) keys."""
    corners, keys = [], []
    for o in scene.objects:
        if o.dynamic and not include_dynamic:
            continue
        c = o.mesh.corners(o.world_vertices())
        corners.append(c)
        keys += [(o.id, i) for i in range(len(c))]
    return np.concatenate(corners), keys


def moller_trumbore(tris, origin, direction):
    """Ray parameter t of every triangle hit (inf for a miss), two-sided."""
    v0, v1, v2 = tris[:, 0], tris[:, 1], tris[:, 2]
    e1, e2 = v1 - v0, v2 - v0
    p = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - v0
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = (q @ direction) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1)
    return np.where(hit, t, np.inf)


def brute_first_hit(tris, keys, origin, direction, t_max=np.inf):
    """(t, key) of the nearest hit with t in (EPS, t_max]; ties to the lowest key."""
    t = moller_trumbore(tris, origin, direction)
    t = np.where((t > EPS) & (t <= t_max), t, np.inf)
    best = t.min()
    if not np.isfinite(best):
        return None, None
    cands = [keys[i] for i in np.flatnonzero(t == best)]
    return float(best), min(cands)


def brute_occluders(scene, p, q):
    """Distinct occluder objects whose triangles cross the open segment (p, q)."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    length = np.linalg.norm(q - p)
    if length == 0:
        return 0
    d = (q - p) / length
    found = set()
    for o in scene.objects:
        if not o.occluder:
            continue
        t = moller_trumbore(o.mesh.corners(o.world_vertices()), p, d)
        if np.any((t > EPS) & (t < length - EPS)):
            found.add(o.id)
    return len(found)


def eyring_rt60(size, alpha):
    lx, ly, lz = size
    volume = lx * ly * lz
    area = 2 * (lx * ly + lx * lz + ly * lz)
    return 0.161 * volume / (-area * np.log(1.0 - alpha))


def schroeder_t60(energy, dt, hi_db=-5.0, lo_db=-35.0):
    """Reference decay-time fit: backward integral, line fit between two levels."""
    e = np.asarray(energy, dtype=float)
    s = np.cumsum(e[::-1])[::-1]
    db = 10 * np.log10(np.maximum(s / s[0], 1e-300))
    sel = (db <= hi_db) & (db >= lo_db)
    t = np.arange(len(e)) * dt
    slope = np.polyfit(t[sel], db[sel], 1)[0]
    return -60.0 / slope


def band_energy(x, fs, lo, hi):
    spec = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(len(x), 1 / fs)
    return float(spec[(f >= lo) & (f < hi)].sum())
