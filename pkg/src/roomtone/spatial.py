"""Two-level BVH for ray queries against scene triangles.

All static objects are flattened into one world-space BVH. Each dynamic
object keeps its own BVH in object space plus a rigid transform; moving it
only rewrites the transform, and rays are mapped into the object's frame at
query time. Rigid transforms preserve distances, so hit distances are the
same in either frame.

Ray/triangle tests use the watertight formulation (shear the triangle into
ray space, test signed edge functions). Rays coplanar with a triangle never
hit it. Hits closer than :data:`EPSILON` are ignored, and equal distances
are resolved towards the lowest ``(object_id, triangle index)``.

The traversal kernels are numba functions that take the flattened index as
a tuple (see :meth:`SpatialIndex.geometry`) so other kernels, baking in
particular, can call them directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .scene import Transform

EPSILON = 1e-4
LEAF_SIZE = 4
_BOX_PAD = 1e-7
_STACK = 128


@dataclass(frozen=True)
class Ray:
    origin: tuple
    direction: tuple
    t_max: float = math.inf

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ValueError("ray direction must be a unit vector")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")


@dataclass(frozen=True)
class RayHit:
    t: float
    object_id: int
    triangle: int
    material: int
    normal: tuple


# --------------------------------------------------------------------------
# kernels

@numba.njit(cache=True, nogil=True, error_model="numpy")
def _box_entry(o0, o1, o2, d0, d1, d2, i0, i1, i2, lo, hi, tmax):
    """Entry distance of the ray into box [lo, hi], or +inf on a miss."""
    tn = -np.inf
    tf = np.inf
    if d0 == 0.0:
        if o0 < lo[0] or o0 > hi[0]:
            return np.inf
    else:
        a = (lo[0] - o0) * i0
        b = (hi[0] - o0) * i0
        tn = max(tn, min(a, b))
        tf = min(tf, max(a, b))
    if d1 == 0.0:
        if o1 < lo[1] or o1 > hi[1]:
            return np.inf
    else:
        a = (lo[1] - o1) * i1
        b = (hi[1] - o1) * i1
        tn = max(tn, min(a, b))
        tf = min(tf, max(a, b))
    if d2 == 0.0:
        if o2 < lo[2] or o2 > hi[2]:
            return np.inf
    else:
        a = (lo[2] - o2) * i2
        b = (hi[2] - o2) * i2
        tn = max(tn, min(a, b))
        tf = min(tf, max(a, b))
    if tn > tf or tf < 0.0 or tn > tmax:
        return np.inf
    return tn


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _ray_setup(d0, d1, d2):
    ax, ay, az = abs(d0), abs(d1), abs(d2)
    if ax >= ay and ax >= az:
        kz = 0
    elif ay >= az:
        kz = 1
    else:
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    d = (d0, d1, d2)
    dz = d[kz]
    if dz < 0.0:
        kx, ky = ky, kx
    return kx, ky, kz, d[kx] / dz, d[ky] / dz, 1.0 / dz


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _tri_t(tri, o0, o1, o2, kx, ky, kz, sx, sy, sz):
    """Watertight ray/triangle distance; +inf on a miss or a coplanar ray."""
    o = (o0, o1, o2)
    ax_ = tri[0, kx] - o[kx]
    ay_ = tri[0, ky] - o[ky]
    az_ = tri[0, kz] - o[kz]
    bx_ = tri[1, kx] - o[kx]
    by_ = tri[1, ky] - o[ky]
    bz_ = tri[1, kz] - o[kz]
    cx_ = tri[2, kx] - o[kx]
    cy_ = tri[2, ky] - o[ky]
    cz_ = tri[2, kz] - o[kz]
    Ax = ax_ - sx * az_
    Ay = ay_ - sy * az_
    Bx = bx_ - sx * bz_
    By = by_ - sy * bz_
    Cx = cx_ - sx * cz_
    Cy = cy_ - sy * cz_
    U = Cx * By - Cy * Bx
    V = Ax * Cy - Ay * Cx
    W = Bx * Ay - By * Ax
    if (U < 0.0 or V < 0.0 or W < 0.0) and (U > 0.0 or V > 0.0 or W > 0.0):
        return np.inf
    det = U + V + W
    if det == 0.0:
        return np.inf
    T = U * (sz * az_) + V * (sz * bz_) + W * (sz * cz_)
    return T / det


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _to_local(g, inst, o0, o1, o2, d0, d1, d2):
    xf = g[10]
    cs = g[11]
    c = cs[inst, 0]
    s = cs[inst, 1]
    px = o0 - xf[inst, 0]
    py = o1 - xf[inst, 1]
    pz = o2 - xf[inst, 2]
    # inverse rotation: R(-yaw)
    return (c * px + s * py, -s * px + c * py, pz,
            c * d0 + s * d1, -s * d0 + c * d1, d2)


@numba.njit(cache=True, nogil=True, error_model="numpy")
def closest_hit(g, o0, o1, o2, d0, d1, d2, tmax):
    """Nearest triangle hit with t in (EPSILON, tmax]. Returns (t, tri) or (inf, -1)."""
    return closest_hit_range(g, o0, o1, o2, d0, d1, d2, EPSILON, tmax)


@numba.njit(cache=True, nogil=True, error_model="numpy")
def closest_hit_range(g, o0, o1, o2, d0, d1, d2, tmin, tmax):
    """Nearest triangle hit with t in (tmin, tmax]; ties to the lowest (object, triangle)."""
    tris = g[0]
    oid = g[1]
    local = g[2]
    nmin = g[4]
    nmax = g[5]
    na = g[6]
    nb = g[7]
    ncount = g[8]
    roots = g[9]
    active = g[12]
    imin = g[13]
    imax = g[14]
    best_t = np.inf
    best = -1
    stack = np.empty(_STACK, dtype=np.int64)
    wi0 = 1.0 / d0 if d0 != 0.0 else 0.0
    wi1 = 1.0 / d1 if d1 != 0.0 else 0.0
    wi2 = 1.0 / d2 if d2 != 0.0 else 0.0
    for inst in range(roots.shape[0]):
        if not active[inst]:
            continue
        if _box_entry(o0, o1, o2, d0, d1, d2, wi0, wi1, wi2,
                      imin[inst], imax[inst], min(tmax, best_t)) == np.inf:
            continue
        l0, l1, l2, e0, e1, e2 = _to_local(g, inst, o0, o1, o2, d0, d1, d2)
        i0 = 1.0 / e0 if e0 != 0.0 else 0.0
        i1 = 1.0 / e1 if e1 != 0.0 else 0.0
        i2 = 1.0 / e2 if e2 != 0.0 else 0.0
        kx, ky, kz, sx, sy, sz = _ray_setup(e0, e1, e2)
        sp = 0
        stack[sp] = roots[inst]
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            limit = min(tmax, best_t)
            if _box_entry(l0, l1, l2, e0, e1, e2, i0, i1, i2,
                          nmin[node], nmax[node], limit) == np.inf:
                continue
            cnt = ncount[node]
            if cnt > 0:
                start = na[node]
                for k in range(start, start + cnt):
                    t = _tri_t(tris[k], l0, l1, l2, kx, ky, kz, sx, sy, sz)
                    if t > tmin and t <= tmax:
                        if t < best_t:
                            best_t = t
                            best = k
                        elif t == best_t and best >= 0 and (
                                oid[k] < oid[best]
                                or (oid[k] == oid[best] and local[k] < local[best])):
                            best = k
            else:
                left = na[node]
                right = nb[node]
                tl = _box_entry(l0, l1, l2, e0, e1, e2, i0, i1, i2,
                                nmin[left], nmax[left], limit)
                tr = _box_entry(l0, l1, l2, e0, e1, e2, i0, i1, i2,
                                nmin[right], nmax[right], limit)
                # push the farther child first so the nearer is popped first
                if tl <= tr:
                    if tr != np.inf:
                        stack[sp] = right
                        sp += 1
                    if tl != np.inf:
                        stack[sp] = left
                        sp += 1
                else:
                    if tl != np.inf:
                        stack[sp] = left
                        sp += 1
                    stack[sp] = right
                    sp += 1
    return best_t, best


@numba.njit(cache=True, nogil=True, error_model="numpy")
def segment_objects(g, o0, o1, o2, d0, d1, d2, tmin, tmax, occluder, flags):
    """Flag every dense object (where ``occluder`` is set) hit with t in (tmin, tmax)."""
    tris = g[0]
    dense = g[3]
    nmin = g[4]
    nmax = g[5]
    na = g[6]
    nb = g[7]
    ncount = g[8]
    roots = g[9]
    active = g[12]
    imin = g[13]
    imax = g[14]
    stack = np.empty(_STACK, dtype=np.int64)
    wi0 = 1.0 / d0 if d0 != 0.0 else 0.0
    wi1 = 1.0 / d1 if d1 != 0.0 else 0.0
    wi2 = 1.0 / d2 if d2 != 0.0 else 0.0
    for inst in range(roots.shape[0]):
        if not active[inst]:
            continue
        if _box_entry(o0, o1, o2, d0, d1, d2, wi0, wi1, wi2,
                      imin[inst], imax[inst], tmax) == np.inf:
            continue
        l0, l1, l2, e0, e1, e2 = _to_local(g, inst, o0, o1, o2, d0, d1, d2)
        i0 = 1.0 / e0 if e0 != 0.0 else 0.0
        i1 = 1.0 / e1 if e1 != 0.0 else 0.0
        i2 = 1.0 / e2 if e2 != 0.0 else 0.0
        kx, ky, kz, sx, sy, sz = _ray_setup(e0, e1, e2)
        sp = 0
        stack[sp] = roots[inst]
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_entry(l0, l1, l2, e0, e1, e2, i0, i1, i2,
                          nmin[node], nmax[node], tmax) == np.inf:
                continue
            cnt = ncount[node]
            if cnt > 0:
                start = na[node]
                for k in range(start, start + cnt):
                    obj = dense[k]
                    if not occluder[obj] or flags[obj]:
                        continue
                    t = _tri_t(tris[k], l0, l1, l2, kx, ky, kz, sx, sy, sz)
                    if t > tmin and t < tmax:
                        flags[obj] = True
            else:
                stack[sp] = na[node]
                sp += 1
                stack[sp] = nb[node]
                sp += 1
    n = 0
    for i in range(flags.shape[0]):
        if flags[i]:
            n += 1
    return n


@numba.njit(cache=True, nogil=True)
def _batch_closest(g, origins, dirs, tmax, out_t, out_tri):
    for i in range(origins.shape[0]):
        t, k = closest_hit(g, origins[i, 0], origins[i, 1], origins[i, 2],
                           dirs[i, 0], dirs[i, 1], dirs[i, 2], tmax[i])
        out_t[i] = t
        out_tri[i] = k


def _lattice_directions():
    dirs = [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)
            if (i, j, k) != (0, 0, 0)]
    d = np.array(dirs, dtype=np.float64)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


LATTICE_DIRECTIONS = _lattice_directions()


@numba.njit(cache=True, nogil=True)
def free_space_kernel(g, p0, p1, p2, clearance, lattice, floor_reach):
    for i in range(lattice.shape[0]):
        t, k = closest_hit(g, p0, p1, p2, lattice[i, 0], lattice[i, 1], lattice[i, 2],
                           clearance)
        if k >= 0:
            return False
    t, k = closest_hit(g, p0, p1, p2, 0.0, 0.0, -1.0, floor_reach)
    return k >= 0


# --------------------------------------------------------------------------
# construction

def _build_bvh(corners):
    """Median-split BVH over (T, 3, 3) corners.

    Returns (order, node_min, node_max, node_a, node_b, node_count) where
    leaves cover ``order[a:a + count]`` and interior nodes point at children.
    """
    n = len(corners)
    lo_t = corners.min(axis=1)
    hi_t = corners.max(axis=1)
    cent = corners.mean(axis=1)
    node_min, node_max, node_a, node_b, node_count = [], [], [], [], []
    order = np.arange(n)
    out_order = []

    def new_node():
        node_min.append(None)
        node_max.append(None)
        node_a.append(0)
        node_b.append(0)
        node_count.append(0)
        return len(node_min) - 1

    root = new_node()
    work = [(root, order)]
    while work:
        node, idx = work.pop()
        if len(idx):
            lo = lo_t[idx].min(axis=0)
            hi = hi_t[idx].max(axis=0)
        else:
            lo = hi = np.zeros(3)
        pad = _BOX_PAD + 1e-9 * np.maximum(np.abs(lo), np.abs(hi))
        node_min[node] = lo - pad
        node_max[node] = hi + pad
        if len(idx) <= LEAF_SIZE:
            node_a[node] = len(out_order)
            node_count[node] = len(idx)
            out_order.extend(idx.tolist())
            continue
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        half = len(idx) // 2
        part = np.argsort(c[:, axis], kind="stable")
        left, right = new_node(), new_node()
        node_a[node] = left
        node_b[node] = right
        work.append((right, idx[part[half:]]))
        work.append((left, idx[part[:half]]))
    return (np.array(out_order, dtype=np.int64), np.array(node_min), np.array(node_max),
            np.array(node_a, dtype=np.int64), np.array(node_b, dtype=np.int64),
            np.array(node_count, dtype=np.int64))


def _world_box(lo, hi, transform):
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
                        for z in (lo[2], hi[2])])
    w = transform.apply(corners)
    return w.min(axis=0), w.max(axis=0)


class SpatialIndex:
    """Ray query structure over a scene's objects.

    ``include_dynamic=False`` indexes only static objects (what baking uses).
    """

    def __init__(self, scene, include_dynamic=True):
        objects = [o for o in scene.objects if include_dynamic or not o.dynamic]
        static = [o for o in objects if not o.dynamic]
        dynamic = [o for o in objects if o.dynamic]
        self.object_ids = np.array([o.id for o in objects], dtype=np.int64)
        self._dense = {o.id: i for i, o in enumerate(objects)}
        self.occluder = np.array([o.occluder for o in objects], dtype=np.bool_)
        self._meshes = {}

        groups = []  # (transform, corners, oid, local, mat, dense) per instance
        parts = []
        for o in static:
            c = o.mesh.corners(o.world_vertices())
            parts.append((c, o))
        groups.append((Transform(), parts, None))
        for o in dynamic:
            groups.append((o.transform, [(o.mesh.corners(), o)], o.id))

        tris, oid, local, mat, dense = [], [], [], [], []
        nmin, nmax, na, nb, ncount = [], [], [], [], []
        roots, xf, inst_lo, inst_hi, nonempty = [], [], [], [], []
        self._tri_base = []
        self._instance_of = {}
        self._local_box = []
        tri_base = 0
        node_base = 0
        for inst, (transform, members, dyn_id) in enumerate(groups):
            if members:
                corners = np.concatenate([c for c, _ in members])
                g_oid = np.concatenate([np.full(len(c), o.id) for c, o in members])
                g_local = np.concatenate([np.arange(len(c)) for c, _ in members])
                g_mat = np.concatenate([o.mesh.materials for _, o in members])
                g_dense = np.concatenate([np.full(len(c), self._dense[o.id]) for c, o in members])
            else:
                corners = np.zeros((0, 3, 3))
                g_oid = g_local = g_mat = g_dense = np.zeros(0, dtype=np.int64)
            order, bmin, bmax, a, b, cnt = _build_bvh(corners)
            leaf = cnt > 0
            a = np.where(leaf, a + tri_base, a + node_base)
            b = np.where(leaf, b, b + node_base)
            tris.append(corners[order])
            oid.append(g_oid[order])
            local.append(g_local[order])
            mat.append(g_mat[order])
            dense.append(g_dense[order])
            nmin.append(bmin)
            nmax.append(bmax)
            na.append(a)
            nb.append(b)
            ncount.append(cnt)
            roots.append(node_base)
            nonempty.append(len(order) > 0)
            self._tri_base.append(tri_base)
            xf.append((*transform.translation, transform.yaw))
            self._local_box.append((bmin[0], bmax[0]))
            lo, hi = _world_box(bmin[0], bmax[0], transform) if len(order) else (
                np.full(3, np.inf), np.full(3, -np.inf))
            inst_lo.append(lo)
            inst_hi.append(hi)
            if dyn_id is not None:
                self._instance_of[dyn_id] = inst
            tri_base += len(order)
            node_base += len(bmin)

        self.tris = np.ascontiguousarray(np.concatenate(tris)).reshape(-1, 3, 3)
        self.tri_object = np.concatenate(oid).astype(np.int64)
        self.tri_local = np.concatenate(local).astype(np.int64)
        self.tri_material = np.concatenate(mat).astype(np.int64)
        self.tri_dense = np.concatenate(dense).astype(np.int64)
        self.node_min = np.ascontiguousarray(np.concatenate(nmin))
        self.node_max = np.ascontiguousarray(np.concatenate(nmax))
        self.node_a = np.concatenate(na).astype(np.int64)
        self.node_b = np.concatenate(nb).astype(np.int64)
        self.node_count = np.concatenate(ncount).astype(np.int64)
        self.roots = np.array(roots, dtype=np.int64)
        self.xform = np.array(xf, dtype=np.float64).reshape(-1, 4)
        self.cos_sin = np.stack([np.cos(self.xform[:, 3]), np.sin(self.xform[:, 3])], axis=1)
        # an instance without triangles is a lone empty leaf; never traverse it
        self.active = np.array(nonempty, dtype=np.bool_)
        self.inst_min = np.array(inst_lo, dtype=np.float64).reshape(-1, 3)
        self.inst_max = np.array(inst_hi, dtype=np.float64).reshape(-1, 3)
        self._dynamic = {o.id for o in objects if o.dynamic}

    @property
    def n_triangles(self):
        return len(self.tris)

    def leaf_triangles(self):
        """Triangle slots referenced by leaves (each exactly once)."""
        covered = []
        for a, c in zip(self.node_a, self.node_count):
            if c > 0:
                covered.extend(range(a, a + c))
        return covered

    def geometry(self):
        return (self.tris, self.tri_object, self.tri_local, self.tri_dense,
                self.node_min, self.node_max, self.node_a, self.node_b, self.node_count,
                self.roots, self.xform, self.cos_sin, self.active,
                self.inst_min, self.inst_max)

    # --- queries ---------------------------------------------------------

    def raycast_first(self, ray):
        o = np.asarray(ray.origin, dtype=np.float64)
        d = np.asarray(ray.direction, dtype=np.float64)
        t, k = closest_hit(self.geometry(), o[0], o[1], o[2], d[0], d[1], d[2],
                           float(ray.t_max))
        if k < 0:
            return None
        return RayHit(float(t), int(self.tri_object[k]), int(self.tri_local[k]),
                      int(self.tri_material[k]), self._normal(k, d))

    def _normal(self, k, d):
        tri = self.tris[k]
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        inst = int(np.searchsorted(self._tri_base, k, side="right") - 1)
        c, s = self.cos_sin[inst]
        n = np.array([c * n[0] - s * n[1], s * n[0] + c * n[1], n[2]])
        n /= np.linalg.norm(n)
        if n @ d > 0:
            n = -n
        return tuple(float(x) for x in n)

    def raycast_batch(self, origins, directions, t_max=np.inf):
        """Vectorised first-hit query. Returns (t, object_id, triangle) arrays; misses get -1."""
        origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        directions = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
        tmax = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (len(origins),)).copy()
        out_t = np.empty(len(origins))
        out_k = np.empty(len(origins), dtype=np.int64)
        _batch_closest(self.geometry(), origins, directions, tmax, out_t, out_k)
        hit = out_k >= 0
        obj = np.where(hit, self.tri_object[np.maximum(out_k, 0)], -1)
        tri = np.where(hit, self.tri_local[np.maximum(out_k, 0)], -1)
        return out_t, obj, tri

    def count_occluders(self, p_src, p_lis):
        """Number of distinct occluder objects crossing the open segment."""
        p = np.asarray(p_src, dtype=np.float64)
        q = np.asarray(p_lis, dtype=np.float64)
        v = q - p
        length = float(np.linalg.norm(v))
        if length == 0.0 or self.n_triangles == 0:
            return 0
        d = v / length
        flags = np.zeros(len(self.occluder), dtype=np.bool_)
        return int(segment_objects(self.geometry(), p[0], p[1], p[2], d[0], d[1], d[2],
                                   EPSILON, length - EPSILON, self.occluder, flags))

    def free_space(self, p, clearance, floor_reach=3.0):
        if not clearance > 0:
            raise ValueError("clearance must be positive")
        p = np.asarray(p, dtype=np.float64)
        return bool(free_space_kernel(self.geometry(), p[0], p[1], p[2], float(clearance),
                                      LATTICE_DIRECTIONS, float(floor_reach)))

    # --- dynamic objects -----------------------------------------------

    def refit_dynamic(self, object_id, transform):
        """Move dynamic object ``object_id`` to ``transform`` (static data untouched)."""
        if object_id not in self._dense:
            raise KeyError(f"unknown object id {object_id}")
        if object_id not in self._dynamic:
            raise ValueError(f"object {object_id} is static and cannot move")
        inst = self._instance_of[object_id]
        self.xform[inst] = (*transform.translation, transform.yaw)
        self.cos_sin[inst] = (math.cos(transform.yaw), math.sin(transform.yaw))
        lo, hi = self._local_box[inst]
        self.inst_min[inst], self.inst_max[inst] = _world_box(lo, hi, transform)
        return self


def build_index(scene, include_dynamic=True):
    return SpatialIndex(scene, include_dynamic)
