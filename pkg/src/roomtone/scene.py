"""In-memory scenes and the scene text format.

Scene files are line oriented. Blank lines and ``#`` comments are ignored;
every other line is a directive followed by positional tokens and
``key=value`` fields. Vectors are written ``x,y,z``. Lengths are metres,
angles radians, and ``z`` points up.

::

    roomscene 1
    material NAME absorption=a1,...,a6 scattering=s1,...,s6
    semantic LABEL MATERIAL
    default_material MATERIAL
    mesh NAME                      # inline mesh, closed by ``end``
      v X Y Z
      usemtl MATERIAL              # following faces use MATERIAL
      label LABEL                  # following faces use semantic_map[LABEL]
      f I J K                      # 0-based vertex indices
    end
    mesh NAME obj=PATH [usemtl=MATERIAL | label=LABEL]
    object ID mesh=NAME [translate=X,Y,Z] [yaw=R] [dynamic] [occluder]
    source ID position=X,Y,Z [gain=G] [signal=PATH] [nearfield]
    listener position=X,Y,Z [yaw=R] [head_radius=H]

The built-in material table (see :mod:`roomtone.materials`) is always
present; ``material`` and ``semantic`` lines add to it or override entries
by name. OBJ files contribute positions and faces only; an ``usemtl`` line
inside an OBJ file is read as a semantic label. Relative paths resolve
against the scene file's directory.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .materials import (N_BANDS, AcousticMaterial, MaterialError, MaterialTable,
                        MaterialWarning, builtin_material_table)

log = logging.getLogger(__name__)

SCENE_FORMAT_VERSION = 1
MIN_TRIANGLE_AREA = 1e-10


class SceneError(ValueError):
    """A scene file could not be parsed or violates a scene invariant."""

    def __init__(self, message, source=None, line=None, field=None):
        self.source = source
        self.line = line
        self.field = field
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        if field is not None:
            where += f" field {field!r}:"
        super().__init__(f"{where} {message}".strip() if where else message)


def as_vec3(value, what="vector"):
    try:
        x, y, z = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ValueError(f"{what} must have three components, got {value!r}") from None
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise ValueError(f"{what} has non-finite components: {value!r}")
    return (x, y, z)


@dataclass(frozen=True)
class Transform:
    """Rigid placement: rotation by ``yaw`` about +z, then translation."""

    translation: tuple = (0.0, 0.0, 0.0)
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "translation", as_vec3(self.translation, "translation"))
        object.__setattr__(self, "yaw", float(self.yaw))
        if not math.isfinite(self.yaw):
            raise ValueError("yaw must be finite")

    def rotation(self):
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation().T + np.asarray(self.translation)

    def inverse(self):
        c, s = math.cos(-self.yaw), math.sin(-self.yaw)
        tx, ty, tz = self.translation
        return Transform((-(c * tx - s * ty), -(s * tx + c * ty), -tz), -self.yaw)

    @property
    def is_identity(self):
        return self.yaw == 0.0 and self.translation == (0.0, 0.0, 0.0)


IDENTITY = Transform()


class TriangleMesh:
    """Vertices, vertex-index triangles and one material index per triangle."""

    def __init__(self, name, vertices, triangles, materials):
        self.name = name
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
        self.materials = np.ascontiguousarray(materials, dtype=np.int64).reshape(-1)
        if len(self.materials) != len(self.triangles):
            raise ValueError("need exactly one material index per triangle")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError(f"mesh {name!r} has non-finite vertices")
        if len(self.triangles) and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise ValueError(f"mesh {name!r} has vertex indices out of range")

    def __len__(self):
        return len(self.triangles)

    def __eq__(self, other):
        if not isinstance(other, TriangleMesh):
            return NotImplemented
        return (self.name == other.name
                and np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.triangles, other.triangles)
                and np.array_equal(self.materials, other.materials))

    def __repr__(self):
        return f"TriangleMesh({self.name!r}, {len(self.vertices)} vertices, {len(self)} triangles)"

    def corners(self, vertices=None):
        """(T, 3, 3) array of triangle corner positions."""
        v = self.vertices if vertices is None else vertices
        return v[self.triangles]

    def areas(self, vertices=None):
        c = self.corners(vertices)
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def is_closed(self):
        """True if every undirected edge is shared by exactly two triangles."""
        if len(self.triangles) == 0:
            return False
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges.sort(axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def signed_volume(self, vertices=None):
        c = self.corners(vertices)
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)


@dataclass(eq=False)
class SceneObject:
    id: int
    mesh: TriangleMesh
    transform: Transform = IDENTITY
    dynamic: bool = False
    occluder: bool = False

    def world_vertices(self):
        if self.transform.is_identity:
            return self.mesh.vertices
        return self.transform.apply(self.mesh.vertices)

    def __eq__(self, other):
        if not isinstance(other, SceneObject):
            return NotImplemented
        return (self.id == other.id and self.mesh == other.mesh
                and self.transform == other.transform
                and self.dynamic == other.dynamic and self.occluder == other.occluder)


@dataclass
class SourceSpec:
    id: int
    position: tuple
    gain: float = 1.0
    signal: str | None = None
    near_field_enabled: bool = False

    def __post_init__(self):
        self.position = as_vec3(self.position, "source position")
        self.gain = float(self.gain)
        if not (self.gain >= 0.0 and math.isfinite(self.gain)):
            raise ValueError(f"source {self.id}: gain must be finite and >= 0")


@dataclass
class ListenerSpec:
    position: tuple = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    head_radius: float = 0.0875

    def __post_init__(self):
        self.position = as_vec3(self.position, "listener position")
        self.yaw = float(self.yaw)
        self.head_radius = float(self.head_radius)
        if not 0.05 < self.head_radius < 0.15:
            raise ValueError(f"head_radius {self.head_radius} outside (0.05, 0.15)")


@dataclass(eq=False)
class Scene:
    objects: list
    material_table: MaterialTable
    sources: list = field(default_factory=list)
    listener: ListenerSpec = field(default_factory=ListenerSpec)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError("object ids must be unique")
        sids = [s.id for s in self.sources]
        if len(set(sids)) != len(sids):
            raise SceneError("source ids must be unique")
        if not any(not o.dynamic for o in self.objects):
            raise SceneError("a scene needs at least one static object")
        n = len(self.material_table)
        for o in self.objects:
            if len(o.mesh) and (o.mesh.materials.min() < 0 or o.mesh.materials.max() >= n):
                raise SceneError(f"object {o.id}: material index out of range")

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.objects == other.objects
                and self.material_table == other.material_table
                and self.sources == other.sources
                and self.listener == other.listener)

    @property
    def static_objects(self):
        return [o for o in self.objects if not o.dynamic]

    def object(self, object_id):
        for o in self.objects:
            if o.id == object_id:
                return o
        raise KeyError(f"unknown object id {object_id}")

    def source(self, source_id):
        for s in self.sources:
            if s.id == source_id:
                return s
        raise KeyError(f"unknown source id {source_id}")

    @property
    def bounds(self):
        """(min corner, max corner) over all transformed vertices."""
        pts = [o.world_vertices() for o in self.objects if len(o.mesh.vertices)]
        if not pts:
            zero = np.zeros(3)
            return zero, zero.copy()
        allp = np.concatenate(pts)
        return allp.min(axis=0), allp.max(axis=0)

    @property
    def static_bounds(self):
        """(min corner, max corner) over the static objects only."""
        pts = [o.world_vertices() for o in self.static_objects if len(o.mesh.vertices)]
        if not pts:
            zero = np.zeros(3)
            return zero, zero.copy()
        allp = np.concatenate(pts)
        return allp.min(axis=0), allp.max(axis=0)

    def static_hash(self):
        """Content hash of everything baking depends on.

        Covers static geometry in world space and the material table; dynamic
        objects, sources and the listener are excluded.
        """
        h = hashlib.sha256()
        for o in sorted(self.static_objects, key=lambda o: o.id):
            h.update(np.int64(o.id).tobytes())
            h.update(np.ascontiguousarray(o.mesh.corners(o.world_vertices()), "<f8").tobytes())
            h.update(np.ascontiguousarray(o.mesh.materials, "<i8").tobytes())
            h.update(b"o" if o.occluder else b"-")
        for m in self.material_table.materials:
            h.update(m.name.encode())
            h.update(np.asarray(m.absorption + m.scattering, "<f8").tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------
# parsing

def _split_fields(tokens):
    positional, named = [], {}
    for tok in tokens:
        if "=" in tok:
            k, _, v = tok.partition("=")
            named[k] = v
        else:
            positional.append(tok)
    return positional, named


class _Parser:
    def __init__(self, text, base_dir, source, strict):
        self.lines = text.splitlines()
        self.base_dir = base_dir
        self.source = source
        self.strict = strict
        self.lineno = 0
        self.table = builtin_material_table()
        self.meshes = {}
        self.pending_faces = {}
        self.objects = []
        self.sources = []
        self.listener = None
        self.warnings = []

    def error(self, message, field=None):
        return SceneError(message, self.source, self.lineno, field)

    def number(self, text, field):
        try:
            v = float(text)
        except ValueError:
            raise self.error(f"expected a number, got {text!r}", field) from None
        if not math.isfinite(v):
            raise self.error(f"non-finite value {text!r}", field)
        return v

    def integer(self, text, field):
        try:
            return int(text)
        except ValueError:
            raise self.error(f"expected an integer, got {text!r}", field) from None

    def numbers(self, text, n, field):
        parts = text.split(",")
        if len(parts) != n:
            raise self.error(f"expected {n} comma-separated values, got {len(parts)}", field)
        return tuple(self.number(p, field) for p in parts)

    def path(self, text):
        return os.path.normpath(os.path.join(self.base_dir, text))

    def material_index(self, name, field):
        try:
            return self.table.index(name)
        except KeyError:
            raise self.error(f"unknown material {name!r}", field) from None

    def face_material(self, spec, count, field):
        # spec is ("usemtl", name) or ("label", label); labels resolve at
        # the end once every semantic line has been read.
        kind, value = spec
        if kind == "usemtl":
            return [("idx", self.material_index(value, field))] * count
        return [("label", value, self.lineno)] * count

    def lines_iter(self):
        while self.lineno < len(self.lines):
            raw = self.lines[self.lineno]
            self.lineno += 1
            line = raw.split("#", 1)[0].strip()
            if line:
                yield line.split()

    def parse(self):
        it = self.lines_iter()
        first = next(it, None)
        if first is None or first[0] != "roomscene":
            raise self.error("missing 'roomscene <version>' header")
        if len(first) != 2 or first[1] != str(SCENE_FORMAT_VERSION):
            raise self.error(f"unsupported scene version {' '.join(first[1:])!r}", "version")
        for tokens in it:
            head, rest = tokens[0], tokens[1:]
            handler = getattr(self, "do_" + head, None)
            if handler is None:
                raise self.error(f"unknown directive {head!r}")
            if head == "mesh":
                handler(rest, it)
            else:
                handler(rest)
        return self.finish()

    def do_material(self, rest):
        pos, named = _split_fields(rest)
        if len(pos) != 1:
            raise self.error("usage: material NAME absorption=... scattering=...")
        for key in ("absorption", "scattering"):
            if key not in named:
                raise self.error(f"missing {key}", key)
        absorption = self.numbers(named["absorption"], N_BANDS, "absorption")
        scattering = self.numbers(named["scattering"], N_BANDS, "scattering")
        try:
            self.table.put(AcousticMaterial(pos[0], absorption, scattering))
        except MaterialError as exc:
            raise self.error(str(exc), "material") from None

    def do_semantic(self, rest):
        if len(rest) != 2:
            raise self.error("usage: semantic LABEL MATERIAL")
        self.material_index(rest[1], "material")
        self.table.semantic_map[rest[0]] = rest[1]

    def do_default_material(self, rest):
        if len(rest) != 1:
            raise self.error("usage: default_material MATERIAL")
        self.material_index(rest[0], "material")
        self.table.default = rest[0]

    def do_mesh(self, rest, it):
        pos, named = _split_fields(rest)
        if len(pos) != 1:
            raise self.error("usage: mesh NAME [obj=PATH ...]")
        name = pos[0]
        if name in self.meshes:
            raise self.error(f"duplicate mesh {name!r}", "name")
        if "obj" in named:
            spec = ("usemtl", named["usemtl"]) if "usemtl" in named else (
                ("label", named["label"]) if "label" in named else None)
            if spec is not None and spec[0] == "usemtl":
                self.material_index(spec[1], "usemtl")
            verts, faces, mats = self.read_obj(self.path(named["obj"]), spec)
        else:
            verts, faces, mats = self.read_inline(it)
        self.meshes[name] = (verts, faces, mats, self.lineno)

    def read_inline(self, it):
        verts, faces, mats = [], [], []
        spec = None
        start = self.lineno
        for tokens in it:
            head = tokens[0]
            if head == "end":
                return verts, faces, mats
            if head == "v":
                if len(tokens) != 4:
                    raise self.error("vertex needs 3 coordinates", "v")
                verts.append(tuple(self.number(t, "v") for t in tokens[1:]))
            elif head == "f":
                if len(tokens) != 4:
                    raise self.error("face needs 3 vertex indices", "f")
                idx = [self.integer(t, "f") for t in tokens[1:]]
                for i in idx:
                    if not 0 <= i < len(verts):
                        raise self.error(f"vertex index {i} out of range", "f")
                faces.append(idx)
                mats.extend(self.face_material(spec, 1, "f") if spec else [("default",)])
            elif head in ("usemtl", "label"):
                if len(tokens) != 2:
                    raise self.error(f"usage: {head} NAME", head)
                if head == "usemtl":
                    self.material_index(tokens[1], "usemtl")
                spec = (head, tokens[1])
            else:
                raise self.error(f"unexpected {head!r} inside mesh block")
        self.lineno = start
        raise self.error("mesh block not closed by 'end'")

    def read_obj(self, path, spec):
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise self.error(f"cannot read mesh file {path!r}: {exc.strerror}", "obj") from None
        verts, faces, mats = [], [], []
        label = None
        for n, raw in enumerate(text.splitlines(), 1):
            tokens = raw.split("#", 1)[0].split()
            if not tokens:
                continue
            try:
                if tokens[0] == "v":
                    verts.append(tuple(float(t) for t in tokens[1:4]))
                elif tokens[0] == "f":
                    idx = []
                    for t in tokens[1:]:
                        i = int(t.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    if any(not 0 <= i < len(verts) for i in idx):
                        raise ValueError("vertex index out of range")
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
                        if label is not None:
                            mats.append(("label", label, self.lineno))
                        elif spec is not None:
                            mats.extend(self.face_material(spec, 1, "obj"))
                        else:
                            mats.append(("default",))
                elif tokens[0] == "usemtl":
                    label = tokens[1]
            except (ValueError, IndexError) as exc:
                raise SceneError(f"bad OBJ line: {exc}", path, n) from None
        return verts, faces, mats

    def do_object(self, rest):
        pos, named = _split_fields(rest)
        if len(pos) < 1:
            raise self.error("usage: object ID mesh=NAME ...")
        oid = self.integer(pos[0], "id")
        flags = set(pos[1:])
        unknown = flags - {"dynamic", "occluder"}
        if unknown:
            raise self.error(f"unknown flag {sorted(unknown)[0]!r}")
        if "mesh" not in named:
            raise self.error("missing mesh", "mesh")
        if named["mesh"] not in self.meshes:
            raise self.error(f"unknown mesh {named['mesh']!r}", "mesh")
        translation = self.numbers(named.get("translate", "0,0,0"), 3, "translate")
        yaw = self.number(named.get("yaw", "0"), "yaw")
        if any(o[0] == oid for o in self.objects):
            raise self.error(f"duplicate object id {oid}", "id")
        self.objects.append((oid, named["mesh"], Transform(translation, yaw),
                             "dynamic" in flags, "occluder" in flags))

    def do_source(self, rest):
        pos, named = _split_fields(rest)
        if len(pos) < 1 or "position" not in named:
            raise self.error("usage: source ID position=X,Y,Z ...")
        sid = self.integer(pos[0], "id")
        flags = set(pos[1:])
        if flags - {"nearfield"}:
            raise self.error(f"unknown flag {sorted(flags - {'nearfield'})[0]!r}")
        gain = self.number(named.get("gain", "1"), "gain")
        if gain < 0:
            raise self.error("gain must be >= 0", "gain")
        if any(s.id == sid for s in self.sources):
            raise self.error(f"duplicate source id {sid}", "id")
        signal = self.path(named["signal"]) if "signal" in named else None
        self.sources.append(SourceSpec(sid, self.numbers(named["position"], 3, "position"),
                                       gain, signal, "nearfield" in flags))

    def do_listener(self, rest):
        pos, named = _split_fields(rest)
        if pos or "position" not in named:
            raise self.error("usage: listener position=X,Y,Z [yaw=R] [head_radius=H]")
        try:
            self.listener = ListenerSpec(self.numbers(named["position"], 3, "position"),
                                         self.number(named.get("yaw", "0"), "yaw"),
                                         self.number(named.get("head_radius", "0.0875"),
                                                     "head_radius"))
        except ValueError as exc:
            if isinstance(exc, SceneError):
                raise
            raise self.error(str(exc), "head_radius") from None

    def finish(self):
        meshes = {}
        default_idx = self.table.default_index
        for name, (verts, faces, mats, lineno) in self.meshes.items():
            indices = []
            for t, m in enumerate(mats):
                if m[0] == "idx":
                    indices.append(m[1])
                elif m[0] == "default":
                    indices.append(default_idx)
                else:
                    target = self.table.semantic_map.get(m[1])
                    if target is None:
                        w = MaterialWarning(t, m[1], self.table.default)
                        self.warnings.append(f"mesh {name!r}: {w}")
                        indices.append(default_idx)
                    else:
                        indices.append(self.table.index(target))
            try:
                mesh = TriangleMesh(name, np.array(verts, dtype=np.float64).reshape(-1, 3),
                                    np.array(faces, dtype=np.int64).reshape(-1, 3), indices)
            except ValueError as exc:
                raise SceneError(str(exc), self.source, lineno) from None
            if self.strict and len(mesh):
                areas = mesh.areas()
                bad = np.flatnonzero(areas <= MIN_TRIANGLE_AREA)
                if len(bad):
                    raise SceneError(f"mesh {name!r}: triangle {int(bad[0])} is degenerate "
                                     f"(area {areas[bad[0]]:.3g} m^2)", self.source, lineno)
            meshes[name] = mesh
        for w in self.warnings:
            log.warning("%s", w)
        objects = [SceneObject(oid, meshes[m], tr, dyn, occ)
                   for oid, m, tr, dyn, occ in self.objects]
        self.lineno = None
        try:
            self.table.check()
            return Scene(objects, self.table, self.sources,
                         self.listener or ListenerSpec(), self.warnings)
        except (SceneError, MaterialError) as exc:
            raise SceneError(str(exc), self.source) from None


def parse_scene(text, base_dir=".", source="<string>", strict=True):
    """Parse scene text. ``strict=False`` keeps degenerate triangles (for linting)."""
    return _Parser(text, base_dir, source, strict).parse()


def load_scene(path, strict=True):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise SceneError(f"cannot read scene: {exc.strerror}", path) from None
    return parse_scene(text, os.path.dirname(os.path.abspath(path)), str(path), strict)


def dump_scene(scene):
    """Serialize ``scene`` to text that parses back to an equal scene."""
    out = [f"roomscene {SCENE_FORMAT_VERSION}"]
    table = scene.material_table
    for m in table.materials:
        out.append(f"material {m.name} absorption={','.join(map(repr, m.absorption))} "
                   f"scattering={','.join(map(repr, m.scattering))}")
    for label, target in table.semantic_map.items():
        out.append(f"semantic {label} {target}")
    out.append(f"default_material {table.default}")
    seen = set()
    for o in scene.objects:
        mesh = o.mesh
        if mesh.name in seen:
            continue
        seen.add(mesh.name)
        out.append(f"mesh {mesh.name}")
        out.extend(f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in mesh.vertices)
        current = None
        for (a, b, c), m in zip(mesh.triangles, mesh.materials):
            if m != current:
                out.append(f"usemtl {table[int(m)].name}")
                current = m
            out.append(f"f {a} {b} {c}")
        out.append("end")
    for o in scene.objects:
        t = o.transform
        line = (f"object {o.id} mesh={o.mesh.name} "
                f"translate={','.join(map(repr, t.translation))} yaw={t.yaw!r}")
        if o.dynamic:
            line += " dynamic"
        if o.occluder:
            line += " occluder"
        out.append(line)
    for s in scene.sources:
        line = f"source {s.id} position={','.join(map(repr, s.position))} gain={s.gain!r}"
        if s.signal is not None:
            line += f" signal={s.signal}"
        if s.near_field_enabled:
            line += " nearfield"
        out.append(line)
    lis = scene.listener
    out.append(f"listener position={','.join(map(repr, lis.position))} "
               f"yaw={lis.yaw!r} head_radius={lis.head_radius!r}")
    return "\n".join(out) + "\n"


def save_scene(scene, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_scene(scene))


# --------------------------------------------------------------------------
# analysis

@dataclass
class SurfaceStatistics:
    total_area: float
    band_avg_absorption: np.ndarray
    volume_estimate: float | None
    closed: bool


def surface_statistics(scene):
    """Area, area-weighted absorption and enclosed volume of the static geometry.

    The volume comes from the divergence theorem and is only reported when
    every static mesh is closed; otherwise ``volume_estimate`` is None and
    ``closed`` is False.
    """
    absorption = scene.material_table.absorption_array()
    total = 0.0
    weighted = np.zeros(N_BANDS)
    signed = 0.0
    closed = True
    for o in scene.static_objects:
        wv = o.world_vertices()
        areas = o.mesh.areas(wv)
        total += float(areas.sum())
        weighted += areas @ absorption[o.mesh.materials] if len(areas) else 0.0
        if o.mesh.is_closed():
            signed += o.mesh.signed_volume(wv)
        else:
            closed = False
    avg = weighted / total if total > 0 else np.zeros(N_BANDS)
    return SurfaceStatistics(total, avg, abs(signed) if closed else None, closed)


@dataclass(frozen=True)
class ValidationIssue:
    severity: str        # "error" or "warning"
    message: str

    def __str__(self):
        return f"{self.severity}: {self.message}"


def validate_scene(scene):
    """Lint a scene.

    Degenerate triangles are errors. Open static geometry and faces whose
    material had to fall back to the default are warnings.
    """
    issues = []
    for o in scene.objects:
        areas = o.mesh.areas()
        for t in np.flatnonzero(areas <= MIN_TRIANGLE_AREA):
            issues.append(ValidationIssue(
                "error", f"object {o.id}: triangle {int(t)} is degenerate "
                         f"(area {areas[t]:.3g} m^2)"))
    open_ids = [o.id for o in scene.static_objects if not o.mesh.is_closed()]
    if open_ids:
        issues.append(ValidationIssue(
            "warning", f"static geometry is not closed (objects {open_ids}); "
                       "volume is unavailable"))
    issues.extend(ValidationIssue("warning", str(w)) for w in scene.warnings)
    return issues


# --------------------------------------------------------------------------
# construction helpers

def box_mesh(name, lo, hi, material=0, inward=True):
    """Axis-aligned box of 12 triangles; normals point inward by default."""
    (x0, y0, z0), (x1, y1, z1) = as_vec3(lo), as_vec3(hi)
    v = np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                  [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]])
    # outward-facing winding
    quads = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (2, 3, 7, 6), (1, 2, 6, 5), (0, 4, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    tris = np.array(tris)
    if inward:
        tris = tris[:, ::-1]
    mats = np.broadcast_to(np.asarray(material, dtype=np.int64), (12,))
    return TriangleMesh(name, v, tris, mats)


def quad_mesh(name, corner, edge_u, edge_v, material=0):
    p = np.asarray(corner, dtype=np.float64)
    u, w = np.asarray(edge_u, dtype=np.float64), np.asarray(edge_v, dtype=np.float64)
    v = np.array([p, p + u, p + u + w, p + w])
    return TriangleMesh(name, v, [(0, 1, 2), (0, 2, 3)], [material, material])


def shoebox_scene(size=(5.0, 4.0, 3.0), absorption=0.2, scattering=0.5, name="room"):
    """Closed shoebox room with one uniform material, corner at the origin."""
    table = builtin_material_table()
    if np.ndim(absorption) == 0:
        mat = AcousticMaterial.uniform(name + "_surface", absorption, scattering)
    else:
        sc = (scattering,) * N_BANDS if np.ndim(scattering) == 0 else scattering
        mat = AcousticMaterial(name + "_surface", absorption, sc)
    idx = table.put(mat)
    mesh = box_mesh(name, (0.0, 0.0, 0.0), size, idx)
    lx, ly, lz = size
    return Scene([SceneObject(0, mesh)], table,
                 listener=ListenerSpec((lx / 2, ly / 2, min(1.2, lz / 2))))
