"""Acoustic materials and the built-in material table.

Coefficients are given for the octave bands centred at 125, 250, 500, 1000,
2000 and 4000 Hz. The absorption values follow the usual textbook tables for
these surface types; scattering values are engine constants chosen to give a
mildly diffuse field on hard surfaces and a strongly diffuse one on soft
furnishings. None of them are measured data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

N_BANDS = 6
BAND_CENTERS = (125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0)

DEFAULT_MATERIAL = "concrete_block_painted"


class MaterialError(ValueError):
    pass


def _coefficients(values, what, name):
    values = tuple(float(v) for v in values)
    if len(values) != N_BANDS:
        raise MaterialError(
            f"material {name!r}: expected {N_BANDS} {what} values, got {len(values)}")
    for v in values:
        if not math.isfinite(v) or v < 0.0 or v > 1.0:
            raise MaterialError(f"material {name!r}: {what} value {v!r} outside [0, 1]")
    return values


@dataclass(frozen=True)
class AcousticMaterial:
    """Per-band absorption and scattering coefficients of one surface type."""

    name: str
    absorption: tuple
    scattering: tuple

    def __post_init__(self):
        if not self.name or any(c.isspace() for c in self.name):
            raise MaterialError(f"invalid material name {self.name!r}")
        object.__setattr__(self, "absorption",
                           _coefficients(self.absorption, "absorption", self.name))
        object.__setattr__(self, "scattering",
                           _coefficients(self.scattering, "scattering", self.name))

    @classmethod
    def uniform(cls, name, absorption, scattering=0.0):
        return cls(name, (absorption,) * N_BANDS, (scattering,) * N_BANDS)


@dataclass
class MaterialTable:
    """Ordered materials plus the semantic label -> material name map.

    A triangle's material index is its position in ``materials``, so the
    order is part of the table's identity.
    """

    materials: list = field(default_factory=list)
    semantic_map: dict = field(default_factory=dict)
    default: str = DEFAULT_MATERIAL

    def __post_init__(self):
        seen = set()
        for m in self.materials:
            if m.name in seen:
                raise MaterialError(f"duplicate material {m.name!r}")
            seen.add(m.name)
        self.check()

    def check(self):
        names = {m.name for m in self.materials}
        if self.default not in names:
            raise MaterialError(f"default material {self.default!r} is not in the table")
        for label, target in self.semantic_map.items():
            if target not in names:
                raise MaterialError(
                    f"semantic label {label!r} maps to unknown material {target!r}")

    @property
    def names(self):
        return [m.name for m in self.materials]

    def __len__(self):
        return len(self.materials)

    def __getitem__(self, index):
        return self.materials[index]

    def index(self, name):
        for i, m in enumerate(self.materials):
            if m.name == name:
                return i
        raise KeyError(name)

    @property
    def default_index(self):
        return self.index(self.default)

    def put(self, material):
        """Add ``material``, replacing a same-named entry in place."""
        for i, m in enumerate(self.materials):
            if m.name == material.name:
                self.materials[i] = material
                return i
        self.materials.append(material)
        return len(self.materials) - 1

    def absorption_array(self):
        import numpy as np
        return np.array([m.absorption for m in self.materials], dtype=np.float64).reshape(-1, N_BANDS)

    def scattering_array(self):
        import numpy as np
        return np.array([m.scattering for m in self.materials], dtype=np.float64).reshape(-1, N_BANDS)

    def copy(self):
        return MaterialTable(list(self.materials), dict(self.semantic_map), self.default)


@dataclass(frozen=True)
class MaterialWarning:
    """An unmapped semantic label that fell back to the default material."""

    triangle: int
    label: str
    fallback: str

    def __str__(self):
        return (f"triangle {self.triangle}: unmapped label {self.label!r}, "
                f"using {self.fallback!r}")


def resolve_semantic_materials(labels, table):
    """Map per-triangle semantic labels to material indices.

    Labels missing from ``table.semantic_map`` get the default material and
    produce one :class:`MaterialWarning` each.

    Returns
    -------
    indices : list of int
    warnings : list of MaterialWarning
    """
    cache = {}
    indices = []
    warnings = []
    default_index = table.default_index
    for i, label in enumerate(labels):
        if label not in cache:
            target = table.semantic_map.get(label)
            cache[label] = table.index(target) if target is not None else None
        idx = cache[label]
        if idx is None:
            warnings.append(MaterialWarning(i, label, table.default))
            idx = default_index
        indices.append(idx)
    return indices, warnings


BUILTIN_MATERIALS = (
    AcousticMaterial("concrete_block_painted",
                     (0.10, 0.05, 0.06, 0.07, 0.09, 0.08),
                     (0.05, 0.05, 0.10, 0.10, 0.15, 0.20)),
    AcousticMaterial("glass",
                     (0.35, 0.25, 0.18, 0.12, 0.07, 0.04),
                     (0.05, 0.05, 0.05, 0.05, 0.05, 0.05)),
    AcousticMaterial("wood_panel",
                     (0.28, 0.22, 0.17, 0.09, 0.10, 0.11),
                     (0.10, 0.10, 0.10, 0.15, 0.20, 0.25)),
    AcousticMaterial("curtain_heavy",
                     (0.14, 0.35, 0.55, 0.72, 0.70, 0.65),
                     (0.30, 0.40, 0.50, 0.60, 0.70, 0.70)),
    AcousticMaterial("carpet",
                     (0.02, 0.06, 0.14, 0.37, 0.60, 0.65),
                     (0.10, 0.15, 0.20, 0.25, 0.30, 0.35)),
    AcousticMaterial("default",
                     (0.10, 0.10, 0.10, 0.10, 0.10, 0.10),
                     (0.20, 0.20, 0.20, 0.20, 0.20, 0.20)),
)

BUILTIN_SEMANTIC_MAP = {
    "wall": "concrete_block_painted",
    "ceiling": "concrete_block_painted",
    "window": "glass",
    "floor": "wood_panel",
    "door": "wood_panel",
    "curtain": "curtain_heavy",
    "carpet": "carpet",
    "rug": "carpet",
}


def builtin_material_table():
    return MaterialTable(list(BUILTIN_MATERIALS), dict(BUILTIN_SEMANTIC_MAP), DEFAULT_MATERIAL)
