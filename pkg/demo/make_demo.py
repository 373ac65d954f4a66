"""Write the demo scene, trajectory and source signals into this directory.

Run ``python3 make_demo.py``, then::

    roomtone validate room.scene
    roomtone bake room.scene room.baked --spacing 2.5 --seed 1
    roomtone render room.scene room.baked walk.traj walk.wav
"""

import os

import numpy as np

from roomtone.scene import box_mesh, quad_mesh
from roomtone.wavio import WavSpec, write_wav

HERE = os.path.dirname(os.path.abspath(__file__))
FS = 44100


def mesh_block(mesh, labels):
    lines = [f"mesh {mesh.name}"]
    lines += [f"  v {x:g} {y:g} {z:g}" for x, y, z in mesh.vertices]
    last = None
    for (a, b, c), lab in zip(mesh.triangles, labels):
        if lab != last:
            kw, _, val = lab.partition(":")
            lines.append(f"  usemtl {val}" if kw == "mtl" else f"  label {lab}")
            last = lab
        lines.append(f"  f {a} {b} {c}")
    lines.append("end")
    return lines


def scene_text():
    room = box_mesh("room", (0, 0, 0), (6, 5, 3))
    # box_mesh face order: floor, ceiling, then four walls (two triangles each)
    labels = ["floor"] * 2 + ["ceiling"] * 2 + ["wall"] * 8
    panel = quad_mesh("panel", (3.0, 1.0, 0.0), (0.0, 2.0, 0.0), (0.0, 0.0, 2.2))
    door = quad_mesh("door", (0.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 2.0))
    out = ["roomscene 1", "# 6 x 5 x 3 m room with a freestanding panel and a door", ""]
    out += ["material panel_felt absorption=0.10,0.25,0.55,0.80,0.85,0.90 "
            "scattering=0.10,0.15,0.25,0.40,0.50,0.55", ""]
    out += mesh_block(room, labels) + [""]
    out += mesh_block(panel, ["mtl:panel_felt"] * 2) + [""]
    out += mesh_block(door, ["door"] * 2) + [""]
    out += ["object 0 mesh=room",
            "object 1 mesh=panel occluder",
            "object 2 mesh=door translate=4.5,2.5,0 dynamic occluder",
            "",
            "source 1 position=1.0,2.5,1.5",
            "source 2 position=5.0,4.0,1.0 gain=0.5",
            "listener position=1.5,1.0,1.6 yaw=0"]
    return "\n".join(out) + "\n"


TRAJECTORY = """\
# listener walks along the room, passing behind the panel
duration 10
listener 0   1.5 1.0 1.6  0.0
listener 4   4.5 1.5 1.6  1.5708
listener 10  4.5 4.0 1.6  3.1416
source 0   1 start tone.wav 0.8
source 0   2 start noise.wav 0.3
source 6   1 move 2.0 4.0 1.5
source 8   2 stop
"""


def main():
    with open(os.path.join(HERE, "room.scene"), "w") as fh:
        fh.write(scene_text())
    with open(os.path.join(HERE, "walk.traj"), "w") as fh:
        fh.write(TRAJECTORY)
    t = np.arange(10 * FS) / FS
    tone = 0.5 * np.sin(2 * np.pi * 220 * t) * (0.5 + 0.5 * np.sin(2 * np.pi * 0.5 * t))
    noise = np.random.default_rng(3).uniform(-0.5, 0.5, 10 * FS)
    write_wav(os.path.join(HERE, "tone.wav"), tone, WavSpec(FS, 1, "float32"))
    write_wav(os.path.join(HERE, "noise.wav"), noise, WavSpec(FS, 1, "pcm16"))


if __name__ == "__main__":
    main()
