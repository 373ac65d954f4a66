"""Acceptance suite: the ten end-to-end criteria, each at its stated tolerance.

Every criterion prints one ``PASS``/``FAIL`` line with its measured value,
both in the pytest summary and when run directly::

    python3 tests/test_acceptance.py
"""

import importlib.util
import math
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from conftest import panel, pink  # noqa: E402
from oracles import (band_energy, brute_first_hit, eyring_rt60, schroeder_t60,  # noqa: E402
                     world_triangles)
from roomtone.bake import BakeConfig, bake  # noqa: E402
from roomtone.binaural import Spatializer, spatialize  # noqa: E402
from roomtone.cli import main  # noqa: E402
from roomtone.dsp import design_fdn, fdn_process  # noqa: E402
from roomtone.engine import Engine, RenderConfig, select_probe  # noqa: E402
from roomtone.materials import builtin_material_table  # noqa: E402
from roomtone.scene import (ListenerSpec, Scene, SceneObject, SourceSpec, Transform,  # noqa: E402
                            TriangleMesh, box_mesh, shoebox_scene)
from roomtone.spatial import SpatialIndex  # noqa: E402
from roomtone.wavio import read_wav  # noqa: E402

FS = 44100
RESULTS = []
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def report(number, name, ok, detail, seconds, budget=None):
    timing = f"{seconds:.1f} s" + (f" (budget {budget:g} s)" if budget else "")
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}; {timing}"
    RESULTS.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    if tr is not None and RESULTS:
        tr.write_line("")
        tr.write_line("acceptance criteria")
        for line in RESULTS:
            tr.write_line(line)


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def open_field(src, extra=(), lis=(0.0, 0.0, 0.0)):
    table = builtin_material_table()
    room = box_mesh("room", (-10, -10, -10), (10, 10, 10), 0)
    return Scene([SceneObject(0, room)] + list(extra), table, [SourceSpec(1, src)],
                 ListenerSpec(lis))


def render_signal(engine, x):
    n = engine.config.block_size
    engine.attach_signal(1, x)
    return engine.step(math.ceil(len(x) / n))[:len(x)]


# ---------------------------------------------------------------- 1

def test_01_distance_law():
    t0 = time.perf_counter()
    x = pink(2 * FS, seed=11)
    cfg = RenderConfig(reverb_enabled=False)
    levels = [rms(render_signal(Engine(open_field((d, 0.0, 0.0)), None, cfg), x)[FS // 2:])
              for d in (1.0, 2.0)]
    drop = 20 * math.log10(levels[0] / levels[1])
    dt = time.perf_counter() - t0
    ok = abs(drop - 6.02) <= 0.1 and dt < 5
    assert report(1, "distance law", ok, f"1 m -> 2 m drop {drop:.3f} dB (6.02 +/- 0.1)", dt, 5)


# ---------------------------------------------------------------- 2

EYRING_CASES = [((7.0, 5.0, 3.0), 0.1), ((5.0, 4.0, 3.0), 0.2), ((4.0, 3.0, 2.5), 0.4)]


def test_02_eyring_agreement():
    t0 = time.perf_counter()
    worst, details = 0.0, []
    for size, alpha in EYRING_CASES:
        scene = shoebox_scene(size, alpha, 0.5)
        data = bake(scene, BakeConfig(probe_count=1, rays_per_probe=10_000, rng_seed=1))
        target = eyring_rt60(size, alpha)
        err = max(abs(v / target - 1) for v in data.probes[0].rt60)
        worst = max(worst, err)
        details.append(f"a={alpha}: target {target:.4f} s, worst {100 * err:+.1f}%")
    target_02 = eyring_rt60((5.0, 4.0, 3.0), 0.2)
    dt = time.perf_counter() - t0
    ok = worst <= 0.15 and abs(target_02 - 0.4605) < 5e-4 and dt < 120
    assert report(2, "Eyring agreement", ok, "; ".join(details) + " (within 15%)", dt, 120)


# ---------------------------------------------------------------- 3

def test_03_fdn_decay():
    t0 = time.perf_counter()
    worst = 0.0
    for rt60 in (0.3, 0.5, 1.0):
        bank = design_fdn([rt60] * 6, FS)
        for band in range(6):
            bank.reset()
            x = np.zeros((6, int(2.5 * rt60 * FS)))
            x[band, 0] = 1.0
            ir = fdn_process(bank, x)
            t60 = schroeder_t60((ir ** 2).sum(axis=0), 1 / FS)
            worst = max(worst, abs(t60 / rt60 - 1))
    dt = time.perf_counter() - t0
    ok = worst <= 0.10 and dt < 30
    assert report(3, "FDN decay", ok, f"worst band T60 error {100 * worst:.1f}% (within 10%)",
                  dt, 30)


# ---------------------------------------------------------------- 4

def _binaural(az, x):
    return spatialize(Spatializer(FS), x, az)


def test_04_binaural_cues():
    t0 = time.perf_counter()
    x = np.zeros(512)
    x[64] = 1.0
    y = _binaural(math.pi / 2, x)
    xc = np.correlate(y[0], y[1], mode="full")
    lag = int(np.argmax(xc)) - (len(x) - 1)
    noise = pink(4096, seed=12)
    mirror = all(np.array_equal(_binaural(a, noise)[::-1], _binaural(-a, noise))
                 for a in np.linspace(0.05, math.pi - 0.05, 24))
    front = _binaural(0.0, noise)
    frontal = np.array_equal(front[0], front[1])
    dt = time.perf_counter() - t0
    ok = abs(lag - 29) <= 1 and mirror and frontal
    assert report(4, "binaural cues", ok, f"+90 deg lag {lag} samples (29 +/- 1), mirror "
                  f"bit-exact {mirror}, frontal identical {frontal}", dt)


# ---------------------------------------------------------------- 5

def test_05_occlusion():
    t0 = time.perf_counter()
    x = pink(2 * FS, seed=13)
    energy, tilt = [], []
    for k in range(3):
        panels = [panel(10 + i, 0.8 + 0.8 * i, lo=(-1.0, -1.0)) for i in range(k)]
        eng = Engine(open_field((3.0, 0.0, 0.0), panels), None)
        y = render_signal(eng, x)[FS // 2:].sum(axis=1)
        assert eng.occluder_count(1) == k
        energy.append(float(np.sum(y ** 2)))
        tilt.append(band_energy(y, FS, 2000, FS / 2) / band_energy(y, FS, 0, 500))
    dt = time.perf_counter() - t0
    ok = energy[0] > energy[1] > energy[2] and tilt[1] < tilt[0]
    db = ", ".join(f"{10 * math.log10(e / energy[0]):.2f}" for e in energy)
    assert report(5, "occlusion", ok, f"energy vs k=0..2 [{db}] dB, HF/LF ratio "
                  f"{tilt[0]:.3f} -> {tilt[1]:.3f}", dt)


# ---------------------------------------------------------------- 6

def test_06_image_source_timing():
    t0 = time.perf_counter()
    box = shoebox_scene((4.0, 4.0, 4.0), 0.2, 0.5)
    scene = Scene(box.objects, box.material_table, [SourceSpec(1, (2, 2, 2))],
                  ListenerSpec((2, 2, 2)))
    baked = bake(scene, BakeConfig(probe_count=1, rays_per_probe=2000, rng_seed=2))
    # the probe sits at listening height; its proxy box is what matters
    assert np.allclose(baked.probes[0].box_min, 0, atol=0.05)
    assert np.allclose(baked.probes[0].box_max, 4, atol=0.05)
    x = np.zeros(4096)
    x[0] = 1.0
    env = np.abs(render_signal(Engine(scene, baked), x)).sum(axis=1)
    t_direct = int(np.argmax(env))
    later = env.copy()
    later[:t_direct + 20] = 0.0
    gap_ms = (int(np.argmax(later)) - t_direct) / FS * 1000
    dt = time.perf_counter() - t0
    ok = abs(gap_ms - 11.66) <= 1.0
    assert report(6, "image-source timing", ok,
                  f"reflection cluster {gap_ms:.2f} ms after direct (11.66 +/- 1)", dt)


# ---------------------------------------------------------------- 7

def _soup(n, seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0, 10, (n, 1, 3))
    corners = (centers + rng.normal(0, 0.6, (n, 3, 3))).reshape(-1, 3)
    return TriangleMesh("soup", corners, np.arange(3 * n).reshape(-1, 3), np.zeros(n, int))


def test_07_oracle_equivalence():
    t0 = time.perf_counter()
    table = builtin_material_table()
    objs = [SceneObject(0, _soup(18_000, 1)),
            SceneObject(1, _soup(2_000, 2), Transform((0.5, -0.5, 0.2), 0.7), dynamic=True)]
    scene = Scene(objs, table)
    index = SpatialIndex(scene, include_dynamic=True)
    rng = np.random.default_rng(3)
    o = rng.uniform(-1, 11, (1000, 3))
    d = rng.normal(size=(1000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t, obj, tri = index.raycast_batch(o, d)
    tris, keys = world_triangles(scene)
    ray_bad = 0
    for i in range(1000):
        bt, key = brute_first_hit(tris, keys, o[i], d[i])
        if bt is None:
            ray_bad += obj[i] != -1
        else:
            ray_bad += not (abs(t[i] - bt) <= 1e-6 and (obj[i], tri[i]) == key)

    from test_engine import probe
    probe_bad = 0
    for _ in range(100):
        pos = rng.uniform(-5, 5, (50, 3)).round(1)
        ps = [probe(int(i), p) for i, p in zip(rng.permutation(50), pos)]
        lis = rng.uniform(-5, 5, 3).round(1)
        best = min((float(np.sum((np.array(p.position) - lis) ** 2)), p.id) for p in ps)[1]
        probe_bad += select_probe(ps, lis) != best
    dt = time.perf_counter() - t0
    ok = ray_bad == 0 and probe_bad == 0
    assert report(7, "oracle equivalence", ok, f"{len(keys)} triangles, 1000 rays: "
                  f"{ray_bad} mismatches; select_probe 100 configs: {probe_bad} mismatches", dt)


# ---------------------------------------------------------------- 8

def _demo():
    spec = importlib.util.spec_from_file_location("make_demo",
                                                  os.path.join(ROOT, "demo", "make_demo.py"))
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def _write_demo(path):
    demo = _demo()
    demo.HERE = str(path)
    demo.main()


def _cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, argv
    return code


def test_08_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    _write_demo(tmp_path)
    scene = tmp_path / "room.scene"
    bakes = []
    for i, threads in enumerate((1, 4)):
        out = tmp_path / f"b{i}.baked"
        _cli("bake", scene, out, "--probes", "3", "--rays", "3000", "--seed", "5",
             "--threads", threads)
        bakes.append(out.read_bytes())
    renders = []
    for i in range(2):
        out = tmp_path / f"r{i}.wav"
        _cli("render", scene, tmp_path / "b0.baked", tmp_path / "walk.traj", out)
        renders.append(out.read_bytes())
    capsys.readouterr()
    dt = time.perf_counter() - t0
    ok = bakes[0] == bakes[1] and renders[0] == renders[1]
    assert report(8, "determinism", ok, f"bake 1 vs 4 threads identical {bakes[0] == bakes[1]}, "
                  f"render twice identical {renders[0] == renders[1]}", dt)


# ---------------------------------------------------------------- 9

def test_09_real_time(tmp_path, capsys):
    t0 = time.perf_counter()
    _write_demo(tmp_path)
    scene = tmp_path / "room.scene"
    baked = tmp_path / "room.baked"
    _cli("bake", scene, baked, "--probes", "2", "--rays", "3000", "--seed", "1")
    capsys.readouterr()
    _cli("bench", scene, baked, "--sources", "4", "--seconds", "10", "--fs", FS,
         "--block", 1024)
    out = capsys.readouterr().out
    rtf = float([ln for ln in out.splitlines() if ln.startswith("RTF")][0].split()[1])
    stages = ", ".join(" ".join(ln.split()) for ln in out.splitlines() if ln.startswith("  "))
    dt = time.perf_counter() - t0
    print(out)
    assert report(9, "real-time factor", rtf >= 1.0,
                  f"4 sources, 44.1 kHz, block 1024: RTF {rtf:.2f} (>= 1.0) [{stages}]",
                  dt)


# ---------------------------------------------------------------- 10

def test_10_end_to_end(tmp_path, capsys):
    t0 = time.perf_counter()
    _write_demo(tmp_path)
    scene = tmp_path / "room.scene"
    _cli("validate", scene)
    _cli("bake", scene, tmp_path / "room.baked", "--spacing", "2.5", "--rays", "2000")
    out = tmp_path / "walk.wav"
    _cli("render", scene, tmp_path / "room.baked", tmp_path / "walk.traj", out)
    capsys.readouterr()
    y, spec = read_wav(out)
    finite = bool(np.all(np.isfinite(y)))
    dt = time.perf_counter() - t0
    ok = y.shape == (441000, 2) and spec.sample_rate == FS and finite and np.max(np.abs(y)) > 0
    assert report(10, "end-to-end smoke", ok, f"{y.shape[0]} frames x {y.shape[1]} channels "
                  f"(441000 expected), finite {finite}, peak {np.max(np.abs(y)):.3f}", dt)


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    print("\n".join(RESULTS))
    sys.exit(code)
