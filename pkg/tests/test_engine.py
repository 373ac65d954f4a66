import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import panel, pink
from oracles import band_energy, brute_occluders
from roomtone.bake import ReverbProbe, BakedData
from roomtone.engine import (Engine, EngineError, RenderConfig, direct_params, image_sources,
                             occlusion_filter_params, select_probe)
from roomtone.scene import (ListenerSpec, Scene, SceneObject, SourceSpec, Transform, box_mesh,
                            shoebox_scene)

FS = 44100


def probe(pid, pos, lo=(0, 0, 0), hi=(4, 4, 4), refl=0.8 ** 0.5, rt60=0.5):
    return ReverbProbe(pid, tuple(pos), (rt60,) * 6, tuple(lo), tuple(hi),
                       tuple((refl,) * 6 for _ in range(6)))


def baked_for(*probes):
    return BakedData("x", {}, list(probes))


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def one_source_scene(src, lis=(0.0, 0.0, 0.0), yaw=0.0, room=(20.0, 20.0, 20.0), extra=()):
    """A big room centred on the origin, so walls never matter in direct-only runs."""
    base = shoebox_scene(room, 0.2, 0.5)
    half = np.array(room) / 2
    mat = int(base.objects[0].mesh.materials[0])
    objs = [SceneObject(0, box_mesh("room", -half, half, mat))] + list(extra)
    return Scene(objs, base.material_table, [SourceSpec(1, src)], ListenerSpec(lis, yaw))


def render(engine, x):
    n = engine.config.block_size
    engine.attach_signal(1, x)
    return engine.step(int(math.ceil(len(x) / n)))[:len(x)]


# ---------------------------------------------------------------- parameters

def test_config_validation():
    RenderConfig(block_size=64)
    for bad in (dict(block_size=1000), dict(block_size=32), dict(block_size=16384),
                dict(min_distance=0.0), dict(min_distance=2.0), dict(reflection_order=2)):
        with pytest.raises(ValueError):
            RenderConfig(**bad)


def test_select_probe_single_and_tie():
    assert select_probe([probe(4, (1, 1, 1))], (9, 9, 9)) == 4
    ps = [probe(7, (2, 0, 0)), probe(3, (-2, 0, 0))]
    assert select_probe(ps, (0, 0, 0)) == 3
    with pytest.raises(EngineError):
        select_probe([], (0, 0, 0))


def test_select_probe_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(100):
        pos = rng.uniform(-5, 5, (100, 3)).round(1)
        ps = [probe(int(i), p) for i, p in zip(rng.permutation(100), pos)]
        lis = rng.uniform(-5, 5, 3).round(1)
        d = [(float(np.sum((np.array(p.position) - lis) ** 2)), p.id) for p in ps]
        assert select_probe(ps, lis) == min(d)[1]


def test_direct_params_examples():
    cfg = RenderConfig()
    p = direct_params((1, 0, 0), (0, 0, 0), cfg, True)
    assert p.gain == 1.0 and p.nearfield_boost_db == 0.0
    p = direct_params((2, 0, 0), (0, 0, 0), cfg, True)
    assert p.gain == 0.5 and abs(20 * math.log10(p.gain) + 6.0206) < 1e-4
    p = direct_params((0.1, 0, 0), (0, 0, 0), cfg, True)
    assert p.clamped_distance == 0.25 and p.gain == 4.0 and p.nearfield_boost_db == 9.0
    assert direct_params((0.1, 0, 0), (0, 0, 0), cfg, False).nearfield_boost_db == 0.0
    p = direct_params((0.5, 0, 0), (0, 0, 0), cfg, True)
    assert abs(p.nearfield_boost_db - 20 * math.log10(2)) < 1e-12


def test_occlusion_params_examples():
    cfg = RenderConfig()
    p0 = occlusion_filter_params(0, cfg)
    assert (p0.occluders, p0.gain, p0.cutoff) == (0, 1.0, None)
    p1 = occlusion_filter_params(1, cfg)
    assert abs(p1.gain - 0.708) < 1e-3 and p1.cutoff == 4000.0
    p2 = occlusion_filter_params(2, cfg)
    assert abs(p2.gain - 0.501) < 1e-3 and p2.cutoff == 2000.0
    assert occlusion_filter_params(9, cfg) == occlusion_filter_params(4, cfg)


def test_image_sources_centre_of_cube():
    cfg = RenderConfig()
    refl = image_sources(probe(0, (2, 2, 2)), (2, 2, 2), (2, 2, 2), cfg)
    assert len(refl) == 6
    for r in refl:
        assert r.valid
        assert abs(r.delay - 4 / 343) < 1e-12
        assert abs(r.delay * 1000 - 11.66) < 0.01
        assert np.allclose(r.gains, 0.25 * math.sqrt(0.8))
        assert abs(r.gains[0] / 0.25 - 0.894) < 1e-3


def test_image_sources_pairwise_symmetry():
    cfg = RenderConfig()
    refl = image_sources(probe(0, (2, 2, 2)), (2, 2, 2), (2, 2, 2), cfg)
    for axis in range(3):
        assert refl[2 * axis].delay == refl[2 * axis + 1].delay


def test_image_sources_directions():
    cfg = RenderConfig()
    refl = image_sources(probe(0, (2, 2, 2)), (2.0, 2.0, 2.0), (2.0, 2.0, 2.0), cfg)
    # facing +x: the +x wall image is ahead, the +y wall image is on the left
    assert abs(refl[1].direction.azimuth) < 1e-12
    assert abs(refl[0].direction.azimuth - math.pi) < 1e-12
    assert abs(refl[3].direction.azimuth + math.pi / 2) < 1e-12
    assert abs(refl[5].direction.elevation - math.pi / 2) < 1e-12


def test_image_sources_outside_box_dropped():
    cfg = RenderConfig()
    refl = image_sources(probe(0, (2, 2, 2)), (6, 2, 2), (2, 2, 2), cfg)
    bad = [r for r in refl if not r.valid]
    assert bad and all(max(r.gains) == 0 for r in bad)
    direct = 4.0
    assert all(r.path_length >= direct for r in refl if r.valid)


@settings(max_examples=60, deadline=None)
@given(st.tuples(*[st.floats(0.1, 3.9)] * 3), st.tuples(*[st.floats(0.1, 3.9)] * 3))
def test_image_paths_never_shorter_inside_box(src, lis):
    # mirror geometry: inside the box no image path is shorter than the direct one
    for r in image_sources(probe(0, (2, 2, 2)), src, lis, RenderConfig()):
        assert r.valid and r.path_length >= math.dist(src, lis) - 1e-12


# ---------------------------------------------------------------- rendering

def test_silence_is_exact_zero(shoebox):
    scene = Scene(shoebox.objects, shoebox.material_table, [SourceSpec(1, (1, 1, 1))],
                  shoebox.listener)
    eng = Engine(scene, baked_for(probe(0, (2.5, 2, 1.2), hi=(5, 4, 3))))
    out = eng.step(6)
    assert out.shape == (6 * 1024, 2) and np.all(out == 0.0)


def test_direct_only_unity_rms():
    scene = one_source_scene((1.0, 0.0, 0.0))
    x = pink(FS * 2, seed=1)
    y = render(Engine(scene, None), x)
    tail = slice(FS // 2, None)
    for ch in range(2):
        assert abs(rms(y[tail, ch]) / rms(x[tail]) - 1.0) <= 0.05


def distance_drop(delay_enabled):
    cfg = RenderConfig(propagation_delay_enabled=delay_enabled, reverb_enabled=False)
    x = pink(FS * 2, seed=2)
    levels = []
    for d in (1.0, 2.0):
        y = render(Engine(one_source_scene((d, 0.0, 0.0)), None, cfg), x)
        levels.append(rms(y[FS // 2:]))
    return 20 * math.log10(levels[0] / levels[1])


def test_distance_law():
    assert abs(distance_drop(False) - 6.02) <= 0.1


def test_distance_law_with_propagation_delay():
    # the allpass fractional delay is flat, so the delay does not bias the level
    assert abs(distance_drop(True) - 6.02) <= 0.1


def test_propagation_delay():
    scene = one_source_scene((3.43, 0.0, 0.0))
    x = np.zeros(4096)
    x[0] = 1.0
    y = render(Engine(scene, None), x)
    # 10 ms of travel plus one sample of binaural allpass latency
    assert abs(int(np.argmax(np.abs(y[:, 0]))) - 442) <= 2


def test_near_field_boost():
    src = SourceSpec(1, (0.5, 0.0, 0.0), near_field_enabled=True)
    base = one_source_scene((0.5, 0.0, 0.0))
    scene = Scene(base.objects, base.material_table, [src], base.listener)
    cfg = RenderConfig(propagation_delay_enabled=False)
    x = pink(FS * 2, seed=3)
    y_on = render(Engine(scene, None, cfg), x)[FS // 2:, 0]
    y_off = render(Engine(one_source_scene((0.5, 0.0, 0.0)), None, cfg), x)[FS // 2:, 0]
    lo = band_energy(y_on, FS, 20, 150) / band_energy(y_off, FS, 20, 150)
    hi = band_energy(y_on, FS, 4000, 16000) / band_energy(y_off, FS, 4000, 16000)
    assert 10 * math.log10(lo) > 4.0
    assert abs(10 * math.log10(hi)) < 0.5


def occluded_scene(k):
    panels = [panel(10 + i, 0.5 + 0.5 * i, lo=(-1.0, -1.0)) for i in range(k)]
    return one_source_scene((3.0, 0.0, 0.0), extra=panels)


def occlusion_energies(ks=range(5)):
    x = pink(FS * 2, seed=4)
    res = []
    for k in ks:
        eng = Engine(occluded_scene(k), None)
        y = render(eng, x)[FS // 2:, 0]
        assert eng.occluder_count(1) == k
        res.append((float(np.sum(y ** 2)),
                    band_energy(y, FS, 2000, FS / 2) / band_energy(y, FS, 0, 500)))
    return res


def test_occlusion_monotone_and_tilt():
    res = occlusion_energies()
    energy = [e for e, _ in res]
    tilt = [t for _, t in res]
    assert all(a > b for a, b in zip(energy, energy[1:]))
    assert tilt[1] < tilt[0]
    assert all(a > b for a, b in zip(tilt, tilt[1:]))


def test_occluder_count_matches_oracle():
    scene = occluded_scene(3)
    assert Engine(scene, None).index.count_occluders((3.0, 0, 0), (0, 0, 0)) == \
        brute_occluders(scene, (3.0, 0, 0), (0, 0, 0)) == 3


def test_door_staging_raises_occluder_count():
    door = panel(20, 0.0, dynamic=True, lo=(-1.0, -1.0))
    scene = one_source_scene((3.0, 0.0, 0.0), extra=[door])
    eng = Engine(scene, None)
    eng.step(1)
    before = eng.occluder_count(1)
    assert before == brute_occluders(scene, (3, 0, 0), (0, 0, 0)) == 0
    eng.set_object_transform(20, Transform((1.5, 0.0, 0.0)))
    assert eng.occluder_count(1) == before       # staged, not applied yet
    eng.step(1)
    assert eng.occluder_count(1) == before + 1
    # the scene description is never modified by the engine
    assert scene.object(20).transform == Transform()


def test_echogram_image_timing():
    box = shoebox_scene((4.0, 4.0, 4.0), 0.2, 0.5)
    scene = Scene(box.objects, box.material_table, [SourceSpec(1, (2, 2, 2))],
                  ListenerSpec((2, 2, 2)))
    cfg = RenderConfig(reverb_enabled=False)
    x = np.zeros(4096)
    x[0] = 1.0
    y = render(Engine(scene, baked_for(probe(0, (2, 2, 2))), cfg), x)
    env = np.abs(y).sum(axis=1)
    t_direct = int(np.argmax(env))
    after = env.copy()
    after[:t_direct + 20] = 0
    t_refl = int(np.argmax(after))
    assert abs((t_refl - t_direct) / FS * 1000 - 11.66) <= 1.0


def test_step_composition():
    box = shoebox_scene((4.0, 4.0, 4.0), 0.2, 0.5)
    scene = Scene(box.objects, box.material_table, [SourceSpec(1, (1, 2, 2)),
                                                    SourceSpec(2, (3, 3, 1))],
                  ListenerSpec((2, 2, 2), 0.3))
    baked = baked_for(probe(0, (2, 2, 2)))
    x = pink(8192, seed=6)
    a, b = Engine(scene, baked), Engine(scene, baked)
    for e in (a, b):
        e.attach_signal(1, x)
        e.attach_signal(2, x[::-1], start=100)
    ya = np.concatenate([a.step(1), a.step(1), a.step(2)])
    yb = b.step(4)
    assert np.array_equal(ya, yb)


def test_block_size_composition():
    box = shoebox_scene((4.0, 4.0, 4.0), 0.2, 0.5)
    scene = Scene(box.objects, box.material_table, [SourceSpec(1, (1, 2, 2))],
                  ListenerSpec((2, 2, 2), 0.3))
    baked = baked_for(probe(0, (2, 2, 2)))
    x = pink(8192, seed=7)
    small = Engine(scene, baked, RenderConfig(block_size=1024))
    big = Engine(scene, baked, RenderConfig(block_size=2048))
    small.attach_signal(1, x)
    big.attach_signal(1, x)
    assert np.max(np.abs(small.step(8) - big.step(4))) <= 1e-9


def test_render_block_errors():
    scene = one_source_scene((1.0, 0.0, 0.0))
    eng = Engine(scene, None)
    with pytest.raises(EngineError, match="missing input"):
        eng.render_block({})
    with pytest.raises(EngineError, match="expected 1024"):
        eng.render_block({1: np.zeros(100)})
    for call in (lambda: eng.set_source_state(9, position=(0, 0, 0)),
                 lambda: eng.attach_signal(9, np.zeros(3)),
                 lambda: eng.set_object_transform(99, Transform())):
        with pytest.raises(EngineError, match="unknown"):
            call()
    with pytest.raises(EngineError, match="static"):
        eng.set_object_transform(0, Transform())


def test_source_motion_tracks_next_block():
    scene = one_source_scene((0.0, -2.0, 0.0))       # on the right
    eng = Engine(scene, None, RenderConfig(propagation_delay_enabled=False))
    eng.attach_signal(1, pink(FS, seed=8))
    y = eng.step(4)
    assert rms(y[2048:, 1]) > rms(y[2048:, 0])
    eng.set_source_state(1, position=(0.0, 2.0, 0.0))  # now on the left
    y = eng.step(4)
    assert rms(y[2048:, 0]) > rms(y[2048:, 1])


def max_delta(y):
    return float(np.max(np.abs(np.diff(y, axis=0))))


def test_smoothing_bound_listener_teleport():
    fs = FS
    t = np.arange(fs) / fs
    x = np.sin(2 * np.pi * 100 * t)
    scene = one_source_scene((2.0, 0.0, 0.0), room=(40.0, 40.0, 40.0))
    eng = Engine(scene, None)
    eng.attach_signal(1, x)
    before = eng.step(4)
    eng.set_listener_pose((-8.0, 0.0, 0.0), 0.0)
    after = eng.step(4)
    y = np.concatenate([before[-1:], after])
    assert max_delta(y) <= 0.2


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(["gain", "position", "yaw", "door"]), st.floats(0.0, 1.0))
def test_smoothing_bound_single_change(kind, u):
    t = np.arange(FS // 2) / FS
    x = np.sin(2 * np.pi * 150 * t)
    door = panel(20, 0.0, dynamic=True, lo=(-1.0, -1.0))
    scene = one_source_scene((2.0, 0.5, 0.0), extra=[door])
    eng = Engine(scene, None)
    eng.attach_signal(1, x)
    before = eng.step(2)
    if kind == "gain":
        eng.set_source_state(1, gain=2.0 * u)
    elif kind == "position":
        eng.set_source_state(1, position=(-3.0 + 6.0 * u, 3.0, 0.5))
    elif kind == "yaw":
        eng.set_listener_pose((0.0, 0.0, 0.0), 2 * math.pi * u - math.pi)
    else:
        eng.set_object_transform(20, Transform((1.0 + 0.5 * u, 0.0, 0.0)))
    after = eng.step(2)
    assert max_delta(np.concatenate([before[-1:], after])) <= 0.2


def test_source_crossing():
    # left to right at 1 m/s, 1 m in front of the listener
    x = np.sin(2 * np.pi * 200 * np.arange(FS * 4) / FS)
    scene = one_source_scene((1.0, 2.0, 0.0))
    eng = Engine(scene, None)
    eng.attach_signal(1, x)
    n = eng.config.block_size
    blocks, lag_sign = [], []
    for b in range(int(4 * FS / n)):
        t = b * n / FS
        eng.set_source_state(1, position=(1.0, 2.0 - t, 0.0))
        blocks.append(eng.step(1))
        lag_sign.append(np.sign(eng.sources[1].spatializer.target[0, 0, 0]
                                - eng.sources[1].spatializer.target[0, 1, 0]))
    y = np.concatenate(blocks)
    assert max_delta(y) < 0.1
    assert lag_sign[5] < 0 and lag_sign[-5] > 0      # left ear leads, then lags


def test_probe_switch_with_listener():
    box = shoebox_scene((8.0, 4.0, 3.0), 0.2, 0.5)
    scene = Scene(box.objects, box.material_table, [SourceSpec(1, (4, 2, 1.5))],
                  ListenerSpec((1, 2, 1.5)))
    ps = [probe(0, (2, 2, 1.5), hi=(8, 4, 3), rt60=0.3),
          probe(1, (6, 2, 1.5), hi=(8, 4, 3), rt60=1.2)]
    eng = Engine(scene, baked_for(*ps))
    eng.attach_signal(1, pink(FS, seed=9))
    eng.step(2)
    assert eng.probe_id == 0
    eng.set_listener_pose((7, 2, 1.5))
    out = eng.step(2)
    assert eng.probe_id == 1 and np.all(np.isfinite(out))


def test_engine_is_deterministic():
    box = shoebox_scene((4.0, 4.0, 4.0), 0.2, 0.5)
    scene = Scene(box.objects, box.material_table, [SourceSpec(1, (1, 2, 2))],
                  ListenerSpec((2, 2, 2)))
    outs = []
    for _ in range(2):
        eng = Engine(scene, baked_for(probe(0, (2, 2, 2))))
        eng.attach_signal(1, pink(8192, seed=10))
        eng.set_listener_pose((2.5, 2, 2), 1.0)
        outs.append(eng.step(8))
    assert np.array_equal(*outs)
    for s in eng.sources.values():
        assert np.all(np.isfinite(s.cur)) and np.all(np.isfinite(s.refl_cur_g))
