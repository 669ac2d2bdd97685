import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bracketlab.errors import InvalidSpecError
from bracketlab.scene import (RadianceScene, SceneSpec, Sprite, generate_scene,
                              ground_truth_hdr, importance_mask, motion_field,
                              realized_dynamic_range, sample_radiance)


def make_spec(**kw):
    base = dict(width=64, height=64, dynamic_range_stops=10.0, object_count=2,
                motion_magnitude=10.0, static_flag=False, seed=1)
    base.update(kw)
    return SceneSpec(**base)


class TestSpecValidation:
    @pytest.mark.parametrize("kw", [
        {"width": 8}, {"height": 15}, {"dynamic_range_stops": 3.0},
        {"dynamic_range_stops": 21.0}, {"motion_magnitude": -1.0},
        {"object_count": -1}, {"motion_magnitude": 60.0, "width": 64, "height": 64},
    ])
    def test_invalid_fields_rejected(self, kw):
        with pytest.raises(InvalidSpecError):
            generate_scene(make_spec(**kw))


class TestGenerate:
    def test_same_seed_bit_identical(self):
        a = generate_scene(make_spec(seed=7))
        b = generate_scene(make_spec(seed=7))
        assert np.array_equal(a.background, b.background)
        assert np.array_equal(a.importance, b.importance)
        assert len(a.sprites) == len(b.sprites)
        for sa, sb in zip(a.sprites, b.sprites):
            assert np.array_equal(sa.patch, sb.patch)
            assert np.array_equal(sa.points, sb.points)
            assert np.array_equal(sa.times, sb.times)

    def test_static_flag_forces_zero_motion(self):
        scene = generate_scene(make_spec(static_flag=True, motion_magnitude=20.0))
        assert scene.is_static
        flow = motion_field(scene, 0.0, 1.0)
        assert not flow.any()

    @pytest.mark.parametrize("stops", [6.0, 12.0, 18.0])
    def test_realized_dynamic_range_within_one_stop(self, stops):
        scene = generate_scene(make_spec(dynamic_range_stops=stops, seed=23))
        assert abs(realized_dynamic_range(scene) - stops) <= 1.0

    def test_max_displacement_matches_motion_magnitude(self):
        scene = generate_scene(make_spec(motion_magnitude=14.0, seed=3))
        best = 0.0
        for sprite in scene.sprites:
            radii = np.linalg.norm(sprite.points - sprite.points[0], axis=1)
            best = max(best, float(radii.max()))
        assert best == pytest.approx(14.0, abs=1e-9)

    def test_radiance_finite_nonnegative_on_time_grid(self):
        scene = generate_scene(make_spec(seed=9))
        for u in np.linspace(0.0, 1.0, 64):
            frame = sample_radiance(scene, float(u))
            assert np.all(np.isfinite(frame))
            assert frame.min() >= 0.0


class TestSampleRadiance:
    def test_static_scene_constant_in_u(self):
        scene = generate_scene(make_spec(static_flag=True))
        ref = sample_radiance(scene, 0.0)
        for u in (0.2, 0.5, 1.0):
            assert np.array_equal(sample_radiance(scene, u), ref)

    def test_u0_matches_ground_truth_alias(self):
        scene = generate_scene(make_spec())
        assert np.array_equal(sample_radiance(scene, 0.0),
                              ground_truth_hdr(scene, 0.0))

    def test_out_of_range_u_rejected(self):
        scene = generate_scene(make_spec())
        with pytest.raises(ValueError):
            sample_radiance(scene, 1.5)
        with pytest.raises(ValueError):
            sample_radiance(scene, -0.2)

    def test_centroid_moves_half_displacement_at_half_time(self):
        # One object translating 8 px over [0, 1]; at u=0.5 the rendered
        # centroid must sit 4 px (+-0.1) from its u=0 position.
        patch = np.ones((9, 9))
        sprite = Sprite(patch=patch,
                        times=np.array([0.0, 1.0]),
                        points=np.array([[20.0, 10.0], [20.0, 18.0]]))
        spec = make_spec(object_count=1, motion_magnitude=8.0)
        scene = RadianceScene(spec=spec, background=np.zeros((64, 64)),
                              sprites=(sprite,), importance=np.ones((64, 64)))

        def centroid(frame):
            total = frame.sum()
            xs = np.arange(frame.shape[1])
            return float((frame.sum(axis=0) * xs).sum() / total)

        c0 = centroid(sample_radiance(scene, 0.0))
        c5 = centroid(sample_radiance(scene, 0.5))
        c1 = centroid(sample_radiance(scene, 1.0))
        assert c5 - c0 == pytest.approx(4.0, abs=0.1)
        assert c1 - c0 == pytest.approx(8.0, abs=0.1)


class TestMotionField:
    def test_identity_interval_and_static(self):
        scene = generate_scene(make_spec(seed=2))
        assert not motion_field(scene, 0.3, 0.3).any()
        static = generate_scene(make_spec(static_flag=True))
        assert not motion_field(static, 0.0, 1.0).any()

    def test_reversed_interval_rejected(self):
        scene = generate_scene(make_spec())
        with pytest.raises(ValueError):
            motion_field(scene, 0.6, 0.4)

    def test_analytic_displacement(self):
        # Object moving (0, 6) px over [0, 1]: the half-interval field carries
        # exactly (0, 3) on the object footprint.
        sprite = Sprite(patch=np.ones((5, 5)),
                        times=np.array([0.0, 1.0]),
                        points=np.array([[10.0, 10.0], [10.0, 16.0]]))
        spec = make_spec(object_count=1, motion_magnitude=6.0)
        scene = RadianceScene(spec=spec, background=np.zeros((64, 64)),
                              sprites=(sprite,), importance=np.ones((64, 64)))
        flow = motion_field(scene, 0.0, 0.5)
        obj = flow[..., 1] != 0
        assert obj[10:15, 10:15].all()
        assert np.all(flow[obj, 1] == 3.0)
        assert np.all(flow[obj, 0] == 0.0)

    def test_composition_exact_for_integer_waypoints(self):
        sprite = Sprite(patch=np.ones((4, 4)),
                        times=np.array([0.0, 0.5, 1.0]),
                        points=np.array([[8.0, 8.0], [8.0, 12.0], [14.0, 12.0]]))
        spec = make_spec(object_count=1, motion_magnitude=10.0)
        scene = RadianceScene(spec=spec, background=np.zeros((32, 32)),
                              sprites=(sprite,), importance=np.ones((32, 32)))
        f02 = motion_field(scene, 0.0, 1.0)
        f01 = motion_field(scene, 0.0, 0.5)
        f12 = motion_field(scene, 0.5, 1.0)
        mask = (f01 != 0).any(axis=-1)
        for (y, x) in zip(*np.nonzero(mask)):
            d1 = f01[y, x]
            warped = f12[int(y + d1[0]), int(x + d1[1])]
            np.testing.assert_allclose(f02[y, x], d1 + warped, atol=1e-12)


class TestImportanceMask:
    def test_support_superset_of_object_footprint(self):
        scene = generate_scene(make_spec(object_count=1, seed=4))
        mask = importance_mask(scene)
        sprite = scene.sprites[0]
        h, w = sprite.patch.shape
        y, x = sprite.position(0.0)
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        assert mask[y0:y0 + h, x0:x0 + w].min() == 1.0

    def test_objectless_static_scene_has_highlight_window_only(self):
        scene = generate_scene(make_spec(object_count=0, static_flag=True))
        mask = importance_mask(scene)
        assert mask.sum() > 0
        py, px = scene.stats["highlight"]
        assert mask[py, px] == 1.0

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=10, deadline=None)
    def test_mask_values_unit_interval(self, seed):
        scene = generate_scene(make_spec(seed=seed))
        mask = importance_mask(scene)
        assert mask.min() >= 0.0 and mask.max() <= 1.0
