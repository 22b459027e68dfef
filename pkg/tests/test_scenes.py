"""Analytic scenes: schema validation, oracle rendering, exact scaling."""

import json

import numpy as np
import pytest

import alphainv as ai
from alphainv.errors import DomainError, SceneValidationError
from alphainv.scenes import (
    CameraSpec, camera_rays, evaluate_density, ground_truth_render,
    ground_truth_render_batch, scene_from_dict,
)
from alphainv.volrend import Ray


def minimal_scene_doc(**overrides):
    doc = {
        "name": "probe",
        "primitives": [{"shape": "sphere", "center": [0, 0, 0], "radius": 0.8,
                        "sigma": 5.0, "albedo": [0.9, 0.5, 0.1]}],
        "bounds": {"min": [-1, -1, -1], "max": [1, 1, 1]},
        "cameras": [{"position": [0, 0, 3], "look_at": [0, 0, 0], "up": [0, 1, 0],
                     "fov_y_deg": 40.0, "width": 8, "height": 8}],
        "near": 1.5,
        "far": 4.5,
    }
    doc.update(overrides)
    return doc


class TestSchema:
    def test_minimal_document_loads(self):
        scene = scene_from_dict(minimal_scene_doc())
        assert scene.name == "probe"
        assert scene.ray_length == 3.0

    def test_missing_key_reports_path(self):
        doc = minimal_scene_doc()
        del doc["primitives"][0]["radius"]
        with pytest.raises(SceneValidationError) as exc:
            scene_from_dict(doc)
        assert "$.primitives[0].radius" in str(exc.value)

    def test_bad_albedo_reports_path(self):
        doc = minimal_scene_doc()
        doc["primitives"][0]["albedo"] = [1.5, 0, 0]
        with pytest.raises(SceneValidationError) as exc:
            scene_from_dict(doc)
        assert "albedo" in str(exc.value)

    def test_bad_camera_fov(self):
        doc = minimal_scene_doc()
        doc["cameras"][0]["fov_y_deg"] = 200.0
        with pytest.raises(SceneValidationError) as exc:
            scene_from_dict(doc)
        assert "$.cameras[0].fov_y_deg" in str(exc.value)

    def test_near_must_be_positive(self):
        with pytest.raises(SceneValidationError) as exc:
            scene_from_dict(minimal_scene_doc(near=0.0))
        assert "$.near" in str(exc.value)

    def test_unknown_shape(self):
        doc = minimal_scene_doc()
        doc["primitives"][0]["shape"] = "torus"
        with pytest.raises(SceneValidationError):
            scene_from_dict(doc)

    def test_bad_sampler_kind(self):
        with pytest.raises(SceneValidationError) as exc:
            scene_from_dict(minimal_scene_doc(sampler={"kind": "sobol"}))
        assert "$.sampler.kind" in str(exc.value)

    def test_scale_k_applies_at_load(self):
        scene = scene_from_dict(minimal_scene_doc(scale_k=2.0))
        assert scene.near == 3.0 and scene.far == 9.0
        assert scene.primitives[0].sigma == 2.5

    def test_load_scene_from_file_and_name(self, tmp_path):
        path = tmp_path / "probe.json"
        path.write_text(json.dumps(minimal_scene_doc()))
        assert ai.load_scene(path).name == "probe"
        assert ai.load_scene("sphere").name == "sphere"

    def test_invalid_json_reports(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(SceneValidationError):
            ai.load_scene(path)

    def test_bundled_scenes_all_load(self):
        for name in ai.bundled_scene_names():
            scene = ai.bundled_scene(name)
            assert scene.name == name
            assert scene.far > scene.near > 0


class TestCameraRays:
    def test_directions_are_unit(self):
        cam = CameraSpec(np.array([0, 0, 4.0]), np.zeros(3), np.array([0, 1.0, 0]),
                         45.0, 16, 12)
        origins, dirs = camera_rays(cam)
        assert origins.shape == (16 * 12, 3) and dirs.shape == (16 * 12, 3)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)

    def test_center_pixel_points_at_target(self):
        cam = CameraSpec(np.array([0, 0, 4.0]), np.zeros(3), np.array([0, 1.0, 0]),
                         45.0, 9, 9)
        _, dirs = camera_rays(cam)
        center = dirs[4 * 9 + 4]
        np.testing.assert_allclose(center, [0, 0, -1.0], atol=1e-12)

    def test_degenerate_up_rejected(self):
        cam = CameraSpec(np.array([0, 0, 4.0]), np.zeros(3), np.array([0, 0, 1.0]),
                         45.0, 4, 4)
        with pytest.raises(DomainError):
            camera_rays(cam)


class TestEvaluateDensity:
    def test_additive_overlap_and_weighted_albedo(self):
        doc = minimal_scene_doc()
        doc["primitives"].append({"shape": "sphere", "center": [0, 0, 0], "radius": 0.4,
                                  "sigma": 15.0, "albedo": [0.0, 0.0, 1.0]})
        scene = scene_from_dict(doc)
        sig, alb = evaluate_density(scene, np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.6],
                                                     [0.0, 0.0, 0.95]]))
        np.testing.assert_allclose(sig, [20.0, 5.0, 0.0])
        expected_mix = (5.0 * np.array([0.9, 0.5, 0.1]) + 15.0 * np.array([0, 0, 1])) / 20.0
        np.testing.assert_allclose(alb[0], expected_mix)
        np.testing.assert_allclose(alb[1], [0.9, 0.5, 0.1])
        np.testing.assert_allclose(alb[2], [0.0, 0.0, 0.0])


class TestGroundTruthRender:
    def test_miss_is_black_with_full_transmittance(self):
        scene = scene_from_dict(minimal_scene_doc())
        ray = Ray([2.0, 2.0, 3.0], [0, 0, -1.0], 0.5, 4.0)
        out = ground_truth_render(scene, ray, resolution=1024)
        np.testing.assert_array_equal(out.color, np.zeros(3))
        assert out.final_transmittance == 1.0

    def test_homogeneous_slab_transmittance(self):
        """Unit-thickness slab of sigma = 1: T = e^-1."""
        doc = minimal_scene_doc()
        doc["primitives"] = [{"shape": "slab", "axis": "z", "min": 0.0, "max": 1.0,
                              "sigma": 1.0, "albedo": [1, 1, 1]}]
        doc["bounds"] = {"min": [-1, -1, -0.5], "max": [1, 1, 1.5]}
        doc["near"], doc["far"] = 0.5, 3.5
        scene = scene_from_dict(doc)
        ray = Ray([0, 0, -1.0], [0, 0, 1.0], 0.5, 3.5)
        # 6144 puts sample edges exactly on the slab faces: quadrature is exact
        out = ground_truth_render(scene, ray, resolution=6144)
        np.testing.assert_allclose(out.final_transmittance, np.exp(-1.0), atol=1e-6)
        # with misaligned edges the midpoint rule is still boundary-accurate
        out2 = ground_truth_render(scene, ray, resolution=4096)
        np.testing.assert_allclose(out2.final_transmittance, np.exp(-1.0), atol=1e-3)

    def test_resolution_floor_enforced(self):
        scene = scene_from_dict(minimal_scene_doc())
        ray = Ray([0, 0, 3.0], [0, 0, -1.0], 1.5, 4.5)
        with pytest.raises(DomainError):
            ground_truth_render(scene, ray, resolution=512)

    def test_batch_matches_single_ray(self):
        scene = scene_from_dict(minimal_scene_doc())
        origins, dirs = camera_rays(scene.cameras[0])
        batch = ground_truth_render_batch(scene, origins[:4], dirs[:4], 1024)
        for i in range(4):
            single = ground_truth_render(
                scene, Ray(origins[i], dirs[i], scene.near, scene.far), 1024)
            np.testing.assert_allclose(batch["color"][i], single.color, atol=1e-12)
            np.testing.assert_allclose(batch["final_transmittance"][i],
                                       single.final_transmittance, atol=1e-12)


class TestScaleScene:
    def test_identity(self):
        scene = ai.bundled_scene("sphere")
        same = ai.scale_scene(scene, 1.0)
        assert same.near == scene.near and same.far == scene.far
        assert same.primitives[0].sigma == scene.primitives[0].sigma

    def test_round_trip(self):
        scene = ai.bundled_scene("sphere")
        back = ai.scale_scene(ai.scale_scene(scene, 10.0), 0.1)
        np.testing.assert_allclose(back.near, scene.near, rtol=1e-12)
        np.testing.assert_allclose(back.primitives[0].sigma, scene.primitives[0].sigma,
                                   rtol=1e-12)
        np.testing.assert_allclose(back.primitives[0].radius, scene.primitives[0].radius,
                                   rtol=1e-12)

    def test_rejects_bad_factor(self):
        with pytest.raises(DomainError):
            ai.scale_scene(ai.bundled_scene("sphere"), 0.0)

    def test_oracle_render_invariant_under_scaling(self):
        """The paper's construction: positions x k, densities / k, cameras
        rigidly scaled; pixel colors must be unchanged."""
        scene = scene_from_dict(minimal_scene_doc())
        origins, dirs = camera_rays(scene.cameras[0])
        base = ground_truth_render_batch(scene, origins, dirs, 1024)
        for k in (0.1, 10.0):
            scaled = ai.scale_scene(scene, k)
            o2, d2 = camera_rays(scaled.cameras[0])
            out = ground_truth_render_batch(scaled, o2, d2, 1024)
            np.testing.assert_allclose(out["color"], base["color"], atol=1e-9)
            np.testing.assert_allclose(out["final_transmittance"],
                                       base["final_transmittance"], atol=1e-9)
