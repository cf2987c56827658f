"""Body model: construction, kinematics, skinning, scene synthesis."""

import numpy as np
import pytest

from kinefisher.body import (
    Camera,
    SceneConfig,
    fit_camera,
    generate_scene,
    make_toy_model,
    pose_body,
    project_weak_perspective,
    shaped_rest,
    vertices_driven_by,
)
from kinefisher.errors import InvalidArgumentError
from kinefisher.rng import RandomTree
from kinefisher.so3 import axis_angle_to_matrix


@pytest.fixture(scope="module")
def model():
    return make_toy_model()


class TestToyModel:
    def test_validates(self, model):
        model.validate()

    def test_canonical_shape(self, model):
        assert model.num_joints == 16
        assert model.num_shape_params == 10
        assert model.num_vertices > 100
        assert model.faces.shape[1] == 3
        assert len(model.names) == 16
        assert model.names[0] == "pelvis"

    def test_deterministic_per_seed(self):
        a = make_toy_model(seed=3)
        b = make_toy_model(seed=3)
        np.testing.assert_array_equal(a.template, b.template)
        c = make_toy_model(seed=4)
        assert not np.array_equal(a.template, c.template)

    def test_trimmed_tree(self):
        small = make_toy_model(joint_count=6)
        assert small.num_joints == 6
        small.validate()

    def test_rejects_bad_sizes(self):
        with pytest.raises(InvalidArgumentError):
            make_toy_model(joint_count=2)
        with pytest.raises(InvalidArgumentError):
            make_toy_model(verts_per_bone=6)

    def test_regressor_exact_at_rest(self, model):
        # Regressed joints of the rest mesh reproduce the rest skeleton for
        # any shape: the regressor rows are built from vertex rings whose
        # centroids sit on the joints, and the basis moves rings rigidly.
        rng = np.random.default_rng(0)
        for _ in range(5):
            beta = rng.uniform(-2.0, 2.0, size=model.num_shape_params)
            verts, joints = shaped_rest(model, beta)
            np.testing.assert_allclose(
                model.rest_joint_regressor @ verts, joints, atol=1e-12
            )

    def test_shape_basis_changes_proportions(self, model):
        _, j0 = shaped_rest(model, np.zeros(10))
        for b in range(model.num_shape_params):
            e = np.zeros(10)
            e[b] = 2.0
            _, j1 = shaped_rest(model, e)
            if not np.allclose(j1, j0):
                break
        else:
            pytest.fail("no shape channel moves any joint")


class TestPoseBody:
    def test_identity_pose_is_rest(self, model):
        beta = np.full(10, 0.3)
        rest_verts, rest_joints = shaped_rest(model, beta)
        rots = np.repeat(np.eye(3)[None], model.num_joints - 1, axis=0)
        verts, joints = pose_body(model, rots, np.zeros(3), beta)
        np.testing.assert_allclose(verts, rest_verts, atol=1e-12)
        np.testing.assert_allclose(joints, rest_joints, atol=1e-12)

    def test_global_rotation_is_rigid_about_root(self, model):
        beta = np.zeros(10)
        rots = np.repeat(np.eye(3)[None], model.num_joints - 1, axis=0)
        gamma = np.array([0.3, -0.5, 0.8])
        verts, joints = pose_body(model, rots, gamma, beta)
        rest_verts, rest_joints = shaped_rest(model, beta)
        r = axis_angle_to_matrix(gamma)
        root = rest_joints[0]
        np.testing.assert_allclose(verts, (rest_verts - root) @ r.T + root, atol=1e-10)
        np.testing.assert_allclose(joints, (rest_joints - root) @ r.T + root, atol=1e-10)

    def test_bone_lengths_preserved(self, model):
        rng = RandomTree(40)
        from kinefisher.so3 import haar_random_rotations

        rots = haar_random_rotations(model.num_joints - 1, rng)
        _, joints = pose_body(model, rots, np.array([0.1, 0.2, 0.3]), np.zeros(10))
        _, rest_joints = shaped_rest(model, np.zeros(10))
        for i in range(1, model.num_joints):
            p = int(model.parents[i])
            posed = np.linalg.norm(joints[i] - joints[p])
            rest = np.linalg.norm(rest_joints[i] - rest_joints[p])
            assert posed == pytest.approx(rest, abs=1e-9)

    def test_rotating_elbow_moves_only_forearm(self, model):
        wrist = model.names.index("l_wrist")
        elbow = model.names.index("l_elbow")
        rots = np.repeat(np.eye(3)[None], model.num_joints - 1, axis=0)
        rots[elbow - 1] = axis_angle_to_matrix(np.array([0.0, 0.0, 0.9]))
        verts, joints = pose_body(model, rots, np.zeros(3), np.zeros(10))
        rest_verts, rest_joints = shaped_rest(model, np.zeros(10))
        moved = np.linalg.norm(verts - rest_verts, axis=1) > 1e-9
        downstream = vertices_driven_by(model, [wrist])
        assert np.all(moved[downstream])
        # Joints outside the elbow's subtree stay put.
        static = [i for i in range(model.num_joints) if i not in (wrist,)]
        np.testing.assert_allclose(
            joints[[i for i in static if i != wrist]],
            rest_joints[[i for i in static if i != wrist]],
            atol=1e-9,
        )

    def test_rejects_wrong_rotation_count(self, model):
        rots = np.repeat(np.eye(3)[None], 3, axis=0)
        with pytest.raises(InvalidArgumentError):
            pose_body(model, rots, np.zeros(3), np.zeros(10))


class TestProjection:
    def test_formula(self):
        cam = Camera(s=2.0, tx=10.0, ty=-3.0)
        pts = np.array([[1.0, 2.0, 9.0], [0.0, -1.0, 4.0]])
        out = project_weak_perspective(pts, cam)
        np.testing.assert_allclose(out, [[12.0, 1.0], [10.0, -5.0]])

    def test_camera_validation(self):
        with pytest.raises(InvalidArgumentError):
            Camera(s=-1.0, tx=0.0, ty=0.0)
        with pytest.raises(InvalidArgumentError):
            Camera(s=np.nan, tx=0.0, ty=0.0)

    def test_fit_camera_fills_canvas(self, model):
        cam = fit_camera(model, np.zeros(10), canvas=256, fill=0.7)
        verts, _ = shaped_rest(model, np.zeros(10))
        px = project_weak_perspective(verts, cam)
        extent = (px.max(axis=0) - px.min(axis=0)).max()
        assert extent == pytest.approx(0.7 * 256, rel=1e-6)


class TestVerticesDrivenBy:
    def test_leaf_mask_nonempty_and_local(self, model):
        wrist = model.names.index("l_wrist")
        mask = vertices_driven_by(model, [wrist])
        assert 0 < mask.sum() < model.num_vertices
        # Those vertices' weight mass sits on the wrist.
        assert np.all(model.skin_weights[mask][:, wrist] > 0.5)


class TestGenerateScene:
    def test_deterministic(self, model):
        a = generate_scene(model, SceneConfig(), RandomTree(9))
        b = generate_scene(model, SceneConfig(), RandomTree(9))
        np.testing.assert_array_equal(a.j2d, b.j2d)
        np.testing.assert_array_equal(a.vis, b.vis)
        np.testing.assert_array_equal(a.gt.beta, b.gt.beta)

    def test_ground_truth_reprojects_to_targets(self, model):
        sc = generate_scene(model, SceneConfig(), RandomTree(10))
        _, joints = pose_body(model, sc.gt.rots, sc.gt.gamma, sc.gt.beta)
        px = project_weak_perspective(joints, sc.gt.camera)
        # Targets are the projected truth plus bounded pixel noise.
        err = np.abs(px - sc.j2d).max()
        assert err <= 8.0 + 1e-9

    def test_noise_free_scene_is_exact(self, model):
        sc = generate_scene(model, SceneConfig(noise=False, dropout=False), RandomTree(11))
        assert np.all(sc.vis == 1)
        _, joints = pose_body(model, sc.gt.rots, sc.gt.gamma, sc.gt.beta)
        px = project_weak_perspective(joints, sc.gt.camera)
        np.testing.assert_allclose(px, sc.j2d, atol=1e-9)

    def test_pose_angles_clamped(self, model):
        from kinefisher.so3 import geodesic_distance

        cfg = SceneConfig()
        for seed in range(5):
            sc = generate_scene(model, cfg, RandomTree(seed))
            for r in sc.gt.rots:
                assert geodesic_distance(r, np.eye(3)) <= cfg.pose_angle_clamp + 1e-9

    def test_visibility_probability(self, model):
        # With drop_prob 0.5 roughly half the joints go invisible.
        cfg = SceneConfig(drop_prob=0.5)
        total = visible = 0
        for seed in range(40):
            sc = generate_scene(model, cfg, RandomTree(seed))
            total += sc.vis.size
            visible += int(sc.vis.sum())
        rate = visible / total
        assert 0.35 < rate < 0.65

    def test_body_inside_canvas(self, model):
        for seed in range(10):
            sc = generate_scene(model, SceneConfig(noise=False), RandomTree(seed))
            assert np.all(sc.j2d >= -0.15 * sc.canvas)
            assert np.all(sc.j2d <= 1.15 * sc.canvas)
