import math

import numpy as np
import pytest

from poseforge.posespace import CameraPose, DiscretizationSpec, camera_attitude_for, generate_labels
from poseforge.renderer import (
    CameraIntrinsics,
    LightingSpec,
    MeshFormatError,
    RenderError,
    TargetModel,
    add_gaussian_noise,
    apply_offset,
    decode_pgm,
    encode_pgm,
    hflip,
    load_mesh,
    make_box_model,
    make_mock_spacecraft,
    read_pgm,
    render,
    write_mesh,
    write_pgm,
)
from poseforge.rotmath import Quaternion

FACING_TRIANGLE = TargetModel(
    vertices=[[-1, -1, 0], [-1, 1, 0], [1, -1, 0]],
    triangles=[[0, 1, 2]],
    albedo=[0.7],
)


def centroid(img):
    mask = img > 0
    rows, cols = np.nonzero(mask)
    return np.array([cols.mean() + 0.5, rows.mean() + 0.5])


@pytest.fixture(scope="module")
def mock():
    return make_mock_spacecraft()


@pytest.fixture(scope="module")
def six_labels():
    return generate_labels(DiscretizationSpec((3.0,), 6, 1))


class TestModels:
    def test_mock_invariants(self, mock):
        assert len(mock.triangles) > 0
        assert mock.triangles.max() < len(mock.vertices)
        assert np.all(mock.areas() > 1e-12)
        assert len(np.unique(mock.albedo)) >= 3
        assert mock.bounding_radius <= 1.5

    def test_antipodal_views_differ(self, mock):
        u = np.array([0.3, -0.4, 0.5])
        u /= np.linalg.norm(u)
        a = render(mock, CameraPose(camera_attitude_for(u), [0, 0, 3]))
        b = render(mock, CameraPose(camera_attitude_for(-u), [0, 0, 3]))
        assert np.mean(np.abs(a - b) > 0.1) >= 0.05

    def test_six_label_views_pairwise_distinct(self, mock, six_labels):
        imgs = [render(mock, CameraPose(lab.attitude, [0, 0, 3])) for lab in six_labels]
        for i in range(6):
            for j in range(i + 1, 6):
                assert np.mean(np.abs(imgs[i] - imgs[j]) > 0.1) >= 0.05

    def test_rejects_bad_indices(self):
        with pytest.raises(ValueError):
            TargetModel([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]], [0.5])

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            TargetModel([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]], [0.5])


class TestMeshFiles:
    def test_single_triangle(self, tmp_path):
        p = tmp_path / "tri.obj"
        p.write_text("# one facet\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        m = load_mesh(p)
        assert m.triangles.shape == (1, 3)
        assert m.albedo[0] == 0.7

    def test_albedo_comment_and_quads(self, tmp_path):
        p = tmp_path / "quad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4 # albedo=0.25\n")
        m = load_mesh(p)
        assert len(m.triangles) == 2
        np.testing.assert_array_equal(m.albedo, [0.25, 0.25])

    def test_round_trip(self, tmp_path, mock):
        write_mesh(mock, tmp_path / "m.obj")
        back = load_mesh(tmp_path / "m.obj")
        np.testing.assert_allclose(back.vertices, mock.vertices, atol=5e-7)
        np.testing.assert_array_equal(back.triangles, mock.triangles)
        np.testing.assert_array_equal(back.albedo, mock.albedo)

    def test_malformed_index_names_line(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 x\n")
        with pytest.raises(MeshFormatError, match=r":4:") as err:
            load_mesh(p)
        assert err.value.lineno == 4

    def test_out_of_range_index(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 9\n")
        with pytest.raises(MeshFormatError, match=r":5:"):
            load_mesh(p)

    def test_degenerate_rejected(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n")
        with pytest.raises(MeshFormatError, match="degenerate"):
            load_mesh(p)


class TestRender:
    def test_empty_model(self):
        empty = TargetModel(np.zeros((0, 3)), np.zeros((0, 3), dtype=int), np.zeros(0))
        img = render(empty, CameraPose(Quaternion.identity(), [0, 0, 3]))
        assert img.shape == (227, 227)
        assert not img.any()

    def test_shading_formula(self):
        # camera at (0,0,-3) looking +z, facet normal -z, light travelling +z
        light = LightingSpec(direction=(0, 0, 1), intensity=0.8, ambient=0.1)
        img = render(FACING_TRIANGLE, CameraPose(Quaternion.identity(), [0, 0, 3]), light=light)
        covered = img[img > 0]
        assert covered.size > 1000
        np.testing.assert_allclose(covered, 0.63, atol=0.5 / 255)
        assert np.all(covered == covered[0])

    def test_back_face_culled(self):
        flipped = TargetModel(FACING_TRIANGLE.vertices, [[0, 2, 1]], [0.7])
        img = render(flipped, CameraPose(Quaternion.identity(), [0, 0, 3]))
        assert not img.any()

    def test_deterministic(self, mock, six_labels):
        pose = CameraPose(six_labels[2].attitude, [0.1, -0.05, 3.2])
        assert render(mock, pose).tobytes() == render(mock, pose).tobytes()

    def test_quantized_and_in_range(self, mock, six_labels):
        img = render(mock, CameraPose(six_labels[0].attitude, [0, 0, 3]))
        assert img.min() >= 0 and img.max() <= 1
        np.testing.assert_allclose(img * 255, np.round(img * 255), atol=1e-9)

    def test_z_buffer_independent_of_order(self):
        near = [[-0.5, -0.5, -1], [-0.5, 0.5, -1], [0.5, -0.5, -1]]
        far = [[-1, -1, 0], [-1, 1, 0], [1, -1, 0]]
        a = TargetModel(near + far, [[0, 1, 2], [3, 4, 5]], [0.9, 0.3])
        b = TargetModel(far + near, [[0, 1, 2], [3, 4, 5]], [0.3, 0.9])
        pose = CameraPose(Quaternion.identity(), [0, 0, 3])
        light = LightingSpec(direction=(0, 0, 1))
        ia, ib = render(a, pose, light=light), render(b, pose, light=light)
        np.testing.assert_array_equal(ia, ib)
        assert ia[113, 100] == pytest.approx(np.round(0.9 * 0.9 * 255) / 255)

    def test_behind_camera(self, mock):
        with pytest.raises(RenderError):
            render(mock, CameraPose(Quaternion.identity(), [0, 0, -5]))

    def test_partially_outside_frustum(self, mock, six_labels):
        img = render(mock, CameraPose(six_labels[0].attitude, [0.9, 0.0, 3.0]))
        assert img.any()
        assert img[:, -1].any() or img[:, 0].any()

    def test_silhouette_shrinks_with_range(self, mock, six_labels):
        for lab in six_labels[:3]:
            counts = [np.count_nonzero(render(mock, CameraPose(lab.attitude, [0, 0, r]))) for r in range(3, 14)]
            assert all(b <= a for a, b in zip(counts, counts[1:]))

    def test_intrinsics_validation(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fov_deg=180)
        assert CameraIntrinsics().focal_px == pytest.approx(113.5 / math.tan(math.radians(15.75)))

    def test_lighting_validation(self):
        with pytest.raises(ValueError):
            LightingSpec(intensity=0.95, ambient=0.1)


class TestOffset:
    # The box seen along its body diagonal has a silhouette with 3-fold symmetry
    # about the boresight, so its centroid tracks the projected box center.
    # The mock's silhouette centroid is not its origin, so it is not used here.
    DIAG = camera_attitude_for(np.ones(3) / math.sqrt(3))

    def test_centered(self):
        pose = apply_offset(CameraPose(self.DIAG, [0.5, -0.3, 5]), (0, 0, 3))
        np.testing.assert_allclose(pose.position, [0, 0, 3])
        c = centroid(render(make_box_model(), pose))
        assert np.linalg.norm(c - 113.5) < 2.0

    def test_lateral_shift_matches_pinhole(self):
        expected = 0.2 / (3 * math.tan(math.radians(15.75))) * (227 / 2)
        assert expected == pytest.approx(26.8, abs=0.05)
        box = make_box_model()
        base = CameraPose(self.DIAG, [0, 0, 3])
        c0 = centroid(render(box, apply_offset(base, (0, 0, 3))))
        cx = centroid(render(box, apply_offset(base, (0.2, 0, 3))))
        assert cx[0] - c0[0] == pytest.approx(expected, abs=2.0)
        assert abs(cx[1] - c0[1]) < 2.0

    def test_x_and_y_shifts_have_equal_magnitude(self, mock, six_labels):
        box = make_box_model()
        for model, att in [(box, self.DIAG), (box, six_labels[0].attitude), (mock, six_labels[3].attitude)]:
            base = CameraPose(att, [0, 0, 3])
            c0 = centroid(render(model, base))
            dx = centroid(render(model, apply_offset(base, (0.2, 0, 3)))) - c0
            dy = centroid(render(model, apply_offset(base, (0, 0.2, 3)))) - c0
            assert abs(np.linalg.norm(dx) - np.linalg.norm(dy)) < 2.0
            assert dx[0] > 20 and dy[1] > 20

    def test_rejects_behind(self, six_labels):
        with pytest.raises(ValueError):
            apply_offset(CameraPose(six_labels[0].attitude, [0, 0, 3]), (0, 0, -1))


class TestNoise:
    def test_zero_variance(self):
        img = np.random.default_rng(0).random((20, 20))
        np.testing.assert_array_equal(add_gaussian_noise(img, 0.0, seed=3), img)

    def test_variance(self):
        clean = np.full((227, 227), 0.5)
        noisy = add_gaussian_noise(clean, 0.01, seed=7)
        v = np.var(noisy - clean)
        assert 0.009 <= v <= 0.011

    def test_clamped(self):
        noisy = add_gaussian_noise(np.full((227, 227), 0.5), 0.1, seed=1)
        assert noisy.min() >= 0.0 and noisy.max() <= 1.0

    def test_seeded(self):
        img = np.full((10, 10), 0.5)
        np.testing.assert_array_equal(add_gaussian_noise(img, 0.05, 9), add_gaussian_noise(img, 0.05, 9))
        assert not np.array_equal(add_gaussian_noise(img, 0.05, 9), add_gaussian_noise(img, 0.05, 10))

    def test_commutes_with_hflip_in_distribution(self):
        img = np.tile(np.linspace(0.2, 0.8, 227), (227, 1))
        a = hflip(add_gaussian_noise(img, 0.01, seed=1)) - hflip(img)
        b = add_gaussian_noise(hflip(img), 0.01, seed=2) - hflip(img)
        # variance estimates of 227^2 samples agree well inside 3 sigma (~0.0004)
        assert abs(np.var(a) - np.var(b)) < 4e-4


class TestHflip:
    def test_involution(self):
        img = np.random.default_rng(0).random((227, 227))
        np.testing.assert_array_equal(hflip(hflip(img)), img)

    def test_columns(self):
        img = np.random.default_rng(1).random((227, 227))
        np.testing.assert_array_equal(hflip(img)[:, 0], img[:, 226])

    def test_left_to_right(self):
        img = np.zeros((227, 227))
        img[:, :113] = 1.0
        out = hflip(img)
        assert out[:, 114:].all() and not out[:, :114].any()


class TestPgm:
    def test_round_trip(self, tmp_path):
        img = np.round(np.random.default_rng(0).random((227, 227)) * 255) / 255
        blob = write_pgm(tmp_path / "a.pgm", img)
        assert blob.startswith(b"P5\n227 227\n255\n")
        assert len(blob) == len(b"P5\n227 227\n255\n") + 227 * 227
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)

    def test_header_comments(self):
        blob = b"P5\n# made by hand\n2 1\n255\n\x00\xff"
        np.testing.assert_array_equal(decode_pgm(blob), [[0.0, 1.0]])

    def test_rejects_other_formats(self):
        with pytest.raises(ValueError):
            decode_pgm(b"P2\n1 1\n255\n0\n")
        with pytest.raises(ValueError):
            decode_pgm(encode_pgm(np.zeros((3, 3)))[:-2])
