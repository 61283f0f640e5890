"""
Tests for projection, crop boxes and the intrinsics-aware positional encoding.
"""

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from ..camera import (
    BLOCK_SIZE,
    CameraIntrinsics,
    CropBox,
    KpeEncoding,
    kpe_dense,
    kpe_sparse,
    lift,
    perspective_demo,
    pixel_angles,
    project,
    project_points,
    projection_jacobian,
)
from ..exceptions import BehindCameraError
from ..metrics import centered_2d_error
from ..population import default_reference_params


def random_camera(rng):
    width = int(rng.integers(64, 2000))
    height = int(rng.integers(64, 2000))
    return CameraIntrinsics(
        fx=rng.uniform(100.0, 2000.0),
        fy=rng.uniform(100.0, 2000.0),
        ppx=rng.uniform(0.0, width),
        ppy=rng.uniform(0.0, height),
        width=width,
        height=height,
    )


class CameraIntrinsicsTest(SimpleTestCase):
    """Test intrinsics construction and validation."""

    def test_from_fov(self):
        """Test that a 60 degree camera gets f = (w/2) / tan(30 deg) and a centred principal point."""
        cam = CameraIntrinsics.from_fov(640, 480, 60.0)
        self.assertAlmostEqual(cam.fx, 320.0 / np.tan(np.radians(30.0)), places=9)
        self.assertEqual(cam.fx, cam.fy)
        self.assertEqual((cam.ppx, cam.ppy), (320.0, 240.0))

    def test_fov_must_be_below_180(self):
        """Test that a 180 degree field of view is rejected."""
        with self.assertRaises(ValidationError):
            CameraIntrinsics.from_fov(640, 480, 180.0)

    def test_non_positive_focal_rejected(self):
        """Test that a zero focal length is a validation error."""
        with self.assertRaises(ValidationError):
            CameraIntrinsics(0.0, 500.0, 320.0, 240.0, 640, 480)

    def test_missing_keys_rejected(self):
        """Test that intrinsics without ppy are rejected."""
        with self.assertRaises(ValidationError):
            CameraIntrinsics.from_dict({"fx": 500, "fy": 500, "ppx": 320, "width": 640, "height": 480})

    def test_scaled(self):
        """Test that resampling scales focal lengths, principal point and size together."""
        cam = CameraIntrinsics(500.0, 510.0, 320.0, 240.0, 640, 480).scaled(0.5)
        self.assertEqual(cam.as_dict(), {"fx": 250.0, "fy": 255.0, "ppx": 160.0, "ppy": 120.0, "width": 320, "height": 240})


class ProjectTest(SimpleTestCase):
    """Test pinhole projection and back-projection."""

    def setUp(self):
        self.cam = CameraIntrinsics(600.0, 620.0, 300.0, 250.0, 640, 480)

    def test_optical_axis_hits_principal_point(self):
        """Test that a point on the optical axis projects to the principal point."""
        np.testing.assert_allclose(project_points(self.cam, [[0.0, 0.0, 500.0]]), [[300.0, 250.0]])

    def test_45_degree_ray(self):
        """Test that X = Z lands fx pixels right of the principal point."""
        u, v = project_points(self.cam, [[700.0, 0.0, 700.0]])[0]
        self.assertAlmostEqual(u, 300.0 + 600.0, places=9)
        self.assertAlmostEqual(v, 250.0, places=9)

    def test_behind_camera_names_the_joint(self):
        """Test that the first joint with Z <= 0 is reported."""
        joints = np.tile([0.0, 0.0, 400.0], (21, 1))
        joints[7, 2] = -1.0
        joints[9, 2] = 0.0
        with self.assertRaises(BehindCameraError) as ctx:
            project(self.cam, joints)
        self.assertEqual(ctx.exception.index, 7)
        self.assertEqual(ctx.exception.as_dict()["index"], 7)

    def test_lift_inverts_project(self):
        """Test that back-projecting at the true depth recovers random points."""
        rng = np.random.default_rng(0)
        points = np.column_stack([rng.uniform(-150, 150, 21), rng.uniform(-150, 150, 21), rng.uniform(200, 700, 21)])
        pixels = project(self.cam, points).points
        np.testing.assert_allclose(lift(self.cam, pixels, points[:, 2]), points, atol=1e-9)

    def test_lift_rejects_non_positive_depth(self):
        """Test that lifting at zero depth is a validation error."""
        with self.assertRaises(ValidationError):
            lift(self.cam, [[0.0, 0.0]], [0.0])

    def test_scaling_points_keeps_projection(self):
        """Test that scaling a scene about the camera centre leaves its image unchanged."""
        points = np.array([[-100.0, 20.0, 400.0], [100.0, -30.0, 450.0], [0.0, 0.0, 380.0]])
        np.testing.assert_allclose(project_points(self.cam, 2.0 * points), project_points(self.cam, points), atol=1e-9)

    def test_projection_jacobian(self):
        """Test the projection derivative against central differences."""
        point = np.array([[40.0, -25.0, 420.0]])
        jacobian = projection_jacobian(self.cam, point)[0]
        eps = 1e-4
        for axis in range(3):
            step = np.zeros((1, 3))
            step[0, axis] = eps
            numeric = (project_points(self.cam, point + step) - project_points(self.cam, point - step))[0] / (2 * eps)
            np.testing.assert_allclose(jacobian[:, axis], numeric, atol=1e-6)


class PixelAnglesTest(SimpleTestCase):
    """Test ray angles of image locations."""

    def setUp(self):
        self.cam = CameraIntrinsics(600.0, 620.0, 300.0, 250.0, 640, 480)

    def test_principal_point_is_zero(self):
        """Test that the principal point has zero ray angles."""
        self.assertEqual(pixel_angles(self.cam, 300.0, 250.0), (0.0, 0.0))

    def test_unit_tangent(self):
        """Test that x = ppx + fx gives pi/4 to 1e-12."""
        theta_x, _theta_y = pixel_angles(self.cam, 900.0, 250.0)
        self.assertAlmostEqual(theta_x, np.pi / 4, delta=1e-12)

    def test_inverse_construction(self):
        """Test that x = ppx - fx tan(0.3) gives -0.3 rad."""
        theta_x, _theta_y = pixel_angles(self.cam, 300.0 - 600.0 * np.tan(0.3), 250.0)
        self.assertAlmostEqual(theta_x, -0.3, delta=1e-12)

    def test_strictly_monotone_in_x(self):
        """Test that angles increase strictly along a scanline."""
        theta_x, _theta_y = pixel_angles(self.cam, np.linspace(-5000.0, 5000.0, 2001), np.full(2001, 10.0))
        self.assertTrue(np.all(np.diff(theta_x) > 0))
        self.assertTrue(np.all(np.abs(theta_x) < np.pi / 2))

    def test_resampling_invariance(self):
        """Test that scaling intrinsics and pixel together keeps the angles, over 1000 draws."""
        rng = np.random.default_rng(42)
        for _draw in range(1000):
            cam = random_camera(rng)
            factor = rng.uniform(0.1, 10.0)
            x, y = rng.uniform(-500.0, 2500.0, size=2)
            scaled = CameraIntrinsics(
                cam.fx * factor, cam.fy * factor, cam.ppx * factor, cam.ppy * factor, cam.width, cam.height,
            )
            original = pixel_angles(cam, x, y)
            resampled = pixel_angles(scaled, x * factor, y * factor)
            self.assertAlmostEqual(original[0], resampled[0], delta=1e-12)
            self.assertAlmostEqual(original[1], resampled[1], delta=1e-12)


class CropBoxTest(SimpleTestCase):
    """Test crop box construction."""

    def test_inverted_box_rejected(self):
        """Test that x_min >= x_max is a validation error."""
        with self.assertRaises(ValidationError):
            CropBox(10.0, 0.0, 10.0, 5.0)

    def test_non_finite_rejected(self):
        """Test that an infinite coordinate is rejected."""
        with self.assertRaises(ValidationError):
            CropBox(0.0, 0.0, np.inf, 5.0)

    def test_from_center(self):
        """Test that a centred square box has the requested side and centre."""
        box = CropBox.from_center(100.0, 50.0, 40.0)
        self.assertEqual(box.as_dict(), {"x_min": 80.0, "y_min": 30.0, "x_max": 120.0, "y_max": 70.0})
        np.testing.assert_array_equal(box.center, [100.0, 50.0])

    def test_from_keypoints(self):
        """Test that the keypoint crop is square around the keypoint bounds."""
        points = np.zeros((21, 2))
        points[:, 0] = np.linspace(100.0, 140.0, 21)
        points[:, 1] = np.linspace(200.0, 220.0, 21)
        box = CropBox.from_keypoints(points, scale=1.5)
        self.assertAlmostEqual(box.width, 60.0)
        self.assertAlmostEqual(box.height, 60.0)
        np.testing.assert_allclose(box.center, [120.0, 210.0])

    def test_sparse_point_order(self):
        """Test that corners come first and the centre last."""
        box = CropBox(0.0, 0.0, 4.0, 2.0)
        np.testing.assert_array_equal(box.sparse_points(), [[0, 0], [4, 0], [0, 2], [4, 2], [2, 1]])


class KpeTest(SimpleTestCase):
    """Test the sparse and dense positional encodings."""

    def setUp(self):
        self.cam = CameraIntrinsics.from_fov(640, 480, 60.0)
        self.centered = CropBox.from_center(self.cam.ppx, self.cam.ppy, 210.0)

    def test_sparse_has_80_bounded_values(self):
        """Test that the sparse encoding has 5 blocks of 16 values in [-1, 1]."""
        encoding = kpe_sparse(self.cam, CropBox(-300.0, -100.0, 50.0, 900.0))
        self.assertEqual(encoding.values.shape, (80,))
        self.assertEqual(encoding.point_count, 5)
        self.assertTrue(np.all(np.abs(encoding.values) <= 1.0))

    def test_centered_box_center_block(self):
        """Test that a box centred on the principal point encodes zero angles at its centre."""
        encoding = kpe_sparse(self.cam, self.centered)
        np.testing.assert_allclose(encoding.center, [0.0, 1.0] * 8, atol=1e-15)

    def test_sparse_is_pure(self):
        """Test that encoding the same box twice gives identical values."""
        np.testing.assert_array_equal(kpe_sparse(self.cam, self.centered).values, kpe_sparse(self.cam, self.centered).values)

    def test_corner_box_is_distinguishable(self):
        """Test that a same-size box in the image corner differs in at least half the values by more than 0.1."""
        corner = CropBox.from_center(600.0, 440.0, 210.0)
        difference = np.abs(kpe_sparse(self.cam, corner).values - kpe_sparse(self.cam, self.centered).values)
        self.assertGreaterEqual(int(np.sum(difference > 0.1)), 40)

    def test_block_layout(self):
        """Test that each block interleaves sin and cos per frequency, x angle first."""
        box = CropBox.from_center(500.0, 100.0, 50.0)
        encoding = kpe_sparse(self.cam, box)
        theta_x, theta_y = pixel_angles(self.cam, 500.0, 100.0)
        expected = []
        for theta in (theta_x, theta_y):
            for k in range(4):
                expected.extend([np.sin(2 ** k * theta), np.cos(2 ** k * theta)])
        np.testing.assert_allclose(encoding.center, expected, atol=1e-15)

    def test_encoding_length_checked(self):
        """Test that a KPE vector not made of whole blocks is rejected."""
        with self.assertRaises(ValidationError):
            KpeEncoding(np.zeros(BLOCK_SIZE + 1))

    def test_dense_grid_one_matches_sparse_center(self):
        """Test that a single dense cell equals the sparse centre block."""
        box = CropBox(100.0, 20.0, 260.0, 120.0)
        dense = kpe_dense(self.cam, box, 1)
        self.assertEqual(dense.shape, (1, 1, 16))
        np.testing.assert_allclose(dense[0, 0], kpe_sparse(self.cam, box).center, atol=1e-15)

    def test_dense_mirror_symmetry(self):
        """Test that mirroring a centred dense map negates x sines and keeps everything else."""
        dense = kpe_dense(self.cam, self.centered, 7)
        mirrored = dense[:, ::-1, :]
        np.testing.assert_allclose(mirrored[..., 0:8:2], -dense[..., 0:8:2], atol=1e-12)
        np.testing.assert_allclose(mirrored[..., 1:8:2], dense[..., 1:8:2], atol=1e-12)
        np.testing.assert_allclose(mirrored[..., 8:], dense[..., 8:], atol=1e-12)

    def test_dense_cells_match_pixel_angles(self):
        """Test every dense cell against angles of its cell centre."""
        box = CropBox(10.0, 30.0, 250.0, 190.0)
        grid = 4
        dense = kpe_dense(self.cam, box, grid)
        for row in range(grid):
            for col in range(grid):
                x = box.x_min + (col + 0.5) * box.width / grid
                y = box.y_min + (row + 0.5) * box.height / grid
                theta_x, theta_y = pixel_angles(self.cam, x, y)
                self.assertAlmostEqual(dense[row, col, 0], np.sin(theta_x), delta=1e-12)
                self.assertAlmostEqual(dense[row, col, 9], np.cos(theta_y), delta=1e-12)
                self.assertAlmostEqual(dense[row, col, 15], np.cos(8 * theta_y), delta=1e-12)

    def test_dense_grid_must_be_positive(self):
        """Test that a zero grid is rejected."""
        with self.assertRaises(ValidationError):
            kpe_dense(self.cam, self.centered, 0)


class PerspectiveDemoTest(SimpleTestCase):
    """Test the lateral perspective placement of one hand."""

    def setUp(self):
        self.cam = CameraIntrinsics.from_fov(640, 480, 60.0)
        self.params = default_reference_params(depth=400.0)

    def test_single_offset(self):
        """Test that one offset gives one projection with zero error to itself."""
        projections = perspective_demo(self.cam, self.params, [0.0])
        self.assertEqual(len(projections), 1)
        self.assertEqual(centered_2d_error(projections[0], projections[0]), 0.0)

    def test_lateral_placements_change_shape(self):
        """Test that the same hand at -200 and +200 mm looks different after centering."""
        projections = perspective_demo(self.cam, self.params, [-200.0, 0.0, 200.0])
        self.assertEqual(len(projections), 3)
        self.assertGreater(centered_2d_error(projections[0], projections[2]), 1.0)

    def test_behind_camera_propagates(self):
        """Test that a hand placed behind the camera raises."""
        params = self.params.replace(root_trans=np.array([0.0, 0.0, -100.0]))
        with self.assertRaises(BehindCameraError):
            perspective_demo(self.cam, params, [0.0])
