"""
Tests for the soft silhouette renderer, its L1 loss gradients and silhouette fitting.
"""

from unittest import mock

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from ..camera import CameraIntrinsics
from ..exceptions import FitError, RenderError
from ..hand_model import POSE_DOF, apply_pose_update, default_hand_model, forward_kinematics
from ..population import default_reference_params
from .. import softras
from ..softras import (
    MaskImage,
    SoftSilhouette,
    default_sigma,
    fit_pose_to_mask,
    pose_gradient,
    render_camera,
    render_soft_silhouette,
    silhouette_l1_loss,
    silhouette_loss_grad_vertices,
)

# With fx = fy = 100 and Z = 100 mm, one millimetre is one pixel.
UNIT_CAMERA = CameraIntrinsics(100.0, 100.0, 32.0, 32.0, 64, 64)
TRIANGLE_PIXELS = ((12.3, 14.2), (47.6, 17.9), (25.1, 50.7))
QUAD_PIXELS = ((14.3, 16.2), (45.7, 13.1), (49.2, 44.6), (17.6, 47.9))


def scene(pixels, depth=100.0):
    """Camera-frame vertices at one depth whose projections are ``pixels`` under UNIT_CAMERA."""
    pixels = np.asarray(pixels, dtype=np.float64)
    return np.column_stack([pixels[:, 0] - 32.0, pixels[:, 1] - 32.0, np.full(len(pixels), depth)])


def segment_distance(point, a, b):
    edge = b - a
    t = np.clip(np.dot(point - a, edge) / np.dot(edge, edge), 0.0, 1.0)
    return np.linalg.norm(point - (a + t * edge))


def inside_triangle(point, a, b, c):
    def side(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    signs = [side(a, b, point), side(b, c, point), side(c, a, point)]
    return all(s > 0 for s in signs) or all(s < 0 for s in signs)


def numeric_vertex_gradient(vertices, faces, cam, target, coordinates, sigma, step=1e-6):
    gradient = []
    for vertex, axis in coordinates:
        plus, minus = vertices.copy(), vertices.copy()
        plus[vertex, axis] += step
        minus[vertex, axis] -= step
        loss_plus = silhouette_l1_loss(render_soft_silhouette(plus, faces, cam, sigma=sigma), target)[0]
        loss_minus = silhouette_l1_loss(render_soft_silhouette(minus, faces, cam, sigma=sigma), target)[0]
        gradient.append((loss_plus - loss_minus) / (2 * step))
    return np.array(gradient)


class RenderTest(SimpleTestCase):
    """Test soft silhouette rendering."""

    def setUp(self):
        self.vertices = scene(TRIANGLE_PIXELS)
        self.faces = np.array([[0, 1, 2]])

    def test_far_and_deep_pixels(self):
        """Test that pixels beyond the cutoff are empty and deep inside are full."""
        render = render_soft_silhouette(self.vertices, self.faces, UNIT_CAMERA)
        self.assertEqual((render.width, render.height), (64, 64))
        self.assertLess(render.occupancy[60, 60], 1e-6)
        self.assertLess(render.occupancy[2, 2], 1e-6)
        self.assertGreater(render.occupancy[24, 24], 1.0 - 1e-6)

    def test_values_are_probabilities(self):
        """Test that every occupancy lies in [0, 1]."""
        render = render_soft_silhouette(self.vertices, self.faces, UNIT_CAMERA, sigma=9.0)
        self.assertGreaterEqual(render.occupancy.min(), 0.0)
        self.assertLessEqual(render.occupancy.max(), 1.0)

    def test_default_sigma(self):
        """Test that the default sharpness is 1e-4 of the squared diagonal."""
        self.assertAlmostEqual(default_sigma(64, 48), 1e-4 * (64 ** 2 + 48 ** 2))
        render = render_soft_silhouette(self.vertices, self.faces, UNIT_CAMERA)
        self.assertAlmostEqual(render.sigma, default_sigma(64, 64))

    def test_hard_rasterizer_limit(self):
        """Test that a tiny sigma agrees with point-in-triangle tests away from the edges."""
        render = render_soft_silhouette(self.vertices, self.faces, UNIT_CAMERA, sigma=1e-6)
        a, b, c = (np.array(p) for p in TRIANGLE_PIXELS)
        checked = 0
        for row in range(64):
            for col in range(64):
                point = np.array([col + 0.5, row + 0.5])
                edge = min(segment_distance(point, a, b), segment_distance(point, b, c), segment_distance(point, c, a))
                if edge <= 1.0:
                    continue
                expected = 1.0 if inside_triangle(point, a, b, c) else 0.0
                self.assertAlmostEqual(render.occupancy[row, col], expected, delta=1e-9)
                checked += 1
        self.assertGreater(checked, 3000)

    def test_sigma_never_sharpens(self):
        """Test that |occupancy - 0.5| does not grow with sigma on a single triangle."""
        previous = None
        for sigma in (0.25, 0.5, 1.0, 2.0, 4.0, 8.0):
            render = render_soft_silhouette(self.vertices, self.faces, UNIT_CAMERA, sigma=sigma)
            margin = np.abs(render.occupancy - 0.5)
            if previous is not None:
                self.assertTrue(np.all(margin <= previous + 1e-12))
            previous = margin

    def test_deterministic(self):
        """Test that identical inputs give bit-identical renders."""
        first = render_soft_silhouette(self.vertices, self.faces, UNIT_CAMERA, sigma=2.0)
        second = render_soft_silhouette(self.vertices, self.faces, UNIT_CAMERA, sigma=2.0)
        np.testing.assert_array_equal(first.occupancy, second.occupancy)

    def test_render_size_rescales_camera(self):
        """Test that a render width different from the camera's rescales the intrinsics."""
        render = render_soft_silhouette(self.vertices, self.faces, UNIT_CAMERA, size=32)
        self.assertEqual(render.occupancy.shape, (32, 32))
        self.assertIs(render_camera(UNIT_CAMERA, None), UNIT_CAMERA)
        self.assertEqual(render_camera(UNIT_CAMERA, 32).fx, 50.0)

    def test_behind_camera(self):
        """Test that a vertex behind the camera is a render error."""
        vertices = self.vertices.copy()
        vertices[1, 2] = -5.0
        with self.assertRaises(RenderError):
            render_soft_silhouette(vertices, self.faces, UNIT_CAMERA)

    def test_sigma_must_be_positive(self):
        """Test that a zero sigma is a validation error."""
        with self.assertRaises(ValidationError):
            render_soft_silhouette(self.vertices, self.faces, UNIT_CAMERA, sigma=0.0)


class MaskLossTest(SimpleTestCase):
    """Test the L1 silhouette loss."""

    def test_exact_match(self):
        """Test that a render equal to its target has zero loss."""
        values = np.random.default_rng(0).uniform(size=(6, 7))
        loss, gradient = silhouette_l1_loss(SoftSilhouette(values, 1.0), MaskImage(values))
        self.assertEqual(loss, 0.0)
        self.assertFalse(np.any(gradient))

    def test_constant_fields(self):
        """Test that a half-grey render against a full mask costs 0.5."""
        loss, gradient = silhouette_l1_loss(SoftSilhouette(np.full((4, 5), 0.5), 1.0), MaskImage(np.ones((4, 5))))
        self.assertEqual(loss, 0.5)
        np.testing.assert_array_equal(gradient, np.full((4, 5), -1.0 / 20))

    def test_matches_pixel_loop(self):
        """Test the loss against a per-pixel loop."""
        rng = np.random.default_rng(1)
        render = rng.uniform(size=(8, 9))
        target = (rng.uniform(size=(8, 9)) > 0.5).astype(float)
        expected = sum(abs(render[r, c] - target[r, c]) for r in range(8) for c in range(9)) / 72
        loss, _gradient = silhouette_l1_loss(SoftSilhouette(render, 1.0), MaskImage(target))
        self.assertAlmostEqual(loss, expected, places=12)

    def test_modal_mask_refused(self):
        """Test that a modal mask is refused with its own code."""
        with self.assertRaises(ValidationError) as ctx:
            silhouette_l1_loss(SoftSilhouette(np.zeros((2, 2)), 1.0), MaskImage(np.zeros((2, 2)), amodal=False))
        self.assertEqual(ctx.exception.code, 'modal_mask')

    def test_size_mismatch(self):
        """Test that differently sized render and mask are rejected."""
        with self.assertRaises(ValidationError) as ctx:
            silhouette_l1_loss(SoftSilhouette(np.zeros((2, 2)), 1.0), MaskImage(np.zeros((2, 3))))
        self.assertEqual(ctx.exception.code, 'dimension')

    def test_mask_values_checked(self):
        """Test that mask values above one are rejected."""
        with self.assertRaises(ValidationError):
            MaskImage(np.full((2, 2), 1.5))


class VertexGradientTest(SimpleTestCase):
    """Test analytic vertex gradients against central differences."""

    def assertGradientMatches(self, analytic, numeric):
        error = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
        self.assertLess(error, 1e-3)

    def random_target(self, shape, seed):
        return MaskImage((np.random.default_rng(seed).uniform(size=shape) > 0.5).astype(float))

    def test_single_triangle(self):
        """Test every coordinate of a single triangle."""
        vertices = scene(TRIANGLE_PIXELS)
        faces = np.array([[0, 1, 2]])
        target = self.random_target((64, 64), 2)
        _loss, gradient, _render = silhouette_loss_grad_vertices(vertices, faces, UNIT_CAMERA, target, sigma=4.0)
        coordinates = [(v, a) for v in range(3) for a in range(3)]
        numeric = numeric_vertex_gradient(vertices, faces, UNIT_CAMERA, target, coordinates, 4.0)
        self.assertGradientMatches(np.array([gradient[v, a] for v, a in coordinates]), numeric)

    def test_two_triangles(self):
        """Test every coordinate of a tilted quad made of two triangles."""
        vertices = scene(QUAD_PIXELS)
        vertices[2, 2] = 110.0
        faces = np.array([[0, 1, 2], [0, 2, 3]])
        target = self.random_target((64, 64), 3)
        _loss, gradient, _render = silhouette_loss_grad_vertices(vertices, faces, UNIT_CAMERA, target, sigma=3.0)
        coordinates = [(v, a) for v in range(4) for a in range(3)]
        numeric = numeric_vertex_gradient(vertices, faces, UNIT_CAMERA, target, coordinates, 3.0)
        self.assertGradientMatches(np.array([gradient[v, a] for v, a in coordinates]), numeric)

    def test_hand_mesh(self):
        """Test 100 random coordinates of the posed hand mesh."""
        model = default_hand_model()
        cam = CameraIntrinsics.from_fov(96, 72, 60.0)
        vertices = np.array(forward_kinematics(model, default_reference_params(depth=300.0)).vertices)
        target = MaskImage(np.zeros((72, 96)))
        sigma = default_sigma(96, 72)
        _loss, gradient, _render = silhouette_loss_grad_vertices(vertices, model.faces, cam, target, sigma=sigma)
        rng = np.random.default_rng(4)
        coordinates = list(zip(rng.integers(0, model.vertex_count, 100), rng.integers(0, 3, 100)))
        numeric = numeric_vertex_gradient(vertices, model.faces, cam, target, coordinates, sigma)
        self.assertGradientMatches(np.array([gradient[v, a] for v, a in coordinates]), numeric)

    def test_curved_grid(self):
        """Test 100 random coordinates of a 36-vertex curved sheet with varying depth."""
        grid_u, grid_v = np.meshgrid(np.linspace(10.3, 53.7, 6), np.linspace(11.1, 52.9, 6))
        pixels = np.column_stack([grid_u.ravel(), grid_v.ravel()])
        depth = 100.0 + 8.0 * np.sin(pixels[:, 0] / 9.0) + 5.0 * np.cos(pixels[:, 1] / 7.0)
        vertices = scene(pixels)
        vertices[:, :2] *= (depth / 100.0)[:, None]
        vertices[:, 2] = depth
        faces = []
        for row in range(5):
            for col in range(5):
                corner = 6 * row + col
                faces.extend([[corner, corner + 1, corner + 7], [corner, corner + 7, corner + 6]])
        faces = np.array(faces)
        target = self.random_target((64, 64), 5)
        _loss, gradient, _render = silhouette_loss_grad_vertices(vertices, faces, UNIT_CAMERA, target, sigma=3.0)
        rng = np.random.default_rng(6)
        coordinates = list(zip(rng.integers(0, len(vertices), 100), rng.integers(0, 3, 100)))
        numeric = numeric_vertex_gradient(vertices, faces, UNIT_CAMERA, target, coordinates, 3.0)
        self.assertGradientMatches(np.array([gradient[v, a] for v, a in coordinates]), numeric)

    def test_zero_at_self_target(self):
        """Test that the gradient vanishes when the target is the render itself."""
        vertices = scene(TRIANGLE_PIXELS)
        faces = np.array([[0, 1, 2]])
        render = render_soft_silhouette(vertices, faces, UNIT_CAMERA, sigma=4.0)
        _loss, gradient, _render = silhouette_loss_grad_vertices(
            vertices, faces, UNIT_CAMERA, MaskImage.from_silhouette(render), sigma=4.0,
        )
        self.assertLess(np.linalg.norm(gradient), 1e-10)

    def test_points_toward_shifted_mask(self):
        """Test that descending the gradient moves the mesh toward a mask shifted along +x."""
        vertices = scene(TRIANGLE_PIXELS)
        faces = np.array([[0, 1, 2]])
        shifted = render_soft_silhouette(vertices + [6.0, 0.0, 0.0], faces, UNIT_CAMERA, sigma=4.0)
        target = MaskImage.from_silhouette(shifted, threshold=0.5)
        _loss, gradient, _render = silhouette_loss_grad_vertices(vertices, faces, UNIT_CAMERA, target, sigma=4.0)
        self.assertLess(gradient[:, 0].sum(), 0.0)


class PoseGradientTest(SimpleTestCase):
    """Test the pull-back of vertex gradients to pose perturbations."""

    def test_matches_central_differences(self):
        """Test selected pose components against central differences of the loss."""
        model = default_hand_model()
        cam = CameraIntrinsics.from_fov(96, 72, 60.0)
        params = default_reference_params(depth=300.0)
        target = MaskImage(np.zeros((72, 96)))
        posed = forward_kinematics(model, params)
        _loss, vertex_gradient, _render = silhouette_loss_grad_vertices(posed.vertices, model.faces, cam, target)
        analytic = pose_gradient(model, posed, vertex_gradient)

        def loss_at(delta):
            vertices = forward_kinematics(model, apply_pose_update(params, delta)).vertices
            return silhouette_l1_loss(render_soft_silhouette(vertices, model.faces, cam), target)[0]

        components = [0, 1, 2, 3, 4, 5, 6, 13, 24, 40, POSE_DOF - 1]
        numeric = []
        step = 1e-8
        for k in components:
            delta = np.zeros(POSE_DOF)
            delta[k] = step
            numeric.append((loss_at(delta) - loss_at(-delta)) / (2 * step))
        numeric = np.array(numeric)
        error = np.linalg.norm(analytic[components] - numeric) / np.linalg.norm(numeric)
        self.assertLess(error, 1e-3)


class FitPoseToMaskTest(SimpleTestCase):
    """Test gradient-descent silhouette fitting."""

    def setUp(self):
        self.model = default_hand_model()
        self.cam = CameraIntrinsics.from_fov(64, 48, 60.0)
        self.init = default_reference_params(depth=300.0)

    def soft_target(self, params, amodal=True):
        posed = forward_kinematics(self.model, params)
        return MaskImage.from_silhouette(render_soft_silhouette(posed.vertices, self.model.faces, self.cam), amodal=amodal)

    def test_self_target_is_fixed_point(self):
        """Test that fitting to the initial pose's own render changes nothing."""
        result = fit_pose_to_mask(self.model, self.init, self.soft_target(self.init), self.cam, steps=10)
        self.assertEqual(result.iterations, 0)
        self.assertEqual(result.reason, "stationary")
        self.assertEqual(result.final_loss, 0.0)
        np.testing.assert_allclose(result.params.root_trans, self.init.root_trans, atol=1e-9)
        np.testing.assert_allclose(result.params.theta, self.init.theta, atol=1e-9)

    def test_recovers_lateral_translation(self):
        """Test that a 20 mm lateral offset is recovered to 3 mm with non-increasing losses."""
        target_params = self.init.replace(root_trans=self.init.root_trans + [20.0, 0.0, 0.0])
        result = fit_pose_to_mask(
            self.model, self.init, self.soft_target(target_params), self.cam, steps=300, blocks=["root_trans"],
        )
        self.assertLessEqual(result.iterations, 300)
        self.assertLess(abs(result.params.root_trans[0] - target_params.root_trans[0]), 3.0)
        self.assertTrue(all(b <= a for a, b in zip(result.losses, result.losses[1:])))
        self.assertLess(result.final_loss, result.initial_loss)
        self.assertEqual(len(result.step_sizes), result.iterations)

    def test_flexed_finger_reduces_loss(self):
        """Test that fitting a target with one flexed finger lowers the loss."""
        theta = np.array(self.init.theta)
        theta[3] += [np.radians(30.0), 0.0, 0.0]
        target = self.soft_target(self.init.replace(theta=theta))
        result = fit_pose_to_mask(self.model, self.init, target, self.cam, steps=20)
        self.assertLess(result.final_loss, result.initial_loss)
        self.assertTrue(all(b <= a for a, b in zip(result.losses, result.losses[1:])))

    def test_modal_target_refused(self):
        """Test that a modal target mask cannot drive the fit."""
        with self.assertRaises(ValidationError):
            fit_pose_to_mask(self.model, self.init, self.soft_target(self.init, amodal=False), self.cam, steps=1)

    def test_unrenderable_init(self):
        """Test that an initial pose behind the camera is a fit error."""
        init = self.init.replace(root_trans=np.array([0.0, 0.0, -300.0]))
        with self.assertRaises(FitError):
            fit_pose_to_mask(self.model, init, self.soft_target(self.init), self.cam, steps=1)

    def test_hand_leaving_view_mid_fit(self):
        """Test that a fit whose trial poses stop rendering fails with the last accepted pose."""
        target = self.soft_target(self.init.replace(root_trans=self.init.root_trans + [20.0, 0.0, 0.0]))
        loss_and_gradient = softras.silhouette_loss_grad_vertices
        gradient = softras.pose_gradient
        steps_started = []

        def count_steps(*args, **kwargs):
            steps_started.append(True)
            return gradient(*args, **kwargs)

        def behind_camera_after_first_step(*args, **kwargs):
            if len(steps_started) > 1:
                raise RenderError("Vertex 0 is behind the camera (Z = -1 mm).")
            return loss_and_gradient(*args, **kwargs)

        with mock.patch.object(softras, "pose_gradient", side_effect=count_steps), \
                mock.patch.object(softras, "silhouette_loss_grad_vertices", side_effect=behind_camera_after_first_step):
            with self.assertRaises(FitError) as caught:
                fit_pose_to_mask(self.model, self.init, target, self.cam, steps=50, blocks=["root_trans"])
        error = caught.exception
        self.assertEqual(len(error.losses), 2)
        self.assertEqual(len(error.step_sizes), 1)
        self.assertLess(error.losses[1], error.losses[0])
        self.assertGreater(abs(error.params.root_trans[0] - self.init.root_trans[0]), 0.0)
        posed = forward_kinematics(self.model, error.params)
        self.assertEqual(loss_and_gradient(posed.vertices, self.model.faces, self.cam, target)[0], error.losses[1])

    def test_unknown_block_rejected(self):
        """Test that an unknown parameter block is a validation error."""
        with self.assertRaises(ValidationError):
            fit_pose_to_mask(self.model, self.init, self.soft_target(self.init), self.cam, blocks=["beta"])
