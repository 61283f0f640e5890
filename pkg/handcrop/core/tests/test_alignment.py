"""
Tests for PnP alignment, shift-augmented alignment and the ambiguity scan.
"""

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from ..alignment import (
    RigidPose,
    ambiguity_scan,
    find_ambiguity_witness,
    fit_keypoints_2d,
    pnp_align,
    pnp_align_with_shift,
    sample_shifts,
    separation_check,
    solve_pnp,
)
from ..camera import CameraIntrinsics, project
from ..exceptions import BehindCameraError, DegenerateConfigurationError
from ..hand_model import default_hand_model, posed_joints
from ..metrics import AmbiguityRecord
from ..population import default_reference_params, sample_population
from ..rotations import random_rotation, rotation_angle_between


class PnpTestMixin:
    def setUp(self):
        self.cam = CameraIntrinsics.from_fov(640, 480, 60.0)
        self.model = default_hand_model()
        self.reference = default_reference_params(depth=400.0)
        self.reference3d = posed_joints(self.model, self.reference)
        # Hand-local keypoints around the wrist, non-planar because the fingers are flexed.
        self.local = self.reference3d - self.reference3d[0]


class RigidPoseTest(SimpleTestCase):
    """Test rigid pose validation."""

    def test_reflection_rejected(self):
        """Test that a matrix with determinant -1 is not a rotation."""
        with self.assertRaises(ValidationError):
            RigidPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_apply_and_dict(self):
        """Test that the identity pose leaves points unchanged and serializes its rotation vector."""
        pose = RigidPose.identity()
        np.testing.assert_array_equal(pose.apply([[1.0, 2.0, 3.0]]), [[1.0, 2.0, 3.0]])
        self.assertEqual(pose.as_dict()["rotvec"], [0.0, 0.0, 0.0])


class PnpAlignTest(PnpTestMixin, SimpleTestCase):
    """Test PnP pose recovery."""

    def test_noiseless_round_trip(self):
        """Test that 100 random poses are recovered to 1e-6 with sub-1e-8 px residual in at least 99 cases."""
        rng = np.random.default_rng(0)
        successes = 0
        for _trial in range(100):
            rotation = random_rotation(rng)
            translation = np.array([rng.uniform(-80, 80), rng.uniform(-60, 60), rng.uniform(400, 700)])
            ref2d = project(self.cam, self.local @ rotation.T + translation)
            pose, residual = pnp_align(ref2d, self.local, self.cam)
            if (
                rotation_angle_between(pose.rotation, rotation) < 1e-6
                and np.linalg.norm(pose.translation - translation) < 1e-6
                and residual < 1e-8
            ):
                successes += 1
        self.assertGreaterEqual(successes, 99)

    def test_already_aligned_is_fixed_point(self):
        """Test that a hand matching its own projection gets the identity pose."""
        pose, residual = pnp_align(project(self.cam, self.reference3d), self.reference3d, self.cam)
        self.assertLess(rotation_angle_between(pose.rotation, np.eye(3)), 1e-6)
        self.assertLess(np.linalg.norm(pose.translation), 1e-6)
        self.assertLess(residual, 1e-8)

    def test_noisy_keypoints_envelope(self):
        """Test that 0.5 px keypoint noise keeps the residual under 1 px and the pose close."""
        rng = np.random.default_rng(1)
        rotation = random_rotation(rng, max_angle=1.0)
        translation = np.array([20.0, -10.0, 450.0])
        ref2d = project(self.cam, self.local @ rotation.T + translation).points
        noisy = ref2d + rng.normal(0.0, 0.5, size=ref2d.shape)
        pose, residual = pnp_align(noisy, self.local, self.cam)
        self.assertLessEqual(residual, 1.0)
        self.assertLess(rotation_angle_between(pose.rotation, rotation), 0.1)
        self.assertLess(np.linalg.norm(pose.translation - translation), 30.0)

    def test_objective_never_increases(self):
        """Test that accepted Gauss-Newton steps never raise the reprojection objective."""
        rng = np.random.default_rng(2)
        ref2d = project(self.cam, self.local @ random_rotation(rng).T + [0.0, 0.0, 500.0]).points
        solution = solve_pnp(self.local, ref2d + rng.normal(0.0, 2.0, size=ref2d.shape), self.cam)
        self.assertTrue(all(b <= a for a, b in zip(solution.objective, solution.objective[1:])))
        self.assertIn(solution.initialization, ("dlt", "homography"))

    def test_planar_points_use_homography(self):
        """Test that coplanar points are initialized from a plane homography."""
        rng = np.random.default_rng(3)
        planar = np.column_stack([rng.uniform(-60, 60, 21), rng.uniform(-60, 60, 21), np.zeros(21)])
        rotation = random_rotation(rng, max_angle=0.8)
        translation = np.array([10.0, 5.0, 500.0])
        ref2d = project(self.cam, planar @ rotation.T + translation).points
        solution = solve_pnp(planar, ref2d, self.cam)
        self.assertEqual(solution.initialization, "homography")
        self.assertLess(solution.residual, 1e-8)
        self.assertLess(rotation_angle_between(solution.pose.rotation, rotation), 1e-6)

    def test_collinear_points_rejected(self):
        """Test that collinear keypoints are a degenerate configuration."""
        line = np.outer(np.linspace(-50, 50, 21), [1.0, 2.0, 0.5])
        pixels = project(self.cam, line + [0.0, 0.0, 400.0]).points
        with self.assertRaises(DegenerateConfigurationError):
            solve_pnp(line, pixels, self.cam)

    def test_too_few_correspondences(self):
        """Test that five correspondences are rejected."""
        with self.assertRaises(ValidationError):
            solve_pnp(self.local[:5], np.zeros((5, 2)), self.cam)

    def test_proper_rotation_after_solve(self):
        """Test that every recovered rotation is orthonormal with determinant one."""
        rng = np.random.default_rng(4)
        ref2d = project(self.cam, self.local @ random_rotation(rng).T + [0.0, 0.0, 450.0]).points
        pose, _residual = pnp_align(ref2d + rng.normal(0, 1.0, ref2d.shape), self.local, self.cam)
        np.testing.assert_allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-9)
        self.assertAlmostEqual(np.linalg.det(pose.rotation), 1.0, delta=1e-9)


class ShiftedAlignmentTest(PnpTestMixin, SimpleTestCase):
    """Test alignment against shifted reference patterns."""

    def test_zero_shift_matches_plain_alignment(self):
        """Test that a zero shift reproduces pnp_align."""
        ref2d = project(self.cam, self.reference3d)
        pose, residual = pnp_align(ref2d, self.local, self.cam)
        shifted = pnp_align_with_shift(ref2d, self.local, self.cam, (0.0, 0.0))
        np.testing.assert_array_equal(shifted.pose.rotation, pose.rotation)
        self.assertEqual(shifted.residual, residual)
        np.testing.assert_allclose(shifted.joints, pose.apply(self.local))

    def test_shift_grid_gives_distinct_poses(self):
        """Test that nine small shifts give nine different poses with sub-0.5 px residuals."""
        ref2d = project(self.cam, self.reference3d)
        translations = []
        for dx in (-20.0, 0.0, 20.0):
            for dy in (-20.0, 0.0, 20.0):
                alignment = pnp_align_with_shift(ref2d, self.local, self.cam, (dx, dy))
                self.assertLess(alignment.residual, 0.5)
                translations.append(alignment.pose.translation)
        distances = [
            np.linalg.norm(a - b) for i, a in enumerate(translations) for b in translations[i + 1:]
        ]
        self.assertGreater(min(distances), 1e-3)

    def test_shift_changes_3d_hand(self):
        """Test that a well-explained shifted pattern implies different wrist-relative 3D joints."""
        witness = find_ambiguity_witness(self.reference3d, self.cam, corner=(0, 0), steps=8, tolerance=0.5)
        self.assertIsNotNone(witness)
        self.assertLess(witness.alignment.residual, 0.5)
        self.assertGreater(witness.mpjpe_difference, 5.0)
        self.assertEqual(len(witness.candidates), 8)
        # Two rigid copies of one hand agree in their own root frames.
        self.assertLess(witness.rootrel_difference, 1e-6)

    def test_sample_shifts_keep_margin(self):
        """Test that sampled shifts keep every keypoint inside a 10 px margin."""
        ref2d = project(self.cam, self.reference3d).points
        shifts = sample_shifts(ref2d, self.cam, 50, 10.0, np.random.default_rng(5))
        self.assertEqual(shifts.shape, (50, 2))
        for shift in shifts:
            moved = ref2d + shift
            self.assertGreaterEqual(moved.min(), 10.0 - 1e-9)
            self.assertLessEqual(moved[:, 0].max(), 630.0 + 1e-9)
            self.assertLessEqual(moved[:, 1].max(), 470.0 + 1e-9)

    def test_oversized_pattern_rejected(self):
        """Test that a pattern wider than the image cannot be shifted inside it."""
        pattern = np.zeros((21, 2))
        pattern[:, 0] = np.linspace(0, 700, 21)
        with self.assertRaises(ValidationError):
            sample_shifts(pattern, self.cam, 1, 10.0, np.random.default_rng(0))


class AmbiguityScanTest(PnpTestMixin, SimpleTestCase):
    """Test the population scan."""

    def population(self):
        offsets = ([0.0, 0.0, 0.0], [60.0, 0.0, 0.0], [-40.0, 30.0, 100.0], [0.0, -50.0, -50.0])
        return [self.reference.replace(root_trans=self.reference.root_trans + offset) for offset in offsets]

    def test_reference_alone_is_zero(self):
        """Test that scanning the reference against itself gives one all-zero record."""
        result = ambiguity_scan(self.reference, [self.reference], self.model, self.cam, "raw")
        self.assertEqual(len(result.records), 1)
        record = result.records[0]
        self.assertEqual(record.pair_id, "00000")
        self.assertEqual(
            (record.crop_px_dist, record.centered_2d_err, record.abs_3d_err, record.rootrel_3d_err),
            (0.0, 0.0, 0.0, 0.0),
        )

    def test_raw_translated_copies(self):
        """Test that translated copies have zero root-relative error but a crop distance."""
        result = ambiguity_scan(self.reference, self.population(), self.model, self.cam, "raw")
        self.assertEqual([r.pair_id for r in result.records], ["00000", "00001", "00002", "00003"])
        self.assertAlmostEqual(result.records[1].abs_3d_err, 60.0, places=9)
        self.assertGreater(result.records[1].crop_px_dist, 50.0)
        for record in result.records:
            self.assertLess(record.rootrel_3d_err, 1e-9)

    def test_pnp_mode_aligns_patterns(self):
        """Test that PnP alignment brings every copy onto the reference pattern."""
        result = ambiguity_scan(self.reference, self.population(), self.model, self.cam, "pnp")
        self.assertEqual(len(result.records), 4)
        for record in result.records:
            self.assertLess(record.centered_2d_err, 1e-6)
            self.assertLess(record.crop_px_dist, 1e-6)

    def test_explicit_zero_shifts_match_pnp(self):
        """Test that pnp_shift with zero shifts equals pnp mode."""
        population = self.population()
        pnp = ambiguity_scan(self.reference, population, self.model, self.cam, "pnp")
        shifted = ambiguity_scan(
            self.reference, population, self.model, self.cam, "pnp_shift", shifts=np.zeros((4, 2)),
        )
        self.assertEqual(pnp.records, shifted.records)

    def test_pnp_shift_moves_crops(self):
        """Test that sampled shifts spread the aligned hands over the image."""
        result = ambiguity_scan(self.reference, self.population(), self.model, self.cam, "pnp_shift", seed=7)
        self.assertEqual(len(result.records), 4)
        self.assertTrue(any(record.crop_px_dist > 5.0 for record in result.records))

    def test_failures_are_logged_and_skipped(self):
        """Test that a hand behind the camera becomes a failure and the scan continues."""
        population = self.population()
        population.insert(2, self.reference.replace(root_trans=np.array([0.0, 0.0, -300.0])))
        result = ambiguity_scan(self.reference, population, self.model, self.cam, "raw")
        self.assertEqual(len(result.records), len(population) - 1)
        log = result.failure_log()
        self.assertEqual(len(log), 1)
        self.assertEqual(log[0]["index"], 2)
        self.assertEqual(log[0]["pair_id"], "00002")
        self.assertEqual(log[0]["type"], "BehindCameraError")

    def test_workers_keep_order_and_values(self):
        """Test that a thread pool returns the same records in the same order."""
        serial = ambiguity_scan(self.reference, self.population(), self.model, self.cam, "pnp", workers=1)
        parallel = ambiguity_scan(self.reference, self.population(), self.model, self.cam, "pnp", workers=3)
        self.assertEqual(serial.records, parallel.records)

    def test_unknown_mode_rejected(self):
        """Test that an unknown mode is a validation error."""
        with self.assertRaises(ValidationError):
            ambiguity_scan(self.reference, [self.reference], self.model, self.cam, "procrustes")

    def test_empty_population_rejected(self):
        """Test that an empty population is a validation error."""
        with self.assertRaises(ValidationError):
            ambiguity_scan(self.reference, [], self.model, self.cam, "raw")


class SeparationCheckTest(SimpleTestCase):
    """Test the near/far crop separation check."""

    def records(self):
        return [
            AmbiguityRecord("00000", 5.0, 1.0, 3.0, 4.0),
            AmbiguityRecord("00001", 10.0, 1.5, 3.0, 5.0),
            AmbiguityRecord("00002", 150.0, 1.0, 30.0, 20.0),
            AmbiguityRecord("00003", 300.0, 5.0, 90.0, 80.0),
            AmbiguityRecord("00004", 50.0, 0.5, 10.0, 60.0),
        ]

    def test_far_bucket_dominates(self):
        """Test that only matched records in the two buckets are compared."""
        result = separation_check(self.records())
        self.assertEqual((result.near_max, result.far_max), (5.0, 20.0))
        self.assertEqual((result.near_count, result.far_count), (2, 1))
        self.assertEqual(result.ratio, 4.0)
        self.assertTrue(result.passed)

    def test_factor_not_reached(self):
        """Test that a ratio below the factor fails."""
        result = separation_check(self.records(), factor=5.0)
        self.assertFalse(result.passed)
        self.assertFalse(result.as_dict()["passed"])

    def test_metric_selection(self):
        """Test that the absolute 3D error can be compared instead."""
        result = separation_check(self.records(), metric="abs_3d_err")
        self.assertEqual((result.near_max, result.far_max), (3.0, 30.0))

    def test_empty_far_bucket_fails(self):
        """Test that no far records means the check fails."""
        result = separation_check(self.records()[:2])
        self.assertFalse(result.passed)
        self.assertEqual(result.far_count, 0)

    def test_inverted_thresholds_rejected(self):
        """Test that near above far is a validation error."""
        with self.assertRaises(ValidationError):
            separation_check(self.records(), near=200.0, far=100.0)


class FitKeypoints2dTest(PnpTestMixin, SimpleTestCase):
    """Test the Levenberg-Marquardt keypoint fitter."""

    def test_own_projection_is_fixed(self):
        """Test that fitting to the initial projection takes no step."""
        fit = fit_keypoints_2d(self.model, self.reference, project(self.cam, self.reference3d), self.cam)
        self.assertEqual(fit.iterations, 0)
        self.assertLess(fit.residual, 1e-9)

    def test_recovers_moved_hand(self):
        """Test that a moved and re-articulated hand is matched in 2D with the shape untouched."""
        theta = np.array(self.reference.theta)
        theta[3, 0] += 0.3
        target = self.reference.replace(theta=theta, root_trans=self.reference.root_trans + [15.0, -10.0, 30.0])
        target2d = project(self.cam, posed_joints(self.model, target))
        fit = fit_keypoints_2d(self.model, self.reference, target2d, self.cam)
        self.assertGreater(fit.iterations, 0)
        self.assertLess(fit.residual, 0.5)
        np.testing.assert_array_equal(fit.params.beta, self.reference.beta)
        fitted2d = project(self.cam, posed_joints(self.model, fit.params)).points
        self.assertLess(np.abs(fitted2d - target2d.points).max(), 2.0)

    def test_init_behind_camera(self):
        """Test that an initial hand behind the camera is a numerical error."""
        init = self.reference.replace(root_trans=[0.0, 0.0, -100.0])
        with self.assertRaises(BehindCameraError):
            fit_keypoints_2d(self.model, init, project(self.cam, self.reference3d), self.cam)


class CropAmbiguityTest(SimpleTestCase):
    """Test the near/far crop separation on a full seeded population."""

    def test_far_crops_hide_larger_3d_errors(self):
        """Test that among 500 hands far crops show at least twice the root-relative error of near crops."""
        model = default_hand_model()
        cam = CameraIntrinsics.from_fov(640, 480, 60.0)
        reference = default_reference_params()
        population = sample_population(model, reference, cam, 499, np.random.default_rng(0), lookalike_fraction=0.5)
        scan = ambiguity_scan(reference, [reference] + population.hands, model, cam, "raw")
        self.assertEqual(len(scan.records) + len(scan.failures), 500)
        self.assertGreaterEqual(len(scan.records), 490)
        result = separation_check(scan.records, near=20.0, far=100.0, centered_max=2.0, factor=2.0)
        self.assertGreater(result.near_count, 0)
        self.assertGreater(result.far_count, 0)
        self.assertGreaterEqual(result.ratio, 2.0)
        self.assertTrue(result.passed)
