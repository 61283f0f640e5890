"""
Rotation helpers shared by the kinematic, alignment and fitting code.

Axis-angle vectors are converted with ``scipy.spatial.transform.Rotation``,
which switches to a Taylor series for small angles, so no division by the
angle ever happens near the identity.
"""

import numpy as np
from scipy.spatial.transform import Rotation


def rotvec_to_matrix(rotvec) -> np.ndarray:
    """Convert one (3,) or many (N, 3) axis-angle vectors to rotation matrices."""
    rotvec = np.array(rotvec, dtype=np.float64)
    return Rotation.from_rotvec(rotvec.reshape(-1, 3)).as_matrix().reshape(rotvec.shape[:-1] + (3, 3))


def matrix_to_rotvec(matrix) -> np.ndarray:
    """Convert one (3, 3) or many (N, 3, 3) rotation matrices to axis-angle vectors."""
    matrix = np.array(matrix, dtype=np.float64)
    return Rotation.from_matrix(matrix.reshape(-1, 3, 3)).as_rotvec().reshape(matrix.shape[:-2] + (3,))


def skew(vectors) -> np.ndarray:
    """Cross-product matrices: ``skew(a) @ b == cross(a, b)``; batched over leading axes."""
    vectors = np.asarray(vectors, dtype=np.float64)
    out = np.zeros(vectors.shape[:-1] + (3, 3))
    out[..., 0, 1] = -vectors[..., 2]
    out[..., 0, 2] = vectors[..., 1]
    out[..., 1, 0] = vectors[..., 2]
    out[..., 1, 2] = -vectors[..., 0]
    out[..., 2, 0] = -vectors[..., 1]
    out[..., 2, 1] = vectors[..., 0]
    return out


def nearest_rotation(matrix) -> np.ndarray:
    """
    Project a 3x3 matrix onto SO(3) (orthogonal Procrustes).

    The sign of the last singular direction is flipped when needed so the
    result is a proper rotation.
    """
    u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    """
    Draw a rotation matrix from a seeded generator.

    With the default ``max_angle`` the axis is uniform on the sphere and the
    angle uniform in [0, pi]; smaller caps give rotations near the identity.
    """
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return rotvec_to_matrix(axis * angle)


def rotation_angle_between(a, b) -> float:
    """Geodesic angle in radians between two rotation matrices."""
    return float(np.linalg.norm(matrix_to_rotvec(np.asarray(a) @ np.asarray(b).T)))
