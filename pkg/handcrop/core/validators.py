"""
Parameter validation utilities for handcrop.

Every function raises ``django.core.exceptions.ValidationError`` with a
machine-readable ``code`` when its contract is violated, and returns the
validated value (as a float ``numpy`` array where relevant) otherwise.
"""

from typing import Sequence

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _


def validate_array(value, shape: Sequence, name: str) -> np.ndarray:
    """
    Validate that a value converts to a finite float array of the given shape.

    Args:
        value: Array-like input.
        shape: Expected shape; ``None`` entries accept any length.
        name: Field name used in the error message.

    Returns:
        np.ndarray: The value as a float64 array.

    Raises:
        ValidationError: If the shape differs or any entry is NaN/Inf.
    """
    try:
        array = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ValidationError(
            _('%(name)s is not numeric.') % {'name': name},
            code='parameter',
        )
    expected = tuple(shape)
    matches = array.ndim == len(expected) and all(
        want is None or got == want for got, want in zip(array.shape, expected)
    )
    if not matches:
        raise ValidationError(
            _('%(name)s must have shape %(expected)s, got %(got)s.') % {
                'name': name,
                'expected': tuple('*' if s is None else s for s in expected),
                'got': array.shape,
            },
            code='dimension',
        )
    if not np.all(np.isfinite(array)):
        raise ValidationError(
            _('%(name)s contains NaN or Inf values.') % {'name': name},
            code='parameter',
        )
    return array


def validate_positive(value: float, name: str) -> float:
    """
    Validate that a scalar is finite and strictly positive.

    Raises:
        ValidationError: If the value is not a positive number.
    """
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ValidationError(
            _('%(name)s is not a number.') % {'name': name},
            code='parameter',
        )
    if not np.isfinite(number) or number <= 0:
        raise ValidationError(
            _('%(name)s must be positive, got %(value)s.') % {'name': name, 'value': value},
            code='range',
        )
    return number


def validate_fraction(value: float, name: str) -> float:
    """Validate that a scalar lies in the closed interval [0, 1]."""
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ValidationError(
            _('%(name)s is not a number.') % {'name': name},
            code='parameter',
        )
    if not 0.0 <= number <= 1.0:
        raise ValidationError(
            _('%(name)s must lie in [0, 1], got %(value)s.') % {'name': name, 'value': value},
            code='range',
        )
    return number


def validate_interval(low: float, high: float, name: str) -> tuple:
    """Validate a positive, strictly increasing interval such as a depth range."""
    low = validate_positive(low, f"{name} lower bound")
    high = validate_positive(high, f"{name} upper bound")
    if not low < high:
        raise ValidationError(
            _('%(name)s must satisfy low < high, got (%(low)s, %(high)s).') % {
                'name': name, 'low': low, 'high': high,
            },
            code='range',
        )
    return low, high


def validate_joint_tree(parents: Sequence[int]) -> np.ndarray:
    """
    Validate that a parent array encodes a tree rooted at joint 0.

    The root carries the sentinel parent -1 and every other joint must reach
    the root by following parents without revisiting a joint.

    Raises:
        ValidationError: If the root is wrong, an index is out of range or a
            cycle exists.
    """
    parents = np.asarray(parents, dtype=np.int64)
    count = len(parents)
    if count == 0 or parents[0] != -1:
        raise ValidationError(_('Joint 0 must be the root with parent -1.'), code='parameter')
    for joint in range(1, count):
        seen = {joint}
        current = int(parents[joint])
        while current != -1:
            if current < 0 or current >= count:
                raise ValidationError(
                    _('Joint %(joint)s has invalid parent %(parent)s.') % {
                        'joint': joint, 'parent': current,
                    },
                    code='parameter',
                )
            if current in seen:
                raise ValidationError(
                    _('Joint hierarchy contains a cycle through joint %(joint)s.') % {'joint': joint},
                    code='parameter',
                )
            seen.add(current)
            current = int(parents[current])
    return parents


def validate_row_stochastic(weights: np.ndarray, name: str, tolerance: float = 1e-9) -> np.ndarray:
    """
    Validate that a matrix is non-negative with rows summing to one.

    Raises:
        ValidationError: On a negative entry or a row sum outside 1 +- tolerance.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise ValidationError(
            _('%(name)s contains negative entries.') % {'name': name},
            code='parameter',
        )
    sums = weights.sum(axis=1)
    worst = int(np.argmax(np.abs(sums - 1.0)))
    if abs(sums[worst] - 1.0) > tolerance:
        raise ValidationError(
            _('%(name)s row %(row)s sums to %(total)s, expected 1.') % {
                'name': name, 'row': worst, 'total': sums[worst],
            },
            code='parameter',
        )
    return weights


def validate_face_indices(faces, vertex_count: int) -> np.ndarray:
    """Validate that every face is a triple of existing vertex indices."""
    faces = np.asarray(faces, dtype=np.int64)
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise ValidationError(
            _('Faces must have shape (F, 3), got %(shape)s.') % {'shape': faces.shape},
            code='dimension',
        )
    if faces.size and (faces.min() < 0 or faces.max() >= vertex_count):
        raise ValidationError(
            _('Faces reference vertices outside [0, %(count)s).') % {'count': vertex_count},
            code='parameter',
        )
    return faces


def validate_label(label: int, class_count: int) -> int:
    """Validate a class id in ``0..class_count-1``."""
    try:
        whole = int(label)
    except (TypeError, ValueError, OverflowError):
        raise ValidationError(
            _('Label %(label)s is not an integer.') % {'label': label},
            code='parameter',
        )
    if isinstance(label, bool) or whole != label or not 0 <= whole < class_count:
        raise ValidationError(
            _('Label %(label)s is outside 0..%(last)s.') % {'label': label, 'last': class_count - 1},
            code='range',
        )
    return whole
