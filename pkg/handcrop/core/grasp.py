"""
Grasp classification head.

A 4-layer perceptron maps the flattened articulation (45 values, optionally
followed by an extra feature block) to logits over 8 grasp classes. Class ids
are opaque integers 0..7. Layers compute ``x @ W + b`` with a rectifier
between layers and raw logits at the output.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _
from scipy.special import log_softmax, softmax

from .hand_model import NUM_ARTICULATED
from .population import sample_articulation
from .validators import validate_array, validate_label

logger = logging.getLogger(__name__)

GRASP_CLASSES = 8
THETA_WIDTH = 3 * NUM_ARTICULATED
DEFAULT_HIDDEN = (128, 64, 32)


@dataclass(frozen=True, eq=False)
class GraspMlp:
    """
    Dense layers of the grasp head.

    Attributes:
        weights: One (fan_in, fan_out) matrix per layer.
        biases: One (fan_out,) vector per layer.
        extra_width: Width of the optional feature block after theta.
    """

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    extra_width: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValidationError(_('Every layer needs a weight matrix and a bias.'), code='dimension')
        weights = tuple(validate_array(w, (None, None), f"weights[{i}]") for i, w in enumerate(self.weights))
        biases = tuple(validate_array(b, (w.shape[1],), f"biases[{i}]") for i, (w, b) in enumerate(zip(weights, self.biases)))
        if weights[0].shape[0] != THETA_WIDTH + int(self.extra_width):
            raise ValidationError(
                _('The first layer must take %(width)s inputs.') % {'width': THETA_WIDTH + int(self.extra_width)},
                code='dimension',
            )
        for index in range(1, len(weights)):
            if weights[index].shape[0] != weights[index - 1].shape[1]:
                raise ValidationError(
                    _('Layer %(index)s does not chain with the previous layer.') % {'index': index},
                    code='dimension',
                )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "extra_width", int(self.extra_width))

    @property
    def widths(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def class_count(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def initialize(
        cls,
        hidden: Sequence[int] = DEFAULT_HIDDEN,
        seed: int = 0,
        extra_width: int = 0,
        classes: int = GRASP_CLASSES,
    ) -> "GraspMlp":
        """He-normal weights and zero biases from a seeded generator."""
        rng = np.random.default_rng(seed)
        widths = [THETA_WIDTH + extra_width, *hidden, classes]
        weights = tuple(
            rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            for fan_in, fan_out in zip(widths[:-1], widths[1:])
        )
        biases = tuple(np.zeros(width) for width in widths[1:])
        return cls(weights, biases, extra_width)

    @classmethod
    def zeros(cls, hidden: Sequence[int] = DEFAULT_HIDDEN, extra_width: int = 0) -> "GraspMlp":
        widths = [THETA_WIDTH + extra_width, *hidden, GRASP_CLASSES]
        return cls(
            tuple(np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])),
            tuple(np.zeros(width) for width in widths[1:]),
            extra_width,
        )

    def with_parameters(self, weights, biases) -> "GraspMlp":
        return GraspMlp(tuple(weights), tuple(biases), self.extra_width)

    def as_dict(self) -> dict:
        return {
            "widths": self.widths,
            "extra_width": self.extra_width,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GraspMlp":
        try:
            return cls(
                tuple(np.asarray(w, dtype=np.float64) for w in data["weights"]),
                tuple(np.asarray(b, dtype=np.float64) for b in data["biases"]),
                data.get("extra_width", 0),
            )
        except KeyError as error:
            raise ValidationError(
                _('Network file is missing %(key)s.') % {'key': error.args[0]},
                code='parameter',
            )


@dataclass(frozen=True, eq=False)
class GraspSample:
    """One training example: articulation, grasp class and optional extra features."""

    theta: np.ndarray
    label: int
    extra: Optional[np.ndarray] = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "theta", validate_array(theta, (THETA_WIDTH,), "theta"))
        object.__setattr__(self, "label", validate_label(self.label, GRASP_CLASSES))
        if self.extra is not None:
            object.__setattr__(self, "extra", validate_array(self.extra, (None,), "extra"))

    def features(self) -> np.ndarray:
        return self.theta if self.extra is None else np.concatenate([self.theta, self.extra])


@dataclass(frozen=True)
class GraspGradients:
    """Loss and parameter gradients, laid out like the network."""

    loss: float
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]


def _inputs(net: GraspMlp, theta, extra=None) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    theta = theta.reshape(-1, THETA_WIDTH) if theta.ndim > 1 and theta.shape[-1] == THETA_WIDTH else theta.reshape(1, -1)
    if extra is not None:
        theta = np.hstack([theta, np.asarray(extra, dtype=np.float64).reshape(len(theta), -1)])
    return validate_array(theta, (None, net.widths[0]), "input")


def forward_batch(net: GraspMlp, inputs: np.ndarray):
    """
    Forward pass over rows of ``inputs``.

    Returns:
        tuple: ``(logits, activations, pre_activations)``; ``activations[0]`` is the input.
    """
    activations, pre_activations = [inputs], []
    hidden = inputs
    last = len(net.weights) - 1
    for index, (weight, bias) in enumerate(zip(net.weights, net.biases)):
        pre = hidden @ weight + bias
        pre_activations.append(pre)
        hidden = pre if index == last else np.maximum(pre, 0.0)
        activations.append(hidden)
    return hidden, activations, pre_activations


def mlp_forward(net: GraspMlp, theta, extra=None) -> np.ndarray:
    """Logits for one articulation vector (45 values or a (15, 3) array)."""
    return forward_batch(net, _inputs(net, np.asarray(theta).reshape(-1), extra))[0][0]


def cross_entropy(logits, label: int):
    """
    Softmax cross-entropy of one logit vector.

    Returns:
        tuple: ``(loss, gradient)`` with ``gradient = softmax(logits) - onehot(label)``.

    Raises:
        ValidationError: If ``label`` is out of range.
    """
    logits = np.asarray(logits, dtype=np.float64)
    label = validate_label(label, logits.size)
    gradient = softmax(logits)
    gradient[label] -= 1.0
    return float(-log_softmax(logits)[label]), gradient


def cross_entropy_batch(logits: np.ndarray, labels: Sequence[int]):
    """Mean cross-entropy over rows and its gradient (already divided by the row count)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.array([validate_label(label, logits.shape[1]) for label in labels], dtype=np.int64)
    rows = np.arange(len(labels))
    losses = -log_softmax(logits, axis=1)[rows, labels]
    gradient = softmax(logits, axis=1)
    gradient[rows, labels] -= 1.0
    return float(losses.mean()), gradient / len(labels)


def backward_batch(net: GraspMlp, inputs: np.ndarray, labels: Sequence[int]) -> GraspGradients:
    """Mean loss and mean parameter gradients over rows of ``inputs``."""
    logits, activations, pre_activations = forward_batch(net, inputs)
    loss, delta = cross_entropy_batch(logits, labels)
    weight_grads: List[np.ndarray] = [None] * len(net.weights)
    bias_grads: List[np.ndarray] = [None] * len(net.weights)
    for index in range(len(net.weights) - 1, -1, -1):
        weight_grads[index] = activations[index].T @ delta
        bias_grads[index] = delta.sum(axis=0)
        if index:
            delta = (delta @ net.weights[index].T) * (pre_activations[index - 1] > 0)
    return GraspGradients(loss, tuple(weight_grads), tuple(bias_grads))


def mlp_backward(net: GraspMlp, theta, label: int, extra=None) -> GraspGradients:
    """Gradients of the cross-entropy of one example with respect to every weight and bias."""
    return backward_batch(net, _inputs(net, np.asarray(theta).reshape(-1), extra), [label])


def accuracy(net: GraspMlp, inputs: np.ndarray, labels: Sequence[int]) -> float:
    logits = forward_batch(net, inputs)[0]
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


@dataclass(frozen=True, eq=False)
class TrainingResult:
    """Trained network with per-epoch full-batch loss and accuracy (before each update)."""

    net: GraspMlp
    losses: List[float] = field(default_factory=list)
    accuracies: List[float] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.accuracies[-1] if self.accuracies else 0.0


def _canonical_order(samples: Sequence[GraspSample]) -> List[GraspSample]:
    """Sort samples by label, then features, so full-batch sums do not depend on input order."""
    features = np.array([sample.features() for sample in samples])
    labels = np.array([sample.label for sample in samples])
    keys = tuple(features[:, column] for column in range(features.shape[1] - 1, -1, -1)) + (labels,)
    return [samples[index] for index in np.lexsort(keys)]


def train_grasp_toy(
    dataset: Sequence[GraspSample],
    epochs: int = 500,
    lr: float = 0.1,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    seed: int = 0,
    freeze_hidden: bool = False,
    net: Optional[GraspMlp] = None,
) -> TrainingResult:
    """
    Full-batch gradient descent on the mean cross-entropy.

    With ``freeze_hidden`` only the output layer is updated, which makes the
    problem convex in the trained parameters.

    Raises:
        ValidationError: On an empty dataset or a negative learning rate.
    """
    if not dataset:
        raise ValidationError(_('The grasp dataset is empty.'), code='parameter')
    if lr < 0:
        raise ValidationError(_('The learning rate must not be negative.'), code='range')
    samples = _canonical_order(list(dataset))
    labels = [sample.label for sample in samples]
    if len(set(labels)) < 2:
        logger.warning(f"Grasp dataset has a single class ({labels[0]}); training anyway")
    extra_width = 0 if samples[0].extra is None else samples[0].extra.size
    net = net or GraspMlp.initialize(hidden, seed=seed, extra_width=extra_width)
    inputs = validate_array(np.array([sample.features() for sample in samples]), (len(samples), net.widths[0]), "inputs")

    losses, accuracies = [], []
    trainable = range(len(net.weights) - 1, len(net.weights)) if freeze_hidden else range(len(net.weights))
    for epoch in range(int(epochs)):
        gradients = backward_batch(net, inputs, labels)
        losses.append(gradients.loss)
        accuracies.append(accuracy(net, inputs, labels))
        weights, biases = list(net.weights), list(net.biases)
        for index in trainable:
            weights[index] = weights[index] - lr * gradients.weights[index]
            biases[index] = biases[index] - lr * gradients.biases[index]
        net = net.with_parameters(weights, biases)
        if epoch % 100 == 0:
            logger.debug(f"Grasp epoch {epoch}: loss {gradients.loss:.6g}, accuracy {accuracies[-1]:.3f}")

    final = backward_batch(net, inputs, labels)
    losses.append(final.loss)
    accuracies.append(accuracy(net, inputs, labels))
    logger.info(f"Grasp training finished: loss {losses[-1]:.6g}, accuracy {accuracies[-1]:.3f}")
    return TrainingResult(net=net, losses=losses, accuracies=accuracies)


def make_grasp_clusters(per_class: int = 20, noise: float = 0.05, seed: int = 0) -> List[GraspSample]:
    """
    Toy dataset: one canonical anatomical articulation per class plus Gaussian noise (rad).
    """
    rng = np.random.default_rng(seed)
    canonical = [sample_articulation(rng).reshape(-1) for _class in range(GRASP_CLASSES)]
    samples = []
    for label, center in enumerate(canonical):
        for _sample in range(int(per_class)):
            samples.append(GraspSample(center + rng.normal(0.0, noise, size=THETA_WIDTH), label))
    return samples
