"""Synthetic differentiable training workloads.

Three problem families cover the regimes the strategies are exercised on:
a convex diagonal quadratic, binary logistic regression on Gaussian cluster
data, and a small tanh MLP with a softmax cross-entropy head. A central
finite-difference oracle provides an independent check of every analytic
gradient.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from psgdlab.vectors import ParamVector


class ProblemKind(str, enum.Enum):
    QUADRATIC_BOWL = "quadratic_bowl"
    LOGISTIC = "logistic"
    MLP_SOFTMAX = "mlp_softmax"

    @property
    def is_classifier(self) -> bool:
        return self is not ProblemKind.QUADRATIC_BOWL


@dataclass(frozen=True)
class Sample:
    """One training example: a feature vector and a label.

    The label is a class index for classifiers and a real vector for
    regression-style problems.
    """

    features: np.ndarray
    label: Union[int, np.ndarray]


@dataclass(frozen=True)
class Batch:
    """Array-backed view of a mini-batch (features row-major)."""

    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]


BatchLike = Union[Batch, Sequence[Sample]]


def as_batch(batch: BatchLike) -> Batch:
    """Normalize a list of samples (or a Batch) into array form."""
    if isinstance(batch, Batch):
        if len(batch) == 0:
            raise ValueError("batch must be non-empty")
        return batch
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    feats = np.stack([np.asarray(s.features, dtype=np.float64) for s in batch])
    labels = np.asarray([s.label for s in batch])
    return Batch(feats, labels)


@dataclass(frozen=True)
class Dataset:
    """Deterministically generated corpus with a disjoint heldout tail.

    Rows ``[0, n_train)`` are the training samples and rows
    ``[n_train, n_train + n_heldout)`` are heldout, so the two index ranges
    never overlap.
    """

    features: np.ndarray  # (n_train + n_heldout, d_x)
    labels: np.ndarray  # (n,) int64 for classifiers, (n, d_y) float64 otherwise
    d_x: int
    d_y: int
    n_train: int
    n_heldout: int

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_heldout

    @property
    def samples(self) -> list[Sample]:
        return [
            Sample(self.features[i], self.labels[i]) for i in range(self.n_train)
        ]

    @property
    def heldout(self) -> list[Sample]:
        return [
            Sample(self.features[i], self.labels[i])
            for i in range(self.n_train, self.n_total)
        ]

    def batch(self, indices) -> Batch:
        """Training batch for positional indices into the training range."""
        idx = np.asarray(indices)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_train):
            raise IndexError("batch indices must lie inside the training range")
        return Batch(self.features[idx], self.labels[idx])

    def heldout_batch(self) -> Batch:
        return Batch(
            self.features[self.n_train : self.n_total],
            self.labels[self.n_train : self.n_total],
        )


class Problem:
    """A differentiable workload exposing batch loss and gradient."""

    kind: ProblemKind
    dimension: int

    def loss_arrays(self, w: np.ndarray, batch: Batch) -> float:
        raise NotImplementedError

    def gradient_arrays(self, w: np.ndarray, batch: Batch) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class QuadraticBowl(Problem):
    """Convex quadratic ``0.5 * (w - w*)' A (w - w*)`` with diagonal A > 0.

    The batch is used only for sample accounting; loss and gradient depend
    on ``w`` alone.
    """

    curvature: np.ndarray  # diagonal of A, strictly positive
    optimum: np.ndarray
    kind: ProblemKind = field(default=ProblemKind.QUADRATIC_BOWL, init=False)

    def __post_init__(self):
        a = np.asarray(self.curvature, dtype=np.float64)
        w = np.asarray(self.optimum, dtype=np.float64)
        if a.shape != w.shape or a.ndim != 1:
            raise ValueError("curvature and optimum must be 1-D with equal shape")
        if np.any(a <= 0):
            raise ValueError("curvature entries must be strictly positive")
        object.__setattr__(self, "curvature", a)
        object.__setattr__(self, "optimum", w)

    @property
    def dimension(self) -> int:
        return self.curvature.shape[0]

    def loss_arrays(self, w, batch):
        delta = w - self.optimum
        return 0.5 * float(delta @ (self.curvature * delta))

    def gradient_arrays(self, w, batch):
        return self.curvature * (w - self.optimum)


@dataclass(frozen=True)
class LogisticRegression(Problem):
    """Binary logistic regression; parameters are d_x weights plus a bias."""

    d_x: int
    kind: ProblemKind = field(default=ProblemKind.LOGISTIC, init=False)

    @property
    def dimension(self) -> int:
        return self.d_x + 1

    def loss_arrays(self, w, batch):
        z = batch.features @ w[:-1] + w[-1]
        y = batch.labels.astype(np.float64)
        # mean of softplus(z) - y*z, the stable cross-entropy form
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    def gradient_arrays(self, w, batch):
        z = batch.features @ w[:-1] + w[-1]
        resid = _sigmoid(z) - batch.labels.astype(np.float64)
        m = len(batch)
        grad = np.empty(self.dimension)
        grad[:-1] = batch.features.T @ resid / m
        grad[-1] = resid.mean()
        return grad


@dataclass(frozen=True)
class MlpSoftmax(Problem):
    """Fully-connected tanh network with a softmax cross-entropy head.

    ``layer_sizes`` runs input -> hidden... -> classes; parameters are the
    row-major weight matrices and biases of each layer, concatenated.
    """

    layer_sizes: tuple[int, ...]
    kind: ProblemKind = field(default=ProblemKind.MLP_SOFTMAX, init=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def dimension(self) -> int:
        sizes = self.layer_sizes
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    def unpack(self, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        layers = []
        pos = 0
        sizes = self.layer_sizes
        for a, b in zip(sizes[:-1], sizes[1:]):
            weight = w[pos : pos + a * b].reshape(a, b)
            pos += a * b
            bias = w[pos : pos + b]
            pos += b
            layers.append((weight, bias))
        return layers

    def _forward(self, w, x):
        layers = self.unpack(w)
        activations = [x]
        for weight, bias in layers[:-1]:
            activations.append(np.tanh(activations[-1] @ weight + bias))
        weight, bias = layers[-1]
        logits = activations[-1] @ weight + bias
        return activations, logits

    def loss_arrays(self, w, batch):
        _, logits = self._forward(w, batch.features)
        return float(np.mean(_cross_entropy(logits, batch.labels)))

    def gradient_arrays(self, w, batch):
        activations, logits = self._forward(w, batch.features)
        labels = batch.labels.astype(np.intp)
        m = len(batch)
        probs = _softmax(logits)
        probs[np.arange(m), labels] -= 1.0
        delta = probs / m
        layers = self.unpack(w)
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
        for i in range(len(layers) - 1, -1, -1):
            weight, _ = layers[i]
            grads[i] = (activations[i].T @ delta, delta.sum(axis=0))
            if i > 0:
                delta = (delta @ weight.T) * (1.0 - activations[i] ** 2)
        return np.concatenate([np.concatenate([g.ravel(), b]) for g, b in grads])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(logits.shape[0])
    return lse - shifted[rows, labels.astype(np.intp)]


def make_problem(
    kind: ProblemKind | str,
    d_x: int,
    d_y: int,
    hidden: Sequence[int] = (16,),
    seed: int = 0,
) -> Problem:
    """Construct a problem instance with seeded constants."""
    kind = ProblemKind(kind)
    if kind is ProblemKind.QUADRATIC_BOWL:
        rng = np.random.default_rng([seed, 101])
        curvature = rng.uniform(0.5, 2.5, size=d_x)
        optimum = rng.standard_normal(d_x)
        return QuadraticBowl(curvature=curvature, optimum=optimum)
    if kind is ProblemKind.LOGISTIC:
        if d_y != 2:
            raise ValueError(f"logistic regression is binary; got d_y={d_y}")
        return LogisticRegression(d_x=d_x)
    return MlpSoftmax(layer_sizes=(d_x, *hidden, d_y))


def initial_params(problem: Problem, seed: int) -> ParamVector:
    """Deterministic starting point appropriate for the problem family."""
    rng = np.random.default_rng([seed, 202])
    if isinstance(problem, QuadraticBowl):
        return ParamVector(problem.optimum + rng.standard_normal(problem.dimension))
    if isinstance(problem, LogisticRegression):
        return ParamVector(0.01 * rng.standard_normal(problem.dimension))
    assert isinstance(problem, MlpSoftmax)
    chunks = []
    sizes = problem.layer_sizes
    for a, b in zip(sizes[:-1], sizes[1:]):
        chunks.append(rng.standard_normal(a * b) / np.sqrt(a))
        chunks.append(np.zeros(b))
    return ParamVector(np.concatenate(chunks))


def generate(
    kind: ProblemKind | str,
    seed: int,
    n_train: int,
    n_heldout: int,
    d_x: int,
    d_y: int,
    separation: float = 4.0,
) -> Dataset:
    """Generate a deterministic synthetic dataset.

    Classifier data draws one unit-covariance Gaussian per class with means
    placed on a scaled simplex (``separation`` apart along distinct axes);
    regression data draws Gaussian features and labels. The same arguments
    always produce a bit-identical dataset.
    """
    kind = ProblemKind(kind)
    if n_train <= 0 or n_heldout <= 0:
        raise ValueError(
            f"sample counts must be positive, got n_train={n_train}, "
            f"n_heldout={n_heldout}"
        )
    if d_x <= 0 or d_y <= 0:
        raise ValueError(f"dimensions must be positive, got d_x={d_x}, d_y={d_y}")
    n = n_train + n_heldout
    rng = np.random.default_rng([seed, 303])
    if kind.is_classifier:
        if d_x < d_y:
            raise ValueError(
                f"classifier generation needs d_x >= d_y, got d_x={d_x}, d_y={d_y}"
            )
        labels = np.arange(n, dtype=np.int64) % d_y
        rng.shuffle(labels)
        means = np.zeros((d_y, d_x))
        means[np.arange(d_y), np.arange(d_y)] = separation
        features = means[labels] + rng.standard_normal((n, d_x))
    else:
        features = rng.standard_normal((n, d_x))
        labels = rng.standard_normal((n, d_y))
    return Dataset(
        features=features,
        labels=labels,
        d_x=d_x,
        d_y=d_y,
        n_train=n_train,
        n_heldout=n_heldout,
    )


def _check_w(problem: Problem, w: ParamVector) -> np.ndarray:
    if w.dim != problem.dimension:
        raise ValueError(
            f"dimension mismatch: problem expects {problem.dimension}, "
            f"w has {w.dim}"
        )
    return w.values


def loss(problem: Problem, w: ParamVector, batch: BatchLike) -> float:
    """Mean per-sample loss of ``w`` over the batch."""
    arr = _check_w(problem, w)
    return problem.loss_arrays(arr, as_batch(batch))


def gradient(problem: Problem, w: ParamVector, batch: BatchLike) -> ParamVector:
    """Batch-averaged gradient of the loss at ``w``."""
    arr = _check_w(problem, w)
    return ParamVector(problem.gradient_arrays(arr, as_batch(batch)))


def finite_difference(
    problem: Problem, w: ParamVector, batch: BatchLike, epsilon: float
) -> ParamVector:
    """Central-difference gradient estimate; never calls the analytic path."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    arr = _check_w(problem, w).copy()
    b = as_batch(batch)
    out = np.empty_like(arr)
    for i in range(arr.shape[0]):
        orig = arr[i]
        arr[i] = orig + epsilon
        up = problem.loss_arrays(arr, b)
        arr[i] = orig - epsilon
        down = problem.loss_arrays(arr, b)
        arr[i] = orig
        out[i] = (up - down) / (2.0 * epsilon)
    return ParamVector(out)


class ShardScheme(str, enum.Enum):
    PARTITION = "partition"
    FULL_WITH_OFFSET = "full_with_offset"


def shard(
    dataset: Dataset, l: int, L: int, scheme: ShardScheme | str = ShardScheme.PARTITION
) -> np.ndarray:
    """Positional index view of the training range for learner ``l`` of ``L``.

    ``partition`` hands each learner a contiguous 1/L slice (remainder to the
    last learner). ``full_with_offset`` gives every learner the whole range as
    a rotation starting at ``l * n // L``, so per-learner consumption counts
    may differ under asynchronous execution.
    """
    scheme = ShardScheme(scheme)
    n = dataset.n_train
    if not 0 <= l < L:
        raise ValueError(f"learner index {l} outside [0, {L})")
    if L > n:
        raise ValueError(f"cannot shard {n} samples across {L} learners")
    if scheme is ShardScheme.PARTITION:
        base = n // L
        start = l * base
        stop = (l + 1) * base if l < L - 1 else n
        return np.arange(start, stop)
    offset = l * n // L
    return np.roll(np.arange(n), -offset)
