"""Feed-forward classifier with hand-derived gradients.

Parameters live in a single flat vector (weights then biases, layer by
layer) so Gaussian prior/posterior divergences reduce to squared norms.
Hidden activations are leaky ReLUs; the output layer is a softmax. The
training loss is the bounded cross-entropy
``min(-ln(max(p_y, e^-l_max)), l_max) / l_max``, which lives in [0, 1]; its
clamp has zero gradient where active.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, SubgroupPartition
from .errors import DimensionMismatch, DomainError
from .risk import RiskSpec, SubgroupLosses, constrained_weights
from .validation import check_positive

DEFAULT_LEAKY_SLOPE = 0.01
DEFAULT_L_MAX = 4.0

# a ParamVector is a flat 1-D float64 array; arch describes its layout
ParamVector = np.ndarray


@dataclass(frozen=True)
class MlpArch:
    """Layer sizes (input, hidden..., output) and the leaky-ReLU slope."""

    layer_sizes: tuple[int, ...]
    leaky_slope: float = DEFAULT_LEAKY_SLOPE

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise DimensionMismatch("need at least input and output layer sizes")
        if any(s < 1 for s in sizes):
            raise DimensionMismatch("layer sizes must be positive")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "leaky_slope", float(self.leaky_slope))

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]

    @property
    def param_count(self) -> int:
        return sum((n_in + 1) * n_out for n_in, n_out in
                   zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def unpack(self, params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
        """Split the flat vector into (weight matrix, bias) pairs per layer."""
        params = np.asarray(params, dtype=float)
        if params.ndim != 1 or params.size != self.param_count:
            raise DimensionMismatch(
                f"expected {self.param_count} parameters, got shape {params.shape}"
            )
        layers = []
        offset = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = params[offset:offset + n_in * n_out].reshape(n_out, n_in)
            offset += n_in * n_out
            b = params[offset:offset + n_out]
            offset += n_out
            layers.append((w, b))
        return layers

    def init_xavier(self, seed) -> ParamVector:
        """Xavier-uniform weights, zero biases; deterministic per seed."""
        rng = np.random.default_rng(seed)
        chunks = []
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            limit = math.sqrt(6.0 / (n_in + n_out))
            chunks.append(rng.uniform(-limit, limit, n_in * n_out))
            chunks.append(np.zeros(n_out))
        return np.concatenate(chunks)


@dataclass(frozen=True)
class GaussianParamDist:
    """Isotropic Gaussian over the flat parameter vector."""

    mean: ParamVector
    sigma2: float

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        if mean.ndim != 1:
            raise DimensionMismatch("mean must be a flat vector")
        check_positive(self.sigma2, "sigma2")
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def d(self) -> int:
        return self.mean.size


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def forward_batch(arch: MlpArch, params: ParamVector,
                  x: np.ndarray) -> np.ndarray:
    """Softmax probabilities for a batch of feature rows."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != arch.n_features:
        raise DimensionMismatch(
            f"expected feature rows of width {arch.n_features}, got {x.shape}"
        )
    a = x
    layers = arch.unpack(params)
    for i, (w, b) in enumerate(layers):
        z = a @ w.T + b
        if i < len(layers) - 1:
            a = np.where(z > 0.0, z, arch.leaky_slope * z)
        else:
            a = z
    return _softmax(a)


def forward(arch: MlpArch, params: ParamVector, x) -> np.ndarray:
    """Softmax probabilities for a single feature vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("forward takes a single feature vector")
    return forward_batch(arch, params, x.reshape(1, -1))[0]


def bounded_cross_entropy(probs, y: int, l_max: float = DEFAULT_L_MAX) -> float:
    """The [0, 1]-valued loss min(-ln(max(p_y, e^-l_max)), l_max) / l_max."""
    check_positive(l_max, "l_max")
    probs = np.asarray(probs, dtype=float)
    p = float(probs[int(y)])
    return min(-math.log(max(p, math.exp(-l_max))), l_max) / l_max


def bounded_cross_entropy_batch(probs: np.ndarray, y: np.ndarray,
                                l_max: float = DEFAULT_L_MAX) -> np.ndarray:
    check_positive(l_max, "l_max")
    p = probs[np.arange(len(y)), y]
    return np.minimum(-np.log(np.maximum(p, math.exp(-l_max))), l_max) / l_max


def example_losses(arch: MlpArch, params: ParamVector, data: Dataset,
                   l_max: float = DEFAULT_L_MAX) -> np.ndarray:
    probs = forward_batch(arch, params, data.features)
    return bounded_cross_entropy_batch(probs, data.labels, l_max)


def backward(arch: MlpArch, params: ParamVector, x: np.ndarray, y: np.ndarray,
             per_example_weights: np.ndarray,
             l_max: float = DEFAULT_L_MAX) -> ParamVector:
    """Gradient of sum_i w_i * loss_i with respect to the flat parameters.

    Where the loss clamp is active (p_y below e^-l_max) the example
    contributes zero gradient.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    w_ex = np.asarray(per_example_weights, dtype=float)
    if w_ex.shape != y.shape or x.shape[0] != y.shape[0]:
        raise DimensionMismatch("batch, labels and weights must align")
    if np.any(w_ex < 0):
        raise DomainError("per-example weights must be non-negative")
    check_positive(l_max, "l_max")

    layers = arch.unpack(params)
    activations = [x]
    pre = []
    a = x
    for i, (w, b) in enumerate(layers):
        z = a @ w.T + b
        pre.append(z)
        if i < len(layers) - 1:
            a = np.where(z > 0.0, z, arch.leaky_slope * z)
            activations.append(a)
    probs = _softmax(pre[-1])

    p_y = probs[np.arange(len(y)), y]
    clamped = p_y < math.exp(-l_max)
    eff = np.where(clamped, 0.0, w_ex) / l_max

    delta = probs.copy()
    delta[np.arange(len(y)), y] -= 1.0
    delta *= eff[:, None]

    grads: list[np.ndarray] = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grad_w = delta.T @ activations[i]
        grad_b = delta.sum(axis=0)
        grads.append(grad_b)
        grads.append(grad_w.ravel())
        if i > 0:
            delta = delta @ w
            z = pre[i - 1]
            delta = delta * np.where(z > 0.0, 1.0, arch.leaky_slope)
    return np.concatenate(grads[::-1])


def sample_params(dist: GaussianParamDist, seed) -> tuple[ParamVector, np.ndarray]:
    """Reparameterized draw: theta_tilde = mean + sigma * eps.

    The standard-normal noise eps is returned so a trainer can hold it fixed
    within an optimization step. Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(dist.d)
    return dist.mean + math.sqrt(dist.sigma2) * eps, eps


def disintegrated_kl(theta_tilde, theta, theta_prior, sigma2: float) -> float:
    """(||theta_tilde - theta_prior||^2 - ||theta_tilde - theta||^2) / (2 sigma2).

    The raw signed value is returned; bounds clamp it at zero themselves.
    """
    check_positive(sigma2, "sigma2")
    theta_tilde = np.asarray(theta_tilde, dtype=float)
    theta = np.asarray(theta, dtype=float)
    theta_prior = np.asarray(theta_prior, dtype=float)
    if not (theta_tilde.shape == theta.shape == theta_prior.shape):
        raise DimensionMismatch("parameter vectors must share one shape")
    num = float(((theta_tilde - theta_prior) ** 2).sum()
                - ((theta_tilde - theta) ** 2).sum())
    return num / (2.0 * sigma2)


def classical_kl(theta, theta_prior, sigma2: float) -> float:
    """KL between two isotropic Gaussians with shared variance."""
    check_positive(sigma2, "sigma2")
    theta = np.asarray(theta, dtype=float)
    theta_prior = np.asarray(theta_prior, dtype=float)
    if theta.shape != theta_prior.shape:
        raise DimensionMismatch("parameter vectors must share one shape")
    return float(((theta - theta_prior) ** 2).sum()) / (2.0 * sigma2)


def subgroup_losses(arch: MlpArch, params: ParamVector, data: Dataset,
                    partition: SubgroupPartition,
                    l_max: float = DEFAULT_L_MAX) -> SubgroupLosses:
    """Mean bounded cross-entropy per subgroup."""
    losses = example_losses(arch, params, data, l_max)
    sums = np.bincount(partition.assignment, weights=losses,
                       minlength=partition.n)
    return SubgroupLosses(sums / partition.sizes)


def _macro_f_score(labels: np.ndarray, predicted: np.ndarray,
                   n_classes: int) -> float:
    """Macro-averaged F1; with two classes, the F1 of the minority class."""
    scores = []
    for cls in range(n_classes):
        tp = int(np.sum((predicted == cls) & (labels == cls)))
        fp = int(np.sum((predicted == cls) & (labels != cls)))
        fn = int(np.sum((predicted != cls) & (labels == cls)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * precision * recall / (precision + recall)
                      if precision + recall else 0.0)
    if n_classes == 2:
        minority = int(np.argmin(np.bincount(labels, minlength=2)))
        return scores[minority]
    return float(np.mean(scores))


def evaluate(arch: MlpArch, params: ParamVector, data: Dataset,
             partition: SubgroupPartition, spec: RiskSpec,
             l_max: float = DEFAULT_L_MAX) -> dict:
    """Risk value, macro F-score, per-class error rates, and 0-1 error."""
    losses = subgroup_losses(arch, params, data, partition, l_max)
    solution = constrained_weights(losses, partition.pi, spec)
    probs = forward_batch(arch, params, data.features)
    predicted = probs.argmax(axis=1)
    class_errors = []
    for cls in range(data.n_classes):
        mask = data.labels == cls
        class_errors.append(float(np.mean(predicted[mask] != cls)))
    return {
        "risk": solution.value,
        "f_score": _macro_f_score(data.labels, predicted, data.n_classes),
        "class_errors": class_errors,
        "zero_one_error": float(np.mean(predicted != data.labels)),
    }


def save_checkpoint(path: str, arch: MlpArch, posterior: GaussianParamDist,
                    prior: GaussianParamDist, n_priors: int) -> None:
    """Serialize the model as JSON: arch descriptor plus flat scalars."""
    payload = {
        "layer_sizes": list(arch.layer_sizes),
        "leaky_slope": arch.leaky_slope,
        "mean": [float(v) for v in posterior.mean],
        "sigma2": posterior.sigma2,
        "prior_mean": [float(v) for v in prior.mean],
        "n_priors": int(n_priors),
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True)
        handle.write("\n")


def load_checkpoint(path: str) -> tuple[MlpArch, GaussianParamDist,
                                        GaussianParamDist, int]:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    arch = MlpArch(tuple(payload["layer_sizes"]), payload["leaky_slope"])
    posterior = GaussianParamDist(np.array(payload["mean"], dtype=float),
                                  payload["sigma2"])
    prior = GaussianParamDist(np.array(payload["prior_mean"], dtype=float),
                              payload["sigma2"])
    return arch, posterior, prior, int(payload["n_priors"])
