"""Small deterministic MLP: forward/backward, sparse cross-entropy and Adam.

Weights live in one flat float32 vector, layer-major: for every layer the
``(fan_in, fan_out)`` weight matrix in row-major order, then its bias.
All arithmetic runs in float64; only stored weights are rounded to float32.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu",)
OPTIMIZERS = ("adam",)


@dataclass(frozen=True)
class ModelSpec:
    layer_widths: tuple[int, ...]
    hidden_activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("a model needs at least an input and an output layer")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.hidden_activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.layer_widths
        return list(zip(w[:-1], w[1:]))

    @property
    def param_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)


def param_count(spec: ModelSpec) -> int:
    return spec.param_count


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Flat float32 parameters bound to a :class:`ModelSpec`.

    The array is made read-only so instances can be shared freely.
    Equality is bitwise.
    """

    spec: ModelSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32, copy=True).reshape(-1)
        if values.size != self.spec.param_count:
            raise ValueError(
                f"expected {self.spec.param_count} values for {self.spec.layer_widths}, "
                f"got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("weights must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, WeightVector):
            return NotImplemented
        return self.spec == other.spec and self.values.tobytes() == other.values.tobytes()

    def __hash__(self):
        return hash((self.spec, self.values.tobytes()))

    def __len__(self):
        return self.values.size

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return unflatten(self.spec, self.values)


def unflatten(spec: ModelSpec, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into ``(W, b)`` views per layer."""
    out = []
    pos = 0
    for fan_in, fan_out in spec.layer_shapes:
        w = flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = flat[pos:pos + fan_out]
        pos += fan_out
        out.append((w, b))
    return out


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([w.reshape(-1), b.reshape(-1)]) for w, b in layers])


@dataclass(frozen=True)
class Hyperparameters:
    learning_rate: float = 0.001
    batch_size: int = 32
    local_iterations: int = 2
    optimizer_id: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        # lr == 0 is allowed: it gives a no-op training fixed point
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.local_iterations < 1:
            raise ValueError("batch_size and local_iterations must be positive")
        if self.optimizer_id not in OPTIMIZERS:
            raise ValueError(f"unsupported optimizer {self.optimizer_id!r}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    loss: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy out of range: {self.accuracy}")
        if not (self.loss >= 0 and np.isfinite(self.loss)):
            raise ValueError(f"loss must be finite and non-negative: {self.loss}")


@dataclass(frozen=True, eq=False)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, n: int) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0)


def init_weights(spec: ModelSpec, seed: int) -> WeightVector:
    """He-normal weights, zero biases; a pure function of ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in spec.layer_shapes:
        w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        layers.append((w, np.zeros(fan_out)))
    return WeightVector(spec, flatten(layers))


def _as_inputs(spec: ModelSpec, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"expected rows of width {spec.input_dim}, got shape {x.shape}")
    return x


def _forward_cache(weights: WeightVector, x: np.ndarray):
    layers = [(w.astype(np.float64), b.astype(np.float64)) for w, b in weights.layers()]
    acts = [x]
    pre = []
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < len(layers) - 1 else z
        acts.append(h)
    return layers, acts, pre


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(weights: WeightVector, inputs) -> np.ndarray:
    """Class probabilities for each input row."""
    x = _as_inputs(weights.spec, inputs)
    _, acts, _ = _forward_cache(weights, x)
    return np.exp(_log_softmax(acts[-1]))


def _check_labels(spec: ModelSpec, labels, n: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size != n:
        raise ValueError(f"{n} rows but {y.size} labels")
    if y.size and (y.min() < 0 or y.max() >= spec.num_classes):
        raise ValueError(f"labels must lie in [0, {spec.num_classes})")
    return y


def loss_and_grad(weights: WeightVector, inputs, labels) -> tuple[float, np.ndarray]:
    """Mean sparse cross-entropy and its gradient (float64, flat layout)."""
    spec = weights.spec
    x = _as_inputs(spec, inputs)
    y = _check_labels(spec, labels, x.shape[0])
    n = x.shape[0]
    layers, acts, pre = _forward_cache(weights, x)
    logp = _log_softmax(acts[-1])
    loss = float(-logp[np.arange(n), y].mean())

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w.T) * (pre[i - 1] > 0)
    return loss, flatten(grads)


def adam_step(weights: WeightVector, grad, state: AdamState, hp: Hyperparameters):
    g = np.asarray(grad, dtype=np.float64).reshape(-1)
    if g.size != len(weights) or state.first_moment.size != len(weights):
        raise ValueError("gradient, moments and weights must have equal length")
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient entries")
    t = state.step_count + 1
    m = hp.beta1 * state.first_moment + (1.0 - hp.beta1) * g
    v = hp.beta2 * state.second_moment + (1.0 - hp.beta2) * g * g
    m_hat = m / (1.0 - hp.beta1 ** t)
    v_hat = v / (1.0 - hp.beta2 ** t)
    w = weights.values.astype(np.float64) - hp.learning_rate * m_hat / (np.sqrt(v_hat) + hp.epsilon)
    return WeightVector(weights.spec, w), AdamState(m, v, t)


def evaluate(weights: WeightVector, dataset) -> Metrics:
    """Accuracy (argmax, ties to the lowest class) and mean cross-entropy."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    x = _as_inputs(weights.spec, dataset.features)
    y = _check_labels(weights.spec, dataset.labels, x.shape[0])
    _, acts, _ = _forward_cache(weights, x)
    logits = acts[-1]
    logp = _log_softmax(logits)
    correct = int(np.count_nonzero(np.argmax(logits, axis=1) == y))
    loss = float(-logp[np.arange(y.size), y].mean())
    return Metrics(correct / y.size, loss)


def train_local(weights: WeightVector, dataset, hp: Hyperparameters, iterations: int,
                seed: int, test=None) -> tuple[WeightVector, Metrics]:
    """Run ``iterations`` epochs of shuffled mini-batch Adam from a fresh optimizer state.

    Returns the trained weights and their metrics on ``test`` (the training
    data itself when no test split is given).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    x = _as_inputs(weights.spec, dataset.features)
    y = _check_labels(weights.spec, dataset.labels, x.shape[0])
    rng = np.random.default_rng(seed)
    state = AdamState.zeros(len(weights))
    n = x.shape[0]
    for _ in range(iterations):
        order = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            idx = order[start:start + hp.batch_size]
            _, g = loss_and_grad(weights, x[idx], y[idx])
            weights, state = adam_step(weights, g, state, hp)
    return weights, evaluate(weights, test if test is not None else dataset)
