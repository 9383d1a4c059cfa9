"""Small float64 MLPs with hand-written backprop, Adam, and categorical helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericError(FloatingPointError):
    """Non-finite gradients or losses.

    Training loops attach the state reached before the failure as ``partial``
    so callers can keep the last good parameters.
    """

    partial = None


@dataclass
class MlpParams:
    """Weights are stored ``[in, out]`` so a batch ``x @ W + b`` maps rows."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def hidden_dims(self) -> list[int]:
        return [w.shape[1] for w in self.weights[:-1]]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases],
                         self.activation)

    def check(self) -> None:
        for i in range(1, len(self.weights)):
            if self.weights[i - 1].shape[1] != self.weights[i].shape[0]:
                raise ValueError(f"layer {i} input {self.weights[i].shape[0]} != previous output")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ValueError("bias shape does not match weight columns")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError("non-finite parameters")

    def to_dict(self) -> dict:
        return {
            "sizes": {"input_dim": self.input_dim, "hidden_dims": self.hidden_dims, "output_dim": self.output_dim},
            "activation": self.activation,
            "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpParams":
        weights = [np.asarray(layer["w"], dtype=np.float64) for layer in data["layers"]]
        biases = [np.asarray(layer["b"], dtype=np.float64) for layer in data["layers"]]
        params = cls(weights, biases, data.get("activation", "tanh"))
        params.check()
        return params


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(input_dim: int, hidden_dims, output_dim: int, rng: np.random.Generator,
             output_gain: float = 1.0) -> MlpParams:
    """Orthogonal init: gain sqrt(2) on hidden layers, ``output_gain`` on the last."""
    sizes = [input_dim, *hidden_dims, output_dim]
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        gain = output_gain if i == len(sizes) - 2 else np.sqrt(2.0)
        weights.append(_orthogonal(rng, sizes[i], sizes[i + 1], gain))
        biases.append(np.zeros(sizes[i + 1]))
    return MlpParams(weights, biases)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    activations: list[np.ndarray]  # post-tanh output of each hidden layer
    squeeze: bool


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Affine/tanh stack with a linear output layer.  Accepts ``(in,)`` or ``(B, in)``."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != params.input_dim:
        raise ValueError(f"input has {h.shape[1]} features, network expects {params.input_dim}")
    inputs, activations = [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
            activations.append(h)
    return (h[0] if squeeze else h), ForwardCache(inputs, activations, squeeze)


def backward(params: MlpParams, cache: ForwardCache, grad_output: np.ndarray) -> tuple[MlpParams, np.ndarray]:
    """Reverse-mode gradients of ``sum(grad_output * forward(x))``."""
    g = np.asarray(grad_output, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], params.output_dim):
        raise ValueError(f"output gradient shape {g.shape} does not match forward output")
    grads = params.zeros_like()
    for i in range(len(params.weights) - 1, -1, -1):
        grads.weights[i] = cache.inputs[i].T @ g
        grads.biases[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i > 0:
            g = g * (1.0 - cache.activations[i - 1] ** 2)
    return grads, (g[0] if cache.squeeze else g)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 3e-4, **kwargs) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0, lr, **kwargs)

    def to_dict(self) -> dict:
        return {"step_count": self.step_count, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    @classmethod
    def from_dict(cls, data: dict) -> "AdamState":
        return cls([np.asarray(a, dtype=np.float64) for a in data["m"]],
                   [np.asarray(a, dtype=np.float64) for a in data["v"]],
                   data["step_count"], data["lr"], data["beta1"], data["beta2"], data["eps"])


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState) -> tuple[MlpParams, AdamState]:
    """Bias-corrected Adam update, applied in place and returned for convenience."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(state.m) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ValueError("gradient/optimizer state shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in g_arrays):
        raise NumericError("non-finite gradient")
    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state


# -- categorical distribution over logits ------------------------------------------------


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def log_prob(logits: np.ndarray, action) -> np.ndarray | float:
    logits = np.asarray(logits, dtype=np.float64)
    action = np.asarray(action)
    n = logits.shape[-1]
    if np.any(action < 0) or np.any(action >= n):
        raise IndexError(f"action out of range for {n} logits")
    lp = log_softmax(logits)
    if lp.ndim == 1:
        return float(lp[int(action)])
    return np.take_along_axis(lp, action.astype(int)[:, None], axis=1)[:, 0]


def entropy(logits: np.ndarray) -> np.ndarray | float:
    lp = log_softmax(logits)
    h = -(np.exp(lp) * lp).sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def sample(logits: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from ``softmax(logits)`` using one uniform variate."""
    cdf = np.cumsum(softmax(logits))
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))


def argmax(values: np.ndarray) -> int:
    """First index of the maximum (lowest-index tie break)."""
    return int(np.argmax(values))


@dataclass
class CategoricalDist:
    logits: np.ndarray = field(default_factory=lambda: np.zeros(1))

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    def log_prob(self, action: int) -> float:
        return log_prob(self.logits, action)

    def entropy(self) -> float:
        return entropy(self.logits)

    def sample(self, rng: np.random.Generator) -> int:
        return sample(self.logits, rng)
