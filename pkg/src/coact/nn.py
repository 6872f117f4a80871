"""Minimal dense feed-forward network engine.

Hand-rolled forward/backward passes over float64 numpy matrices, an AdamW
optimizer with decoupled weight decay, and exponential moving averaging of
parameters. Sized for small MLPs (a few hidden layers of ~128 units); no GPU,
no graph compilation.

Weights are stored as (fan_in, fan_out) row-major float64 arrays so a forward
pass is ``x @ W + b``. All public entry points accept either a single input
vector ``(d,)`` or a batch ``(n, d)``.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

Array = np.ndarray


class Activation(str, Enum):
    RELU = "relu"
    SOFTPLUS = "softplus"


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully-connected network."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: Activation = Activation.RELU

    def __post_init__(self) -> None:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if not self.hidden_dims:
            raise ValueError("hidden_dims must be non-empty")
        if any(d < 1 for d in dims):
            raise ValueError(f"all dims must be >= 1, got {dims}")
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def num_layers(self) -> int:
        return len(self.hidden_dims) + 1

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activation": self.activation.value,
        }

    @staticmethod
    def from_dict(d: dict) -> "MlpSpec":
        return MlpSpec(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(int(h) for h in d["hidden_dims"]),
            output_dim=int(d["output_dim"]),
            activation=Activation(d["activation"]),
        )


@dataclass
class MlpParams:
    """Weights and biases; shapes chain input_dim -> hidden_dims -> output_dim."""

    spec: MlpSpec
    weights: list[Array]
    biases: list[Array]

    def __post_init__(self) -> None:
        dims = self.spec.layer_dims
        if len(self.weights) != self.spec.num_layers or len(self.biases) != self.spec.num_layers:
            raise ValueError("layer count does not match spec")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValueError(
                    f"layer {i}: expected W{(dims[i], dims[i + 1])}, b({dims[i + 1]},); "
                    f"got W{w.shape}, b{b.shape}"
                )

    def copy(self) -> "MlpParams":
        return MlpParams(
            spec=self.spec,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def flat(self) -> Array:
        """All parameters concatenated into one float64 vector (weights then bias, per layer)."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def load_flat(self, flat: Array) -> None:
        """Inverse of :meth:`flat`; overwrites parameters in place."""
        flat = np.asarray(flat, dtype=np.float64)
        at = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = flat[at : at + w.size].reshape(w.shape)
            at += w.size
            b[...] = flat[at : at + b.size]
            at += b.size
        if at != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, expected {at}")


@dataclass
class MlpGrads:
    """Parameter gradients, shaped like the MlpParams they came from."""

    weights: list[Array]
    biases: list[Array]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.weights + self.biases)


def init_params(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    dims = spec.layer_dims
    weights, biases = [], []
    for i in range(spec.num_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec=spec, weights=weights, biases=biases)


def softplus(x: Array) -> Array:
    # log(1+exp(x)) without overflow for large |x|
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(x: Array, kind: Activation) -> Array:
    if kind is Activation.RELU:
        return np.maximum(x, 0.0)
    return softplus(x)


def _activate_grad(pre: Array, kind: Activation) -> Array:
    if kind is Activation.RELU:
        return (pre > 0).astype(np.float64)
    return _sigmoid(pre)


def _as_batch(x: Array, dim: int, what: str) -> tuple[Array, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ValueError(f"{what} has length {x.shape[0]}, expected {dim}")
        return x[None, :], True
    if x.ndim == 2:
        if x.shape[1] != dim:
            raise ValueError(f"{what} has width {x.shape[1]}, expected {dim}")
        return x, False
    raise ValueError(f"{what} must be 1-D or 2-D, got shape {x.shape}")


def forward(params: MlpParams, x: Array) -> Array:
    """Network output for input vector (input_dim,) or batch (n, input_dim)."""
    xb, squeeze = _as_batch(x, params.spec.input_dim, "input")
    h = xb
    last = params.spec.num_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i != last:
            h = _activate(h, params.spec.activation)
    return h[0] if squeeze else h


def backward(params: MlpParams, x: Array, output_grad: Array) -> tuple[MlpGrads, Array]:
    """Exact reverse-mode gradients for a scalar loss with d(loss)/d(output) = output_grad.

    Recomputes the forward pass internally (nets here are small), then walks it
    backwards. Batched output_grad rows are summed into the parameter gradients,
    matching a loss that sums the per-sample contributions.
    """
    xb, squeeze = _as_batch(x, params.spec.input_dim, "input")
    gb, gsqueeze = _as_batch(output_grad, params.spec.output_dim, "output_grad")
    if squeeze != gsqueeze or xb.shape[0] != gb.shape[0]:
        raise ValueError("input and output_grad batch shapes disagree")

    last = params.spec.num_layers - 1
    inputs = []  # post-activation input to each layer
    pres = []  # pre-activation output of each hidden layer
    h = xb
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        if i != last:
            pres.append(z)
            h = _activate(z, params.spec.activation)

    grads = MlpGrads(
        weights=[np.zeros_like(w) for w in params.weights],
        biases=[np.zeros_like(b) for b in params.biases],
    )
    delta = gb
    for i in range(last, -1, -1):
        grads.weights[i][...] = inputs[i].T @ delta
        grads.biases[i][...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * _activate_grad(pres[i - 1], params.spec.activation)
        else:
            delta = delta @ params.weights[i].T
    return grads, (delta[0] if squeeze else delta)


@dataclass
class OptimizerState:
    """AdamW with decoupled weight decay."""

    learning_rate: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m_weights: list[Array] = field(default_factory=list)
    v_weights: list[Array] = field(default_factory=list)
    m_biases: list[Array] = field(default_factory=list)
    v_biases: list[Array] = field(default_factory=list)

    def _ensure_slots(self, params: MlpParams) -> None:
        if not self.m_weights:
            self.m_weights = [np.zeros_like(w) for w in params.weights]
            self.v_weights = [np.zeros_like(w) for w in params.weights]
            self.m_biases = [np.zeros_like(b) for b in params.biases]
            self.v_biases = [np.zeros_like(b) for b in params.biases]


def adamw_step(params: MlpParams, grads: MlpGrads, opt: OptimizerState) -> tuple[MlpParams, OptimizerState]:
    """One AdamW update in place; raises FloatingPointError on non-finite gradients."""
    if opt.learning_rate <= 0:
        raise ValueError("learning_rate must be > 0")
    if not grads.all_finite():
        raise FloatingPointError("non-finite gradient; step rejected")
    opt._ensure_slots(params)
    opt.step_count += 1
    t = opt.step_count
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t

    def update(p: Array, g: Array, m: Array, v: Array) -> None:
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p -= opt.learning_rate * (m_hat / (np.sqrt(v_hat) + opt.eps) + opt.weight_decay * p)

    for i in range(len(params.weights)):
        update(params.weights[i], grads.weights[i], opt.m_weights[i], opt.v_weights[i])
        update(params.biases[i], grads.biases[i], opt.m_biases[i], opt.v_biases[i])
    return params, opt


@dataclass
class EmaState:
    """Exponential moving average of network parameters (the 'shadow' copy)."""

    shadow: MlpParams
    decay: float = 0.999

    def __post_init__(self) -> None:
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"decay must be in [0,1], got {self.decay}")


def ema_update(ema: EmaState, live: MlpParams) -> EmaState:
    """shadow <- decay * shadow + (1-decay) * live, elementwise, in place."""
    if ema.shadow.spec != live.spec:
        raise ValueError("EMA shadow and live network specs differ")
    d = ema.decay
    for s, p in zip(ema.shadow.weights, live.weights):
        s *= d
        s += (1.0 - d) * p
    for s, p in zip(ema.shadow.biases, live.biases):
        s *= d
        s += (1.0 - d) * p
    return ema


# ---------------------------------------------------------------------------
# Lossless array <-> JSON helpers used by the checkpoint format.

def encode_array(a: Array) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def decode_array(s: str, shape: tuple[int, ...] | None = None) -> Array:
    a = np.frombuffer(base64.b64decode(s.encode("ascii")), dtype="<f8").astype(np.float64)
    return a.reshape(shape) if shape is not None else a


def params_to_dict(params: MlpParams) -> dict:
    return {"spec": params.spec.to_dict(), "flat": encode_array(params.flat())}


def params_from_dict(d: dict) -> MlpParams:
    spec = MlpSpec.from_dict(d["spec"])
    params = init_params(spec, np.random.default_rng(0))
    params.load_flat(decode_array(d["flat"]))
    return params


def optimizer_to_dict(opt: OptimizerState) -> dict:
    return {
        "learning_rate": opt.learning_rate,
        "weight_decay": opt.weight_decay,
        "beta1": opt.beta1,
        "beta2": opt.beta2,
        "eps": opt.eps,
        "step_count": opt.step_count,
        "m_weights": [encode_array(a) for a in opt.m_weights],
        "v_weights": [encode_array(a) for a in opt.v_weights],
        "m_biases": [encode_array(a) for a in opt.m_biases],
        "v_biases": [encode_array(a) for a in opt.v_biases],
    }


def optimizer_from_dict(d: dict, params: MlpParams) -> OptimizerState:
    opt = OptimizerState(
        learning_rate=float(d["learning_rate"]),
        weight_decay=float(d["weight_decay"]),
        beta1=float(d["beta1"]),
        beta2=float(d["beta2"]),
        eps=float(d["eps"]),
        step_count=int(d["step_count"]),
    )
    if d["m_weights"]:
        opt.m_weights = [decode_array(s, w.shape) for s, w in zip(d["m_weights"], params.weights)]
        opt.v_weights = [decode_array(s, w.shape) for s, w in zip(d["v_weights"], params.weights)]
        opt.m_biases = [decode_array(s, b.shape) for s, b in zip(d["m_biases"], params.biases)]
        opt.v_biases = [decode_array(s, b.shape) for s, b in zip(d["v_biases"], params.biases)]
    return opt
