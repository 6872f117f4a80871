"""Denoising-diffusion machinery for action generation.

A variance schedule over K steps drives three things: the closed-form forward
marginal that noises a clean action, the training loss of a conditional
noise-prediction MLP, and the reverse chain that denoises an action (or pure
Gaussian noise) conditioned on the environment state.

Step indexing is 1-based like the usual DDPM notation: arrays of length K hold
values for k = 1..K, and k = 0 means "no diffusion at all".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import Activation, Array, MlpParams, MlpSpec

STEP_EMBED_DIM = 16


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise variances beta_k and the derived alpha / alpha_bar / sigma tables."""

    num_steps: int
    beta: Array  # beta[k-1] is beta_k
    alpha: Array  # 1 - beta_k
    alpha_bar: Array  # prod_{j<=k} alpha_j
    sigma: Array  # reverse-step noise scale, sqrt of the posterior variance
    beta_min: float
    beta_max: float
    steepness: float

    def alpha_bar_at(self, k: int) -> float:
        """alpha_bar for 1-based step k; k=0 returns 1 (no noise)."""
        return 1.0 if k == 0 else float(self.alpha_bar[k - 1])

    def check_step(self, k: int) -> int:
        if not 0 <= k <= self.num_steps:
            raise ValueError(f"step k={k} outside [0, {self.num_steps}]")
        return int(k)

    def to_dict(self) -> dict:
        return {
            "num_steps": self.num_steps,
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
            "steepness": self.steepness,
        }

    @staticmethod
    def from_dict(d: dict) -> "DiffusionSchedule":
        return build_schedule(
            int(d["num_steps"]),
            float(d["beta_min"]),
            float(d["beta_max"]),
            steepness=float(d["steepness"]),
        )


def build_schedule(
    num_steps: int,
    beta_min: float = 1e-4,
    beta_max: float = 0.1,
    steepness: float = 6.0,
) -> DiffusionSchedule:
    """Sigmoid-shaped beta schedule renormalized to hit beta_min / beta_max exactly.

    beta_k follows a logistic curve in k (steepness controls how sharp the ramp
    is), then an affine rescale pins beta_1 = beta_min and beta_K = beta_max.
    """
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    if not 0.0 < beta_min < beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}")

    k = np.arange(1, num_steps + 1, dtype=np.float64)
    raw = 1.0 / (1.0 + np.exp(-steepness * (2.0 * k / num_steps - 1.0)))
    if num_steps > 1:
        beta = beta_min + (beta_max - beta_min) * (raw - raw[0]) / (raw[-1] - raw[0])
    else:
        beta = np.array([beta_max])

    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
    posterior_var = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    sigma = np.sqrt(posterior_var)
    return DiffusionSchedule(
        num_steps=num_steps,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        sigma=sigma,
        beta_min=beta_min,
        beta_max=beta_max,
        steepness=steepness,
    )


def step_embedding(k: int | Array, num_steps: int, dim: int = STEP_EMBED_DIM) -> Array:
    """Sinusoidal features of k/K at geometric frequencies; k may be an int or array."""
    half = dim // 2
    t = np.asarray(k, dtype=np.float64) / num_steps
    freqs = np.pi * 2.0 ** np.arange(half)
    ang = t[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def forward_diffuse(schedule: DiffusionSchedule, x0: Array, k: int | Array, noise: Array) -> Array:
    """Closed-form forward marginal: sqrt(abar_k) x0 + sqrt(1-abar_k) noise; k=0 is the identity.

    k may be a single step applied to the whole input, or a per-row array for a
    batched x0 of shape (n, d). noise must be standard normal, drawn by the caller.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    if np.isscalar(k) or np.ndim(k) == 0:
        k = schedule.check_step(int(k))
        if k == 0:
            return x0.copy()
        abar = schedule.alpha_bar[k - 1]
        return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise
    ks = np.asarray(k)
    if ks.min() < 0 or ks.max() > schedule.num_steps:
        raise ValueError(f"steps outside [0, {schedule.num_steps}]")
    if x0.ndim != 2 or ks.shape != (x0.shape[0],):
        raise ValueError("per-row steps require x0 of shape (n, d) and k of shape (n,)")
    abar = np.where(ks == 0, 1.0, schedule.alpha_bar[np.maximum(ks, 1) - 1])
    return np.sqrt(abar)[:, None] * x0 + np.sqrt(1.0 - abar)[:, None] * noise


@dataclass
class NoisePredictor:
    """Conditional noise-prediction MLP: (noisy action, state, step features) -> predicted noise."""

    net: MlpParams
    action_dim: int
    state_dim: int
    num_steps: int

    def __post_init__(self) -> None:
        want_in = self.action_dim + self.state_dim + STEP_EMBED_DIM
        if self.net.spec.input_dim != want_in or self.net.spec.output_dim != self.action_dim:
            raise ValueError(
                f"net dims {self.net.spec.input_dim}->{self.net.spec.output_dim} do not match "
                f"action_dim={self.action_dim}, state_dim={self.state_dim}"
            )

    def build_input(self, noisy_action: Array, state: Array, k: int | Array) -> Array:
        emb = step_embedding(k, self.num_steps)
        if noisy_action.ndim == 2 and emb.ndim == 1:
            emb = np.broadcast_to(emb, (noisy_action.shape[0], emb.shape[0]))
        return np.concatenate([noisy_action, state, emb], axis=-1)

    def predict(self, noisy_action: Array, state: Array, k: int | Array) -> Array:
        return nn.forward(self.net, self.build_input(noisy_action, state, k))

    def with_net(self, net: MlpParams) -> "NoisePredictor":
        return NoisePredictor(net, self.action_dim, self.state_dim, self.num_steps)


def make_noise_predictor(
    action_dim: int,
    state_dim: int,
    schedule: DiffusionSchedule,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (128, 128, 128, 128),
) -> NoisePredictor:
    spec = MlpSpec(
        input_dim=action_dim + state_dim + STEP_EMBED_DIM,
        hidden_dims=hidden,
        output_dim=action_dim,
        activation=Activation.SOFTPLUS,
    )
    return NoisePredictor(nn.init_params(spec, rng), action_dim, state_dim, schedule.num_steps)


@dataclass
class TrainConfig:
    """Diffusion training knobs; state_noise_ratio is the state/action noise ratio."""

    state_noise_ratio: float = 0.1
    batch_size: int = 64
    epochs: int = 200
    learning_rate: float = 1e-3
    ema_decay: float = 0.999
    seed: int = 0

    def __post_init__(self) -> None:
        if self.state_noise_ratio < 0:
            raise ValueError("state_noise_ratio must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        return {
            "state_noise_ratio": self.state_noise_ratio,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "ema_decay": self.ema_decay,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(
            state_noise_ratio=float(d["state_noise_ratio"]),
            batch_size=int(d["batch_size"]),
            epochs=int(d["epochs"]),
            learning_rate=float(d["learning_rate"]),
            ema_decay=float(d["ema_decay"]),
            seed=int(d["seed"]),
        )


def ddpm_loss(
    predictor: NoisePredictor,
    schedule: DiffusionSchedule,
    states: Array,
    actions: Array,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[float, nn.MlpGrads]:
    """Noise-prediction loss and gradients on one batch of (state, action) pairs.

    Per sample: a uniform step k in [1, K], unit action noise folded in through
    the forward marginal, state jitter with std state_noise_ratio * sqrt(1-abar_k),
    then mean over the batch of the squared prediction error against the unit noise.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    n = states.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if actions.shape[0] != n:
        raise ValueError("states and actions disagree on batch size")

    ks = rng.integers(1, schedule.num_steps + 1, size=n)
    eps = rng.standard_normal(actions.shape)
    noisy_actions = forward_diffuse(schedule, actions, ks, eps)
    state_std = cfg.state_noise_ratio * np.sqrt(1.0 - schedule.alpha_bar[ks - 1])
    noisy_states = states + state_std[:, None] * rng.standard_normal(states.shape)

    x = predictor.build_input(noisy_actions, noisy_states, ks)
    pred = nn.forward(predictor.net, x)
    resid = pred - eps
    loss = float(np.sum(resid * resid) / n)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite diffusion loss: {loss}")
    grads, _ = nn.backward(predictor.net, x, 2.0 * resid / n)
    return loss, grads


def denoise_from(
    predictor: NoisePredictor,
    schedule: DiffusionSchedule,
    noisy_action: Array,
    state: Array,
    k: int,
    rng: np.random.Generator,
) -> Array:
    """Run the reverse chain from step k down to a clean action; k=0 is the identity.

    Each step applies mu = (x - beta_k/sqrt(1-abar_k) * eps_hat) / sqrt(alpha_k)
    plus sigma_k z, with the z draw skipped on the final step.
    Accepts single vectors or matched (n, d) batches.
    """
    k = schedule.check_step(k)
    x = np.asarray(noisy_action, dtype=np.float64).copy()
    state = np.asarray(state, dtype=np.float64)
    for j in range(k, 0, -1):
        eps_hat = predictor.predict(x, state, j)
        beta = schedule.beta[j - 1]
        abar = schedule.alpha_bar[j - 1]
        mu = (x - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(schedule.alpha[j - 1])
        if j > 1:
            x = mu + schedule.sigma[j - 1] * rng.standard_normal(x.shape)
        else:
            x = mu
    return x


def sample_full(
    predictor: NoisePredictor,
    schedule: DiffusionSchedule,
    state: Array,
    rng: np.random.Generator,
) -> Array:
    """Draw an action from pure Gaussian noise via the full reverse chain (full autonomy)."""
    state = np.asarray(state, dtype=np.float64)
    if state.ndim == 2:
        shape = (state.shape[0], predictor.action_dim)
    else:
        shape = (predictor.action_dim,)
    start = rng.standard_normal(shape)
    return denoise_from(predictor, schedule, start, state, schedule.num_steps, rng)
