"""Blending human and agent actions.

Two blend families: the diffusion blend (forward-diffuse the human action to a
depth set by the control ratio, then denoise it back conditioned on state) and
the classical convex combination used with point-estimate agents.

Convention: gamma is the AUTONOMY share everywhere in this codebase. gamma=0
executes the human action untouched, gamma=1 is full autonomy. The classical
linear blend therefore weighs the human action by (1-gamma).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .diffusion import DiffusionSchedule, NoisePredictor, denoise_from
from .nn import Array

IDLE_NORM_EPS = 1e-8


class RatioMode(str, Enum):
    MANUAL = "manual"
    ADAPTIVE = "adaptive"


class BlendKind(str, Enum):
    DIFFUSION = "diffusion"
    LINEAR = "linear"


class NoiseMode(str, Enum):
    """How the human action is pushed to diffusion level k before denoising.

    SCALED uses the DDPM marginal sqrt(abar_k) a + sqrt(1-abar_k) eps, matching
    what the denoiser saw in training. ADDITIVE keeps the action unscaled and
    just adds the step-k noise, a + sqrt(1-abar_k) eps (kept for ablation).
    """

    SCALED = "scaled"
    ADDITIVE = "additive"


@dataclass
class ControlRatio:
    """Autonomy share with optional adaptive updating from action agreement."""

    gamma: float = 0.0
    mode: RatioMode = RatioMode.MANUAL
    smoothing: float = 0.8  # weight on the previous gamma; 0 disables smoothing
    prev_human: Array | None = None
    prev_shared: Array | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0,1], got {self.gamma}")
        self.mode = RatioMode(self.mode)

    def observe(self, human_action: Array, shared_action: Array) -> None:
        """Record this tick's actions for the next adaptive update."""
        self.prev_human = np.asarray(human_action, dtype=np.float64).copy()
        self.prev_shared = np.asarray(shared_action, dtype=np.float64).copy()

    def adapt(self) -> float:
        """Update gamma from the previous tick's agreement; no-op before the first tick."""
        if self.mode is not RatioMode.ADAPTIVE:
            return self.gamma
        if self.prev_human is None or self.prev_shared is None:
            return self.gamma
        self.gamma = adapt_gamma(self.prev_human, self.prev_shared, self.gamma, self.smoothing)
        return self.gamma

    def reset_episode(self) -> None:
        self.prev_human = None
        self.prev_shared = None


@dataclass
class BlendConfig:
    """Which blend to run and how to clip its output."""

    kind: BlendKind = BlendKind.DIFFUSION
    noise_mode: NoiseMode = NoiseMode.SCALED
    action_low: Array | None = None
    action_high: Array | None = None

    def clip(self, action: Array) -> Array:
        if self.action_low is None or self.action_high is None:
            return action
        return np.clip(action, self.action_low, self.action_high)


def gamma_to_step(gamma: float, num_steps: int) -> int:
    """Diffusion depth k = round(gamma * K), rounding half away from zero."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0,1], got {gamma}")
    k = int(np.floor(gamma * num_steps + 0.5))
    return min(max(k, 0), num_steps)


def blend_diffusion(
    predictor: NoisePredictor,
    schedule: DiffusionSchedule,
    human_action: Array,
    state: Array,
    gamma: float,
    rng: np.random.Generator,
    config: BlendConfig | None = None,
) -> Array:
    """Forward-diffuse the human action to depth gamma*K, denoise back given state.

    gamma=0 returns the human action untouched. Inputs are expected in the
    normalized space the predictor was trained in.
    """
    config = config or BlendConfig()
    a_h = np.asarray(human_action, dtype=np.float64)
    k = gamma_to_step(gamma, schedule.num_steps)
    if k == 0:
        return a_h.copy()
    noise = rng.standard_normal(a_h.shape)
    scale = np.sqrt(1.0 - schedule.alpha_bar[k - 1])
    if config.noise_mode is NoiseMode.SCALED:
        noisy = np.sqrt(schedule.alpha_bar[k - 1]) * a_h + scale * noise
    else:
        noisy = a_h + scale * noise
    out = denoise_from(predictor, schedule, noisy, state, k, rng)
    return config.clip(out)


def blend_linear(
    human_action: Array,
    agent_action: Array,
    gamma: float,
    config: BlendConfig | None = None,
) -> Array:
    """Convex combination (1-gamma)*human + gamma*agent (gamma = autonomy share)."""
    a_h = np.asarray(human_action, dtype=np.float64)
    a_r = np.asarray(agent_action, dtype=np.float64)
    if a_h.shape != a_r.shape:
        raise ValueError(f"action shapes differ: {a_h.shape} vs {a_r.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0,1], got {gamma}")
    out = (1.0 - gamma) * a_h + gamma * a_r
    return config.clip(out) if config else out


def adapt_gamma(
    prev_human: Array,
    prev_shared: Array,
    gamma_prev: float,
    smoothing: float = 0.0,
) -> float:
    """gamma = (1+cos theta)/2 from the previous tick's human and shared actions.

    Near-zero vectors (idle operator) leave gamma unchanged. With smoothing s,
    returns s*gamma_prev + (1-s)*gamma_new.
    """
    a_h = np.asarray(prev_human, dtype=np.float64)
    a_s = np.asarray(prev_shared, dtype=np.float64)
    nh = float(np.linalg.norm(a_h))
    ns = float(np.linalg.norm(a_s))
    if nh < IDLE_NORM_EPS or ns < IDLE_NORM_EPS:
        return gamma_prev
    cos_theta = float(np.dot(a_h, a_s)) / (nh * ns)
    cos_theta = min(1.0, max(-1.0, cos_theta))
    gamma_new = 0.5 * (1.0 + cos_theta)
    return smoothing * gamma_prev + (1.0 - smoothing) * gamma_new


def preference_alignment(human_action: Array, agent_action: Array) -> float:
    """Raw dot product between the operator's input and the executed/agent action."""
    a_h = np.asarray(human_action, dtype=np.float64)
    a_r = np.asarray(agent_action, dtype=np.float64)
    if a_h.shape != a_r.shape:
        raise ValueError(f"action shapes differ: {a_h.shape} vs {a_r.shape}")
    return float(np.dot(a_h, a_r))


def cosine_alignment(human_action: Array, agent_action: Array) -> float:
    """Scale-free alignment in [-1, 1]; 0 when either action is (near) zero."""
    a_h = np.asarray(human_action, dtype=np.float64)
    a_r = np.asarray(agent_action, dtype=np.float64)
    nh, nr = float(np.linalg.norm(a_h)), float(np.linalg.norm(a_r))
    if nh < IDLE_NORM_EPS or nr < IDLE_NORM_EPS:
        return 0.0
    return float(np.dot(a_h, a_r)) / (nh * nr)
