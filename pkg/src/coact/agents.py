"""Policy wrappers: the diffusion assistive agent and the behavior-cloning baseline.

Both wrap a small MLP plus normalization statistics fit to the training data.
The assistive agent samples actions by denoising (optionally starting from a
partially-diffused human action); the BC agent is a plain regression policy
used both as a baseline and as a downstream data-quality probe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import nn
from .blending import BlendConfig, ControlRatio, NoiseMode, RatioMode, blend_diffusion, preference_alignment
from .data import Trajectory, dataset_arrays
from .diffusion import (
    DiffusionSchedule,
    NoisePredictor,
    TrainConfig,
    build_schedule,
    ddpm_loss,
    make_noise_predictor,
    sample_full,
)
from .envs import TaskEnv, make_env
from .nn import Activation, Array, EmaState, MlpSpec, OptimizerState

CHECKPOINT_FORMAT_VERSION = 1
DEGENERATE_SPAN = 1e-9


@dataclass
class Normalizer:
    """Per-dimension affine map fit so training data lands in [-1, 1]."""

    center: Array
    half_range: Array

    @staticmethod
    def fit(values: Array) -> "Normalizer":
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if values.size == 0:
            raise ValueError("cannot fit a normalizer to an empty array")
        lo = values.min(axis=0)
        hi = values.max(axis=0)
        span = hi - lo
        degenerate = span < DEGENERATE_SPAN
        center = np.where(degenerate, lo, (lo + hi) / 2.0)
        half = np.where(degenerate, 1.0, span / 2.0)
        return Normalizer(center=center, half_range=half)

    def normalize(self, x: Array) -> Array:
        return (np.asarray(x, dtype=np.float64) - self.center) / self.half_range

    def denormalize(self, x: Array) -> Array:
        return np.asarray(x, dtype=np.float64) * self.half_range + self.center

    def to_dict(self) -> dict:
        return {"center": nn.encode_array(self.center), "half_range": nn.encode_array(self.half_range)}

    @staticmethod
    def from_dict(d: dict) -> "Normalizer":
        return Normalizer(center=nn.decode_array(d["center"]), half_range=nn.decode_array(d["half_range"]))


def fit_normalizer(trajectories: list[Trajectory]) -> tuple[Normalizer, Normalizer]:
    """State and action normalizers from every transition of a dataset."""
    states, actions = dataset_arrays(trajectories)
    return Normalizer.fit(states), Normalizer.fit(actions)


class AssistResult(NamedTuple):
    action: Array
    gamma: float
    alignment: float


@dataclass
class AssistiveAgent:
    """Conditional diffusion policy with EMA weights used for all inference."""

    task: str
    predictor: NoisePredictor  # live (training) network
    ema: EmaState
    schedule: DiffusionSchedule
    state_norm: Normalizer
    action_norm: Normalizer
    config: TrainConfig
    action_low: Array
    action_high: Array
    noise_mode: NoiseMode = NoiseMode.SCALED
    optimizer: OptimizerState | None = None

    def ema_predictor(self) -> NoisePredictor:
        return self.predictor.with_net(self.ema.shadow)

    def clip(self, action: Array) -> Array:
        return np.clip(action, self.action_low, self.action_high)


def create_assistive_agent(
    env: TaskEnv,
    config: TrainConfig | None = None,
    noise_mode: NoiseMode = NoiseMode.SCALED,
    num_steps: int = 50,
    beta_min: float = 1e-4,
    beta_max: float = 0.1,
) -> AssistiveAgent:
    config = config or TrainConfig()
    schedule = build_schedule(num_steps, beta_min, beta_max)
    rng = np.random.default_rng(config.seed)
    predictor = make_noise_predictor(env.action_dim, env.state_dim, schedule, rng)
    return AssistiveAgent(
        task=env.name,
        predictor=predictor,
        ema=EmaState(shadow=predictor.net.copy(), decay=config.ema_decay),
        schedule=schedule,
        state_norm=Normalizer(center=np.zeros(env.state_dim), half_range=np.ones(env.state_dim)),
        action_norm=Normalizer(center=np.zeros(env.action_dim), half_range=np.ones(env.action_dim)),
        config=config,
        action_low=env.action_low.copy(),
        action_high=env.action_high.copy(),
        noise_mode=noise_mode,
    )


def train_diffusion(
    agent: AssistiveAgent,
    dataset: list[Trajectory],
    cfg: TrainConfig | None = None,
    refit_normalizers: bool = True,
) -> list[float]:
    """Epochs of noise-prediction training over shuffled transitions; returns per-epoch mean loss.

    Finetuning keeps the live weights and starts a fresh optimizer. Normalizers
    are refit to the (possibly grown) dataset unless told otherwise.
    """
    cfg = cfg or agent.config
    if cfg.epochs == 0:
        return []
    if not dataset:
        raise ValueError("dataset must contain at least one trajectory")
    if refit_normalizers:
        agent.state_norm, agent.action_norm = fit_normalizer(dataset)
    states, actions = dataset_arrays(dataset)
    states = agent.state_norm.normalize(states)
    actions = agent.action_norm.normalize(actions)

    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState(learning_rate=cfg.learning_rate)
    agent.ema.decay = cfg.ema_decay
    history = []
    n = states.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = ddpm_loss(agent.predictor, agent.schedule, states[idx], actions[idx], cfg, rng)
            nn.adamw_step(agent.predictor.net, grads, opt)
            nn.ema_update(agent.ema, agent.predictor.net)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    agent.optimizer = opt
    return history


def act_autonomous(agent: AssistiveAgent, state: Array, rng: np.random.Generator) -> Array:
    """Full-autonomy action: denoise from pure Gaussian noise conditioned on state.

    Accepts a single state vector or an (n, state_dim) batch of independent states.
    """
    ns = agent.state_norm.normalize(state)
    sample = sample_full(agent.ema_predictor(), agent.schedule, ns, rng)
    return agent.clip(agent.action_norm.denormalize(sample))


def act_assisted(
    agent: AssistiveAgent,
    state: Array,
    human_action: Array,
    ratio: ControlRatio,
    rng: np.random.Generator,
) -> AssistResult:
    """Blend the human action with the agent through forward-diffuse / denoise.

    Updates the ratio in place: adaptive mode first adjusts gamma from the
    previous tick's agreement, and the executed pair is recorded for the next
    tick. Alignment is the raw dot product in env action units.
    """
    gamma = ratio.adapt()
    ns = agent.state_norm.normalize(state)
    na_h = agent.action_norm.normalize(human_action)
    blended = blend_diffusion(
        agent.ema_predictor(),
        agent.schedule,
        na_h,
        ns,
        gamma,
        rng,
        BlendConfig(noise_mode=agent.noise_mode),
    )
    action = agent.clip(agent.action_norm.denormalize(blended))
    alignment = preference_alignment(human_action, action)
    ratio.observe(human_action, action)
    return AssistResult(action=action, gamma=gamma, alignment=alignment)


# --- behavior-cloning baseline ----------------------------------------------------


@dataclass
class BcConfig:
    batch_size: int = 64
    epochs: int = 100
    learning_rate: float = 2e-3
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "BcConfig":
        return BcConfig(
            batch_size=int(d["batch_size"]),
            epochs=int(d["epochs"]),
            learning_rate=float(d["learning_rate"]),
            seed=int(d["seed"]),
        )


@dataclass
class BcAgent:
    """Plain MSE-regression policy: three 128-wide relu layers."""

    task: str
    net: nn.MlpParams
    state_norm: Normalizer
    action_norm: Normalizer
    action_low: Array
    action_high: Array
    config: BcConfig


def create_bc_agent(env: TaskEnv, config: BcConfig | None = None) -> BcAgent:
    config = config or BcConfig()
    spec = MlpSpec(env.state_dim, (128, 128), env.action_dim, Activation.RELU)
    return BcAgent(
        task=env.name,
        net=nn.init_params(spec, np.random.default_rng(config.seed)),
        state_norm=Normalizer(center=np.zeros(env.state_dim), half_range=np.ones(env.state_dim)),
        action_norm=Normalizer(center=np.zeros(env.action_dim), half_range=np.ones(env.action_dim)),
        action_low=env.action_low.copy(),
        action_high=env.action_high.copy(),
        config=config,
    )


def train_bc(
    agent: BcAgent,
    dataset: list[Trajectory],
    cfg: BcConfig | None = None,
    refit_normalizers: bool = True,
) -> list[float]:
    """AdamW regression onto executed actions; returns per-epoch mean MSE."""
    cfg = cfg or agent.config
    if cfg.epochs == 0:
        return []
    if not dataset:
        raise ValueError("dataset must contain at least one trajectory")
    if refit_normalizers:
        agent.state_norm, agent.action_norm = fit_normalizer(dataset)
    states, actions = dataset_arrays(dataset)
    states = agent.state_norm.normalize(states)
    actions = agent.action_norm.normalize(actions)

    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState(learning_rate=cfg.learning_rate)
    history = []
    n = states.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pred = nn.forward(agent.net, states[idx])
            resid = pred - actions[idx]
            loss = float(np.sum(resid * resid) / len(idx))
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite BC loss: {loss}")
            grads, _ = nn.backward(agent.net, states[idx], 2.0 * resid / len(idx))
            nn.adamw_step(agent.net, grads, opt)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def bc_act(agent: BcAgent, state: Array) -> Array:
    """Deterministic policy output, clipped to env bounds; accepts batches."""
    ns = agent.state_norm.normalize(state)
    pred = nn.forward(agent.net, ns)
    return np.clip(agent.action_norm.denormalize(pred), agent.action_low, agent.action_high)


# --- checkpoints -------------------------------------------------------------------


def save_checkpoint(agent: AssistiveAgent | BcAgent, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(agent, AssistiveAgent):
        payload = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "kind": "diffusion",
            "task": agent.task,
            "net": nn.params_to_dict(agent.predictor.net),
            "ema": nn.encode_array(agent.ema.shadow.flat()),
            "ema_decay": agent.ema.decay,
            "schedule": agent.schedule.to_dict(),
            "state_norm": agent.state_norm.to_dict(),
            "action_norm": agent.action_norm.to_dict(),
            "train_config": agent.config.to_dict(),
            "noise_mode": agent.noise_mode.value,
            "optimizer": nn.optimizer_to_dict(agent.optimizer) if agent.optimizer else None,
        }
    else:
        payload = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "kind": "bc",
            "task": agent.task,
            "net": nn.params_to_dict(agent.net),
            "state_norm": agent.state_norm.to_dict(),
            "action_norm": agent.action_norm.to_dict(),
            "train_config": agent.config.to_dict(),
        }
    path.write_text(json.dumps(payload, sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> AssistiveAgent | BcAgent:
    payload = json.loads(Path(path).read_text())
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version: {version}")
    env = make_env(payload["task"])
    if payload["kind"] == "diffusion":
        net = nn.params_from_dict(payload["net"])
        schedule = DiffusionSchedule.from_dict(payload["schedule"])
        predictor = NoisePredictor(net, env.action_dim, env.state_dim, schedule.num_steps)
        shadow = net.copy()
        shadow.load_flat(nn.decode_array(payload["ema"]))
        agent = AssistiveAgent(
            task=payload["task"],
            predictor=predictor,
            ema=EmaState(shadow=shadow, decay=float(payload["ema_decay"])),
            schedule=schedule,
            state_norm=Normalizer.from_dict(payload["state_norm"]),
            action_norm=Normalizer.from_dict(payload["action_norm"]),
            config=TrainConfig.from_dict(payload["train_config"]),
            action_low=env.action_low.copy(),
            action_high=env.action_high.copy(),
            noise_mode=NoiseMode(payload["noise_mode"]),
        )
        if payload.get("optimizer"):
            agent.optimizer = nn.optimizer_from_dict(payload["optimizer"], net)
        return agent
    if payload["kind"] == "bc":
        return BcAgent(
            task=payload["task"],
            net=nn.params_from_dict(payload["net"]),
            state_norm=Normalizer.from_dict(payload["state_norm"]),
            action_norm=Normalizer.from_dict(payload["action_norm"]),
            action_low=env.action_low.copy(),
            action_high=env.action_high.copy(),
            config=BcConfig.from_dict(payload["train_config"]),
        )
    raise ValueError(f"unknown checkpoint kind: {payload['kind']!r}")
