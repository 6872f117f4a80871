"""Shared fixtures: a diffusion model trained on a small synthetic conditional family."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from coact import diffusion as df
from coact import nn


@dataclass
class ToyModel:
    """Predictor trained on a ~ N(2s, 0.05^2) with scalar s in [-1, 1]."""

    predictor: df.NoisePredictor
    schedule: df.DiffusionSchedule

    def sample_means(self, s_value: float, n: int, seed: int) -> np.ndarray:
        states = np.full((n, 1), s_value)
        return df.sample_full(self.predictor, self.schedule, states, np.random.default_rng(seed))


def train_toy_model(steps: int = 3000, seed: int = 0) -> ToyModel:
    rng = np.random.default_rng(seed)
    schedule = df.build_schedule(50, 1e-4, 0.1)
    n = 4096
    states = rng.uniform(-1.0, 1.0, (n, 1))
    actions = 2.0 * states + 0.05 * rng.standard_normal((n, 1))
    predictor = df.make_noise_predictor(1, 1, schedule, rng, hidden=(64, 64))
    cfg = df.TrainConfig(seed=seed)
    opt = nn.OptimizerState(learning_rate=cfg.learning_rate)
    for _ in range(steps):
        idx = rng.integers(0, n, cfg.batch_size)
        _, grads = df.ddpm_loss(predictor, schedule, states[idx], actions[idx], cfg, rng)
        nn.adamw_step(predictor.net, grads, opt)
    return ToyModel(predictor=predictor, schedule=schedule)


@pytest.fixture(scope="session")
def toy_model() -> ToyModel:
    return train_toy_model()
