"""Rounds of assisted data collection, validity filtering, finetuning, and evaluation.

The loop starts from fully-manual collection (round 0 is forced to gamma=0),
trains the assistive agent on everything gathered so far, then lets the agent
share control in later rounds. Only successful episodes enter the dataset;
failed attempts still count against the efficiency metrics.

Episode determinism: every episode gets one integer seed, from which the env
reset, the operator's noise stream, and the blend noise stream are derived as
separate child streams. Replay only needs that one seed plus the stored actions.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import AssistiveAgent, act_assisted, act_autonomous, train_diffusion
from .blending import ControlRatio, RatioMode, preference_alignment
from .data import CollectionMode, Trajectory, Transition, counts_by_mode
from .diffusion import TrainConfig
from .envs import OperatorProfile, SimulatedOperator, TaskEnv, make_env

CONTROL_HZ = 10.0
ATTEMPT_BUDGET_FACTOR = 4
ADAPTIVE = "adaptive"
ADAPTIVE_START_GAMMA = 0.5
ADAPTIVE_SMOOTHING = 0.8

GammaPolicy = float | str  # a fixed autonomy share, or "adaptive"


class CollectionError(RuntimeError):
    """No valid trajectory could be gathered within the attempt budget."""


@dataclass(frozen=True)
class RoundSpec:
    """One collection round: how many valid demos to gather, at which gamma, then train."""

    n_target: int
    gamma: GammaPolicy
    epochs: int = 200

    def __post_init__(self) -> None:
        if self.n_target < 1:
            raise ValueError("n_target must be >= 1")
        if isinstance(self.gamma, str):
            if self.gamma != ADAPTIVE:
                raise ValueError(f"gamma policy must be a number or {ADAPTIVE!r}")
        elif not 0.0 <= float(self.gamma) <= 1.0:
            raise ValueError(f"gamma must be in [0,1], got {self.gamma}")

    @property
    def gamma_label(self) -> str:
        return ADAPTIVE if isinstance(self.gamma, str) else f"{float(self.gamma):g}"


@dataclass
class CollectStats:
    attempts: int
    valid: int
    total_steps: int  # across all attempts, including failed ones


@dataclass
class RoundReport:
    round_index: int
    gamma_policy: str
    new_trajectories: int
    attempts: int
    dataset_sizes: dict[str, int]
    success_rate: float
    mean_horizon: float | None
    collection_speed: float
    epochs: int
    final_loss: float | None = None
    gamma_sweep: list[dict] | None = None

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "gamma_policy": self.gamma_policy,
            "new_trajectories": self.new_trajectories,
            "attempts": self.attempts,
            "dataset_sizes": dict(sorted(self.dataset_sizes.items())),
            "success_rate": self.success_rate,
            "mean_horizon": self.mean_horizon,
            "collection_speed": self.collection_speed,
            "epochs": self.epochs,
            "final_loss": self.final_loss,
            "gamma_sweep": self.gamma_sweep,
        }


def episode_streams(episode_seed: int) -> tuple[np.random.SeedSequence, np.random.Generator, np.random.Generator]:
    """(reset seed, operator stream, blend stream) derived from one episode seed."""
    reset_ss, op_ss, blend_ss = np.random.SeedSequence(episode_seed).spawn(3)
    return reset_ss, np.random.default_rng(op_ss), np.random.default_rng(blend_ss)


def make_ratio(policy: GammaPolicy) -> ControlRatio:
    if isinstance(policy, str):
        return ControlRatio(gamma=ADAPTIVE_START_GAMMA, mode=RatioMode.ADAPTIVE,
                            smoothing=ADAPTIVE_SMOOTHING)
    return ControlRatio(gamma=float(policy), mode=RatioMode.MANUAL)


def run_episode(
    env: TaskEnv,
    profile: OperatorProfile,
    agent: AssistiveAgent | None,
    gamma_policy: GammaPolicy,
    episode_seed: int,
) -> Trajectory:
    """One operator episode, optionally with shared control; stops at success or horizon."""
    reset_ss, op_rng, blend_rng = episode_streams(episode_seed)
    operator = SimulatedOperator(env, profile, op_rng)
    operator.begin_episode()
    state = env.reset(reset_ss)

    manual = agent is None or gamma_policy == 0.0
    ratio = make_ratio(gamma_policy)
    mode = CollectionMode.HUMAN_ONLY if manual else CollectionMode.SHARED
    traj = Trajectory(task=env.name, seed=episode_seed, mode=mode)
    while not state.success and state.step_index < env.max_steps:
        a_h = operator.act(state)
        if manual:
            a_s, gamma_used, alignment = a_h, 0.0, preference_alignment(a_h, a_h)
        else:
            result = act_assisted(agent, state.vec, a_h, ratio, blend_rng)
            a_s, gamma_used, alignment = result.action, result.gamma, result.alignment
        traj.transitions.append(
            Transition(
                state=state.vec.copy(),
                human_action=np.asarray(a_h, dtype=np.float64),
                shared_action=np.asarray(a_s, dtype=np.float64),
                gamma=gamma_used,
                alignment=alignment,
            )
        )
        state = env.step(state, a_s)
    traj.success = state.success
    return traj


def collect_round(
    env: TaskEnv,
    profile: OperatorProfile,
    agent: AssistiveAgent | None,
    gamma_policy: GammaPolicy,
    n_target: int,
    rng: np.random.Generator,
) -> tuple[list[Trajectory], CollectStats]:
    """Gather n_target valid (successful, in-horizon) trajectories within a 4x attempt budget."""
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    valid: list[Trajectory] = []
    attempts = 0
    total_steps = 0
    budget = ATTEMPT_BUDGET_FACTOR * n_target
    while len(valid) < n_target and attempts < budget:
        episode_seed = int(rng.integers(0, 2**32))
        traj = run_episode(env, profile, agent, gamma_policy, episode_seed)
        attempts += 1
        total_steps += traj.horizon
        if traj.success and traj.horizon <= env.max_steps:
            valid.append(traj)
    if not valid:
        raise CollectionError(
            f"{env.name}: no valid trajectory in {attempts} attempts (target {n_target})"
        )
    return valid, CollectStats(attempts=attempts, valid=len(valid), total_steps=total_steps)


def compute_metrics(
    valid_trajectories: list[Trajectory],
    attempts: int,
    total_steps: int,
    control_hz: float = CONTROL_HZ,
) -> dict:
    """Success rate, mean horizon, and samples-per-hour at the control rate.

    Collection speed amortizes the steps burnt on failed attempts across the
    valid samples; with no wall clock in the simulator, time is steps / hz.
    """
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    n_valid = len(valid_trajectories)
    if n_valid > attempts:
        raise ValueError("more valid trajectories than attempts")
    success_rate = n_valid / attempts
    if n_valid == 0:
        return {"success_rate": 0.0, "mean_horizon": None, "collection_speed": 0.0}
    mean_horizon = float(np.mean([t.horizon for t in valid_trajectories]))
    seconds_per_sample = (total_steps / n_valid) / control_hz
    return {
        "success_rate": success_rate,
        "mean_horizon": mean_horizon,
        "collection_speed": 3600.0 / seconds_per_sample,
    }


def eval_autonomous(
    agent: AssistiveAgent,
    env: TaskEnv,
    episodes: int,
    rng: np.random.Generator,
) -> dict:
    """Success rate / mean horizon of the full-autonomy policy over fresh seeds."""
    wins, horizons = 0, []
    for _ in range(episodes):
        reset_ss, _, act_rng = episode_streams(int(rng.integers(0, 2**32)))
        state = env.reset(reset_ss)
        while not state.success and state.step_index < env.max_steps:
            state = env.step(state, act_autonomous(agent, state.vec, act_rng))
        if state.success:
            wins += 1
            horizons.append(state.step_index)
    return {
        "episodes": episodes,
        "success_rate": wins / episodes,
        "mean_horizon": float(np.mean(horizons)) if horizons else None,
    }


def gamma_sweep(
    agent: AssistiveAgent | None,
    env: TaskEnv,
    profile: OperatorProfile,
    gammas: list[GammaPolicy],
    episodes_per_gamma: int,
    rng: np.random.Generator,
) -> list[dict]:
    """Shared-control success curve over gamma, paired: every gamma sees the same seeds."""
    seeds = [int(rng.integers(0, 2**32)) for _ in range(episodes_per_gamma)]
    out = []
    for gamma in gammas:
        wins, horizons = 0, []
        for seed in seeds:
            traj = run_episode(env, profile, agent, gamma, seed)
            if traj.success:
                wins += 1
                horizons.append(traj.horizon)
        out.append(
            {
                "gamma": gamma if isinstance(gamma, str) else float(gamma),
                "episodes": episodes_per_gamma,
                "success_rate": wins / episodes_per_gamma,
                "mean_horizon": float(np.mean(horizons)) if horizons else None,
            }
        )
    return out


@dataclass
class JointRunResult:
    agent: AssistiveAgent | None
    reports: list[RoundReport]
    dataset: list[Trajectory]
    autonomy: dict | None
    round_agents: list[AssistiveAgent] = field(default_factory=list)


def run_joint_learning(
    task: str,
    profile: OperatorProfile,
    rounds: list[RoundSpec],
    master_seed: int,
    base_config: TrainConfig | None = None,
    autonomy_episodes: int = 100,
    keep_round_agents: bool = False,
    sweep_gammas: list[float] | None = None,
    sweep_episodes: int = 0,
) -> JointRunResult:
    """The full human-agent loop: collect, filter, grow the dataset, finetune, repeat.

    Round 0 always runs fully manual regardless of its configured gamma. After
    the last round the agent is evaluated autonomously on held-out seeds.
    """
    if not rounds:
        raise ValueError("need at least one round")
    env = make_env(task)
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0xC011EC7]))
    base_config = base_config or TrainConfig()

    agent: AssistiveAgent | None = None
    dataset: list[Trajectory] = []
    reports: list[RoundReport] = []
    round_agents: list[AssistiveAgent] = []

    for i, spec in enumerate(rounds):
        gamma_policy: GammaPolicy = 0.0 if i == 0 else spec.gamma
        use_agent = agent if (agent is not None and gamma_policy != 0.0) else None
        trajs, stats = collect_round(env, profile, use_agent, gamma_policy, spec.n_target, rng)
        dataset.extend(trajs)

        final_loss = None
        if spec.epochs > 0:
            if agent is None:
                from .agents import create_assistive_agent

                agent = create_assistive_agent(env, base_config)
            round_cfg = TrainConfig(
                state_noise_ratio=base_config.state_noise_ratio,
                batch_size=base_config.batch_size,
                epochs=spec.epochs,
                learning_rate=base_config.learning_rate,
                ema_decay=base_config.ema_decay,
                seed=int(np.random.SeedSequence([master_seed, 0x7EA1, i]).generate_state(1)[0]),
            )
            history = train_diffusion(agent, dataset, round_cfg)
            final_loss = history[-1] if history else None

        metrics = compute_metrics(trajs, stats.attempts, stats.total_steps)
        sweep = None
        if sweep_episodes > 0 and sweep_gammas and agent is not None:
            sweep_rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0x5EED, i]))
            sweep = gamma_sweep(agent, env, profile, list(sweep_gammas), sweep_episodes, sweep_rng)
        reports.append(
            RoundReport(
                round_index=i,
                gamma_policy="0" if i == 0 else spec.gamma_label,
                new_trajectories=len(trajs),
                attempts=stats.attempts,
                dataset_sizes=counts_by_mode(dataset),
                success_rate=metrics["success_rate"],
                mean_horizon=metrics["mean_horizon"],
                collection_speed=metrics["collection_speed"],
                epochs=spec.epochs,
                final_loss=final_loss,
                gamma_sweep=sweep,
            )
        )
        if keep_round_agents and agent is not None:
            round_agents.append(copy.deepcopy(agent))

    autonomy = None
    if agent is not None and autonomy_episodes > 0:
        eval_rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0xE7A1]))
        autonomy = eval_autonomous(agent, env, autonomy_episodes, eval_rng)
    return JointRunResult(
        agent=agent,
        reports=reports,
        dataset=dataset,
        autonomy=autonomy,
        round_agents=round_agents,
    )


# --- replay ------------------------------------------------------------------------


@dataclass
class ReplayResult:
    ok: bool
    first_bad_tick: int | None
    max_deviation: float
    success_match: bool


def replay_trajectory(traj: Trajectory, tolerance: float = 1e-9) -> ReplayResult:
    """Re-simulate stored executed actions from the stored seed and diff the states."""
    env = make_env(traj.task)
    reset_ss, _, _ = episode_streams(traj.seed)
    state = env.reset(reset_ss)
    max_dev = 0.0
    first_bad = None
    for t, tr in enumerate(traj.transitions):
        dev = float(np.max(np.abs(state.vec - tr.state))) if tr.state.shape == state.vec.shape else np.inf
        max_dev = max(max_dev, dev)
        if dev > tolerance and first_bad is None:
            first_bad = t
        state = env.step(state, tr.shared_action)
    success_match = state.success == traj.success
    return ReplayResult(
        ok=first_bad is None and success_match,
        first_bad_tick=first_bad,
        max_deviation=max_dev,
        success_match=success_match,
    )


def format_report_table(reports: list[RoundReport]) -> str:
    """Plain-text table with the usual efficiency columns."""
    header = (
        f"{'Round':>5}  {'Gamma':>8}  {'Attempts':>8}  {'Valid':>5}  "
        f"{'Success Rate':>12}  {'Horizon Length':>14}  {'Collection Speed':>16}"
    )
    lines = [header, "-" * len(header)]
    for r in reports:
        horizon = f"{r.mean_horizon:.2f}" if r.mean_horizon is not None else "-"
        lines.append(
            f"{r.round_index:>5}  {r.gamma_policy:>8}  {r.attempts:>8}  {r.new_trajectories:>5}  "
            f"{r.success_rate:>12.4f}  {horizon:>14}  {r.collection_speed:>16.1f}"
        )
    return "\n".join(lines)
