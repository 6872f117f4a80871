"""Desk-scale 2-D kinematic manipulation tasks and simulated operators.

Three tasks on a [-1,1]^2 workspace, all pure kinematics (no dynamics):

* ``pick_place`` -- drive the end-effector to an object, close the gripper to
  grasp, carry it to a fixed container, open to release.
* ``push_cube`` -- shove a cube along by overlapping its contact disc; the cube
  is displaced along the contact normal until it reaches the target.
* ``latch`` -- turn a door handle past 1 rad while touching its tip; the door
  then swings open on its own.

Actions are per-step deltas, clipped to per-task bounds. All randomness lives
in ``reset``; stepping is a deterministic function of (state, action), which is
what makes recorded episodes replayable.

A scripted waypoint expert per task stands in for a skilled teleoperator, and
``SimulatedOperator`` corrupts it with lag, Gaussian noise, dropouts, and a
per-episode waypoint-perception offset to emulate unskilled/noisy operation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .nn import Array

WORKSPACE_LOW = -1.0
WORKSPACE_HIGH = 1.0
MAX_STEPS = 300


@dataclass
class EnvState:
    """Flat task state plus bookkeeping; success latches once the predicate holds."""

    vec: Array
    step_index: int = 0
    success: bool = False

    def copy(self) -> "EnvState":
        return EnvState(vec=self.vec.copy(), step_index=self.step_index, success=self.success)


def _unit(v: Array) -> Array:
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else np.zeros_like(v)


class TaskEnv:
    """Stateless rule set for one task; states are passed in and out of step()."""

    name: str = ""
    state_dim: int = 0
    action_dim: int = 0
    state_labels: tuple[str, ...] = ()
    action_labels: tuple[str, ...] = ()
    action_low: Array
    action_high: Array
    perception_indices: tuple[int, ...] = ()  # coords an operator perceives imperfectly
    max_steps: int = MAX_STEPS

    def reset(self, seed) -> EnvState:
        raise NotImplementedError

    def step(self, state: EnvState, action: Array) -> EnvState:
        raise NotImplementedError

    def expert_action(self, state: EnvState) -> Array:
        raise NotImplementedError

    # shared helpers -------------------------------------------------------

    def clip_action(self, action: Array) -> Array:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.action_dim,):
            raise ValueError(f"{self.name}: action shape {action.shape}, expected ({self.action_dim},)")
        return np.clip(action, self.action_low, self.action_high)

    def _begin_step(self, state: EnvState) -> EnvState:
        if state.step_index >= self.max_steps:
            raise RuntimeError(f"{self.name}: step() called after the {self.max_steps}-step horizon")
        return state.copy()

    def _move_ee(self, vec: Array, delta: Array) -> None:
        vec[0:2] = np.clip(vec[0:2] + delta, WORKSPACE_LOW, WORKSPACE_HIGH)

    def metadata(self) -> dict:
        return {
            "name": self.name,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "state_labels": list(self.state_labels),
            "action_labels": list(self.action_labels),
            "action_low": [float(x) for x in self.action_low],
            "action_high": [float(x) for x in self.action_high],
            "max_steps": self.max_steps,
            "workspace": [WORKSPACE_LOW, WORKSPACE_HIGH],
        }


class PickPlaceEnv(TaskEnv):
    """Grasp a randomized object and drop it into a fixed container.

    Grip is an open-fraction in [0,1]. Closing (< 0.3) within 0.05 of the object
    engages the grasp; the object then rides the end-effector until the grip
    opens past 0.7. Success: object within 0.07 of the container, not grasped.
    """

    name = "pick_place"
    state_dim = 8
    action_dim = 3
    state_labels = ("ee_x", "ee_y", "grip", "obj_x", "obj_y", "cont_x", "cont_y", "grasped")
    action_labels = ("dx", "dy", "dgrip")
    action_low = np.array([-0.05, -0.05, -0.2])
    action_high = np.array([0.05, 0.05, 0.2])
    perception_indices = (5, 6)

    home = np.array([0.0, 0.0])
    object_region = (np.array([-0.45, -0.45]), np.array([-0.25, -0.25]))  # 0.2 x 0.2
    container = np.array([0.45, 0.35])
    grasp_radius = 0.05
    close_threshold = 0.3
    open_threshold = 0.7
    success_radius = 0.07

    def reset(self, seed) -> EnvState:
        rng = np.random.default_rng(seed)
        lo, hi = self.object_region
        obj = rng.uniform(lo, hi)
        vec = np.array([*self.home, 1.0, *obj, *self.container, 0.0])
        return EnvState(vec=vec)

    def step(self, state: EnvState, action: Array) -> EnvState:
        a = self.clip_action(action)
        s = self._begin_step(state)
        v = s.vec
        self._move_ee(v, a[0:2])
        v[2] = np.clip(v[2] + a[2], 0.0, 1.0)
        grasped = v[7] > 0.5
        if grasped:
            v[3:5] = v[0:2]
            if v[2] > self.open_threshold:
                v[7] = 0.0
        elif v[2] < self.close_threshold and np.linalg.norm(v[0:2] - v[3:5]) <= self.grasp_radius:
            v[7] = 1.0
            v[3:5] = v[0:2]
        s.step_index += 1
        done = v[7] < 0.5 and np.linalg.norm(v[3:5] - v[5:7]) <= self.success_radius
        s.success = s.success or bool(done)
        return s

    def expert_action(self, state: EnvState) -> Array:
        v = state.vec
        ee, grip, obj, cont, grasped = v[0:2], v[2], v[3:5], v[5:7], v[7] > 0.5
        a = np.zeros(3)
        if state.success:
            return a
        cruise = 0.8 * self.action_high[0]
        grip_rate = 0.8 * self.action_high[2]
        if not grasped:
            to_obj = obj - ee
            a[0:2] = np.clip(to_obj, -cruise, cruise)
            if np.linalg.norm(to_obj) <= 0.03:
                a[2] = -grip_rate  # close
        else:
            to_cont = cont - ee
            if np.linalg.norm(to_cont) > 0.03:
                a[0:2] = np.clip(to_cont, -cruise, cruise)
                a[2] = -grip_rate  # stay closed against noise
            else:
                a[2] = grip_rate  # release
        return a


class PushCubeEnv(TaskEnv):
    """Push a cube to a randomized target by overlapping its 0.08 contact disc."""

    name = "push_cube"
    state_dim = 6
    action_dim = 2
    state_labels = ("ee_x", "ee_y", "cube_x", "cube_y", "tgt_x", "tgt_y")
    action_labels = ("dx", "dy")
    action_low = np.array([-0.05, -0.05])
    action_high = np.array([0.05, 0.05])
    perception_indices = (4, 5)

    home = np.array([-0.5, 0.0])
    cube_region = (np.array([-0.25, -0.05]), np.array([-0.15, 0.05]))  # 0.1 x 0.1
    target_region = (np.array([0.3, -0.05]), np.array([0.4, 0.05]))
    contact_radius = 0.08
    success_radius = 0.05

    def reset(self, seed) -> EnvState:
        rng = np.random.default_rng(seed)
        cube = rng.uniform(*self.cube_region)
        target = rng.uniform(*self.target_region)
        vec = np.array([*self.home, *cube, *target])
        return EnvState(vec=vec)

    def step(self, state: EnvState, action: Array) -> EnvState:
        a = self.clip_action(action)
        s = self._begin_step(state)
        v = s.vec
        self._move_ee(v, a)
        gap = v[2:4] - v[0:2]
        dist = np.linalg.norm(gap)
        if dist < self.contact_radius:
            normal = _unit(gap) if dist > 1e-12 else _unit(a) if np.linalg.norm(a) > 1e-12 else np.array([1.0, 0.0])
            v[2:4] = np.clip(v[0:2] + self.contact_radius * normal, WORKSPACE_LOW, WORKSPACE_HIGH)
        s.step_index += 1
        done = np.linalg.norm(v[2:4] - v[4:6]) <= self.success_radius
        s.success = s.success or bool(done)
        return s

    def expert_action(self, state: EnvState) -> Array:
        v = state.vec
        ee, cube, target = v[0:2], v[2:4], v[4:6]
        if state.success or np.linalg.norm(cube - target) <= 0.045:
            return np.zeros(2)
        push_dir = _unit(target - cube)
        stand_off = 0.10
        behind = cube - stand_off * push_dir
        to_cube = cube - ee
        aligned = (
            np.dot(_unit(to_cube), push_dir) > 0.95
            and np.linalg.norm(to_cube) <= stand_off + 0.03
        )
        cruise = 0.8 * self.action_high[0]
        if aligned:
            speed = min(cruise, max(0.015, 0.5 * float(np.linalg.norm(cube - target))))
            return speed * push_dir
        to_wp = behind - ee
        heading = _unit(to_wp)
        # orbit sideways instead of barging through the cube
        if np.linalg.norm(to_cube) < 0.12 and np.dot(heading, _unit(to_cube)) > 0.3:
            perp = np.array([-to_cube[1], to_cube[0]])
            perp = _unit(perp)
            if np.dot(perp, to_wp) < 0:
                perp = -perp
            return cruise * perp
        return np.clip(to_wp, -cruise, cruise)


class LatchEnv(TaskEnv):
    """Turn a handle past 1 rad while touching its tip; the door then swings open."""

    name = "latch"
    state_dim = 6
    action_dim = 3
    state_labels = ("ee_x", "ee_y", "angle", "door_open", "base_x", "base_y")
    action_labels = ("dx", "dy", "dphi")
    action_low = np.array([-0.05, -0.05, -0.1])
    action_high = np.array([0.05, 0.05, 0.1])
    perception_indices = (4, 5)

    home = np.array([0.0, -0.2])
    base_region = (np.array([0.2, 0.2]), np.array([0.4, 0.4]))  # 0.2 x 0.2
    handle_length = 0.15
    contact_radius = 0.05
    unlatch_angle = 1.0
    open_rate = 0.05
    open_threshold = 0.9

    def tip(self, vec: Array) -> Array:
        angle = vec[2]
        return vec[4:6] + self.handle_length * np.array([np.cos(angle), np.sin(angle)])

    def reset(self, seed) -> EnvState:
        rng = np.random.default_rng(seed)
        base = rng.uniform(*self.base_region)
        vec = np.array([*self.home, 0.0, 0.0, *base])
        return EnvState(vec=vec)

    def step(self, state: EnvState, action: Array) -> EnvState:
        a = self.clip_action(action)
        s = self._begin_step(state)
        v = s.vec
        self._move_ee(v, a[0:2])
        if np.linalg.norm(v[0:2] - self.tip(v)) <= self.contact_radius:
            v[2] = np.clip(v[2] + a[2], -np.pi, np.pi)
        if abs(v[2]) > self.unlatch_angle:
            v[3] = min(1.0, v[3] + self.open_rate)
        s.step_index += 1
        done = abs(v[2]) > self.unlatch_angle and v[3] > self.open_threshold
        s.success = s.success or bool(done)
        return s

    def expert_action(self, state: EnvState) -> Array:
        v = state.vec
        a = np.zeros(3)
        if state.success:
            return a
        cruise = 0.8 * self.action_high[0]
        twist = 0.8 * self.action_high[2]
        tip = self.tip(v)
        to_tip = tip - v[0:2]
        if abs(v[2]) <= self.unlatch_angle + 0.15:
            if np.linalg.norm(to_tip) > 0.045:
                a[0:2] = np.clip(to_tip, -cruise, cruise)
            else:
                a[2] = twist
                next_angle = min(np.pi, v[2] + a[2])
                next_tip = v[4:6] + self.handle_length * np.array(
                    [np.cos(next_angle), np.sin(next_angle)]
                )
                a[0:2] = np.clip(next_tip - v[0:2], -cruise, cruise)
        else:
            a[0:2] = np.clip(to_tip, -cruise, cruise)
        return a


TASKS: dict[str, type[TaskEnv]] = {
    PickPlaceEnv.name: PickPlaceEnv,
    PushCubeEnv.name: PushCubeEnv,
    LatchEnv.name: LatchEnv,
}


def make_env(task: str) -> TaskEnv:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    return TASKS[task]()


# --- simulated operators --------------------------------------------------------


@dataclass
class OperatorProfile:
    """How imperfect the simulated teleoperator is; all-zeros is the clean expert."""

    noise_std: float = 0.0  # gaussian std as a fraction of each action bound
    lag_steps: int = 0
    dropout_prob: float = 0.0
    waypoint_jitter: float = 0.0  # std of the per-episode perception offset

    def __post_init__(self) -> None:
        if min(self.noise_std, self.lag_steps, self.dropout_prob, self.waypoint_jitter) < 0:
            raise ValueError("profile fields must be >= 0")
        if self.dropout_prob > 1:
            raise ValueError("dropout_prob must be <= 1")

    def to_dict(self) -> dict:
        return {
            "noise_std": self.noise_std,
            "lag_steps": self.lag_steps,
            "dropout_prob": self.dropout_prob,
            "waypoint_jitter": self.waypoint_jitter,
        }

    @staticmethod
    def from_dict(d: dict) -> "OperatorProfile":
        return OperatorProfile(
            noise_std=float(d.get("noise_std", 0.0)),
            lag_steps=int(d.get("lag_steps", 0)),
            dropout_prob=float(d.get("dropout_prob", 0.0)),
            waypoint_jitter=float(d.get("waypoint_jitter", 0.0)),
        )


# Calibrated so an unassisted operator succeeds roughly half the time: enough
# headroom to measure assistance, enough successes to seed a dataset. The
# difficulty is dominated by the systematic goal-perception offset (think
# miscalibrated hand tracking), which a true-state-conditioned assistant can
# correct; per-step white noise stays small so demos remain learnable.
DEFAULT_PROFILES: dict[str, OperatorProfile] = {
    "pick_place": OperatorProfile(noise_std=0.05, dropout_prob=0.02, waypoint_jitter=0.075),
    "push_cube": OperatorProfile(noise_std=0.05, dropout_prob=0.02, waypoint_jitter=0.055),
    "latch": OperatorProfile(noise_std=0.05, dropout_prob=0.02, waypoint_jitter=0.045),
}


def corrupt_action(
    expert_action: Array,
    profile: OperatorProfile,
    rng: np.random.Generator,
    env: TaskEnv,
    lag_queue: deque | None = None,
) -> Array:
    """Expert action -> lagged, noise-perturbed, occasionally dropped, clipped action."""
    a = np.asarray(expert_action, dtype=np.float64).copy()
    if lag_queue is not None and profile.lag_steps > 0:
        lag_queue.append(a)
        a = lag_queue.popleft() if len(lag_queue) > profile.lag_steps else np.zeros_like(a)
    bounds = np.maximum(np.abs(env.action_low), np.abs(env.action_high))
    a = a + profile.noise_std * bounds * rng.standard_normal(a.shape)
    if rng.uniform() < profile.dropout_prob:
        a = np.zeros_like(a)
    return env.clip_action(a)


class SimulatedOperator:
    """Scripted expert corrupted per an OperatorProfile; owns its noise stream."""

    def __init__(self, env: TaskEnv, profile: OperatorProfile, rng):
        self.env = env
        self.profile = profile
        self.rng = np.random.default_rng(rng)
        self._lag_queue: deque = deque()
        self._perception_offset = np.zeros(len(env.perception_indices))

    def begin_episode(self) -> None:
        self._lag_queue.clear()
        self._perception_offset = self.profile.waypoint_jitter * self.rng.standard_normal(
            len(self.env.perception_indices)
        )

    def act(self, state: EnvState) -> Array:
        perceived = state.copy()
        if self.profile.waypoint_jitter > 0:
            idx = list(self.env.perception_indices)
            perceived.vec[idx] = perceived.vec[idx] + self._perception_offset
        expert = self.env.expert_action(perceived)
        return corrupt_action(expert, self.profile, self.rng, self.env, self._lag_queue)
