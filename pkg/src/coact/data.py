"""Trajectory records and the on-disk trajectory store.

A trajectory is one episode of (state, human action, executed action) samples
with its collection provenance. On disk each trajectory is a line-delimited
JSON file: a header record first, then one record per step. A manifest file
indexes a directory of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .nn import Array

STORE_FORMAT_VERSION = 1


class CollectionMode(str, Enum):
    HUMAN_ONLY = "human_only"
    SHARED = "shared"
    AUTONOMOUS = "autonomous"


@dataclass
class Transition:
    """One control tick: the state seen, what the human asked, what actually ran."""

    state: Array
    human_action: Array
    shared_action: Array
    gamma: float
    alignment: float


@dataclass
class Trajectory:
    task: str
    seed: int
    mode: CollectionMode
    transitions: list[Transition] = field(default_factory=list)
    success: bool = False

    @property
    def horizon(self) -> int:
        return len(self.transitions)

    def states(self) -> Array:
        return np.array([t.state for t in self.transitions])

    def executed_actions(self) -> Array:
        return np.array([t.shared_action for t in self.transitions])


def dataset_arrays(trajectories: list[Trajectory]) -> tuple[Array, Array]:
    """Stack all transitions into (states, executed actions) training matrices."""
    if not trajectories:
        raise ValueError("empty dataset")
    states = np.concatenate([t.states() for t in trajectories])
    actions = np.concatenate([t.executed_actions() for t in trajectories])
    return states, actions


def counts_by_mode(trajectories: list[Trajectory]) -> dict[str, int]:
    out: dict[str, int] = {}
    for t in trajectories:
        out[t.mode.value] = out.get(t.mode.value, 0) + 1
    return out


# --- store ----------------------------------------------------------------------


def save_trajectory(traj: Trajectory, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "task": traj.task,
        "seed": traj.seed,
        "mode": traj.mode.value,
        "success": traj.success,
        "horizon": traj.horizon,
        "format_version": STORE_FORMAT_VERSION,
    }
    with path.open("w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for t, tr in enumerate(traj.transitions):
            rec = {
                "t": t,
                "state": list(tr.state),
                "human_action": list(tr.human_action),
                "shared_action": list(tr.shared_action),
                "gamma": tr.gamma,
                "alignment": tr.alignment,
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def load_trajectory(path: str | Path) -> Trajectory:
    path = Path(path)
    with path.open() as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty trajectory file")
    header = lines[0]
    version = header.get("format_version")
    if version != STORE_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {version}")
    traj = Trajectory(
        task=header["task"],
        seed=int(header["seed"]),
        mode=CollectionMode(header["mode"]),
        success=bool(header["success"]),
    )
    for rec in lines[1:]:
        traj.transitions.append(
            Transition(
                state=np.array(rec["state"], dtype=np.float64),
                human_action=np.array(rec["human_action"], dtype=np.float64),
                shared_action=np.array(rec["shared_action"], dtype=np.float64),
                gamma=float(rec["gamma"]),
                alignment=float(rec["alignment"]),
            )
        )
    if traj.horizon != header["horizon"]:
        raise ValueError(f"{path}: header horizon {header['horizon']} != {traj.horizon} records")
    return traj


def save_dataset(trajectories: list[Trajectory], directory: str | Path) -> Path:
    """Write one file per trajectory plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, traj in enumerate(trajectories):
        name = f"traj_{i:05d}.jsonl"
        save_trajectory(traj, directory / name)
        entries.append(
            {
                "file": name,
                "task": traj.task,
                "seed": traj.seed,
                "mode": traj.mode.value,
                "success": traj.success,
                "horizon": traj.horizon,
            }
        )
    manifest = {
        "format_version": STORE_FORMAT_VERSION,
        "count": len(entries),
        "counts_by_mode": counts_by_mode(trajectories),
        "trajectories": entries,
    }
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


def load_dataset(directory: str | Path) -> list[Trajectory]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    return [load_trajectory(directory / e["file"]) for e in manifest["trajectories"]]
