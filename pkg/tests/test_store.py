"""Trajectory file format, manifest round trips, and deterministic replay."""

from __future__ import annotations

import json

import numpy as np
import pytest

from coact import jointloop as jl
from coact.data import (
    CollectionMode,
    Trajectory,
    Transition,
    dataset_arrays,
    load_dataset,
    load_trajectory,
    save_dataset,
    save_trajectory,
)
from coact.envs import DEFAULT_PROFILES, OperatorProfile, make_env


def collect_some(task="push_cube", n=3, seed=0, profile=None):
    env = make_env(task)
    profile = profile or OperatorProfile()
    trajs, _ = jl.collect_round(env, profile, None, 0.0, n, np.random.default_rng(seed))
    return trajs


def test_trajectory_roundtrip(tmp_path):
    traj = collect_some(n=1)[0]
    path = save_trajectory(traj, tmp_path / "t.jsonl")
    loaded = load_trajectory(path)
    assert loaded.task == traj.task
    assert loaded.seed == traj.seed
    assert loaded.mode is CollectionMode.HUMAN_ONLY
    assert loaded.success == traj.success
    assert loaded.horizon == traj.horizon
    for a, b in zip(loaded.transitions, traj.transitions):
        assert np.array_equal(a.state, b.state)
        assert np.array_equal(a.human_action, b.human_action)
        assert np.array_equal(a.shared_action, b.shared_action)
        assert a.gamma == b.gamma and a.alignment == b.alignment


def test_trajectory_file_is_header_plus_jsonl(tmp_path):
    traj = collect_some(n=1)[0]
    path = save_trajectory(traj, tmp_path / "t.jsonl")
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    header, records = lines[0], lines[1:]
    assert set(header) == {"task", "seed", "mode", "success", "horizon", "format_version"}
    assert header["format_version"] == 1
    assert len(records) == header["horizon"]
    assert records[0]["t"] == 0
    assert set(records[0]) == {"t", "state", "human_action", "shared_action", "gamma", "alignment"}


def test_load_rejects_unknown_version(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"task": "push_cube", "seed": 1, "mode": "human_only", "success": true, '
                 '"horizon": 0, "format_version": 99}\n')
    with pytest.raises(ValueError):
        load_trajectory(p)


def test_dataset_roundtrip_and_manifest(tmp_path):
    trajs = collect_some(n=3)
    manifest_path = save_dataset(trajs, tmp_path / "ds")
    manifest = json.loads(manifest_path.read_text())
    assert manifest["count"] == 3
    assert manifest["counts_by_mode"] == {"human_only": 3}
    loaded = load_dataset(tmp_path / "ds")
    assert len(loaded) == 3
    s0, a0 = dataset_arrays(trajs)
    s1, a1 = dataset_arrays(loaded)
    assert np.array_equal(s0, s1) and np.array_equal(a0, a1)


def test_replay_fresh_episode_is_exact():
    for traj in collect_some(n=2, profile=DEFAULT_PROFILES["push_cube"]):
        result = jl.replay_trajectory(traj)
        assert result.ok
        assert result.max_deviation == 0.0
        assert result.success_match


def test_replay_survives_json_roundtrip(tmp_path):
    traj = collect_some(task="pick_place", n=1, profile=DEFAULT_PROFILES["pick_place"])[0]
    loaded = load_trajectory(save_trajectory(traj, tmp_path / "t.jsonl"))
    result = jl.replay_trajectory(loaded)
    assert result.ok and result.max_deviation <= 1e-9


def test_replay_detects_corrupted_action(tmp_path):
    traj = collect_some(n=1)[0]
    assert traj.horizon > 5
    traj.transitions[3].shared_action = traj.transitions[3].shared_action + 0.02
    result = jl.replay_trajectory(traj)
    assert not result.ok
    assert result.first_bad_tick == 4  # divergence shows on the state after the bad action


def test_replay_batch_of_dataset(tmp_path):
    trajs = collect_some(n=5, profile=DEFAULT_PROFILES["push_cube"])
    save_dataset(trajs, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert all(jl.replay_trajectory(t).ok for t in loaded)
