"""Live shared-control teleoperation service.

One WebSocket connection = one session with its own environment. The session
runs a fixed-rate tick loop: each tick applies the most recent human action
(zero if the operator was idle), optionally routed through the assistive
agent, steps the environment once, records the transition, and broadcasts the
new state. Control messages are drained at tick boundaries, so however many
frames arrive between ticks, exactly one env step happens per tick and the
latest human action wins.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import protocol as proto
from .agents import AssistiveAgent, act_assisted, load_checkpoint
from .blending import ControlRatio, RatioMode, preference_alignment
from .data import CollectionMode, Trajectory, Transition, save_trajectory
from .envs import TaskEnv, make_env
from .jointloop import ADAPTIVE_SMOOTHING, ADAPTIVE_START_GAMMA, CONTROL_HZ, episode_streams


@dataclass
class ServiceConfig:
    task: str
    checkpoint: str | None = None
    out_dir: str | None = None
    tick_hz: float = CONTROL_HZ
    seed: int = 0


class Session:
    """Per-connection state: env, control ratio, pending input, recording buffer."""

    def __init__(self, env: TaskEnv, agent: AssistiveAgent | None, cfg: ServiceConfig):
        self.env = env
        self.agent = agent
        self.cfg = cfg
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5E55]))
        self.tick = 0
        self.assist = False
        self.ratio = ControlRatio(gamma=0.0)
        self.pending_action: np.ndarray | None = None
        self.episode_log: list[tuple[bool, int]] = []  # (success, horizon) of saved episodes
        self.saved = 0
        self.last_alignment = 0.0
        self.last_executed = np.zeros(env.action_dim)
        self._begin_episode(seed=None)

    def _begin_episode(self, seed: int | None) -> None:
        self.episode_seed = int(self.rng.integers(0, 2**32)) if seed is None else int(seed)
        reset_ss, _, blend_rng = episode_streams(self.episode_seed)
        self.state = self.env.reset(reset_ss)
        self.blend_rng = blend_rng
        self.recording: list[Transition] = []
        self.ratio.reset_episode()
        self.pending_action = None
        self.last_alignment = 0.0
        self.last_executed = np.zeros(self.env.action_dim)

    # -- message handling ------------------------------------------------------

    def action_from_msg(self, msg: proto.HumanActionMsg) -> np.ndarray:
        parts = {"dx": msg.dx, "dy": msg.dy, "dgrip": msg.dgrip, "dphi": msg.dphi}
        return np.array([parts[label] for label in self.env.action_labels], dtype=np.float64)

    def handle(self, msg: proto.ClientMessage) -> list:
        """Apply one control message; returns server messages to send."""
        if isinstance(msg, proto.HumanActionMsg):
            self.pending_action = self.action_from_msg(msg)  # latest wins
            return []
        if isinstance(msg, proto.SetGammaMsg):
            if msg.value == "adaptive":
                self.ratio.mode = RatioMode.ADAPTIVE
                self.ratio.smoothing = ADAPTIVE_SMOOTHING
                if self.ratio.gamma == 0.0:
                    self.ratio.gamma = ADAPTIVE_START_GAMMA
            else:
                self.ratio.mode = RatioMode.MANUAL
                self.ratio.gamma = float(msg.value)
            return []
        if isinstance(msg, proto.SetModeMsg):
            if msg.mode == "assist_on" and self.agent is None:
                return [proto.ErrorMsg(message="no checkpoint loaded; assist unavailable")]
            self.assist = msg.mode == "assist_on"
            return []
        if isinstance(msg, proto.ResetMsg):
            self._begin_episode(msg.seed)
            return []
        if isinstance(msg, proto.SaveEpisodeMsg):
            return [self.save_episode()]
        return [proto.ErrorMsg(message=f"unhandled message type {type(msg).__name__}")]

    def save_episode(self) -> proto.ServerMessage:
        if not self.recording:
            return proto.ErrorMsg(message="nothing recorded yet; drive first or reset")
        used_assist = any(t.gamma > 0 for t in self.recording)
        traj = Trajectory(
            task=self.env.name,
            seed=self.episode_seed,
            mode=CollectionMode.SHARED if used_assist else CollectionMode.HUMAN_ONLY,
            transitions=list(self.recording),
            success=self.state.success,
        )
        if self.cfg.out_dir:
            name = f"episode_{self.cfg.seed}_{self.saved:04d}.jsonl"
            save_trajectory(traj, Path(self.cfg.out_dir) / name)
        self.saved += 1
        self.episode_log.append((traj.success, traj.horizon))
        self.recording = []
        wins = sum(1 for s, _ in self.episode_log if s)
        horizons = [h for s, h in self.episode_log if s]
        total_steps = sum(h for _, h in self.episode_log)
        speed = 0.0
        if wins:
            speed = 3600.0 / ((total_steps / wins) / self.cfg.tick_hz)
        return proto.RoundReportMsg(
            episodes_saved=self.saved,
            success_rate=wins / len(self.episode_log),
            mean_horizon=float(np.mean(horizons)) if horizons else None,
            collection_speed=speed,
        )

    # -- tick -------------------------------------------------------------------

    def truncated(self) -> bool:
        return self.state.step_index >= self.env.max_steps

    def step_once(self) -> None:
        """One tick: apply the latest (or zero) action, step, record."""
        if self.truncated():
            return  # frozen until reset
        a_h = self.pending_action if self.pending_action is not None else np.zeros(self.env.action_dim)
        self.pending_action = None
        if self.assist and self.agent is not None and not (
            self.ratio.mode is RatioMode.MANUAL and self.ratio.gamma == 0.0
        ):
            result = act_assisted(self.agent, self.state.vec, a_h, self.ratio, self.blend_rng)
            a_s, gamma_used, alignment = result.action, result.gamma, result.alignment
        else:
            a_s = self.env.clip_action(a_h)
            gamma_used, alignment = 0.0, preference_alignment(a_h, a_h)
        self.recording.append(
            Transition(
                state=self.state.vec.copy(),
                human_action=np.asarray(a_h, dtype=np.float64),
                shared_action=np.asarray(a_s, dtype=np.float64),
                gamma=gamma_used,
                alignment=alignment,
            )
        )
        self.state = self.env.step(self.state, a_s)
        self.last_alignment = alignment
        self.last_executed = a_s

    def state_msg(self) -> proto.StateMsg:
        return proto.StateMsg(
            tick=self.tick,
            task=self.env.name,
            state=[float(x) for x in self.state.vec],
            step_index=self.state.step_index,
            success=self.state.success,
            truncated=self.truncated(),
            gamma=self.ratio.gamma,
            adaptive=self.ratio.mode is RatioMode.ADAPTIVE,
            assist=self.assist,
            alignment=self.last_alignment,
            executed_action=[float(x) for x in self.last_executed],
        )

    def meta_msg(self) -> proto.MetaMsg:
        meta = self.env.metadata()
        return proto.MetaMsg(
            task=meta["name"],
            state_labels=meta["state_labels"],
            action_labels=meta["action_labels"],
            action_low=meta["action_low"],
            action_high=meta["action_high"],
            workspace=meta["workspace"],
            max_steps=meta["max_steps"],
            tick_hz=self.cfg.tick_hz,
            assist_available=self.agent is not None,
        )


def load_service_agent(cfg: ServiceConfig) -> AssistiveAgent | None:
    if not cfg.checkpoint:
        return None
    agent = load_checkpoint(cfg.checkpoint)
    if not isinstance(agent, AssistiveAgent):
        raise ValueError("service assist requires a diffusion checkpoint")
    if agent.task != cfg.task:
        raise ValueError(f"checkpoint is for task {agent.task!r}, serving {cfg.task!r}")
    return agent


def build_app(cfg: ServiceConfig) -> FastAPI:
    agent = load_service_agent(cfg)
    app = FastAPI(title="coact teleoperation service")

    @app.get("/meta")
    def meta() -> dict:
        return {**make_env(cfg.task).metadata(), "assist_available": agent is not None,
                "tick_hz": cfg.tick_hz, "protocol_version": proto.PROTOCOL_VERSION}

    @app.websocket("/session")
    async def session_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        session = Session(make_env(cfg.task), agent, cfg)
        send_lock = asyncio.Lock()

        async def send(msg) -> None:
            async with send_lock:
                await ws.send_text(msg.model_dump_json())

        await send(session.meta_msg())
        await send(session.state_msg())

        incoming: asyncio.Queue = asyncio.Queue()
        closed = object()

        async def reader() -> None:
            try:
                while True:
                    await incoming.put(await ws.receive_text())
            except WebSocketDisconnect:
                await incoming.put(closed)
            except RuntimeError:
                await incoming.put(closed)

        reader_task = asyncio.create_task(reader())
        tick_period = 1.0 / cfg.tick_hz
        loop = asyncio.get_running_loop()
        next_tick = loop.time() + tick_period
        try:
            while True:
                timeout = next_tick - loop.time()
                frame = None
                if timeout <= 0:
                    while not incoming.empty():
                        frame = incoming.get_nowait()
                        if frame is closed:
                            return
                        await handle_frame(session, frame, send)
                        frame = None
                    session.step_once()
                    session.tick += 1
                    await send(session.state_msg())
                    next_tick += tick_period
                    continue
                try:
                    frame = await asyncio.wait_for(incoming.get(), timeout)
                except asyncio.TimeoutError:
                    continue
                if frame is closed:
                    return
                await handle_frame(session, frame, send)
        finally:
            reader_task.cancel()

    async def handle_frame(session: Session, text: str, send) -> None:
        try:
            msg = proto.parse_client_message(text)
        except proto.ProtocolError as e:
            await send(proto.ErrorMsg(message=str(e)))
            return
        for reply in session.handle(msg):
            await send(reply)

    return app


def serve(cfg: ServiceConfig, host: str = "127.0.0.1", port: int = 8765) -> None:
    import uvicorn

    uvicorn.run(build_app(cfg), host=host, port=port, log_level="warning")
