"""Wire messages for the live teleoperation service.

JSON text frames over a WebSocket. Client messages carry a "type" discriminator
and are validated strictly (unknown fields or types are rejected with an error
reply, the connection stays open). Server messages mirror the session state.
The full schema with examples lives in protocol.md at the repo root.
"""

from __future__ import annotations

import json
from typing import Annotated, Literal, Union

import pydantic
from pydantic import BaseModel, ConfigDict, Field

PROTOCOL_VERSION = 1


class ProtocolError(ValueError):
    """Frame that does not parse against the schema."""


class HumanActionMsg(BaseModel):
    model_config = ConfigDict(extra="forbid")
    type: Literal["human_action"]
    dx: float = 0.0
    dy: float = 0.0
    dgrip: float = 0.0
    dphi: float = 0.0


class SetGammaMsg(BaseModel):
    model_config = ConfigDict(extra="forbid")
    type: Literal["set_gamma"]
    value: Union[float, Literal["adaptive"]]

    @pydantic.field_validator("value")
    @classmethod
    def _in_range(cls, v):
        if isinstance(v, (int, float)) and not 0.0 <= float(v) <= 1.0:
            raise ValueError("gamma must be in [0,1]")
        return v


class SetModeMsg(BaseModel):
    model_config = ConfigDict(extra="forbid")
    type: Literal["set_mode"]
    mode: Literal["assist_on", "assist_off"]


class ResetMsg(BaseModel):
    model_config = ConfigDict(extra="forbid")
    type: Literal["reset"]
    seed: int | None = None


class SaveEpisodeMsg(BaseModel):
    model_config = ConfigDict(extra="forbid")
    type: Literal["save_episode"]


ClientMessage = Annotated[
    Union[HumanActionMsg, SetGammaMsg, SetModeMsg, ResetMsg, SaveEpisodeMsg],
    Field(discriminator="type"),
]

_client_adapter = pydantic.TypeAdapter(ClientMessage)


def parse_client_message(text: str) -> ClientMessage:
    """Strictly parse one client frame; raises ProtocolError on anything off-schema."""
    try:
        payload = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ProtocolError(f"frame is not valid JSON: {e}") from None
    if not isinstance(payload, dict):
        raise ProtocolError("frame must be a JSON object")
    if "type" not in payload:
        raise ProtocolError("frame is missing 'type'")
    try:
        return _client_adapter.validate_python(payload)
    except pydantic.ValidationError as e:
        raise ProtocolError(f"invalid {payload.get('type')!r} message: {e.error_count()} error(s)") from None


class MetaMsg(BaseModel):
    """Sent once on connect: what the session is serving and how to drive it."""

    type: Literal["meta"] = "meta"
    protocol_version: int = PROTOCOL_VERSION
    task: str
    state_labels: list[str]
    action_labels: list[str]
    action_low: list[float]
    action_high: list[float]
    workspace: list[float]
    max_steps: int
    tick_hz: float
    assist_available: bool


class StateMsg(BaseModel):
    type: Literal["state"] = "state"
    tick: int
    task: str
    state: list[float]
    step_index: int
    success: bool
    truncated: bool
    gamma: float
    adaptive: bool
    assist: bool
    alignment: float
    executed_action: list[float]


class RoundReportMsg(BaseModel):
    type: Literal["round_report"] = "round_report"
    episodes_saved: int
    success_rate: float
    mean_horizon: float | None
    collection_speed: float


class ErrorMsg(BaseModel):
    type: Literal["error"] = "error"
    message: str


ServerMessage = Union[MetaMsg, StateMsg, RoundReportMsg, ErrorMsg]
