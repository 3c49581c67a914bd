"""Schemas for network documents, experiment configs and run-log entries.

These schemas enforce structure and validation on everything read from JSON,
so the numerical modules can assume well-formed input.
"""

from datetime import datetime
from enum import Enum
from functools import cached_property
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.validators import SchemaValidator, ValidationException

RouteKey = Tuple[int, int]


def parse_route_key(value: Union[str, List[int], Tuple[int, int]]) -> RouteKey:
    """Canonical (i, j) with i < j from "1-3", "1,3", [1, 3] or (3, 1)"""
    if isinstance(value, str):
        parts = value.replace(",", "-").split("-")
        if len(parts) != 2:
            raise ValueError(f"route key '{value}' must look like 'i-j'")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"route key '{value}' must hold two channel ids")
    else:
        if len(value) != 2:
            raise ValueError(f"route key {value!r} must hold two channel ids")
        i, j = int(value[0]), int(value[1])
    if i == j:
        raise ValueError(f"route {i}-{j} must join two distinct channels")
    return (i, j) if i < j else (j, i)


def format_route_key(key: RouteKey) -> str:
    return f"{key[0]}-{key[1]}"


class Policy(str, Enum):
    """Bandwidth-sharing policies"""
    MIN = "min"
    PROCESSOR_SHARING = "ps"


class ChannelSpec(BaseModel):
    """A channel of the star and its capacity"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: int = Field(..., ge=1, description="Channel identifier")
    capacity: float = Field(..., gt=0, description="Bandwidth C_i")


class RouteSpec(BaseModel):
    """An unordered two-channel route with its traffic parameters"""
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    i: int = Field(..., ge=1)
    j: int = Field(..., ge=1)
    arrival_rate: float = Field(..., gt=0, alias="lambda")
    service_rate: float = Field(..., gt=0, alias="mu")

    @model_validator(mode="before")
    @classmethod
    def canonical_order(cls, data: Any) -> Any:
        if isinstance(data, dict) and "i" in data and "j" in data:
            i, j = data["i"], data["j"]
            if isinstance(i, int) and isinstance(j, int) and i > j:
                data = {**data, "i": j, "j": i}
        return data

    @model_validator(mode="after")
    def distinct_channels(self):
        if self.i == self.j:
            raise ValueError(f"route {self.i}-{self.j} must join two distinct channels")
        return self

    @property
    def key(self) -> RouteKey:
        return (self.i, self.j)


class NetworkSpec(BaseModel):
    """Star network: channels with capacities and active routes.

    Channels and routes are stored sorted, routes with i < j, so two documents
    describing the same network compare equal after parsing.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    channels: List[ChannelSpec] = Field(..., min_length=2)
    routes: List[RouteSpec] = Field(..., min_length=1)

    @field_validator("channels")
    @classmethod
    def unique_channels(cls, v: List[ChannelSpec]) -> List[ChannelSpec]:
        ids = [c.id for c in v]
        if len(set(ids)) != len(ids):
            raise ValueError("channel ids must be unique")
        return sorted(v, key=lambda c: c.id)

    @field_validator("routes")
    @classmethod
    def unique_routes(cls, v: List[RouteSpec]) -> List[RouteSpec]:
        keys = [r.key for r in v]
        if len(set(keys)) != len(keys):
            raise ValueError("routes must be unique (ij and ji are the same route)")
        return sorted(v, key=lambda r: r.key)

    @model_validator(mode="after")
    def routes_reference_channels(self):
        ids = {c.id for c in self.channels}
        for n, route in enumerate(self.routes):
            for end in ("i", "j"):
                if getattr(route, end) not in ids:
                    raise ValueError(
                        f"routes[{n}].{end}: channel {getattr(route, end)} is not declared"
                    )
        return self

    # Numeric views, aligned with the canonical orders above.

    @cached_property
    def channel_ids(self) -> Tuple[int, ...]:
        return tuple(c.id for c in self.channels)

    @cached_property
    def route_keys(self) -> Tuple[RouteKey, ...]:
        return tuple(r.key for r in self.routes)

    @cached_property
    def channel_index(self) -> Dict[int, int]:
        return {cid: n for n, cid in enumerate(self.channel_ids)}

    @cached_property
    def route_index(self) -> Dict[RouteKey, int]:
        return {key: n for n, key in enumerate(self.route_keys)}

    @cached_property
    def capacities(self) -> np.ndarray:
        return np.array([c.capacity for c in self.channels], dtype=float)

    @cached_property
    def arrival_rates(self) -> np.ndarray:
        return np.array([r.arrival_rate for r in self.routes], dtype=float)

    @cached_property
    def service_rates(self) -> np.ndarray:
        return np.array([r.service_rate for r in self.routes], dtype=float)

    @cached_property
    def endpoints(self) -> np.ndarray:
        """(R, 2) array of channel positions of each route"""
        return np.array(
            [[self.channel_index[r.i], self.channel_index[r.j]] for r in self.routes],
            dtype=int,
        )

    @cached_property
    def incidence(self) -> np.ndarray:
        """(N, R) 0/1 matrix: channel n carries route r"""
        matrix = np.zeros((len(self.channels), len(self.routes)))
        for r, (a, b) in enumerate(self.endpoints):
            matrix[a, r] = 1.0
            matrix[b, r] = 1.0
        return matrix

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def route_position(self, route: Union[str, RouteKey]) -> int:
        try:
            key = parse_route_key(route)
        except ValueError as e:
            raise ValidationException(f"route: {e}")
        if key not in self.route_index:
            raise ValidationException(f"route: {format_route_key(key)} is not a route of the network")
        return self.route_index[key]

    def channel_position(self, channel: int) -> int:
        if channel not in self.channel_index:
            raise ValidationException(f"channel: {channel} is not a channel of the network")
        return self.channel_index[channel]

    def with_route(self, route: Union[str, RouteKey], **updates: float) -> "NetworkSpec":
        """Copy with one route's 'lambda' and/or 'mu' replaced (revalidated)"""
        position = self.route_position(route)
        document = self.model_dump(by_alias=True)
        document["routes"][position].update(updates)
        return SchemaValidator.validate_against_schema(document, NetworkSpec)

    def with_capacity(self, channel: int, capacity: float) -> "NetworkSpec":
        position = self.channel_position(channel)
        document = self.model_dump(by_alias=True)
        document["channels"][position]["capacity"] = capacity
        return SchemaValidator.validate_against_schema(document, NetworkSpec)


def _check_route_keys(values: Dict[str, Any]) -> Dict[str, Any]:
    for key in values:
        parse_route_key(key)
    return values


class RateBlock(BaseModel):
    """Inputs of the 'rate' command: a state x and a drift D"""
    model_config = ConfigDict(extra="forbid")

    state: Dict[str, float] = Field(default_factory=dict, description="x_ij by route 'i-j'")
    drift: Dict[str, float] = Field(default_factory=dict, description="D_ij by route 'i-j'")
    mode: Literal["ergodic", "general"] = "ergodic"
    extended: bool = False
    zero_tol: float = Field(default=0.0, ge=0)

    @field_validator("state", "drift")
    @classmethod
    def route_keys(cls, v: Dict[str, float]) -> Dict[str, float]:
        return _check_route_keys(v)

    @field_validator("state")
    @classmethod
    def nonnegative_state(cls, v: Dict[str, float]) -> Dict[str, float]:
        for key, value in v.items():
            if value < 0:
                raise ValueError(f"state '{key}' must be >= 0")
        return v


class SimulateBlock(BaseModel):
    """Inputs of the 'simulate' command"""
    model_config = ConfigDict(extra="forbid")

    horizon: float = Field(..., gt=0)
    seed: Optional[int] = Field(default=None, ge=0)
    policy: Policy = Policy.MIN
    anchor_channel: Optional[int] = None
    initial_state: Dict[str, int] = Field(default_factory=dict)
    histogram_cap: int = Field(default=10000, ge=1)
    window: Tuple[float, float] = (0.5, 0.99)
    channels: Optional[List[int]] = None

    @field_validator("initial_state")
    @classmethod
    def nonnegative_counts(cls, v: Dict[str, int]) -> Dict[str, int]:
        _check_route_keys(v)
        for key, value in v.items():
            if value < 0:
                raise ValueError(f"initial_state '{key}' must be >= 0")
        return v

    @model_validator(mode="after")
    def anchor_for_ps(self):
        if self.policy == Policy.PROCESSOR_SHARING and self.anchor_channel is None:
            raise ValueError("anchor_channel is required with policy 'ps'")
        return self


class OptimizeBlock(BaseModel):
    """Inputs of the 'optimize' command (variational decay estimate)"""
    model_config = ConfigDict(extra="forbid")

    target_channel: int
    segments: int = Field(default=4, ge=1, le=16)
    multistarts: int = Field(default=16, ge=1)
    seed: Optional[int] = Field(default=None, ge=0)
    max_iterations: int = Field(default=4000, ge=10)
    tolerance: float = Field(default=1e-8, gt=0)
    mode: Literal["ergodic", "general"] = "ergodic"


class SweepBlock(BaseModel):
    """A one-parameter sweep, e.g. parameter 'routes.1-3.lambda'"""
    model_config = ConfigDict(extra="forbid")

    parameter: str
    values: List[float] = Field(..., min_length=1)

    @field_validator("parameter")
    @classmethod
    def known_parameter(cls, v: str) -> str:
        parts = v.split(".")
        if len(parts) == 3 and parts[0] == "routes" and parts[2] in ("lambda", "mu"):
            parse_route_key(parts[1])
            return v
        if len(parts) == 3 and parts[0] == "channels" and parts[2] == "capacity":
            int(parts[1])
            return v
        raise ValueError("parameter must be 'routes.i-j.lambda|mu' or 'channels.k.capacity'")


class StayCostBlock(BaseModel):
    """Inputs of the 'stay-cost' command"""
    model_config = ConfigDict(extra="forbid")

    routes: Optional[List[str]] = None

    @field_validator("routes")
    @classmethod
    def route_keys(cls, v: Optional[List[str]]) -> Optional[List[str]]:
        for key in v or []:
            parse_route_key(key)
        return v


class Fig4Block(BaseModel):
    """Reproduction harness for the three-channel example network"""
    model_config = ConfigDict(extra="forbid")

    values: List[float] = Field(default_factory=lambda: [0.05, 0.15, 0.25, 0.35, 0.45], min_length=1)
    channels: List[int] = Field(default_factory=lambda: [1, 2, 3])
    horizon: float = Field(default=1e6, gt=0)
    seed: Optional[int] = Field(default=None, ge=0)
    window: Tuple[float, float] = (0.5, 0.99)
    histogram_cap: int = Field(default=10000, ge=1)
    optimize: bool = True
    segments: int = Field(default=4, ge=1, le=16)
    multistarts: int = Field(default=8, ge=1)

    @field_validator("values")
    @classmethod
    def ergodic_sweep(cls, v: List[float]) -> List[float]:
        for value in v:
            if not 0 < value < 0.5:
                raise ValueError(
                    f"sweep value {value} outside (0, 0.5): channel 3 carries "
                    f"lambda_13 + 1/2 and must stay below its capacity 1 to be ergodic"
                )
        return v

    @field_validator("channels")
    @classmethod
    def fig4_channels(cls, v: List[int]) -> List[int]:
        for channel in v:
            if channel not in (1, 2, 3):
                raise ValueError(f"channel {channel} is not a channel of the example network")
        return v


class OutputBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: Optional[str] = None
    formats: List[Literal["json", "csv"]] = Field(default_factory=lambda: ["json", "csv"])


class ExperimentConfig(BaseModel):
    """A complete experiment document.

    Only the blocks needed by the invoked command must be present.
    """
    model_config = ConfigDict(extra="forbid")

    network: Optional[NetworkSpec] = None
    rate: Optional[RateBlock] = None
    simulate: Optional[SimulateBlock] = None
    optimize: Optional[OptimizeBlock] = None
    sweep: Optional[SweepBlock] = None
    stay_cost: Optional[StayCostBlock] = None
    fig4: Optional[Fig4Block] = None
    output: OutputBlock = Field(default_factory=OutputBlock)

    @model_validator(mode="after")
    def references_exist(self):
        if self.network is None:
            return self
        routes = set(self.network.route_keys)
        channels = set(self.network.channel_ids)

        def check_route(field: str, key: str):
            if parse_route_key(key) not in routes:
                raise ValueError(f"{field}: route '{key}' is not a route of the network")

        def check_channel(field: str, channel: int):
            if channel not in channels:
                raise ValueError(f"{field}: channel {channel} is not a channel of the network")

        if self.rate:
            for key in self.rate.state:
                check_route("rate.state", key)
            for key in self.rate.drift:
                check_route("rate.drift", key)
        if self.simulate:
            for key in self.simulate.initial_state:
                check_route("simulate.initial_state", key)
            if self.simulate.anchor_channel is not None:
                check_channel("simulate.anchor_channel", self.simulate.anchor_channel)
            for channel in self.simulate.channels or []:
                check_channel("simulate.channels", channel)
        if self.optimize:
            check_channel("optimize.target_channel", self.optimize.target_channel)
        if self.sweep:
            kind, ident, _ = self.sweep.parameter.split(".")
            if kind == "routes":
                check_route("sweep.parameter", ident)
            else:
                check_channel("sweep.parameter", int(ident))
        if self.stay_cost:
            for key in self.stay_cost.routes or []:
                check_route("stay_cost.routes", key)
        return self

    def canonical(self) -> Dict[str, Any]:
        """Canonical JSON-ready form (aliases, no unset optional blocks)"""
        return self.model_dump(mode="json", by_alias=True, exclude_none=True)


class RunLogEntry(BaseModel):
    """Run-log entry for a command invocation"""
    timestamp: datetime = Field(default_factory=datetime.now)
    command: str
    parameters: dict
    result: Optional[dict] = None
    error: Optional[str] = None
    duration_s: Optional[float] = None
    session_id: Optional[str] = None

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "timestamp": "2026-01-12T10:30:00",
                "command": "rate",
                "parameters": {"config": "configs/fig4_rate.json"},
                "result": {"total": 1.4716},
            }
        }
    )
