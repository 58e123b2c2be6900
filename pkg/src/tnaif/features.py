"""One-hot feature maps for T-maze observations and actions.

An observation combines three modalities into one of 24 joint symbols,
indexed as ``location * 6 + reward * 2 + context``.  That ordering is used
by every file format and belief table in the package.
"""

from __future__ import annotations

from enum import IntEnum
from typing import NamedTuple

import numpy as np

from .errors import DecodeError


class Location(IntEnum):
    CENTER = 0
    RIGHT = 1
    LEFT = 2
    CUE = 3


class Reward(IntEnum):
    NO_REWARD = 0
    WIN = 1
    LOSS = 2


class Context(IntEnum):
    RIGHT = 0
    LEFT = 1


class Action(IntEnum):
    CENTER = 0
    RIGHT = 1
    LEFT = 2
    CUE = 3


N_LOCATIONS = len(Location)
N_REWARDS = len(Reward)
N_CONTEXTS = len(Context)
OBS_DIM = N_LOCATIONS * N_REWARDS * N_CONTEXTS
ACTION_DIM = len(Action)


class Observation(NamedTuple):
    location: Location
    reward: Reward
    context: Context

    @classmethod
    def of(cls, location: int, reward: int, context: int) -> "Observation":
        return cls(Location(location), Reward(reward), Context(context))

    @property
    def index(self) -> int:
        return observation_index(self)

    def __str__(self) -> str:
        return f"{int(self.location)}.{int(self.reward)}.{int(self.context)}"


def observation_index(o: Observation) -> int:
    return int(o.location) * (N_REWARDS * N_CONTEXTS) + int(o.reward) * N_CONTEXTS + int(o.context)


def encode_observation(o: Observation) -> np.ndarray:
    vec = np.zeros(OBS_DIM)
    vec[observation_index(o)] = 1.0
    return vec


def encode_action(a: Action | int) -> np.ndarray:
    vec = np.zeros(ACTION_DIM)
    vec[int(Action(a))] = 1.0
    return vec


def decode_observation(index: int) -> Observation:
    index = int(index)
    if not 0 <= index < OBS_DIM:
        raise DecodeError(f"observation index {index} outside 0..{OBS_DIM - 1}")
    location, rest = divmod(index, N_REWARDS * N_CONTEXTS)
    reward, context = divmod(rest, N_CONTEXTS)
    return Observation.of(location, reward, context)


def decode_action(index: int) -> Action:
    index = int(index)
    if not 0 <= index < ACTION_DIM:
        raise DecodeError(f"action index {index} outside 0..{ACTION_DIM - 1}")
    return Action(index)


ALL_OBSERVATIONS: tuple[Observation, ...] = tuple(decode_observation(i) for i in range(OBS_DIM))


def modality_marginals(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a distribution over the 24 joint symbols into per-modality marginals."""
    table = np.asarray(probs).reshape(N_LOCATIONS, N_REWARDS, N_CONTEXTS)
    return table.sum(axis=(1, 2)), table.sum(axis=(0, 2)), table.sum(axis=(0, 1))
