"""Two-step T-maze with absorbing reward branches."""

from __future__ import annotations

import csv
import io
import itertools
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EpisodeOverError, ParseError
from .features import Action, Context, Location, Observation, Reward
from .mps import Trajectory

HORIZON = 2
DATASET_HEADER = ("o1", "a1", "o2", "a2", "o3")


class _ScriptedNoise:
    """Stand-in for a ``numpy`` generator that replays fixed coin flips."""

    def __init__(self, flips: Iterable[int]):
        self._flips = iter(flips)

    def integers(self, n: int) -> int:
        return next(self._flips)


class TMaze:
    """Environment state: true context, agent location and step counter.

    Outside the cue location the context modality is a fair coin flip drawn
    from ``rng``; at the cue it reports the true context.
    """

    def __init__(self, rng: np.random.Generator | int | None = None):
        self.rng = rng if hasattr(rng, "integers") else np.random.default_rng(rng)
        self.true_context = Context.RIGHT
        self.location = Location.CENTER
        self.steps_taken = 0

    def _observe(self) -> Observation:
        loc = self.location
        if loc in (Location.RIGHT, Location.LEFT):
            rewarded = Location.RIGHT if self.true_context == Context.RIGHT else Location.LEFT
            reward = Reward.WIN if loc == rewarded else Reward.LOSS
        else:
            reward = Reward.NO_REWARD
        if loc == Location.CUE:
            context = self.true_context
        else:
            context = Context(int(self.rng.integers(2)))
        return Observation(loc, reward, context)

    def reset(self, context: Context | int | None = None) -> Observation:
        if context is None:
            context = int(self.rng.integers(2))
        self.true_context = Context(context)
        self.location = Location.CENTER
        self.steps_taken = 0
        return self._observe()

    def step(self, action: Action | int) -> Observation:
        if self.steps_taken >= HORIZON:
            raise EpisodeOverError(f"episode is over after {HORIZON} steps")
        action = Action(action)
        if self.location not in (Location.RIGHT, Location.LEFT):
            self.location = Location(int(action))
        self.steps_taken += 1
        return self._observe()

    @property
    def done(self) -> bool:
        return self.steps_taken >= HORIZON


def _rollouts(context: Context) -> set[Trajectory]:
    out = set()
    # At most three coin flips are consumed per episode (one per observation).
    for a1, a2, flips in itertools.product(Action, Action, itertools.product((0, 1), repeat=3)):
        env = TMaze(_ScriptedNoise(flips))
        o1 = env.reset(context)
        o2 = env.step(a1)
        o3 = env.step(a2)
        out.add(Trajectory(o1, a1, o2, a2, o3))
    return out


def enumerate_all_paths() -> list[Trajectory]:
    """Every distinct episode reachable under either context and any noise.

    Sorted lexicographically on encoded indices.
    """
    paths = set().union(*(_rollouts(c) for c in Context))
    return sorted(paths, key=Trajectory.indices)


def path_breakdown() -> dict[str, int]:
    """Counts explaining the size of :func:`enumerate_all_paths`."""
    per_context = {c: _rollouts(c) for c in Context}
    shared = per_context[Context.RIGHT] & per_context[Context.LEFT]
    total = per_context[Context.RIGHT] | per_context[Context.LEFT]
    out = {f"context_{c.name.lower()}": len(p) for c, p in per_context.items()}
    out["shared"] = len(shared)
    out["total"] = len(total)
    for a in Action:
        out[f"a1_{a.name.lower()}"] = sum(1 for t in total if t.a1 == a)
    return out


def replay(t: Trajectory, context: Context | int) -> Trajectory:
    """Re-run ``t``'s actions with noise forced to reproduce its context readings."""
    flips = [int(o.context) for o in t.observations() if o.location != Location.CUE]
    env = TMaze(_ScriptedNoise(flips))
    o1 = env.reset(context)
    o2 = env.step(t.a1)
    o3 = env.step(t.a2)
    return Trajectory(o1, t.a1, o2, t.a2, o3)


# -- dataset CSV ---------------------------------------------------------


def format_dataset(paths: Sequence[Trajectory]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DATASET_HEADER)
    for t in paths:
        writer.writerow([str(t.o1), int(t.a1), str(t.o2), int(t.a2), str(t.o3)])
    return buf.getvalue()


def write_dataset(paths: Sequence[Trajectory], path: str | Path) -> None:
    Path(path).write_text(format_dataset(paths), encoding="utf-8", newline="\n")


def _parse_observation(cell: str, lineno: int) -> Observation:
    parts = cell.strip().split(".")
    try:
        if len(parts) != 3:
            raise ValueError
        return Observation.of(*(int(p) for p in parts))
    except ValueError:
        raise ParseError(f"line {lineno}: bad observation {cell!r}") from None


def _parse_action(cell: str, lineno: int) -> Action:
    try:
        return Action(int(cell))
    except ValueError:
        raise ParseError(f"line {lineno}: bad action {cell!r}") from None


def parse_dataset(text: str) -> list[Trajectory]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != DATASET_HEADER:
        raise ParseError(f"line 1: expected header {','.join(DATASET_HEADER)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 5:
            raise ParseError(f"line {lineno}: expected 5 fields, got {len(row)}")
        out.append(
            Trajectory(
                _parse_observation(row[0], lineno),
                _parse_action(row[1], lineno),
                _parse_observation(row[2], lineno),
                _parse_action(row[3], lineno),
                _parse_observation(row[4], lineno),
            )
        )
    if not out:
        raise ParseError("dataset contains no trajectories")
    return out


def read_dataset(path: str | Path) -> list[Trajectory]:
    return parse_dataset(Path(path).read_text(encoding="utf-8"))
