"""Three-site matrix product state over T-maze episodes.

The chain carries five physical legs::

    site 0: (o1, right bond)
    site 1: (left bond, o2, a1, right bond)
    site 2: (left bond, o3, a2)

Probabilities follow the Born rule, ``P(x) = psi(x)**2 / Z``.  Every query
below is an exact contraction of the bra and ket layers; nothing enumerates
the 221,184 configurations.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConditioningError, DegenerateModelError, ParseError, QueryError, ShapeError
from .features import (
    ACTION_DIM,
    OBS_DIM,
    Action,
    Observation,
    decode_action,
    decode_observation,
    encode_action,
    encode_observation,
    observation_index,
)
from .tensor import as_tensor, contract

LEGS = ("o1", "a1", "o2", "a2", "o3")
LEG_DIMS = {"o1": OBS_DIM, "a1": ACTION_DIM, "o2": OBS_DIM, "a2": ACTION_DIM, "o3": OBS_DIM}
ACTION_LEGS = ("a1", "a2")
OBSERVATION_LEGS = ("o1", "o2", "o3")

# Axis layout of each site; names starting with "|" are virtual bonds.
SITE_AXES = (("o1", "|b1"), ("|b1", "o2", "a1", "|b2"), ("|b2", "o3", "a2"))
_LETTERS = {"o1": "i", "a1": "j", "o2": "k", "a2": "l", "o3": "m"}
_BRA_BOND = {"|b1": "x", "|b2": "y"}
_KET_BOND = {"|b1": "X", "|b2": "Y"}

FORMAT_HEADER = "TNMPS v1"


@dataclass(frozen=True)
class Trajectory:
    o1: Observation
    a1: Action
    o2: Observation
    a2: Action
    o3: Observation

    @classmethod
    def from_indices(cls, o1: int, a1: int, o2: int, a2: int, o3: int) -> "Trajectory":
        return cls(
            decode_observation(o1),
            decode_action(a1),
            decode_observation(o2),
            decode_action(a2),
            decode_observation(o3),
        )

    def indices(self) -> tuple[int, int, int, int, int]:
        """Encoded feature indices in ``(o1, a1, o2, a2, o3)`` order."""
        return (
            observation_index(self.o1),
            int(self.a1),
            observation_index(self.o2),
            int(self.a2),
            observation_index(self.o3),
        )

    def assignment(self) -> dict[str, int]:
        return dict(zip(LEGS, self.indices()))

    def observations(self) -> tuple[Observation, Observation, Observation]:
        return (self.o1, self.o2, self.o3)

    def actions(self) -> tuple[Action, Action]:
        return (self.a1, self.a2)


class Distribution:
    """Finite probability table over one or more discrete legs.

    ``probs`` is stored flat in row-major order over ``shape``.
    """

    __slots__ = ("probs", "shape", "legs")

    def __init__(self, probs, shape: Sequence[int] | None = None, legs: Sequence[str] = ()):
        p = np.asarray(probs, dtype=np.float64).reshape(-1)
        if p.size == 0:
            raise ValueError("a distribution needs a non-empty support")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        self.probs = p
        self.shape = tuple(shape) if shape is not None else (p.size,)
        if int(np.prod(self.shape)) != p.size:
            raise ShapeError(f"shape {self.shape} does not match {p.size} probabilities")
        self.legs = tuple(legs)

    @classmethod
    def normalized(cls, weights, shape=None, legs=()) -> "Distribution":
        w = np.asarray(weights, dtype=np.float64)
        return cls(w / w.sum(), shape=shape if shape is not None else w.shape, legs=legs)

    @property
    def support_size(self) -> int:
        return self.probs.size

    @property
    def table(self) -> np.ndarray:
        return self.probs.reshape(self.shape)

    def __len__(self) -> int:
        return self.probs.size

    def __getitem__(self, i):
        return self.probs[i]

    def __iter__(self):
        return iter(self.probs)

    def __repr__(self) -> str:
        legs = f", legs={self.legs}" if self.legs else ""
        return f"Distribution({np.array2string(self.probs, precision=4)}{legs})"


@dataclass(frozen=True)
class PrefixEnvironment:
    """Amplitude of the chain contracted with an observed prefix.

    ``vector`` is indexed by the open bond to the right of the prefix; the
    double-layer environment is its outer product with itself.  An empty
    prefix has ``vector`` ``None``.
    """

    observations: tuple[int, ...]
    actions: tuple[int, ...]
    vector: np.ndarray | None


def leg_value(leg: str, value) -> int:
    if isinstance(value, Observation):
        idx = observation_index(value)
    else:
        idx = int(value)
    if leg not in LEG_DIMS:
        raise QueryError(f"unknown leg {leg!r}; expected one of {LEGS}")
    if not 0 <= idx < LEG_DIMS[leg]:
        raise QueryError(f"value {idx} out of range for leg {leg}")
    return idx


def _read_only(arr: np.ndarray) -> np.ndarray:
    arr = as_tensor(arr).copy()
    arr.setflags(write=False)
    return arr


class SequenceMPS:
    """The generative model: three site tensors and cached environments.

    Site arrays are stored read-only; use :meth:`set_site` to change one so
    that the cached partition function and environments are invalidated.
    """

    def __init__(self, sites: Sequence[np.ndarray]):
        if len(sites) != 3:
            raise ShapeError(f"expected 3 site tensors, got {len(sites)}")
        self._sites = [_read_only(s) for s in sites]
        self._check_shapes(self._sites)
        self._invalidate()

    @staticmethod
    def _check_shapes(sites) -> None:
        s0, s1, s2 = sites
        if s0.ndim != 2 or s1.ndim != 4 or s2.ndim != 3:
            raise ShapeError(
                f"site ranks must be (2, 4, 3), got {(s0.ndim, s1.ndim, s2.ndim)}"
            )
        if s0.shape[0] != OBS_DIM or s1.shape[1] != OBS_DIM or s2.shape[1] != OBS_DIM:
            raise ShapeError("observation legs must have dimension 24")
        if s1.shape[2] != ACTION_DIM or s2.shape[2] != ACTION_DIM:
            raise ShapeError("action legs must have dimension 4")
        if s0.shape[1] != s1.shape[0] or s1.shape[3] != s2.shape[0]:
            raise ShapeError(
                f"bond mismatch: {s0.shape[1]} vs {s1.shape[0]}, {s1.shape[3]} vs {s2.shape[0]}"
            )

    def _invalidate(self) -> None:
        self._z: float | None = None
        self._right_env: dict[int, np.ndarray] = {}

    # -- construction -----------------------------------------------------

    @classmethod
    def random(
        cls,
        bond_dim: int | tuple[int, int] = 8,
        rng: np.random.Generator | int | None = None,
        low: float = 0.9,
        high: float = 1.1,
        normalize: bool = True,
    ) -> "SequenceMPS":
        """Entries i.i.d. uniform on ``[low, high)``, optionally rescaled to Z = 1."""
        rng = np.random.default_rng(rng)
        d1, d2 = (bond_dim, bond_dim) if np.isscalar(bond_dim) else bond_dim
        sites = [
            rng.uniform(low, high, size=(OBS_DIM, d1)),
            rng.uniform(low, high, size=(d1, OBS_DIM, ACTION_DIM, d2)),
            rng.uniform(low, high, size=(d2, OBS_DIM, ACTION_DIM)),
        ]
        m = cls(sites)
        if normalize:
            m.normalize()
        return m

    @classmethod
    def delta(cls, t: Trajectory) -> "SequenceMPS":
        """Bond-1 model whose only non-zero amplitude is ``t`` (amplitude 1)."""
        o1, a1, o2, a2, o3 = t.indices()
        s0 = encode_observation(t.o1).reshape(OBS_DIM, 1)
        s1 = np.einsum("k,j->kj", encode_observation(t.o2), encode_action(a1))
        s2 = np.einsum("m,l->ml", encode_observation(t.o3), encode_action(a2))
        return cls([s0, s1.reshape(1, OBS_DIM, ACTION_DIM, 1), s2.reshape(1, OBS_DIM, ACTION_DIM)])

    def copy(self) -> "SequenceMPS":
        return SequenceMPS(self._sites)

    # -- access and mutation ----------------------------------------------

    @property
    def sites(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(self._sites)

    @property
    def bond_dims(self) -> tuple[int, int]:
        return (self._sites[0].shape[1], self._sites[1].shape[3])

    def set_sites(self, updates: Mapping[int, np.ndarray]) -> None:
        """Replace several sites at once; shapes are checked on the result."""
        new = list(self._sites)
        for i, arr in updates.items():
            new[i] = _read_only(arr)
        self._check_shapes(new)
        self._sites = new
        self._invalidate()

    def set_site(self, i: int, arr: np.ndarray) -> None:
        self.set_sites({i: arr})

    def scale_site(self, i: int, c: float) -> None:
        self.set_site(i, self._sites[i] * c)

    def normalize(self) -> float:
        """Rescale site 0 so that Z = 1.  Returns the previous Z."""
        z = self.partition_function()
        self.scale_site(0, 1.0 / np.sqrt(z))
        return z

    # -- amplitudes -------------------------------------------------------

    def amplitude(self, t: Trajectory) -> float:
        s0, s1, s2 = self._sites
        left = contract(s0, encode_observation(t.o1), [0], [0])
        mid = contract(contract(s1, encode_observation(t.o2), [1], [0]), encode_action(t.a1), [1], [0])
        right = contract(contract(s2, encode_observation(t.o3), [1], [0]), encode_action(t.a2), [1], [0])
        return float(contract(contract(left, mid, [0], [0]), right, [0], [0]))

    def dense(self) -> np.ndarray:
        """Full amplitude tensor indexed ``[o1, a1, o2, a2, o3]`` (for tests and debugging)."""
        s0, s1, s2 = self._sites
        return np.einsum("ix,xkjy,yml->ijklm", s0, s1, s2, optimize=True)

    # -- double-layer contractions ----------------------------------------

    def _double_layer(self, fixed: Mapping[str, int], free: Sequence[str]) -> np.ndarray:
        """Contract bra and ket layers.

        Fixed legs are sliced, free legs stay open (shared between bra and
        ket, so only diagonal entries survive) and every other physical leg
        is summed by joining bra to ket directly.
        """
        operands: list[np.ndarray] = []
        subscripts: list[str] = []
        for site, axes in zip(self._sites, SITE_AXES):
            index = tuple(fixed[a] if a in fixed else slice(None) for a in axes)
            sliced = site[index]
            kept = [a for a in axes if a not in fixed]
            bra = "".join(_BRA_BOND.get(a) or _LETTERS[a] for a in kept)
            ket = "".join(_KET_BOND.get(a) or _LETTERS[a] for a in kept)
            operands += [sliced, sliced]
            subscripts += [bra, ket]
        out = "".join(_LETTERS[leg] for leg in free)
        expr = ",".join(subscripts) + "->" + out
        return np.einsum(expr, *operands, optimize="greedy")

    def partition_function(self) -> float:
        """Sum of squared amplitudes over all configurations (cached)."""
        if self._z is None:
            z = float(self._double_layer({}, ()))
            if not np.isfinite(z) or z <= 0:
                raise DegenerateModelError(f"partition function is {z!r}")
            self._z = z
        return self._z

    def joint_probability(self, t: Trajectory) -> float:
        return self.amplitude(t) ** 2 / self.partition_function()

    def _check_legs(self, fixed: Mapping[str, object], free: Sequence[str]) -> dict[str, int]:
        fixed = {leg: leg_value(leg, v) for leg, v in fixed.items()}
        free = list(free)
        for leg in free:
            if leg not in LEG_DIMS:
                raise QueryError(f"unknown leg {leg!r}; expected one of {LEGS}")
        if len(set(free)) != len(free):
            raise QueryError(f"repeated leg in {free}")
        if set(free) & set(fixed):
            raise QueryError(f"legs {sorted(set(free) & set(fixed))} are both fixed and free")
        return fixed

    def marginal(self, fixed: Mapping[str, object], free: Sequence[str]) -> Distribution:
        """Distribution over ``free`` legs with ``fixed`` legs clamped, others summed.

        The table is renormalized over the free legs, so a non-empty
        ``fixed`` yields ``P(free | fixed)``.
        """
        fixed = self._check_legs(fixed, free)
        if not free:
            raise QueryError("marginal needs at least one free leg")
        table = self._double_layer(fixed, free)
        total = table.sum()
        if not total > 0:
            raise ConditioningError(f"clamped legs {fixed} have zero probability")
        return Distribution(table / total, shape=table.shape, legs=tuple(free))

    def probability(self, fixed: Mapping[str, object]) -> float:
        """Marginal probability of a partial assignment."""
        fixed = self._check_legs(fixed, ())
        return float(self._double_layer(fixed, ())) / self.partition_function()

    def conditional(self, given: Mapping[str, object], query: Sequence[str]) -> Distribution:
        """``P(query | given)`` as joint over ``given + query`` divided by ``P(given)``."""
        given = self._check_legs(given, query)
        if not query:
            raise QueryError("conditional needs at least one query leg")
        z = self.partition_function()
        p_given = float(self._double_layer(given, ())) / z
        if not p_given > 0:
            raise ConditioningError(f"conditioning event {given} has zero probability")
        joint = self._double_layer(given, query) / z
        # Renormalize away float round-off in the ratio.
        cond = joint / p_given
        return Distribution(cond / cond.sum(), shape=joint.shape, legs=tuple(query))

    # -- predictive queries -----------------------------------------------

    def right_environment(self, site: int) -> np.ndarray:
        """Double layer of all sites right of ``site`` with physical legs summed."""
        if site not in self._right_env:
            s0, s1, s2 = self._sites
            if site == 1:
                env = np.einsum("yml,Yml->yY", s2, s2)
            elif site == 0:
                r = self.right_environment(1)
                env = np.einsum("xkjy,yY,XkjY->xX", s1, r, s1, optimize=True)
            else:
                raise QueryError(f"no right environment for site {site}")
            self._right_env[site] = env
        return self._right_env[site]

    def prefix_environment(
        self, observations: Sequence[object], actions: Sequence[object]
    ) -> PrefixEnvironment:
        obs = tuple(leg_value(f"o{i + 1}", o) for i, o in enumerate(observations))
        acts = tuple(leg_value(f"a{i + 1}", a) for i, a in enumerate(actions))
        if len(obs) > 2:
            raise QueryError("a prefix holds at most two observations")
        if len(acts) != max(len(obs) - 1, 0):
            raise QueryError(
                f"{len(obs)} observations need {max(len(obs) - 1, 0)} actions, got {len(acts)}"
            )
        s0, s1, _ = self._sites
        vec = None
        if len(obs) >= 1:
            vec = s0[obs[0]]
        if len(obs) == 2:
            vec = vec @ s1[:, obs[1], acts[0], :]
        return PrefixEnvironment(obs, acts, vec)

    def predictive(
        self,
        observations: Sequence[object] = (),
        actions: Sequence[object] = (),
        next_action: object | None = None,
        env: PrefixEnvironment | None = None,
    ) -> tuple[Distribution, PrefixEnvironment]:
        """Distribution of the next observation given the history.

        Future legs are summed out.  ``env`` may be a :class:`PrefixEnvironment`
        from an earlier call with the same history; it is returned so callers
        can keep reusing it.
        """
        if env is None:
            env = self.prefix_environment(observations, actions)
        else:
            obs = tuple(leg_value(f"o{i + 1}", o) for i, o in enumerate(observations))
            acts = tuple(leg_value(f"a{i + 1}", a) for i, a in enumerate(actions))
            if (obs, acts) != (env.observations, env.actions):
                raise QueryError("cached environment belongs to a different history")
        n = len(env.observations)
        s0, s1, s2 = self._sites
        if n == 0:
            if next_action is not None:
                raise QueryError("the first observation has no preceding action")
            weights = np.einsum("ix,xX,iX->i", s0, self.right_environment(0), s0)
        else:
            if next_action is None:
                raise QueryError(f"predicting o{n + 1} requires the action a{n}")
            a = leg_value(f"a{n}", next_action)
            if n == 1:
                branch = np.einsum("x,xky->ky", env.vector, s1[:, :, a, :])
                weights = np.einsum("ky,yY,kY->k", branch, self.right_environment(1), branch)
            else:
                weights = np.square(env.vector @ s2[:, :, a])
        total = weights.sum()
        if not total > 0:
            raise ConditioningError(
                f"history o={env.observations} a={env.actions} has zero probability"
            )
        return Distribution(weights / total, legs=(f"o{n + 1}",)), env

    # -- serialization ----------------------------------------------------

    def to_text(self) -> str:
        lines = [FORMAT_HEADER, str(len(self._sites))]
        for site in self._sites:
            lines.append("shape " + " ".join(str(d) for d in site.shape))
            lines.append(" ".join(format(v, ".17g") for v in site.reshape(-1)))
        lines.append("Z " + format(self.partition_function(), ".17g"))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SequenceMPS":
        lines = text.splitlines()

        def line(n: int) -> str:
            if n >= len(lines):
                raise ParseError(f"line {n + 1}: unexpected end of model file")
            return lines[n]

        if line(0).strip() != FORMAT_HEADER:
            raise ParseError(f"line 1: expected {FORMAT_HEADER!r}, got {line(0)!r}")
        try:
            count = int(line(1))
        except ValueError:
            raise ParseError(f"line 2: bad site count {line(1)!r}") from None
        if count != 3:
            raise ParseError(f"line 2: expected 3 sites, got {count}")
        sites = []
        n = 2
        for _ in range(count):
            head = line(n).split()
            if not head or head[0] != "shape":
                raise ParseError(f"line {n + 1}: expected 'shape ...'")
            try:
                shape = tuple(int(d) for d in head[1:])
                values = np.array([float(v) for v in line(n + 1).split()])
            except ValueError as exc:
                raise ParseError(f"line {n + 1}-{n + 2}: {exc}") from None
            if values.size != int(np.prod(shape)):
                raise ParseError(
                    f"line {n + 2}: {values.size} elements do not fill shape {shape}"
                )
            sites.append(values.reshape(shape))
            n += 2
        z_line = line(n).split()
        if len(z_line) != 2 or z_line[0] != "Z":
            raise ParseError(f"line {n + 1}: expected 'Z <value>'")
        try:
            return cls(sites)
        except ShapeError as exc:
            raise ParseError(str(exc)) from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path: str | Path) -> "SequenceMPS":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def all_trajectories() -> Iterable[Trajectory]:
    """Every point of the 24*4*24*4*24 configuration space, row-major."""
    for idx in np.ndindex(*(LEG_DIMS[leg] for leg in LEGS)):
        yield Trajectory.from_indices(*idx)
