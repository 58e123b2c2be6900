"""Sophisticated-inference planning on top of a trained :class:`SequenceMPS`.

The hidden state is replaced by the observed history, so every quantity
in the expected free energy is a predictive distribution of the model.
Planning recurses over future (observation, action) branches and turns
the resulting free energies into an action distribution with a softmax.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import HORIZON, TMaze
from .errors import ConditioningError, DivergenceError, ParseError
from .features import (
    ACTION_DIM,
    N_CONTEXTS,
    N_LOCATIONS,
    N_REWARDS,
    Action,
    Context,
    Location,
    Observation,
    Reward,
    decode_observation,
)
from .mps import Distribution, PrefixEnvironment, SequenceMPS

PRUNE_EPSILON = 1e-6


def softmax(v) -> Distribution:
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max())
    return Distribution(e / e.sum())


def _probs(d) -> np.ndarray:
    return d.probs if isinstance(d, Distribution) else np.asarray(d, dtype=np.float64)


def entropy(q) -> float:
    q = _probs(q)
    nz = q > 0
    return float(-np.sum(q[nz] * np.log(q[nz])))


def kl_divergence(q, p) -> float:
    """``KL(q || p)`` with ``0 log 0 = 0``."""
    q, p = _probs(q), _probs(p)
    if q.shape != p.shape:
        raise ValueError(f"supports differ: {q.shape} vs {p.shape}")
    nz = q > 0
    if np.any(p[nz] <= 0):
        raise DivergenceError("q puts mass where p has none")
    return float(np.sum(q[nz] * (np.log(q[nz]) - np.log(p[nz]))))


@dataclass(frozen=True)
class Preferences:
    """Preferred observations, one distribution per modality."""

    position: Distribution = field(default_factory=lambda: softmax([0.0, 0.0, 0.0, 0.0]))
    reward: Distribution = field(default_factory=lambda: softmax([0.0, 3.0, -3.0]))
    context: Distribution = field(default_factory=lambda: softmax([0.0, 0.0]))

    def __post_init__(self):
        for d, n in ((self.position, N_LOCATIONS), (self.reward, N_REWARDS), (self.context, N_CONTEXTS)):
            if len(d) != n:
                raise ValueError(f"preference over {n} values has {len(d)} entries")

    @classmethod
    def uniform(cls) -> "Preferences":
        return cls(softmax(np.zeros(N_LOCATIONS)), softmax(np.zeros(N_REWARDS)), softmax(np.zeros(N_CONTEXTS)))


def joint_preference(prefs: Preferences) -> Distribution:
    """Product of the modality preferences over the 24 joint observations."""
    table = np.einsum("i,j,k->ijk", prefs.position.probs, prefs.reward.probs, prefs.context.probs)
    return Distribution(table.reshape(-1))


@dataclass(frozen=True)
class History:
    observations: tuple[Observation, ...] = ()
    actions: tuple[Action, ...] = ()

    def __post_init__(self):
        if len(self.actions) != max(len(self.observations) - 1, 0):
            raise ValueError(
                f"{len(self.observations)} observations need "
                f"{max(len(self.observations) - 1, 0)} actions, got {len(self.actions)}"
            )

    def extend(self, action: Action | int, observation: Observation) -> "History":
        acts = self.actions + (Action(action),) if self.observations else self.actions
        return History(self.observations + (observation,), acts)

    @property
    def steps_left(self) -> int:
        return HORIZON + 1 - len(self.observations)


@dataclass
class Branch:
    """One predicted next observation and the free energies of what follows it."""

    observation: int
    probability: float
    action_probs: Distribution
    nodes: list["EFENode"]

    @property
    def expected_g(self) -> float:
        return float(sum(p * n.g_value for p, n in zip(self.action_probs.probs, self.nodes) if p > 0))


@dataclass
class EFENode:
    history: History
    action: Action
    cost_term: float
    ambiguity_term: float
    predictive: Distribution | None
    children: list[Branch] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.predictive is not None

    @property
    def subtree_term(self) -> float:
        return float(sum(b.probability * b.expected_g for b in self.children))

    @property
    def g_value(self) -> float:
        return self.cost_term + self.ambiguity_term + self.subtree_term

    @property
    def pruned_mass(self) -> float:
        return 1.0 - sum(b.probability for b in self.children) if self.children else 0.0


def _infeasible(h: History, action: Action) -> EFENode:
    return EFENode(h, action, float("inf"), 0.0, None)


def _expand(
    m: SequenceMPS,
    h: History,
    env: PrefixEnvironment | None,
    action: Action,
    pref: Distribution,
    depth: int,
    prune_epsilon: float,
) -> EFENode:
    q, env = m.predictive(h.observations, h.actions, action, env=env)
    node = EFENode(h, action, kl_divergence(q, pref), entropy(q), q)
    if depth > 1:
        for o in np.flatnonzero(q.probs > prune_epsilon):
            child_h = h.extend(action, decode_observation(o))
            child_env = m.prefix_environment(child_h.observations, child_h.actions)
            nodes = [
                _expand_or_infeasible(m, child_h, child_env, a, pref, depth - 1, prune_epsilon)
                for a in Action
            ]
            policy = softmax([-n.g_value for n in nodes])
            node.children.append(Branch(int(o), float(q.probs[o]), policy, nodes))
    return node


def _expand_or_infeasible(m, h, env, action, pref, depth, prune_epsilon) -> EFENode:
    # An action the model gives zero probability after h gets G = +inf,
    # hence zero weight under softmax(-G).
    try:
        return _expand(m, h, env, action, pref, depth, prune_epsilon)
    except ConditioningError:
        if m.probability(_assignment(h, action)) > 0:
            raise
        return _infeasible(h, action)


def _assignment(h: History, action: Action) -> dict[str, int]:
    fixed = {f"o{i + 1}": o for i, o in enumerate(h.observations)}
    fixed.update({f"a{i + 1}": a for i, a in enumerate(h.actions)})
    fixed[f"a{len(h.observations)}"] = action
    return fixed


def expected_free_energy(
    m: SequenceMPS,
    h: History,
    action: Action | int,
    prefs: Preferences | None = None,
    depth_remaining: int = 1,
    prune_epsilon: float = PRUNE_EPSILON,
    allow_infeasible: bool = False,
) -> EFENode:
    """Free-energy tree for taking ``action`` after history ``h``.

    ``cost_term`` is the KL divergence of the predicted observation from the
    preferences and ``ambiguity_term`` its entropy.  With
    ``depth_remaining > 1`` the expected free energy of the best-responding
    follow-up actions is added, over every predicted observation whose
    probability exceeds ``prune_epsilon``.

    If the model gives ``action`` zero probability after ``h`` this raises
    :class:`ConditioningError`, unless ``allow_infeasible`` is set, in which
    case a node with ``g_value == inf`` is returned.
    """
    if depth_remaining < 1:
        raise ValueError("depth_remaining must be at least 1")
    if not h.observations:
        raise ValueError("planning needs at least the initial observation")
    if depth_remaining > h.steps_left:
        raise ValueError(f"only {h.steps_left} steps remain after this history")
    pref = joint_preference(prefs or Preferences())
    env = m.prefix_environment(h.observations, h.actions)
    expand = _expand_or_infeasible if allow_infeasible else _expand
    try:
        return expand(m, h, env, Action(action), pref, depth_remaining, prune_epsilon)
    except ConditioningError as exc:
        raise ConditioningError(f"unreachable branch while planning: {exc}") from None


@dataclass
class Decision:
    action: Action
    action_probs: Distribution
    nodes: list[EFENode]

    @property
    def g_values(self) -> np.ndarray:
        return np.array([n.g_value for n in self.nodes])


def select_action(
    m: SequenceMPS,
    h: History,
    prefs: Preferences | None = None,
    horizon: int | None = None,
    sample: bool = False,
    rng: np.random.Generator | None = None,
) -> Decision:
    """Evaluate every action and pick one from ``softmax(-G)``.

    By default the most probable action is taken (lowest index on ties);
    ``sample=True`` draws from the distribution instead.
    """
    horizon = h.steps_left if horizon is None else horizon
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    nodes = [expected_free_energy(m, h, a, prefs, horizon, allow_infeasible=True) for a in Action]
    if not any(n.feasible for n in nodes):
        raise ConditioningError("no action has positive probability after this history")
    probs = softmax([-n.g_value for n in nodes])
    if sample:
        rng = rng if rng is not None else np.random.default_rng()
        choice = int(rng.choice(ACTION_DIM, p=probs.probs))
    else:
        choice = int(np.argmax(probs.probs))
    return Decision(Action(choice), probs, nodes)


@dataclass
class Episode:
    context: Context
    observations: list[Observation]
    actions: list[Action]
    decisions: list[Decision]

    @property
    def reward(self) -> Reward:
        return self.observations[-1].reward

    @property
    def won(self) -> bool:
        return self.reward == Reward.WIN


def run_episode(
    m: SequenceMPS,
    env: TMaze,
    prefs: Preferences | None = None,
    context: Context | int | None = None,
) -> Episode:
    obs = env.reset(context)
    h = History((obs,))
    decisions, actions = [], []
    while not env.done:
        d = select_action(m, h, prefs, horizon=HORIZON - env.steps_taken)
        obs = env.step(d.action)
        decisions.append(d)
        actions.append(d.action)
        h = h.extend(d.action, obs)
    return Episode(env.true_context, list(h.observations), actions, decisions)


def g_table_csv(decision: Decision) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["action", "cost_term", "ambiguity_term", "subtree_term", "g_value", "policy_probability"])
    for node, p in zip(decision.nodes, decision.action_probs.probs):
        writer.writerow(
            [int(node.action)]
            + [format(v, ".10g") for v in (node.cost_term, node.ambiguity_term, node.subtree_term, node.g_value, p)]
        )
    return buf.getvalue()


def parse_history(text: str) -> tuple[list[Observation], list[Action]]:
    """Parse ``"o0.0.0,a3,o3.0.0"``-style alternating observation/action tokens.

    The sequence may end on either kind of token.
    """
    observations: list[Observation] = []
    actions: list[Action] = []
    tokens = [t.strip() for t in text.split(",") if t.strip()]
    for k, tok in enumerate(tokens):
        want = "o" if k % 2 == 0 else "a"
        if not tok.startswith(want):
            raise ParseError(f"history token {k + 1} ({tok!r}) should start with {want!r}")
        try:
            if want == "o":
                parts = tok[1:].split(".")
                if len(parts) != 3:
                    raise ValueError
                observations.append(Observation.of(*(int(p) for p in parts)))
            else:
                actions.append(Action(int(tok[1:])))
        except ValueError:
            raise ParseError(f"history token {k + 1} ({tok!r}) is malformed") from None
    return observations, actions


def describe(o: Observation) -> str:
    return f"{Location(o.location).name.lower()}/{Reward(o.reward).name.lower()}/{Context(o.context).name.lower()}"
