import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnaif.agent import (
    PRUNE_EPSILON,
    History,
    Preferences,
    entropy,
    expected_free_energy,
    g_table_csv,
    joint_preference,
    kl_divergence,
    parse_history,
    run_episode,
    select_action,
    softmax,
)
from tnaif.env import TMaze
from tnaif.errors import ConditioningError, DivergenceError, ParseError
from tnaif.features import (
    Action,
    Context,
    Location,
    Observation,
    Reward,
    decode_observation,
    modality_marginals,
)
from tnaif.mps import Distribution, SequenceMPS, Trajectory

T_STAR = Trajectory.from_indices(1, 3, 19, 1, 8)
START_RIGHT = Observation.of(0, 0, 0)
START_LEFT = Observation.of(0, 0, 1)

finite = st.floats(-50, 50, allow_nan=False)


def walk(node):
    yield node
    for branch in node.children:
        for child in branch.nodes:
            yield from walk(child)


class TestSoftmax:
    def test_even(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]).probs, [0.5, 0.5])

    def test_reward_preference(self):
        e = np.exp([0.0, 3.0, -3.0])
        want = e / e.sum()
        np.testing.assert_allclose(softmax([0.0, 3.0, -3.0]).probs, want, rtol=0, atol=1e-15)
        np.testing.assert_allclose(want, [0.0473, 0.9503, 0.0024], atol=1e-4)

    @settings(max_examples=100)
    @given(st.lists(finite, min_size=1, max_size=8), finite)
    def test_shift_invariance(self, v, c):
        a = softmax(v).probs
        b = softmax(np.asarray(v) + c).probs
        assert np.max(np.abs(a - b)) <= 1e-12
        assert abs(a.sum() - 1) <= 1e-12 and np.all(a >= 0)
        assert np.argmax(a) == np.argmax(b)


class TestInformation:
    def test_kl_self_is_zero(self):
        q = softmax([0.3, -1.0, 2.0])
        assert kl_divergence(q, q) == 0.0

    def test_uniform_entropy(self):
        assert entropy(np.full(24, 1 / 24)) == pytest.approx(math.log(24), abs=1e-14)

    def test_point_mass_at_win(self):
        want = -math.log(math.exp(3) / (1 + math.exp(3) + math.exp(-3)))
        assert kl_divergence([0.0, 1.0, 0.0], Preferences().reward) == pytest.approx(want, abs=1e-14)
        assert want == pytest.approx(0.0509, abs=1e-4)

    def test_infinite_divergence(self):
        with pytest.raises(DivergenceError):
            kl_divergence([0.5, 0.5], [1.0, 0.0])

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 1), min_size=24, max_size=24), st.lists(finite, min_size=24, max_size=24))
    def test_kl_non_negative_and_cross_entropy_identity(self, w, logits):
        w = np.asarray(w)
        if w.sum() == 0:
            w[0] = 1.0
        q = Distribution.normalized(w)
        p = softmax(logits)
        kl, h = kl_divergence(q, p), entropy(q)
        nz = q.probs > 0
        cross = -np.sum(q.probs[nz] * np.log(p.probs[nz]))
        assert kl >= 0 and 0 <= h <= math.log(24) + 1e-12
        assert abs(kl + h - cross) <= 1e-10 * max(1.0, abs(cross))


class TestPreferences:
    def test_defaults(self):
        prefs = Preferences()
        np.testing.assert_allclose(prefs.position.probs, np.full(4, 0.25))
        np.testing.assert_allclose(prefs.context.probs, [0.5, 0.5])

    def test_joint_factors(self):
        joint = joint_preference(Preferences())
        assert abs(joint.probs.sum() - 1) <= 1e-12
        win = softmax([0.0, 3.0, -3.0]).probs[1]
        for o in (Observation.of(1, 1, 0), Observation.of(3, 1, 1)):
            assert joint.probs[o.index] == pytest.approx(0.25 * win * 0.5, rel=1e-14)
        loc, rew, ctx = modality_marginals(joint.probs)
        np.testing.assert_allclose(rew, softmax([0.0, 3.0, -3.0]).probs, atol=1e-15)

    def test_uniform_joint(self):
        np.testing.assert_allclose(joint_preference(Preferences.uniform()).probs, np.full(24, 1 / 24), atol=1e-15)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            Preferences(reward=softmax([0.0, 1.0]))


class TestHistory:
    def test_length_rule(self):
        with pytest.raises(ValueError):
            History((START_RIGHT,), (Action.CUE,))

    def test_extend(self):
        h = History((START_RIGHT,)).extend(Action.CUE, Observation.of(3, 0, 0))
        assert h.actions == (Action.CUE,) and h.steps_left == 1

    def test_parse(self):
        obs, acts = parse_history("o0.0.0, a3, o3.0.1")
        assert obs == [START_RIGHT, Observation.of(3, 0, 1)] and acts == [Action.CUE]

    @pytest.mark.parametrize("text", ["a3", "o0.0.0,o0.0.0", "o0.0", "o0.0.0,a9", "o0.7.0"])
    def test_parse_errors(self, text):
        with pytest.raises(ParseError):
            parse_history(text)


class TestFreeEnergy:
    def test_delta_model_uniform_preferences(self):
        m = SequenceMPS.delta(T_STAR)
        node = expected_free_energy(m, History((T_STAR.o1,)), T_STAR.a1, Preferences.uniform())
        assert node.cost_term == pytest.approx(math.log(24), abs=1e-12)
        assert node.ambiguity_term == 0.0
        assert node.g_value == node.cost_term

    def test_unreachable_branch(self):
        with pytest.raises(ConditioningError):
            expected_free_energy(SequenceMPS.delta(T_STAR), History((T_STAR.o1,)), Action.CENTER)

    def test_depth_checks(self, exact_model):
        with pytest.raises(ValueError):
            expected_free_energy(exact_model, History((START_RIGHT,)), Action.CUE, depth_remaining=3)
        with pytest.raises(ValueError):
            expected_free_energy(exact_model, History((START_RIGHT,)), Action.CUE, depth_remaining=0)

    def test_tree_invariants(self, exact_model):
        for a in Action:
            root = expected_free_energy(exact_model, History((START_RIGHT,)), a, depth_remaining=2)
            assert root.children
            for node in walk(root):
                if not node.feasible:
                    continue
                assert node.cost_term >= 0
                assert 0 <= node.ambiguity_term <= math.log(24) + 1e-12
                nz = node.predictive.probs > 0
                cross = -np.sum(node.predictive.probs[nz] * np.log(joint_preference(Preferences()).probs[nz]))
                assert abs(node.cost_term + node.ambiguity_term - cross) <= 1e-10
                subtree = sum(b.probability * b.expected_g for b in node.children)
                assert abs(node.g_value - (node.cost_term + node.ambiguity_term + subtree)) <= 1e-10
                assert sum(b.probability for b in node.children) <= 1 + 1e-9
                assert node.pruned_mass <= 4 * PRUNE_EPSILON * 24

    def test_subtree_recursion_by_hand(self, exact_model):
        h = History((START_RIGHT,))
        root = expected_free_energy(exact_model, h, Action.CUE, depth_remaining=2)
        total = root.cost_term + root.ambiguity_term
        q = root.predictive.probs
        for o in np.flatnonzero(q > PRUNE_EPSILON):
            child_h = h.extend(Action.CUE, decode_observation(o))
            gs = [expected_free_energy(exact_model, child_h, a).g_value for a in Action]
            policy = softmax(-np.asarray(gs)).probs
            total += q[o] * float(np.dot(policy, gs))
        assert root.g_value == pytest.approx(total, abs=1e-12)


class TestSelectAction:
    def test_forced_branch(self):
        m = SequenceMPS.delta(T_STAR)
        d = select_action(m, History((T_STAR.o1,)))
        assert d.action == T_STAR.a1
        assert d.action_probs.probs[T_STAR.a1] == 1.0
        assert sum(n.feasible for n in d.nodes) == 1
        d2 = select_action(m, History((T_STAR.o1, T_STAR.o2), (T_STAR.a1,)))
        assert d2.action == T_STAR.a2

    def test_no_feasible_action(self):
        with pytest.raises(ConditioningError):
            select_action(SequenceMPS.delta(T_STAR), History((START_RIGHT,)))

    def test_tie_goes_to_lowest_index(self):
        m = SequenceMPS([np.ones((24, 1)), np.ones((1, 24, 4, 1)), np.ones((1, 24, 4))])
        d = select_action(m, History((START_RIGHT,)), horizon=1)
        assert np.ptp(d.g_values) == 0 and d.action == Action.CENTER

    def test_deterministic(self, exact_model):
        h = History((START_LEFT,))
        a, b = select_action(exact_model, h), select_action(exact_model, h)
        assert a.action == b.action and np.array_equal(a.g_values, b.g_values)

    @pytest.mark.parametrize("start", [START_RIGHT, START_LEFT])
    def test_exact_model_goes_to_the_cue(self, exact_model, start):
        d = select_action(exact_model, History((start,)))
        assert d.action == Action.CUE
        assert d.g_values[Action.CUE] == d.g_values.min()

    @pytest.mark.parametrize("ctx, branch", [(Context.RIGHT, Action.RIGHT), (Context.LEFT, Action.LEFT)])
    def test_exact_model_follows_the_cue(self, exact_model, ctx, branch):
        h = History((START_RIGHT, Observation(Location.CUE, Reward.NO_REWARD, ctx)), (Action.CUE,))
        assert select_action(exact_model, h).action == branch

    def test_sampling_uses_the_policy(self, exact_model):
        rng = np.random.default_rng(0)
        picks = {select_action(exact_model, History((START_RIGHT,)), sample=True, rng=rng).action for _ in range(30)}
        assert Action.CUE in picks


class TestEpisodes:
    @pytest.mark.parametrize("ctx, branch", [(Context.RIGHT, Action.RIGHT), (Context.LEFT, Action.LEFT)])
    def test_exact_model_wins(self, exact_model, ctx, branch):
        ep = run_episode(exact_model, TMaze(np.random.default_rng(3)), context=ctx)
        assert ep.actions == [Action.CUE, branch]
        assert ep.won and ep.reward == Reward.WIN and ep.context == ctx
        assert len(ep.observations) == 3 and len(ep.decisions) == 2

    def test_g_table(self, exact_model):
        text = g_table_csv(select_action(exact_model, History((START_RIGHT,))))
        lines = text.splitlines()
        assert lines[0] == "action,cost_term,ambiguity_term,subtree_term,g_value,policy_probability"
        assert [line.split(",")[0] for line in lines[1:]] == ["0", "1", "2", "3"]
