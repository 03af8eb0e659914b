"""Model-core tests.

Oracles here are deliberately independent of the library's vectorized paths:
belief updates are recomputed with explicit triple loops over (s, s', o) and
maze entries are checked against hand-derived constants for the documented
default layout.
"""

import json

import numpy as np
import numpy.testing as npt
import pytest

from beliefplan import model as bm


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def bayes_update_oracle(m, b, a, o):
    """Brute-force posterior over landing states: joint sum, then normalize."""
    n = m.num_states
    unnorm = np.zeros(n)
    for s2 in range(n):
        acc = 0.0
        for s in range(n):
            acc += m.trans[a, s, s2] * b[s]
        unnorm[s2] = m.obs[a, s2, o] * acc
    z = unnorm.sum()
    assert z > 0.0
    return unnorm / z


def obs_prob_oracle(m, b, a):
    out = np.zeros(m.num_obs)
    for o in range(m.num_obs):
        for s2 in range(m.num_states):
            for s in range(m.num_states):
                out[o] += m.obs[a, s2, o] * m.trans[a, s, s2] * b[s]
    return out


def tiny_model(trans, obs, reward, discount=0.9):
    return bm.Pomdp(
        trans=np.asarray(trans, dtype=float),
        obs=np.asarray(obs, dtype=float),
        reward=np.asarray(reward, dtype=float),
        discount=discount,
    )


@pytest.fixture(scope="module")
def maze():
    return bm.build_maze20()


@pytest.fixture(scope="module")
def maze_spec():
    return bm.default_maze_spec()


# ---------------------------------------------------------------------------
# belief arithmetic
# ---------------------------------------------------------------------------

class TestBeliefUpdate:
    def test_revealing_observation(self):
        # identity transitions, observation equals landing state w.p. 1
        eye = np.eye(2)[None, :, :]
        m = tiny_model(eye, eye, np.zeros((1, 2, 2)))
        b2 = bm.belief_update(m, np.array([0.5, 0.5]), 0, 1)
        npt.assert_allclose(b2, [0.0, 1.0])

    def test_uniform_observation_cancels(self):
        rng = np.random.default_rng(3)
        m = bm.random_pomdp(rng, (4, 2, 3), discount=0.95)
        uniform_obs = np.full_like(m.obs, 1.0 / m.num_obs)
        m2 = bm.Pomdp(m.trans, uniform_obs, m.reward, m.discount)
        b = bm.sample_belief_uniform(rng, 4)
        for a in range(2):
            pred = b @ m2.trans[a]
            for o in range(3):
                npt.assert_allclose(bm.belief_update(m2, b, a, o), pred, atol=1e-12)

    def test_matches_bayes_oracle_random_models(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            m = bm.random_pomdp(rng, (5, 3, 4), discount=0.9)
            b = bm.sample_belief_uniform(rng, 5)
            a = int(rng.integers(3))
            probs = bm.obs_prob(m, b, a)
            o = int(np.argmax(probs))
            npt.assert_allclose(
                bm.belief_update(m, b, a, o), bayes_update_oracle(m, b, a, o),
                atol=1e-12,
            )

    def test_maze_target_extreme_sense(self, maze, maze_spec):
        b = np.zeros(20)
        b[maze_spec.target_index] = 1.0
        a = bm.MAZE_SENSE_NS
        probs = bm.obs_prob(maze, b, a)
        for o in np.flatnonzero(probs > 1e-12):
            got = bm.belief_update(maze, b, a, int(o))
            npt.assert_allclose(got, bayes_update_oracle(maze, b, a, int(o)), atol=1e-12)
            # sensing never moves the robot
            npt.assert_allclose(got, b, atol=1e-12)

    def test_impossible_observation_raises(self, maze):
        b = np.zeros(20)
        b[0] = 1.0
        # a move action emits reading 0 deterministically; reading 3 is impossible
        with pytest.raises(bm.ImpossibleObservationError):
            bm.belief_update(maze, b, bm.MAZE_MOVE_N, 3)

    def test_total_probability_law(self):
        # sum_o P(o|b,a) b'_o(s') recovers the pure transition prediction
        rng = np.random.default_rng(11)
        for _ in range(10):
            m = bm.random_pomdp(rng, (4, 2, 3), discount=0.9)
            b = bm.sample_belief_uniform(rng, 4)
            for a in range(2):
                probs = bm.obs_prob(m, b, a)
                mix = np.zeros(4)
                for o in range(3):
                    if probs[o] > 1e-12:
                        mix += probs[o] * bm.belief_update(m, b, a, o)
                npt.assert_allclose(mix, b @ m.trans[a], atol=1e-9)


class TestObsProb:
    def test_single_observation(self):
        m = tiny_model(np.eye(3)[None], np.ones((1, 3, 1)), np.zeros((1, 3, 3)))
        npt.assert_allclose(bm.obs_prob(m, np.array([0.2, 0.3, 0.5]), 0), [1.0])

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(19)
        m = bm.random_pomdp(rng, (3, 2, 4), discount=0.8)
        b = bm.sample_belief_uniform(rng, 3)
        for a in range(2):
            got = bm.obs_prob(m, b, a)
            npt.assert_allclose(got, obs_prob_oracle(m, b, a), atol=1e-12)
            npt.assert_allclose(got.sum(), 1.0, atol=1e-9)


class TestExpectedReward:
    def test_point_mass(self):
        rng = np.random.default_rng(23)
        m = bm.random_pomdp(rng, (4, 3, 2), discount=0.9)
        for s in range(4):
            e = np.zeros(4)
            e[s] = 1.0
            for a in range(3):
                npt.assert_allclose(bm.expected_reward(m, e, a), m.step_reward[a, s])

    def test_two_state_average(self):
        # rho rows (2, 4) -> uniform belief gives 3
        trans = np.array([[[1.0, 0.0], [0.0, 1.0]]])
        reward = np.array([[[2.0, 2.0], [4.0, 4.0]]])
        obs = np.ones((1, 2, 1))
        m = tiny_model(trans, obs, reward)
        assert bm.expected_reward(m, np.array([0.5, 0.5]), 0) == pytest.approx(3.0)

    def test_linearity_in_belief(self):
        rng = np.random.default_rng(29)
        m = bm.random_pomdp(rng, (5, 2, 2), discount=0.9)
        b1 = bm.sample_belief_uniform(rng, 5)
        b2 = bm.sample_belief_uniform(rng, 5)
        lam = 0.3
        mix = lam * b1 + (1 - lam) * b2
        for a in range(2):
            want = lam * bm.expected_reward(m, b1, a) + (1 - lam) * bm.expected_reward(m, b2, a)
            npt.assert_allclose(bm.expected_reward(m, mix, a), want, atol=1e-12)

    def test_maze_target_move_pays_150(self, maze, maze_spec):
        b = np.zeros(20)
        b[maze_spec.target_index] = 1.0
        for a in (bm.MAZE_MOVE_N, bm.MAZE_MOVE_S, bm.MAZE_MOVE_E, bm.MAZE_MOVE_W):
            assert bm.expected_reward(maze, b, a) == pytest.approx(150.0)


class TestSampleBelief:
    def test_degenerate(self):
        rng = np.random.default_rng(0)
        npt.assert_allclose(bm.sample_belief_uniform(rng, 1), [1.0])

    def test_mean_of_first_coordinate(self):
        rng = np.random.default_rng(101)
        samples = bm.sample_belief_uniform(rng, 2, size=100_000)
        assert samples.shape == (100_000, 2)
        assert abs(samples[:, 0].mean() - 0.5) < 0.01

    def test_valid_and_deterministic(self):
        a = bm.sample_belief_uniform(np.random.default_rng(5), 6, size=50)
        b = bm.sample_belief_uniform(np.random.default_rng(5), 6, size=50)
        npt.assert_array_equal(a, b)
        assert (a >= 0).all()
        npt.assert_allclose(a.sum(axis=1), 1.0, atol=1e-9)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

class TestRandomPomdp:
    def test_unique_tiny_model(self):
        m = bm.random_pomdp(np.random.default_rng(0), (1, 1, 1), discount=0.5)
        npt.assert_allclose(m.trans, [[[1.0]]])
        npt.assert_allclose(m.obs, [[[1.0]]])

    def test_invariants_and_determinism(self):
        m1 = bm.random_pomdp(np.random.default_rng(42), (6, 3, 4), discount=0.9, sparsity=0.05)
        m2 = bm.random_pomdp(np.random.default_rng(42), (6, 3, 4), discount=0.9, sparsity=0.05)
        npt.assert_array_equal(m1.trans, m2.trans)
        npt.assert_array_equal(m1.obs, m2.obs)
        npt.assert_array_equal(m1.reward, m2.reward)
        npt.assert_allclose(m1.trans.sum(axis=2), 1.0, atol=1e-9)
        npt.assert_allclose(m1.obs.sum(axis=2), 1.0, atol=1e-9)
        assert (m1.trans >= 0).all() and (m1.obs >= 0).all()

    def test_joint_weight_table(self):
        # trans_obs[a, o, s, s'] must be P(s'|s,a) * P(o|s',a): origin row,
        # landing column — the orientation every backup transform relies on
        m = bm.random_pomdp(np.random.default_rng(7), (3, 2, 2), discount=0.9)
        for a in range(2):
            for o in range(2):
                for s in range(3):
                    for t in range(3):
                        assert m.trans_obs[a, o, s, t] == pytest.approx(
                            m.trans[a, s, t] * m.obs[a, t, o], abs=1e-15
                        )
        # marginalizing out observation and landing state recovers certainty
        npt.assert_allclose(m.trans_obs.sum(axis=(1, 3)), 1.0, atol=1e-12)

    def test_sparsity_zeroes_small_entries(self):
        m = bm.random_pomdp(np.random.default_rng(1), (8, 2, 3), discount=0.9, sparsity=0.08)
        # sparsified rows still stochastic, and some entries actually got zeroed
        npt.assert_allclose(m.trans.sum(axis=2), 1.0, atol=1e-9)
        assert (m.trans == 0.0).any()


class TestMaze20:
    def test_sizes(self, maze):
        assert (maze.num_states, maze.num_actions, maze.num_obs) == (20, 6, 8)
        assert maze.discount == pytest.approx(0.9)

    def test_move_noise_split(self, maze):
        # room 12 moving north: N->7 open (0.7), lateral E->13 (0.15), W->11 (0.15)
        row = maze.trans[bm.MAZE_MOVE_N, 12]
        npt.assert_allclose(row[[7, 13, 11]], [0.7, 0.15, 0.15])
        assert row.sum() == pytest.approx(1.0)
        # room 0 moving north: N and W blocked -> stay with 0.85, E->1 with 0.15
        row = maze.trans[bm.MAZE_MOVE_N, 0]
        assert row[0] == pytest.approx(0.85)
        assert row[1] == pytest.approx(0.15)

    def test_moves_emit_null_reading(self, maze):
        for a in range(4):
            npt.assert_allclose(maze.obs[a, :, 0], 1.0)
            npt.assert_allclose(maze.obs[a, :, 1:], 0.0)

    def test_sensor_accuracies(self, maze, maze_spec):
        # target room 8 has walls N,E,W and is open to the south:
        # sense-NS sees one wall -> accuracy 0.8 on reading (wall, open)
        row = maze.obs[bm.MAZE_SENSE_NS, 8]
        npt.assert_allclose(row[2], 0.8)
        npt.assert_allclose(row[[0, 1, 3]], (1 - 0.8) / 3)
        npt.assert_allclose(row[4:], 0.0)
        # sense-EW sees two walls -> accuracy 0.75 on reading (wall, wall)
        row = maze.obs[bm.MAZE_SENSE_EW, 8]
        npt.assert_allclose(row[7], 0.75)
        npt.assert_allclose(row[[4, 5, 6]], 0.25 / 3)
        # room 12 north/south: N open (to 7), S wall (12-17): reading (open, wall)
        row = maze.obs[bm.MAZE_SENSE_NS, 12]
        npt.assert_allclose(row[1], 0.8)

    def test_rewards(self, maze, maze_spec):
        t = maze_spec.target_index
        assert t == 8
        # moves from the target: flat 150 and uniform restart
        for a in range(4):
            npt.assert_allclose(maze.reward[a, t], 150.0)
            npt.assert_allclose(maze.trans[a, t], 1.0 / 20)
        # sensing always pays 2 and stays put
        for a in (bm.MAZE_SENSE_NS, bm.MAZE_SENSE_EW):
            npt.assert_allclose(maze.reward[a], 2.0)
            npt.assert_allclose(maze.trans[a], np.eye(20))
        # ordinary move: 4 iff the robot actually moved
        assert maze.reward[bm.MAZE_MOVE_N, 12, 7] == pytest.approx(4.0)
        assert maze.reward[bm.MAZE_MOVE_N, 12, 12] == pytest.approx(0.0)

    def test_builder_deterministic(self, maze_spec):
        m1 = bm.build_maze20(maze_spec)
        m2 = bm.build_maze20(maze_spec)
        npt.assert_array_equal(m1.trans, m2.trans)
        npt.assert_array_equal(m1.obs, m2.obs)

    def test_spec_roundtrip(self, maze_spec, tmp_path):
        p = tmp_path / "maze.json"
        bm.save_maze_spec(maze_spec, p)
        spec2 = bm.load_maze_spec(p)
        assert spec2 == maze_spec


# ---------------------------------------------------------------------------
# model file I/O
# ---------------------------------------------------------------------------

class TestModelIO:
    def test_minimal_model(self, tmp_path):
        doc = {
            "discount": 0.5,
            "states": 1,
            "actions": 1,
            "observations": 1,
            "transition": [[[1.0]]],
            "observation": [[[1.0]]],
            "reward": [[[0.0]]],
        }
        p = tmp_path / "m.json"
        p.write_text(json.dumps(doc))
        m = bm.load_model(p)
        npt.assert_allclose(m.trans, [[[1.0]]])
        assert m.step_reward.shape == (1, 1)

    def test_bad_row_named_in_error(self, tmp_path):
        doc = {
            "discount": 0.5,
            "states": 2,
            "actions": 1,
            "observations": 1,
            "transition": [[[0.4, 0.5], [0.5, 0.5]]],
            "observation": [[[1.0], [1.0]]],
            "reward": [[[0.0, 0.0], [0.0, 0.0]]],
        }
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(bm.ModelFormatError, match=r"action 0.*state 0"):
            bm.load_model(p)

    def test_maze_roundtrip_exact(self, maze, tmp_path):
        p = tmp_path / "maze20.json"
        bm.save_model(maze, p)
        m2 = bm.load_model(p)
        npt.assert_array_equal(m2.trans, maze.trans)
        npt.assert_array_equal(m2.obs, maze.obs)
        npt.assert_array_equal(m2.reward, maze.reward)
        assert m2.discount == maze.discount
        assert m2.state_names == maze.state_names

    def test_step_reward_recomputable(self, maze):
        want = np.einsum("ast,ast->as", maze.reward, maze.trans)
        npt.assert_allclose(maze.step_reward, want, atol=1e-12)
