"""Exact dynamic-programming tests.

The backup operator is validated against a brute-force oracle that enumerates
every per-observation predecessor combination for every action (no pruning at
all) and evaluates the resulting candidate pile directly.
"""

import itertools
import json

import numpy as np
import numpy.testing as npt
import pytest

from beliefplan import exact, model as bm, pwlc


# ---------------------------------------------------------------------------
# oracle: full enumeration, no pruning
# ---------------------------------------------------------------------------

def enumerate_backup_values(m, f, beliefs):
    """Values of the full backup at the given beliefs, from all
    |A| * |Gamma|^|O| candidate vectors."""
    mat = f.matrix
    best = np.full(len(beliefs), -np.inf)
    count = 0
    for a in range(m.num_actions):
        transformed = [
            m.discount * mat @ m.trans_obs[a, o].T for o in range(m.num_obs)
        ]  # each (n, S)
        for choice in itertools.product(range(len(mat)), repeat=m.num_obs):
            vec = m.step_reward[a].copy()
            for o, j in enumerate(choice):
                vec += transformed[o][j]
            vals = beliefs @ vec
            best = np.maximum(best, vals)
            count += 1
    return best, count


def random_setup(rng, sizes=(2, 2, 2), n_vectors=3, discount=0.9):
    m = bm.random_pomdp(rng, sizes, discount=discount)
    f = pwlc.PwlcFn.from_matrix(rng.normal(size=(n_vectors, sizes[0])))
    return m, f


class TestExactBackup:
    def test_single_action_single_obs(self):
        rng = np.random.default_rng(0)
        m = bm.random_pomdp(rng, (3, 1, 1), discount=0.8)
        alpha0 = rng.normal(size=3)
        f = pwlc.PwlcFn.from_matrix(alpha0[None, :])
        out = exact.exact_backup(m, f)
        assert len(out) == 1
        want = m.step_reward[0] + 0.8 * m.trans_obs[0, 0] @ alpha0
        npt.assert_allclose(out.matrix[0], want, atol=1e-12)
        assert out.vectors[0].action == 0
        assert out.vectors[0].witnesses == (0,)

    def test_zero_function_gives_step_rewards(self):
        rng = np.random.default_rng(1)
        m = bm.random_pomdp(rng, (3, 3, 2), discount=0.9)
        f = pwlc.PwlcFn.from_matrix(np.zeros((1, 3)))
        out = exact.exact_backup(m, f)
        # each output vector is some action's expected-reward row
        for v in out.vectors:
            npt.assert_allclose(v.coeffs, m.step_reward[v.action], atol=1e-12)
        # and the value function is the max over those rows
        B = bm.sample_belief_uniform(rng, 3, size=200)
        want = (B @ m.step_reward.T).max(axis=1)
        npt.assert_allclose(out.values(B), want, atol=1e-12)

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(2)
        for trial in range(15):
            m, f = random_setup(rng)
            B = bm.sample_belief_uniform(rng, m.num_states, size=1000)
            want, count = enumerate_backup_values(m, f, B)
            out = exact.exact_backup(m, f)
            assert count == m.num_actions * len(f) ** m.num_obs
            assert len(out) <= count
            npt.assert_allclose(out.values(B), want, atol=1e-9)

    def test_matches_enumeration_bigger(self):
        rng = np.random.default_rng(3)
        m, f = random_setup(rng, sizes=(4, 3, 3), n_vectors=4)
        B = bm.sample_belief_uniform(rng, 4, size=1000)
        want, _ = enumerate_backup_values(m, f, B)
        out = exact.exact_backup(m, f)
        npt.assert_allclose(out.values(B), want, atol=1e-9)

    def test_candidate_cap(self):
        rng = np.random.default_rng(4)
        m, f = random_setup(rng, sizes=(3, 2, 3), n_vectors=5)
        with pytest.raises(exact.BackupCapExceeded):
            exact.exact_backup(m, f, max_candidates=3)

    def test_output_tags_complete(self):
        rng = np.random.default_rng(5)
        m, f = random_setup(rng)
        out = exact.exact_backup(m, f)
        for v in out.vectors:
            assert v.action is not None and 0 <= v.action < m.num_actions
            assert v.witnesses is not None and len(v.witnesses) == m.num_obs
            assert all(0 <= w < len(f) for w in v.witnesses)


class TestBackupProperties:
    def test_contraction(self):
        rng = np.random.default_rng(11)
        for _ in range(6):
            m = bm.random_pomdp(rng, (3, 2, 2), discount=0.9)
            u = pwlc.PwlcFn.from_matrix(rng.normal(size=(2, 3)))
            v = pwlc.PwlcFn.from_matrix(rng.normal(size=(3, 3)))
            lhs = pwlc.pwlc_norm(exact.exact_backup(m, u), exact.exact_backup(m, v))
            rhs = m.discount * pwlc.pwlc_norm(u, v)
            assert lhs <= rhs + 1e-9

    def test_isotone(self):
        rng = np.random.default_rng(13)
        for _ in range(6):
            m = bm.random_pomdp(rng, (3, 2, 2), discount=0.85)
            u = pwlc.PwlcFn.from_matrix(rng.normal(size=(3, 3)))
            # v >= u pointwise by construction
            v = pwlc.PwlcFn.from_matrix(
                np.vstack([u.matrix + rng.uniform(0, 0.5, size=3), rng.normal(size=(1, 3))])
            )
            assert pwlc.pwlc_sup_diff(u, v) <= 1e-9
            hu, hv = exact.exact_backup(m, u), exact.exact_backup(m, v)
            assert pwlc.pwlc_sup_diff(hu, hv) <= 1e-9

    def test_convexity_midpoint(self):
        rng = np.random.default_rng(17)
        m, f = random_setup(rng, sizes=(4, 2, 2))
        out = exact.exact_backup(m, f)
        for _ in range(50):
            b1 = bm.sample_belief_uniform(rng, 4)
            b2 = bm.sample_belief_uniform(rng, 4)
            mid = out.value((b1 + b2) / 2)
            assert mid <= (out.value(b1) + out.value(b2)) / 2 + 1e-12


class TestValueIteration:
    def test_myopic_when_undiscounted_future_absent(self):
        rng = np.random.default_rng(19)
        m = bm.random_pomdp(rng, (3, 2, 2), discount=0.0)
        res = exact.value_iteration(m, eps=1e-8)
        B = bm.sample_belief_uniform(rng, 3, size=300)
        want = (B @ m.step_reward.T).max(axis=1)
        npt.assert_allclose(res.fn.values(B), want, atol=1e-9)
        assert res.iters <= 2
        assert res.bellman_error <= 1e-8

    def test_stops_immediately_with_loose_eps(self):
        rng = np.random.default_rng(23)
        m = bm.random_pomdp(rng, (2, 2, 2), discount=0.9)
        res = exact.value_iteration(m, eps=1e6)
        assert res.iters == 1

    def test_monotone_from_blind_start(self):
        rng = np.random.default_rng(29)
        m = bm.random_pomdp(rng, (3, 2, 2), discount=0.9)
        res = exact.value_iteration(m, eps=0.05, keep_history=True)
        B = bm.sample_belief_uniform(rng, 3, size=200)
        prev = res.history[0].values(B)
        for fn in res.history[1:]:
            cur = fn.values(B)
            assert (cur >= prev - 1e-9).all()
            prev = cur

    def test_accuracy_guarantee_against_long_run(self):
        rng = np.random.default_rng(31)
        m = bm.random_pomdp(rng, (2, 2, 2), discount=0.9)
        eps = 0.05
        res = exact.value_iteration(m, eps=eps, max_iters=500)
        assert res.bellman_error <= eps
        proxy = exact.value_iteration(m, f0=res.fn, eps=1e-12, max_iters=200)
        want = pwlc.accuracy_bounds(eps, 0.9)["value_i"]
        assert pwlc.pwlc_norm(res.fn, proxy.fn) <= want + 1e-9

    def test_cap_returns_partial_flagged(self):
        rng = np.random.default_rng(37)
        m = bm.random_pomdp(rng, (3, 3, 3), discount=0.9)
        res = exact.value_iteration(m, eps=1e-9, max_iters=50, max_candidates=20)
        assert res.capped
        assert res.fn is not None


class TestControlChoices:
    def test_lookahead_dominant_reward(self):
        # action 1 beats action 0 in every state; V == 0
        trans = np.stack([np.eye(2)] * 2)
        reward = np.stack([np.full((2, 2), 1.0), np.full((2, 2), 3.0)])
        obs = np.ones((2, 2, 1))
        m = bm.Pomdp(trans, obs, reward, discount=0.9)
        zero = pwlc.PwlcFn.from_matrix(np.zeros((1, 2)))
        a, val = exact.lookahead_action(m, zero.value, np.array([0.5, 0.5]))
        assert a == 1
        assert val == pytest.approx(3.0)

    def test_lookahead_myopic_at_zero_discount(self):
        rng = np.random.default_rng(41)
        m = bm.random_pomdp(rng, (3, 3, 2), discount=0.0)
        f = pwlc.PwlcFn.from_matrix(rng.normal(size=(2, 3)))
        for _ in range(10):
            b = bm.sample_belief_uniform(rng, 3)
            a, _ = exact.lookahead_action(m, f.value, b)
            assert a == int(np.argmax(b @ m.step_reward.T))

    def test_lookahead_matches_expansion_oracle(self):
        rng = np.random.default_rng(43)
        m = bm.random_pomdp(rng, (3, 2, 2), discount=0.9)
        res = exact.value_iteration(m, eps=0.01)
        f = res.fn
        for _ in range(20):
            b = bm.sample_belief_uniform(rng, 3)
            a, val = exact.lookahead_action(m, f.value, b)
            # oracle: explicit expectation over observations
            want = np.empty(2)
            for aa in range(2):
                q = bm.expected_reward(m, b, aa)
                probs = bm.obs_prob(m, b, aa)
                for o in range(2):
                    if probs[o] > 1e-12:
                        q += m.discount * probs[o] * f.value(bm.belief_update(m, b, aa, o))
                want[aa] = q
            assert a == int(np.argmax(want))
            assert val == pytest.approx(want.max(), abs=1e-10)

    def test_direct_single_vector(self):
        f = pwlc.PwlcFn([pwlc.AlphaVector(np.array([1.0, 2.0]), action=2)])
        assert exact.direct_action(f, np.array([0.3, 0.7])) == 2

    def test_direct_switches_at_crossing(self):
        f = pwlc.PwlcFn(
            [
                pwlc.AlphaVector(np.array([1.0, 0.0]), action=0),
                pwlc.AlphaVector(np.array([0.0, 1.0]), action=1),
            ]
        )
        assert exact.direct_action(f, np.array([0.6, 0.4])) == 0
        assert exact.direct_action(f, np.array([0.4, 0.6])) == 1
        # exact tie: lowest vector index wins
        assert exact.direct_action(f, np.array([0.5, 0.5])) == 0

    def test_direct_missing_tag(self):
        f = pwlc.PwlcFn.from_matrix(np.array([[1.0, 0.0]]))
        with pytest.raises(exact.MissingActionTagError):
            exact.direct_action(f, np.array([0.5, 0.5]))


class TestPolicyGraph:
    def test_single_stage_self_loop(self):
        f = pwlc.PwlcFn([pwlc.AlphaVector(np.array([1.0, 0.0]), action=1)])
        g = exact.extract_policy_graph([f], n_obs=2)
        assert g.num_nodes == 1
        assert g.edges[0] == [0, 0]
        assert g.actions == [1]

    def test_two_stage_all_edges_present(self):
        rng = np.random.default_rng(47)
        m = bm.random_pomdp(rng, (2, 2, 2), discount=0.9)
        f0 = exact.blind_lower_bound(m)
        f1 = exact.exact_backup(m, f0)
        g = exact.extract_policy_graph([f0, f1], n_obs=m.num_obs)
        assert g.num_nodes == len(f0) + len(f1)
        for edges in g.edges:
            assert len(edges) == 2
            assert all(e is not None and 0 <= e < g.num_nodes for e in edges)

    def test_open_history_has_terminal_nodes(self):
        f = pwlc.PwlcFn([pwlc.AlphaVector(np.array([0.0, 0.0]), action=0)])
        g = exact.extract_policy_graph([f], n_obs=2, close_cycle=False)
        assert g.edges[0] == [None, None]

    def test_greedy_start_matches_direct_action(self):
        rng = np.random.default_rng(53)
        m = bm.random_pomdp(rng, (3, 2, 2), discount=0.9)
        res = exact.value_iteration(m, eps=0.05, keep_history=True)
        g = exact.extract_policy_graph(res.history, n_obs=m.num_obs)
        for _ in range(20):
            b = bm.sample_belief_uniform(rng, 3)
            node = g.start_node(b)
            assert g.actions[node] == exact.direct_action(res.fn, b)

    def test_dangling_witness(self):
        f0 = pwlc.PwlcFn.from_matrix(np.zeros((1, 2)))
        bad = pwlc.PwlcFn(
            [pwlc.AlphaVector(np.array([1.0, 1.0]), action=0, witnesses=(0, 5))]
        )
        with pytest.raises(exact.DanglingWitnessError):
            exact.extract_policy_graph([f0, bad], n_obs=2)

    def test_json_roundtrip(self, tmp_path):
        rng = np.random.default_rng(59)
        m = bm.random_pomdp(rng, (2, 2, 2), discount=0.9)
        res = exact.value_iteration(m, eps=0.1, keep_history=True)
        g = exact.extract_policy_graph(res.history, n_obs=m.num_obs)
        p = tmp_path / "graph.json"
        exact.save_policy_graph(g, p)
        doc = json.loads(p.read_text())
        assert doc["start_rule"] == "greedy"
        assert len(doc["nodes"]) == g.num_nodes
        g2 = exact.load_policy_graph(p)
        assert g2.actions == g.actions
        assert g2.edges == g.edges
