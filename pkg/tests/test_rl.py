import numpy as np
import pytest
from scipy import stats

from gnn_inversion.attacks.blackbox import HardLabelOracle
from gnn_inversion.attacks.rl import (PARAM_NAMES, QNetworks, ReplayBuffer, RlConfig, RlTrainingLog, Transition,
                                      TdStats, first_action_mask, greedy_rollout, label_onehot, masked_argmax,
                                      q_values, rl_reward, run_rl_graphmi, second_action_mask, state_embedding,
                                      td_update)
from gnn_inversion.attacks.whitebox import UNKNOWN
from gnn_inversion.graph import num_pairs


@pytest.fixture
def toy():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 3))
    Y = np.array([0, 0, 0, 1, 1, 1])
    return X, Y


def small_cfg(**kw):
    base = dict(max_edges=3, episodes=4, target_update=3, batch_size=4, embed_dim=8, q_hidden=8)
    base.update(kw)
    return RlConfig(**base)


def test_sync_copies_online_bitwise():
    nets = QNetworks(3, 2, 8, 8, seed=0)
    for k in PARAM_NAMES:
        nets.online[k] = nets.online[k] + 1.0
    nets.sync()
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(nets.online[k], nets.target[k])
        assert nets.online[k] is not nets.target[k]


def test_target_frozen_between_syncs(sbm, sbm_model):
    oracle = HardLabelOracle(sbm_model, sbm.features)
    cfg = small_cfg(max_edges=4, episodes=3, target_update=5, batch_size=2)
    snapshots = {}
    changes = []

    def on_step(step, nets, buffer):
        current = {k: v.copy() for k, v in nets.target.items()}
        if snapshots:
            changed = any(not np.array_equal(current[k], snapshots[k]) for k in PARAM_NAMES)
            changes.append((step, changed))
            if step % cfg.target_update == 0:
                for k in PARAM_NAMES:
                    np.testing.assert_array_equal(nets.target[k], nets.online[k])
        snapshots.update(current)

    run_rl_graphmi(oracle, sbm.features, sbm.labels, cfg, seed=0, on_step=on_step)
    for step, changed in changes:
        if step % cfg.target_update:
            assert not changed, f"target moved at step {step}"
    assert any(changed for _, changed in changes)


def test_td_errors_clipped(toy):
    X, Y = toy
    cfg = small_cfg(td_clip=1.0, lr=0.5)
    nets = QNetworks(3, 2, 8, 8, seed=1)
    for k in PARAM_NAMES:
        nets.online[k] = nets.online[k] * 5
    batch = [Transition((), 0, 1, 1.0, False), Transition((0,), 2, 4, -1.0, True)]
    st = TdStats()
    td_update(nets, batch, X, label_onehot(Y, 2), cfg, st)
    assert max(abs(v) for v in st.td_raw) > 1.0
    assert all(-1.0 <= v <= 1.0 for v in st.td_clipped)
    np.testing.assert_allclose(st.td_clipped, np.clip(st.td_raw, -1, 1))


def test_td_update_moves_q_toward_target(toy):
    X, Y = toy
    cfg = small_cfg(lr=0.01, gamma=0.5)
    nets = QNetworks(3, 2, 8, 8, seed=2)
    onehot = label_onehot(Y, 2)
    batch = [Transition((), 0, 1, 1.0, True)]
    st = TdStats()
    td_update(nets, batch, X, onehot, cfg, st)
    before = st.td_raw[1]
    st2 = TdStats()
    td_update(nets, batch, X, onehot, cfg, st2)
    assert abs(st2.td_raw[1]) < abs(before)


def test_replay_buffer_bounded_and_fifo():
    buf = ReplayBuffer(5)
    for i in range(12):
        buf.push(i)
        assert len(buf) <= 5
    assert sorted(buf._items) == [7, 8, 9, 10, 11]


def test_replay_sampling_uniform():
    buf = ReplayBuffer(10)
    for i in range(10):
        buf.push(i)
    draws = buf.sample(np.random.default_rng(0), 20_000)
    counts = np.bincount(draws, minlength=10)
    assert stats.chisquare(counts).pvalue > 0.001


def test_greedy_rollout_emits_exact_budget(toy):
    X, Y = toy
    edges = greedy_rollout(QNetworks(3, 2, 8, 8, seed=3), X, Y, 3)
    assert len(edges) == 3 == len(set(edges))
    assert all(i < j for i, j in edges)


def test_rollout_stops_at_complete_graph():
    X = np.eye(3)
    edges = greedy_rollout(QNetworks(3, 2, 4, 4, seed=0), X, np.array([0, 1, 0]), 10)
    assert sorted(edges) == [(0, 1), (0, 2), (1, 2)]


def test_zero_weights_pick_lowest_index(toy):
    X, Y = toy
    nets = QNetworks(3, 2, 8, 8, seed=0)
    nets.zero_()
    A = np.zeros((6, 6))
    assert masked_argmax(q_values(nets, A, X, Y), first_action_mask(A)) == 0
    assert masked_argmax(q_values(nets, A, X, Y, first=0), second_action_mask(A, 0)) == 1


def test_action_masks_three_nodes():
    A = np.zeros((3, 3))
    A[0, 1] = A[1, 0] = 1
    np.testing.assert_array_equal(second_action_mask(A, 0), [False, False, True])
    A[0, 2] = A[2, 0] = 1
    np.testing.assert_array_equal(first_action_mask(A), [False, True, True])
    np.testing.assert_array_equal(second_action_mask(A, 1), [False, False, True])
    with pytest.raises(ValueError):
        masked_argmax(np.zeros(3), np.zeros(3, bool))


def test_reward_examples(sbm, sbm_model):
    oracle = HardLabelOracle(sbm_model, sbm.features)
    acc = oracle.accuracy(sbm.adjacency, sbm.labels)
    q = oracle.query_count
    assert rl_reward(oracle, sbm.adjacency, sbm.features, sbm.labels, acc) == (1, acc)
    assert rl_reward(oracle, sbm.adjacency, sbm.features, sbm.labels, acc + 0.01) == (-1, acc)
    assert rl_reward(oracle, sbm.adjacency, sbm.features, sbm.labels, 0.0)[0] == 1
    assert oracle.query_count == q + 3


def test_label_onehot_unknown_column():
    oh = label_onehot(np.array([0, UNKNOWN, 1]), 2)
    np.testing.assert_array_equal(oh, [[1, 0, 0], [0, 0, 1], [0, 1, 0]])


def test_state_embedding_is_node_mean(toy):
    X, Y = toy
    nets = QNetworks(3, 2, 8, 8, seed=4)
    A = np.zeros((6, 6))
    A[0, 3] = A[3, 0] = 1
    e_v, e_s = state_embedding(nets, A, X, Y)
    assert e_v.shape == (6, 16) and e_s.shape == (16,)
    np.testing.assert_allclose(e_s, e_v.mean(axis=0))
    nets.zero_()
    e_v, e_s = state_embedding(nets, A, X, Y)
    assert not e_v.any() and not e_s.any()


def test_config_validation():
    with pytest.raises(ValueError):
        RlConfig(gamma=1.0)
    with pytest.raises(ValueError):
        RlConfig(max_edges=0)
    with pytest.raises(ValueError):
        RlConfig(reward_scope="test")
    cfg = RlConfig(episodes=10, eps_decay_fraction=0.5)
    assert cfg.epsilon(0) == 1.0 and cfg.epsilon(5) == pytest.approx(0.05) and cfg.epsilon(9) == pytest.approx(0.05)


def test_query_accounting_and_scores(sbm, sbm_model):
    oracle = HardLabelOracle(sbm_model, sbm.features)
    cfg = small_cfg(max_edges=5, episodes=3, batch_size=4)
    log = RlTrainingLog()
    res = run_rl_graphmi(oracle, sbm.features, sbm.labels, cfg, seed=1, log_out=log)
    assert res.queries == 1 + cfg.episodes * cfg.max_edges == oracle.query_count
    assert len(log.episode_rewards) == cfg.episodes
    assert len(res.scores) == num_pairs(sbm.num_nodes)
    assert sorted(res.scores[res.scores > 0]) == [1, 2, 3, 4, 5]
    assert np.triu(res.sampled, 1).sum() == 5
    assert log.syncs == [3, 6, 9, 12, 15]


def test_rl_deterministic(sbm, sbm_model):
    cfg = small_cfg(max_edges=3, episodes=2, batch_size=2)
    r1 = run_rl_graphmi(HardLabelOracle(sbm_model, sbm.features), sbm.features, sbm.labels, cfg, seed=7)
    r2 = run_rl_graphmi(HardLabelOracle(sbm_model, sbm.features), sbm.features, sbm.labels, cfg, seed=7)
    np.testing.assert_array_equal(r1.scores, r2.scores)


def test_reward_scope_all_requires_labels(sbm, sbm_model):
    with pytest.raises(ValueError, match="all_labels"):
        run_rl_graphmi(HardLabelOracle(sbm_model, sbm.features), sbm.features, sbm.labels,
                       small_cfg(reward_scope="all"))
