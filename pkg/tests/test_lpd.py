import math

import numpy as np
import pytest

from lidarwx import nn
from lidarwx.augment import AugmentSpec
from lidarwx.errors import EmptyInputError, NumericError
from lidarwx.lpd import (LOG_HEADER, ActionSpace, EpsilonSchedule, LpdConfig, QAgent,
                         ReplayBuffer, RewardRecord, Transition, agent_train_step,
                         apply_drop_action, build_state, compute_reward, drop_step,
                         evaluate_policies, greedy_action, load_agent, log_from_csv, log_to_csv,
                         make_agent, mean_entropy, point_entropies, q_values,
                         run_training_pipeline, save_agent, select_action)
from lidarwx.pointcloud import LabelArray, PointCloud
from lidarwx.surrogate import TrainConfig, init_surrogate, train_surrogate

from conftest import random_cloud

SPACE = ActionSpace()


# -- entropy

def test_uniform_entropy():
    assert abs(mean_entropy(np.zeros((7, 5))) - math.log(5)) < 1e-12
    assert round(mean_entropy(np.zeros((1, 5))), 5) == 1.60944


def test_near_one_hot_entropy():
    assert mean_entropy(np.array([[1000.0, 0, 0, 0, 0]])) == pytest.approx(0.0, abs=1e-300)


def test_two_point_mean():
    h = mean_entropy(np.array([[0.0, 0.0], [1000.0, 0.0]]))
    assert abs(h - math.log(2) / 2) < 1e-15
    assert round(h, 5) == 0.34657


def test_entropy_empty():
    with pytest.raises(EmptyInputError):
        mean_entropy(np.zeros((0, 5)))


def test_entropy_bounds_and_shift(rng):
    logits = rng.normal(0, rng.uniform(0.1, 50, (10_000, 1)), (10_000, 5))
    h = point_entropies(logits)
    assert h.min() >= 0 and h.max() <= math.log(5)
    shifted = point_entropies(logits + rng.normal(0, 100, (10_000, 1)))
    np.testing.assert_allclose(shifted, h, atol=1e-9)


# -- action space and state

def test_action_space_layout():
    assert SPACE.size == 4 * 8 * 4 + 1 == 129
    assert SPACE.noop == 128 and SPACE.decode(128) is None
    assert SPACE.state_width == 98
    seen = set()
    for band in range(4):
        for sector in range(8):
            for k, ratio in enumerate(SPACE.ratios):
                a = SPACE.encode(band, sector, k)
                assert SPACE.decode(a) == (band * 8 + sector, ratio)
                seen.add(a)
    assert seen == set(range(128))
    assert ActionSpace.from_dict(SPACE.to_dict()) == SPACE


def test_cells_partition_space():
    # boundary values land in the upper band; the seam angle pi wraps to sector 0, like -pi
    cloud = PointCloud.from_xyz([[10.0, 0, 0], [9.999, 0, 0], [-60.0, 0.0, 0], [0, 0, 0]])
    cells = SPACE.cell_of(cloud)
    assert cells.tolist() == [1 * 8 + 4, 0 * 8 + 4, 3 * 8 + 0, 4]


def brute_state(l, h, cloud, ent, space, scale=50.0):
    bounds = space.depth_bounds
    out = [l, h]
    groups = {}
    for i in range(cloud.n):
        r = math.sqrt(cloud.x[i] ** 2 + cloud.y[i] ** 2 + cloud.z[i] ** 2)
        band = next(b for b in range(space.bands) if bounds[b] <= r < bounds[b + 1])
        theta = math.atan2(cloud.y[i], cloud.x[i])
        if theta == -math.pi:
            theta = math.pi
        sector = int((theta + math.pi) // (2 * math.pi / space.sectors)) % space.sectors
        groups.setdefault(band * space.sectors + sector, []).append((r, ent[i]))
    for c in range(space.cells):
        g = groups.get(c, [])
        if g:
            out += [len(g) / cloud.n, sum(r for r, _ in g) / len(g) / scale,
                    sum(e for _, e in g) / len(g)]
        else:
            out += [0.0, 0.0, 0.0]
    return np.array(out)


def test_state_matches_brute_force(rng):
    cloud = random_cloud(rng, 1000, scale=45.0)
    ent = rng.uniform(0, math.log(5), 1000)
    state = build_state(0.7, 0.3, cloud, ent, SPACE)
    np.testing.assert_allclose(state, brute_state(0.7, 0.3, cloud, ent, SPACE), rtol=1e-12, atol=1e-15)
    assert abs(state[2::3].sum() - 1.0) <= 1e-9


def test_state_edge_cases():
    s = build_state(1.0, 2.0, PointCloud.empty(), np.zeros(0), SPACE)
    assert s[:2].tolist() == [1.0, 2.0] and not s[2:].any()
    cloud = PointCloud.from_xyz(np.tile([5.0, 0.1, 0.0], (20, 1)))
    s = build_state(0.0, 0.0, cloud, np.zeros(20), SPACE)
    fractions = s[2::3]
    assert fractions[SPACE.cell_of(cloud)[0]] == 1.0 and fractions.sum() == 1.0
    with pytest.raises(NumericError):
        build_state(math.nan, 0.0, cloud, np.zeros(20), SPACE)


# -- actions

def _agent_with_bias(bias):
    agent = make_agent(SPACE, hidden=(4,), seed=0)
    agent.online.weights[-1][:] = 0.0
    agent.online.biases[-1][:] = bias
    return agent


def test_epsilon_one_uniform():
    agent = _agent_with_bias(np.zeros(SPACE.size))
    agent.online.biases[-1][7] = 1.0
    agent.epsilon = 1.0
    rng = np.random.default_rng(0)
    counts = np.bincount([select_action(agent, np.zeros(98), rng) for _ in range(10_000)],
                         minlength=SPACE.size)
    p = 1 / SPACE.size
    sd = math.sqrt(10_000 * p * (1 - p))
    assert np.all(np.abs(counts - 10_000 * p) <= 3 * sd + 1e-9) or \
        (np.abs(counts - 10_000 * p) > 3 * sd).sum() <= 1  # one excursion expected in 129 cells
    assert ((counts - 10_000 * p) ** 2 / (10_000 * p)).sum() < 129 + 3 * math.sqrt(2 * 128)


def test_forced_and_tied_argmax():
    bias = np.zeros(SPACE.size)
    bias[7] = 2.0
    agent = _agent_with_bias(bias)
    agent.epsilon = 0.0
    rng = np.random.default_rng(1)
    assert {select_action(agent, np.ones(98), rng) for _ in range(100)} == {7}
    bias = np.full(SPACE.size, -1.0)
    bias[[3, 9]] = 0.5
    agent = _agent_with_bias(bias)
    agent.epsilon = 0.0
    assert select_action(agent, np.zeros(98), rng) == 3 == greedy_action(agent, np.zeros(98))


def _cell_cloud():
    # 100 points in cell (band 0, sector 4), 50 in band 1 sector 0
    rng = np.random.default_rng(3)
    a = np.c_[rng.uniform(2, 9, 100), rng.uniform(0.01, 0.5, 100), np.zeros(100)]
    b = np.c_[-rng.uniform(12, 20, 50), -rng.uniform(0.5, 1.5, 50), np.zeros(50)]
    cloud = PointCloud.from_xyz(np.r_[a, b])
    return cloud, LabelArray(np.arange(150) % 5, np.arange(150))


def test_drop_action_counts():
    cloud, labels = _cell_cloud()
    cells = SPACE.cell_of(cloud)
    assert (cells == 4).sum() == 100
    action = SPACE.encode(0, 4, SPACE.ratios.index(0.75))
    out, lab = apply_drop_action(cloud, labels, action, SPACE, seed=5)
    out_cells = SPACE.cell_of(out)
    assert (out_cells == 4).sum() == 25
    assert (out_cells != 4).sum() == (cells != 4).sum()
    kept = lab.instance.astype(int)
    assert out.equals(cloud.take(kept))
    assert set(range(100, 150)) <= set(kept.tolist())


def test_drop_action_identities():
    cloud, labels = _cell_cloud()
    assert apply_drop_action(cloud, labels, SPACE.noop, SPACE, 0) == (cloud, labels)
    empty = SPACE.encode(2, 1, 0)
    out, lab = apply_drop_action(cloud, labels, empty, SPACE, 0)
    assert out.equals(cloud) and lab.equals(labels)


# -- reward

def test_reward_examples():
    assert compute_reward(RewardRecord(1.0, 0.5, 1.4, 0.6)) == pytest.approx(0.5, abs=1e-15)
    assert compute_reward(RewardRecord(0.3, 0.2, 0.3, 0.2)) == 0.0
    rng = np.random.default_rng(0)
    for v in rng.normal(size=(100, 4)):
        a = compute_reward(RewardRecord(*v))
        b = compute_reward(RewardRecord(v[2], v[3], v[0], v[1]))
        assert a == -b


def test_noop_reward_is_zero(labelled_cloud):
    cloud, labels = labelled_cloud
    model = init_surrogate(TrainConfig(seed=1))
    out = drop_step(model, cloud, labels, AugmentSpec(seed=0), SPACE, lambda s: SPACE.noop, 1, 2)
    assert compute_reward(out["record"]) == 0.0


# -- agent

def test_gamma_zero_target_is_reward():
    agent = make_agent(SPACE, hidden=(8,), seed=1)
    s = np.random.default_rng(0).normal(size=98)
    t = Transition(s, 5, 0.3, s)
    q0 = q_values(agent, s)[5]
    loss = agent_train_step(agent, [t], lr=1e-3)
    assert loss == pytest.approx((q0 - 0.3) ** 2, rel=1e-12)


def test_bandit_converges_monotonically():
    agent = make_agent(SPACE, hidden=(16,), seed=2)
    s = np.random.default_rng(1).uniform(0, 1, 98)
    t = Transition(s, 11, 0.8, s)
    errs = []
    for _ in range(200):
        errs.append(abs(q_values(agent, s)[11] - 0.8))
        agent_train_step(agent, [t] * 8, lr=1e-3)
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 0.05 * errs[0]


def test_untaken_actions_get_zero_output_gradient():
    agent = make_agent(SPACE, hidden=(8,), seed=3)
    before_w = agent.online.weights[-1].copy()
    before_b = agent.online.biases[-1].copy()
    s = np.random.default_rng(2).normal(size=(2, 98))
    agent_train_step(agent, [Transition(s[0], 4, 1.0, s[0]), Transition(s[1], 60, -1.0, s[1])], 0.01)
    changed = np.flatnonzero(np.any(agent.online.weights[-1] != before_w, axis=0)
                             | (agent.online.biases[-1] != before_b))
    assert changed.tolist() == [4, 60]


def test_target_sync_period():
    agent = make_agent(SPACE, hidden=(8,), seed=4, sync_period=3)
    s = np.ones(98)
    batch = [Transition(s, 0, 1.0, s)]
    target0 = nn.save_bytes(agent.target)
    agent_train_step(agent, batch, 0.01)
    agent_train_step(agent, batch, 0.01)
    assert nn.save_bytes(agent.target) == target0
    agent_train_step(agent, batch, 0.01)
    assert nn.save_bytes(agent.target) == nn.save_bytes(agent.online)


def test_nonfinite_target_rejected():
    agent = make_agent(SPACE, hidden=(8,), seed=0, gamma=0.5)
    s = np.ones(98)
    agent.target.biases[-1][:] = np.inf
    with pytest.raises(NumericError):
        agent_train_step(agent, [Transition(s, 0, 1.0, s, terminal=False)], 0.01)
    with pytest.raises(EmptyInputError):
        agent_train_step(agent, [], 0.01)


def test_replay_eviction():
    buf = ReplayBuffer(3)
    s = np.zeros(1)
    for i in range(5):
        buf.push(Transition(s, i, float(i), s))
    assert [t.action for t in buf.items()] == [2, 3, 4]
    assert len(buf) == 3
    with pytest.raises(NumericError):
        buf.push(Transition(s, 0, math.nan, s))


def test_epsilon_schedule():
    sch = EpsilonSchedule(1.0, 0.05, 100)
    assert sch(0) == 1.0 and sch(100) == 0.05 and sch(50) == pytest.approx(0.525)
    assert EpsilonSchedule(1.0, 0.05, 0)(0) == 0.05


def test_agent_roundtrip(tmp_path):
    agent = make_agent(SPACE, hidden=(8,), seed=5)
    agent.online.weights[-1][:] = 0.1
    agent.updates = 17
    save_agent(agent, SPACE, tmp_path / "a.nn")
    back, space = load_agent(tmp_path / "a.nn")
    assert space == SPACE and back.updates == 17
    assert nn.save_bytes(back.online) == nn.save_bytes(agent.online)


# -- pipeline

def test_noop_pipeline_equals_plain_training(small_scenes):
    tcfg = TrainConfig(epochs=2, seed=3)
    ref = train_surrogate(small_scenes, tcfg)
    cfg = LpdConfig(sj=AugmentSpec.disabled(), policy="noop")
    res = run_training_pipeline(small_scenes, init_surrogate(tcfg), make_agent(SPACE), tcfg, cfg)
    assert nn.save_bytes(res.surrogate.net) == nn.save_bytes(ref.model.net)
    assert res.loss_trace == ref.loss_trace
    assert all(row.reward == 0.0 and row.action == SPACE.noop for row in res.log)


def test_pipeline_log_recomputes_and_roundtrips(small_scenes):
    tcfg = TrainConfig(epochs=2, seed=1)
    cfg = LpdConfig(warmup=2, batch_size=4, seed=9)
    res = run_training_pipeline(small_scenes, init_surrogate(tcfg), make_agent(SPACE), tcfg, cfg)
    assert len(res.log) == 2 * len(small_scenes)
    for row in res.log:
        assert row.reward == (row.l_lpd + row.h_lpd) - (row.l_aug + row.h_aug)
    text = log_to_csv(res.log)
    assert text.splitlines()[0] == ",".join(LOG_HEADER)
    assert log_from_csv(text) == res.log
    assert res.agent.updates > 0


def test_pipeline_deterministic(small_scenes):
    tcfg = TrainConfig(epochs=1, seed=2)
    cfg = LpdConfig(warmup=2, batch_size=4, seed=4)
    runs = [run_training_pipeline(small_scenes, init_surrogate(tcfg), make_agent(SPACE, seed=1),
                                  tcfg, cfg) for _ in range(2)]
    assert log_to_csv(runs[0].log) == log_to_csv(runs[1].log)
    assert nn.save_bytes(runs[0].agent.online) == nn.save_bytes(runs[1].agent.online)


def test_evaluate_policies_shapes(small_scenes):
    model = init_surrogate(TrainConfig(seed=0))
    res = evaluate_policies(model, make_agent(SPACE), small_scenes, LpdConfig(), seed=3)
    assert res["greedy"].shape == res["random"].shape == (len(small_scenes),)
    # zero-initialised Q heads tie everywhere, so greedy picks action 0
    assert np.all(np.isfinite(res["greedy"]))


def test_lpd_config_roundtrip():
    cfg = LpdConfig(hidden=(32,), policy="random")
    assert LpdConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        LpdConfig(policy="bogus")


def test_qagent_invariants():
    a = make_agent(SPACE, hidden=(8,))
    with pytest.raises(ValueError):
        QAgent(a.online, a.target, ReplayBuffer(), epsilon=1.5)
