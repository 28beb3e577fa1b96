"""Replay, model-augmentation, and learner tests.

The augmentation distribution is checked against the exact projected
transition; the single-block online learner is checked step for step
against an independently written flat DQN driven by the same random
streams; the batch-constrained learner's action filter is checked for
monotonicity and for refusing actions the dataset never shows.
"""

import copy
import json

import numpy as np
import pytest

from frl.agents import (
    BcqConfig,
    BcqNet,
    DqnConfig,
    DynamicsModel,
    ReplayBuffers,
    RewardModel,
    RingBuffer,
    TabularModelSampler,
    TransitionRecord,
    ad_bcq_train,
    ad_dqn_train,
    augment_batch,
    batch_arrays,
    checkpoint_candidates,
    episodes_to_transitions,
    extract_policy,
    filtered_argmax,
    log_softmax,
    offline_preset,
    online_preset,
    select_action,
)
from frl.approx import DecomposedQNet, Mlp, Optimizer, huber, target_update
from frl.envs import PointMassEnv, generate_offline_dataset, treatment_spec, two_switch_spec
from frl.envs.point_mass import FlattenedEnv
from frl.errors import ConfigurationError, DataError, StateError
from frl.factored_mdp import projected_transition


def _record(k=None, action=(0, 0), origin="environment"):
    return TransitionRecord(
        state=np.zeros(3), action=action, reward=1.0, next_state=np.ones(3),
        origin=origin, block_tag=k,
    )


# -- replay buffers -----------------------------------------------------------


def test_tagged_records_land_in_both_buffers():
    buffers = ReplayBuffers(n_blocks=2, capacity=10)
    buffers.add(_record())
    buffers.add(_record(k=1, action=(0, 3)))
    buffers.add(_record(k=0, action=(2, 0)))
    assert len(buffers.global_buffer) == 3
    assert [len(b) for b in buffers.block_buffers] == [1, 1]
    # the tagged record is the same object in D and its D_k, and in no other
    assert buffers.block_buffers[1]._data[0] is buffers.global_buffer._data[1]
    for rec in buffers.global_buffer._data:
        homes = [b for b in buffers.block_buffers if any(r is rec for r in b._data)]
        assert len(homes) == (0 if rec.block_tag is None else 1)


def test_ring_eviction_and_recent_window():
    buf = RingBuffer(4)
    recs = [_record(action=(i, 0)) for i in range(7)]
    for r in recs:
        buf.append(r)
    assert len(buf) == 4
    # survivors are the last four, and recent() returns them oldest-first
    assert [r.action[0] for r in buf.recent(4)] == [3, 4, 5, 6]
    assert [r.action[0] for r in buf.recent(2)] == [5, 6]
    rng = np.random.default_rng(0)
    picked = buf.sample_recent(rng, 50, window=2)
    assert {r.action[0] for r in picked} <= {5, 6}


def test_record_validation_and_batching():
    with pytest.raises(DataError):
        _record(origin="synthetic")
    with pytest.raises(DataError):
        TransitionRecord(np.zeros(2), (0,), 0.0, np.zeros(2), block_tag=3)
    states, actions, rewards, next_states, dones = batch_arrays([_record(), _record(k=1)])
    assert states.shape == (2, 3) and actions.shape == (2, 2)
    assert rewards.shape == (2,) and dones.tolist() == [0.0, 0.0]
    with pytest.raises(DataError):
        batch_arrays([])


# -- action selection ---------------------------------------------------------


def _net(block_sizes=(3, 4), mixer="average", seed=0):
    return DecomposedQNet(4, block_sizes, hidden=(8,), mixer=mixer,
                          rng=np.random.default_rng(seed))


def test_projected_exploration_always_tags_and_is_uniform_over_blocks():
    net = _net()
    rng = np.random.default_rng(42)
    counts = np.zeros(2)
    state = np.zeros(4)
    for _ in range(10_000):
        meta = select_action(net, state, epsilon=1.0, p=1.0, rng=rng, noop_actions=(1, 2))
        assert meta.block_tag is not None and meta.explored
        # untouched blocks sit at their no-op index
        other = 1 - meta.block_tag
        assert meta.action[other] == (1, 2)[other]
        counts[meta.block_tag] += 1
    sigma = np.sqrt(10_000 * 0.5 * 0.5)
    assert abs(counts[0] - 5_000) <= 3 * sigma


def test_full_random_exploration_never_tags():
    net = _net()
    rng = np.random.default_rng(7)
    for _ in range(500):
        meta = select_action(net, np.zeros(4), epsilon=1.0, p=0.0, rng=rng)
        assert meta.block_tag is None and meta.explored


def test_greedy_selection_is_per_head_argmax_for_average_mixer():
    net = _net(mixer="average", seed=3)
    rng = np.random.default_rng(1)
    state = rng.normal(size=4)
    meta = select_action(net, state, epsilon=0.0, p=0.5, rng=rng)
    z, _ = net.head_values(state[None])
    expected = tuple(int(s.argmax()) for s in net.block_slices(z))
    assert meta.action == expected and not meta.explored and meta.block_tag is None


# -- learned models and augmentation ------------------------------------------


def test_untrained_models_raise_state_errors():
    dyn = DynamicsModel(4, (3, 3), ((0, 2), (1, 3)), rng=np.random.default_rng(0))
    with pytest.raises(StateError):
        dyn.predict_dims(0, np.zeros((1, 4)), [0], np.random.default_rng(0))
    rew = RewardModel(4, 2, rng=np.random.default_rng(0))
    with pytest.raises(StateError):
        rew.predict(np.zeros((1, 4)), np.zeros((1, 2)), np.zeros((1, 4)))


def test_zero_delta_dynamics_reproduce_the_state():
    dyn = DynamicsModel(4, (3, 3), ((0, 2), (1, 3)), noise_variance=0.0,
                        rng=np.random.default_rng(0))
    for p in [p for net in dyn.nets for p in net.params()]:
        p[:] = 0.0
    dyn.train_steps = [1, 1]
    states = np.random.default_rng(1).normal(size=(6, 4))
    out = dyn.sample_projected_next(states, 0, np.array([1] * 6), (1, 1),
                                    np.random.default_rng(2))
    np.testing.assert_array_equal(out, states)


def test_dynamics_model_fits_point_mass_physics():
    # interior transitions are affine in (state, one-hot force), so the
    # all-linear delta network should drive the error to numerical noise
    env = PointMassEnv(bins=3, episode_len=50, seed=0)
    rng = np.random.default_rng(5)
    states = np.column_stack([
        rng.uniform(-0.2, 0.2, size=512), rng.uniform(-0.2, 0.2, size=512),
        rng.uniform(-0.5, 0.5, size=512), rng.uniform(-0.5, 0.5, size=512),
    ])
    actions = rng.integers(0, 3, size=512)
    from frl.envs.point_mass import point_mass_step
    next_states = np.stack([
        point_mass_step(s, (a, 1), 3)[0] for s, a in zip(states, actions)
    ])
    dyn = DynamicsModel(4, (3, 3), ((0, 2), (1, 3)), lr=5e-3, noise_variance=0.0,
                        rng=np.random.default_rng(0))
    loss = None
    for _ in range(1500):
        loss = dyn.train_step(0, states, actions, next_states)
    assert loss < 1e-8
    pred = dyn.predict_dims(0, states[:16], actions[:16], np.random.default_rng(0))
    np.testing.assert_allclose(pred, next_states[:16][:, [0, 2]], atol=1e-3)


def test_augmentation_matches_projected_transition_distribution():
    spec = two_switch_spec(reward="weighted")
    sampler = TabularModelSampler(spec, noop_actions=(0, 0), mode="projected")
    eye = np.eye(spec.n_states)
    s, a = 2, (1, 1)
    base = [TransitionRecord(eye[s], a, 0.0, eye[0])] * 10_000
    rng = np.random.default_rng(11)
    out = augment_batch(base, 0, sampler, sampler, (0, 0), rng)
    assert len(out) == len(base) and out[0].next_state.shape == base[0].next_state.shape
    counts = np.zeros(spec.n_states)
    for rec in out:
        assert rec.origin == "augmented" and rec.block_tag == 0
        assert rec.action == (1, 0)  # forced block kept, other padded to no-op
        counts[rec.next_state.argmax()] += 1
    tv = 0.5 * np.abs(counts / 10_000 - projected_transition(spec, 0, s, 1)).sum()
    assert tv <= 0.02
    # rewards come from the model's table at the synthesized successor
    for rec in out[:50]:
        assert rec.reward == spec.reward[s, rec.next_state.argmax()]


def test_padded_sampler_refreshes_terminal_flags():
    spec = treatment_spec()
    sampler = TabularModelSampler(spec, noop_actions=(0, 0))
    eye = np.eye(spec.n_states)
    # a state one severity step from the healthy terminal
    source = next(s for s in range(spec.n_states)
                  if spec.state_radix.decode(s)[0] == 1
                  and s not in spec.terminal_states)
    recs = [TransitionRecord(eye[source], (0, 0), 0.0, eye[source], done=False)] * 400
    out = augment_batch(recs, 0, sampler, sampler, (0, 0), np.random.default_rng(3))
    flags = {rec.next_state.argmax() in spec.terminal_states for rec in out}
    dones = {rec.done for rec in out}
    assert dones == flags or dones <= flags  # done mirrors terminal entry
    for rec in out:
        assert rec.done == (rec.next_state.argmax() in spec.terminal_states)


# -- online learner -----------------------------------------------------------


def _small_cfg(**kw):
    base = dict(hidden=(12,), batch_size=8, episodes=4, episode_len=15,
                learning_starts=1, eval_every=2, eval_episodes=1,
                target_update_every=10, seed=5)
    base.update(kw)
    return DqnConfig(**base)


def _flat_dqn_reference(env, cfg):
    """Independent single-head DQN sharing the learner's random streams."""
    net_ss, act_ss, batch_ss, _, _ = np.random.SeedSequence(cfg.seed).spawn(5)
    act_rng = np.random.default_rng(act_ss)
    batch_rng = np.random.default_rng(batch_ss)
    n_actions = env.block_sizes[0]
    qnet = Mlp((env.state_dim, *cfg.hidden, n_actions), rng=np.random.default_rng(net_ss))
    tnet = Mlp((env.state_dim, *cfg.hidden, n_actions), rng=np.random.default_rng(123))
    target_update(qnet.params(), tnet.params())
    opt = Optimizer(qnet.params(), kind="adam", lr=cfg.lr)
    buf: list[tuple] = []
    step = 0
    for ep in range(cfg.episodes):
        s = env.reset()
        done = False
        while not done:
            eps = cfg.epsilon_at(step)
            if act_rng.random() < eps:
                if act_rng.random() < cfg.noop_fraction:
                    act_rng.integers(1)  # block choice (always 0)
                    a = int(act_rng.integers(n_actions))
                else:
                    a = int(act_rng.integers(n_actions))
            else:
                a = int(qnet.forward(np.asarray(s)[None]).argmax())
            s2, r, done = env.step((a,))
            buf.append((s, a, r, s2))
            s = s2
            step += 1
            if ep < cfg.learning_starts or step % cfg.train_every:
                continue
            idx = batch_rng.integers(0, len(buf), size=cfg.batch_size)
            states = np.stack([buf[i][0] for i in idx])
            actions = np.array([buf[i][1] for i in idx])
            rewards = np.array([buf[i][2] for i in idx])
            nexts = np.stack([buf[i][3] for i in idx])
            targets = rewards + cfg.discount * (1.0 - 0.0) * tnet.forward(nexts).max(axis=1)
            z = qnet.forward(states)
            rows = np.arange(len(idx))
            _, dq = huber(z[rows, actions], targets)
            dz = np.zeros_like(z)
            dz[rows, actions] = dq
            grads, _ = qnet.backward(dz)
            opt.step(grads)
            if step % cfg.target_update_every == 0:
                target_update(qnet.params(), tnet.params(), cfg.target_tau)
    return qnet


def test_single_block_learner_is_bit_identical_to_flat_dqn():
    cfg = _small_cfg()
    env = FlattenedEnv(PointMassEnv(bins=3, episode_len=15, seed=9))
    res = ad_dqn_train(env, cfg)
    ref = _flat_dqn_reference(FlattenedEnv(PointMassEnv(bins=3, episode_len=15, seed=9)), cfg)
    got = res.net.trunks[0].params()
    want = ref.params()
    assert len(got) == len(want)
    for g, w in zip(got, want):
        np.testing.assert_array_equal(g, w)


def test_metrics_stream_is_bit_identical_across_runs():
    def run():
        env = PointMassEnv(bins=3, episode_len=15, seed=2)
        cfg = _small_cfg(mixer="linear", mixer_hidden=6, augmentation=True,
                         model_steps_per_episode=1, model_batch_size=8)
        return ad_dqn_train(env, cfg).metrics
    a, b = run(), run()
    assert json.dumps(a) == json.dumps(b)


def test_augmentation_requires_block_dims():
    env = copy.deepcopy(PointMassEnv(bins=3, episode_len=5, seed=0))
    del env.block_dims
    with pytest.raises(ConfigurationError):
        ad_dqn_train(env, _small_cfg(augmentation=True))


def test_presets_cover_the_configuration_grid():
    decqn = online_preset("DECQN")
    assert (decqn.mixer, decqn.shared_trunk, decqn.augmentation) == ("average", True, False)
    four = online_preset("AD-DQN-4", model_free_switch_value=12.0)
    assert four.mixer == "linear" and four.augmentation and four.model_free_switch_value == 12.0
    assert not online_preset("AD-DQN-3n").shared_trunk
    with pytest.raises(ConfigurationError):
        online_preset("AD-DQN-9z")
    assert offline_preset("BCQ").variant == "flat"
    assert offline_preset("AD-BCQ", tau_bcq=0.3).augmentation


# -- offline learner ----------------------------------------------------------


def test_filter_monotone_and_vacuous_at_zero():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(40, 6))
    logp = log_softmax(rng.normal(size=(40, 6)))
    assert filtered_argmax(q, logp, 0.0)[0].tolist() == q.argmax(axis=1).tolist()
    probs = np.exp(logp)
    ratio = probs / probs.max(axis=1, keepdims=True)
    taus = [0.0, 0.05, 0.3, 0.7, 0.9999]
    for lo, hi in zip(taus, taus[1:]):
        assert ((ratio >= hi) <= (ratio >= lo)).all()  # candidate sets shrink
    # at the top of the grid only near-modal actions survive
    choice, fallbacks = filtered_argmax(q, logp, 0.9999)
    assert fallbacks == 0
    assert (ratio[np.arange(40), choice] >= 0.9999).all()


def _offline_setup(episodes=80, seed=0):
    spec = treatment_spec()
    behavior = np.full((spec.n_states, spec.n_actions), 1.0 / spec.n_actions)
    logs = generate_offline_dataset(spec, behavior, episodes=episodes, seed=seed)
    return spec, logs


def test_episode_expansion_marks_terminals_and_splits_actions():
    spec, logs = _offline_setup(episodes=30)
    records, samples = episodes_to_transitions(logs, spec, flat=False)
    assert len(records) == sum(len(ep) for ep in logs)
    for rec, sample in zip(records, samples):
        assert rec.state.argmax() == sample.state
        assert rec.action == spec.action_as_blocks(sample.action)
        assert rec.done == (sample.next_state in spec.terminal_states)
    assert any(r.done for r in records)  # some episodes do terminate
    flat_records, _ = episodes_to_transitions(logs, spec, flat=True)
    assert all(len(r.action) == 1 for r in flat_records)


def test_bcq_never_selects_an_unsupported_action():
    spec, logs = _offline_setup(episodes=20, seed=3)
    # strike one joint action from the dataset entirely
    banned = 7
    kept = []
    for ep in logs:
        keep = ep.actions != banned
        if not keep.all():
            first_bad = int(np.flatnonzero(~keep)[0])
            if first_bad == 0:
                continue
            kept.append(type(ep)(ep.states[:first_bad], ep.actions[:first_bad],
                                  ep.rewards[:first_bad], ep.propensities[:first_bad],
                                  final_state=int(ep.states[first_bad])))
        else:
            kept.append(ep)
    assert kept and all((ep.actions != banned).all() for ep in kept)
    cfg = BcqConfig(variant="flat", tau_bcq=0.3, hidden=48, batch_size=32,
                    train_steps=400, checkpoint_every=400, seed=1)
    res = ad_bcq_train(kept, cfg, spec)
    policy = np.asarray(res.checkpoints[-1]["policy"])
    seen_states = sorted({int(s) for ep in kept for s in ep.states})
    assert (policy[seen_states] != banned).all()


def test_bcq_runs_are_deterministic_given_seed():
    spec, logs = _offline_setup(episodes=25, seed=5)
    cfg = BcqConfig(variant="decomposed", tau_bcq=0.1, hidden=24, batch_size=16,
                    train_steps=60, checkpoint_every=30, seed=9)
    a = ad_bcq_train(logs, cfg, spec)
    b = ad_bcq_train(logs, cfg, spec)
    assert a.checkpoints == b.checkpoints
    assert json.dumps(a.metrics) == json.dumps(b.metrics)


def test_flat_variant_rejects_augmentation():
    spec, logs = _offline_setup(episodes=10)
    with pytest.raises(ConfigurationError):
        ad_bcq_train(logs, BcqConfig(variant="flat", augmentation=True, train_steps=5), spec)


def test_checkpoint_candidates_feed_model_selection():
    spec, logs = _offline_setup(episodes=40, seed=2)
    cfg = BcqConfig(variant="factored", tau_bcq=0.0, hidden=24, batch_size=16,
                    train_steps=40, checkpoint_every=20, seed=0)
    res = ad_bcq_train(logs, cfg, spec)
    cands = checkpoint_candidates(res.checkpoints, logs, spec.n_actions)
    assert [cid for cid, _ in cands] == [(0.0, 20), (0.0, 40)]
    for _, ope in cands:
        assert np.isfinite(ope.wis) and 0 < ope.ess <= len(logs)


def test_extreme_threshold_clones_the_behavior_mode():
    # tau at the top of the grid restricts candidates to near-modal
    # propensity, so at well-visited states the extracted policy must
    # reproduce the behavior policy's most likely action
    spec = treatment_spec()
    behavior = np.full((spec.n_states, spec.n_actions), 0.3 / (spec.n_actions - 1))
    modes = np.arange(spec.n_states) % spec.n_actions
    behavior[np.arange(spec.n_states), modes] = 0.7
    logs = generate_offline_dataset(spec, behavior, episodes=80, seed=8)
    cfg = BcqConfig(variant="flat", tau_bcq=0.9999, hidden=48, batch_size=32,
                    train_steps=600, checkpoint_every=600, seed=4)
    res = ad_bcq_train(logs, cfg, spec)
    policy = np.asarray(res.checkpoints[-1]["policy"])
    visits = np.bincount(
        np.concatenate([ep.states for ep in logs]), minlength=spec.n_states
    )
    well_seen = np.flatnonzero(visits >= 6)
    assert len(well_seen) >= 10
    assert (policy[well_seen] == modes[well_seen]).mean() > 0.8
