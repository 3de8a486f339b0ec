import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from uwdt.cmfd.agents import (EnvReplica, JointTransition, Origin, Transition, Unpatchable, act_continuous, act_discrete,
                              aggregate_joint, lost, mix, patch_joint)
from uwdt.cmfd.buffer import Episode, ReplayBuffer, to_batch
from uwdt.cmfd.env import CollectionEnv, Current, value_iteration, zero_auv_rate
from uwdt.cmfd.losses import (EpisodeBatch, StepBatch, agent_inputs, ascend, maddpg_policy_gradient,
                              maddpg_value_loss, policy_objective, qmix_loss)
from uwdt.cmfd.nets import Critic, Drqn, Mixer, Policy, copy_params, params_hash
from uwdt.cmfd.serialize import load, pack, save, unpack
from uwdt.cmfd.train import BranchMismatch, MaddpgLearner, QmixLearner, TrainConfig, hybrid_epochs, train

from .helpers import grad_check

# -- action selection -------------------------------------------------------------------------------


def drqn_batch(n=10_000, d=5, A=4, seed=0):
    rng = np.random.default_rng(seed)
    model = Drqn(d, 6, A, rng)
    x = np.tile(rng.normal(size=d), (n, 1))
    return model, x, model.init_hidden(n)


def test_full_exploration_is_uniform():
    model, x, h = drqn_batch()
    a, _ = act_discrete(model, x, h, 1.0, np.random.default_rng(1))
    counts = np.bincount(a, minlength=4)
    assert stats.chisquare(counts).pvalue > 0.001


def test_greedy_is_repeatable_and_advances_hidden():
    model, x, h = drqn_batch(n=1)
    a1, h1 = act_discrete(model, x[0], h[0], 0.0, np.random.default_rng(1))
    a2, h2 = act_discrete(model, x[0], h[0], 0.0, np.random.default_rng(99))
    assert a1 == a2 and np.array_equal(h1, h2)
    assert not np.array_equal(h1, h[0])
    with pytest.raises(ValueError):
        act_discrete(model, x[0], h[0], 1.5, np.random.default_rng(0))


def test_ten_percent_exploration_binomial():
    model, x, h = drqn_batch()
    greedy, _ = act_discrete(model, x, h, 0.0, np.random.default_rng(0))
    a, _ = act_discrete(model, x, h, 0.1, np.random.default_rng(2))
    differ = int((a != greedy).sum())
    # a random pick matches the greedy one a quarter of the time
    assert stats.binomtest(differ, len(a), 0.1 * 3 / 4).pvalue > 0.001


def test_continuous_noise_free_and_clipped():
    rng = np.random.default_rng(0)
    pol = Policy(5, 6, [-1.0, -2.0], [1.0, 0.5], rng)
    x = rng.normal(size=(10_000, 5))
    mu, _ = pol.forward(x)
    assert np.array_equal(act_continuous(pol, x, 0.0), mu)
    noisy = act_continuous(pol, x, 3.0, rng)
    assert (noisy >= pol.low).all() and (noisy <= pol.high).all()
    assert (noisy == pol.low).any() and (noisy == pol.high).any()
    with pytest.raises(ValueError):
        act_continuous(pol, x, -0.1, rng)


def test_zero_weight_policy_outputs_box_centre():
    pol = Policy(3, 4, [-1.0, 0.0], [3.0, 1.0], np.random.default_rng(0))
    pol.params = {k: np.zeros_like(v) for k, v in pol.params.items()}
    assert np.allclose(act_continuous(pol, np.ones(3), 0.0), [1.0, 0.5])


# -- aggregation and patching -----------------------------------------------------------------------

def small_env(**kw):
    return CollectionEnv(n_auvs=2, n_sns=4, grid=4, horizon=6, seed=3, **kw)


def test_two_intact_uploads_give_arity_two_record():
    d = 5
    trs = [Transition(i, 0, np.full(d, i), i, np.full(d, i + 1.0)) for i in (1, 0)]
    j = aggregate_joint(trs, 0, 2, None, reward=1.5)
    assert j.obs.shape == (2, d) and j.action.tolist() == [0, 1] and j.intact
    assert j.obs[1, 0] == 1 and j.reward == 1.5


def test_permuted_uploads_give_identical_record():
    rng = np.random.default_rng(0)
    trs = [Transition(i, 4, rng.normal(size=3), i, rng.normal(size=3)) for i in range(3)]
    a = aggregate_joint(trs, 4, 3, None, reward=0.0)
    b = aggregate_joint(trs[::-1], 4, 3, None, reward=0.0)
    assert np.array_equal(a.obs, b.obs) and np.array_equal(a.next_obs, b.next_obs)
    assert np.array_equal(a.action, b.action)


def test_lost_upload_flagged_and_step_mismatch_rejected():
    trs = [Transition(0, 2, np.zeros(3), 1, np.ones(3))]
    j = aggregate_joint(trs, 2, 2, None, reward=0.0)
    assert not j.intact and j.impaired[1] == {"obs", "action", "next_obs"}
    with pytest.raises(ValueError):
        aggregate_joint(trs, 3, 2, None)


def closed_loop(env, steps=4, seed=0):
    """Ground-truth rollout with random target choices."""
    rng = np.random.default_rng(seed)
    s = env.reset()
    out = []
    for _ in range(steps):
        a = rng.integers(env.n_actions, size=env.n)
        s2, r, done, _ = env.step(a, rng)
        out.append((s, a, r, s2))
        s = s2
        if done:
            break
    return out


def test_intact_record_is_patched_to_itself():
    env = small_env()
    rep = EnvReplica(env)
    s, a, r, s2 = closed_loop(env, 1)[0]
    trs = [Transition(i, 0, env.observe(s, i), a[i], env.observe(s2, i)) for i in range(2)]
    for tr in trs:
        rep.ingest(tr)
    j = aggregate_joint(trs, 0, 2, rep)
    assert j.reward == pytest.approx(r)
    assert patch_joint(j, rep) is j


def test_patched_fields_equal_ground_truth():
    env = small_env()
    rep = EnvReplica(env)
    truth = closed_loop(env, 4)
    joints = []
    for s, a, r, s2 in truth:
        # agent 1's upload is lost every step; agent 0's broadcasts carry everyone's state
        trs = [Transition(0, s.t, env.observe(s, 0), a[0], env.observe(s2, 0)), lost(1, s.t)]
        for tr in trs:
            rep.ingest(tr)
        joints.append(aggregate_joint(trs, s.t, 2, rep))
    for (s, a, r, s2), j in zip(truth, joints):
        p = patch_joint(j, rep)
        assert p.intact
        assert np.array_equal(p.obs[1], env.observe(s, 1))
        assert np.array_equal(p.next_obs[1], env.observe(s2, 1))
        assert np.array_equal(p.obs[0], j.obs[0])
        assert p.action.tolist() == a.tolist()
        assert p.reward == pytest.approx(r)


def test_missing_replica_state_is_unpatchable():
    env = small_env()
    rep = EnvReplica(env)
    j = aggregate_joint([lost(0, 0), lost(1, 0)], 0, 2, rep)
    with pytest.raises(Unpatchable):
        patch_joint(j, rep)


# -- mixer ------------------------------------------------------------------------------------------

def test_mixer_monotone_on_random_probes():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        S = int(rng.integers(1, 6))
        m = Mixer(n, S, 4, rng)
        s = rng.normal(size=(1, S)) * 2
        q = rng.normal(size=(1, n)) * 3
        i, delta = int(rng.integers(n)), float(rng.exponential(1.0))
        q2 = q.copy()
        q2[0, i] += delta
        assert mix(q2, s, m)[0] >= mix(q, s, m)[0]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.floats(1e-6, 50.0))
def test_mixer_weights_nonnegative_and_monotone(seed, n, delta):
    rng = np.random.default_rng(seed)
    m = Mixer(n, 3, 5, rng)
    s = rng.normal(size=(4, 3)) * 5
    w1, w2 = m.weights(s)
    assert (w1 >= 0).all() and (w2 >= 0).all()
    q = rng.normal(size=(4, n)) * 10
    i = int(rng.integers(n))
    q2 = q.copy()
    q2[:, i] += delta
    assert (mix(q2, s, m) >= mix(q, s, m)).all()


@pytest.mark.parametrize("n,A", [(n, A) for n in (2, 3) for A in (2, 3, 4)])
def test_joint_argmax_factorises(n, A):
    rng = np.random.default_rng(10 * n + A)
    for _ in range(20):
        m = Mixer(n, 4, 6, rng)
        s = rng.normal(size=(1, 4))
        Q = rng.normal(size=(n, A))
        joint = list(itertools.product(range(A), repeat=n))
        qs = np.array([[Q[i, a[i]] for i in range(n)] for a in joint])
        tot = mix(qs, np.repeat(s, len(joint), 0), m)
        assert joint[int(tot.argmax())] == tuple(Q.argmax(axis=1))


def test_single_agent_identity_mixer_is_monotone_transform():
    m = Mixer(1, 2, 1, np.random.default_rng(0))
    for k in m.params:
        m.params[k][:] = 0.0
    m.params["hw1"][:] = 1.0
    m.params["hw2"][:] = 1.0
    q = np.linspace(-3, 3, 13)[:, None]
    out = mix(q, np.zeros((13, 2)), m)
    assert np.all(np.diff(out) > 0)
    assert np.allclose(out[q[:, 0] >= 0], q[q[:, 0] >= 0, 0])


# -- losses -----------------------------------------------------------------------------------------

T, B, N, D, A, S = 4, 3, 2, 5, 3, 6


def qmix_setup(seed=3):
    rng = np.random.default_rng(seed)
    drqn, mixer = Drqn(D + N, 4, A, rng), Mixer(N, S, 4, rng)
    tq = {k: v + rng.normal(0, 0.1, v.shape) for k, v in drqn.params.items()}
    tm = {k: v + rng.normal(0, 0.1, v.shape) for k, v in mixer.params.items()}
    batch = EpisodeBatch(rng.normal(size=(T + 1, B, N, D)), rng.normal(size=(T + 1, B, S)),
                         rng.integers(A, size=(T, B, N)), rng.normal(size=(T, B)),
                         (rng.random((T, B)) < 0.2).astype(float), np.ones((T, B)))
    batch.mask[-1, 0] = 0
    return rng, drqn, mixer, tq, tm, batch


def test_qmix_gradients_match_finite_differences():
    rng, drqn, mixer, tq, tm, b = qmix_setup()
    _, gq, gm = qmix_loss(b, drqn, mixer, tq, tm, 0.9)

    def f():
        return qmix_loss(b, drqn, mixer, tq, tm, 0.9)[0]

    assert grad_check(f, drqn.params, gq, rng) < 1e-4
    assert grad_check(f, mixer.params, gm, rng) < 1e-4


def test_qmix_loss_zero_when_reward_equals_qtot():
    _, drqn, mixer, tq, tm, b = qmix_setup()
    Q, _ = drqn.forward(agent_inputs(b.obs))
    chosen = np.take_along_axis(Q.reshape(T + 1, B, N, A)[:T], b.actions[..., None], -1)[..., 0]
    b.reward = mix(chosen.reshape(T * B, N), b.state[:T].reshape(T * B, S), mixer).reshape(T, B)
    assert qmix_loss(b, drqn, mixer, tq, tm, 0.0)[0] == pytest.approx(0.0, abs=1e-20)


def test_qmix_step_descends_and_leaves_target_alone():
    _, drqn, mixer, tq, tm, b = qmix_setup()
    before = params_hash(tq), params_hash(tm)
    l0, gq, gm = qmix_loss(b, drqn, mixer, tq, tm, 0.9)
    ascend(drqn.params, gq, -1e-3)
    ascend(mixer.params, gm, -1e-3)
    assert qmix_loss(b, drqn, mixer, tq, tm, 0.9)[0] < l0
    assert (params_hash(tq), params_hash(tm)) == before


def maddpg_setup(seed=3, k=2):
    rng = np.random.default_rng(seed)
    pols = [Policy(D, 4, -np.ones(k), np.ones(k), rng) for _ in range(N)]
    for p in pols:
        for v in p.params.values():
            v += rng.normal(0, 0.3, v.shape)
    crit = Critic(N * D, N * k, 4, rng)
    sb = StepBatch(rng.normal(size=(B, N, D)), rng.uniform(-1, 1, (B, N, k)), rng.normal(size=B),
                   rng.normal(size=(B, N, D)), np.zeros(B))
    tc = {kk: v + rng.normal(0, 0.1, v.shape) for kk, v in crit.params.items()}
    tp = [(p, {kk: v + rng.normal(0, 0.1, v.shape) for kk, v in p.params.items()}) for p in pols]
    return rng, pols, crit, sb, tc, tp


def test_critic_gradients_match_finite_differences():
    rng, pols, crit, sb, tc, tp = maddpg_setup()
    _, g = maddpg_value_loss(sb, crit, tc, tp, 0.9)
    assert grad_check(lambda: maddpg_value_loss(sb, crit, tc, tp, 0.9)[0], crit.params, g, rng) < 1e-4


def test_policy_gradient_matches_finite_differences():
    rng, pols, crit, sb, tc, tp = maddpg_setup()
    _, g = maddpg_policy_gradient(sb, 1, pols[1], crit)
    assert grad_check(lambda: policy_objective(sb, 1, pols[1], crit)[0], pols[1].params, g, rng) < 1e-4


def test_critic_loss_zero_when_reward_equals_value():
    _, pols, crit, sb, tc, tp = maddpg_setup()
    sb.reward = crit.forward(sb.obs.reshape(B, -1), sb.actions.reshape(B, -1))[0]
    assert maddpg_value_loss(sb, crit, tc, tp, 0.0)[0] == pytest.approx(0.0, abs=1e-20)


def test_critic_descent_on_fixed_batch():
    _, pols, crit, sb, tc, tp = maddpg_setup()
    l0, g = maddpg_value_loss(sb, crit, tc, tp, 0.9)
    ascend(crit.params, g, -1e-3)
    assert maddpg_value_loss(sb, crit, tc, tp, 0.9)[0] < l0


def test_policy_ascent_raises_objective_and_zero_step_is_noop():
    _, pols, crit, sb, tc, tp = maddpg_setup()
    J0, g = maddpg_policy_gradient(sb, 0, pols[0], crit)
    frozen = params_hash(pols[0].params)
    ascend(pols[0].params, g, 0.0)
    assert params_hash(pols[0].params) == frozen
    ascend(pols[0].params, g, 1e-3)
    assert policy_objective(sb, 0, pols[0], crit)[0] > J0


def test_policy_ascent_moves_action_toward_bowl_peak():
    # a hand-built critic with value -(a - 0.3)^2 and the same interface
    class Bowl:
        def forward(self, obs, act):
            return -((act[:, 0] - 0.3) ** 2), act

        def backward(self, cache, dq):
            return None, None, (dq * -2 * (cache[:, 0] - 0.3))[:, None]

    rng = np.random.default_rng(0)
    pol = Policy(2, 4, [-1.0], [1.0], rng)
    sb = StepBatch(rng.normal(size=(8, 1, 2)), np.zeros((8, 1, 1)), np.zeros(8), np.zeros((8, 1, 2)), np.zeros(8))
    bowl = Bowl()
    gap0 = np.abs(pol.forward(sb.obs[:, 0])[0] - 0.3).mean()
    for _ in range(300):
        _, g = maddpg_policy_gradient(sb, 0, pol, bowl)
        ascend(pol.params, g, 0.05)
    assert np.abs(pol.forward(sb.obs[:, 0])[0] - 0.3).mean() < 0.1 * gap0


# -- training loop ----------------------------------------------------------------------------------

def filled_buffer(env, n_real=6, n_dt=6, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(100)
    for k in range(n_real + n_dt):
        s = env.reset()
        steps = []
        origin = Origin.REAL if k < n_real else Origin.DT
        while True:
            a = rng.integers(env.n_actions, size=env.n)
            obs = np.stack([env.observe(s, i) for i in range(env.n)])
            s2, r, done, _ = env.step(a, rng)
            steps.append(JointTransition(s.t, obs, a, r, np.stack([env.observe(s2, i) for i in range(env.n)]),
                                         env.state_vector(s), env.state_vector(s2), done, origin))
            s = s2
            if done:
                break
        buf.add(Episode.from_joint(steps))
    return buf


def test_unit_interval_keeps_target_equal_to_eval():
    env = small_env()
    buf = filled_buffer(env)
    ln = QmixLearner(env.obs_dim, env.n, env.n_actions, env.state_dim, TrainConfig(batch=4, target_interval=1))
    for _ in range(3):
        train(ln, buf, 1, np.random.default_rng(0))
        assert params_hash(ln.target_drqn) == params_hash(ln.drqn.params)
        assert params_hash(ln.target_mixer) == params_hash(ln.mixer.params)


def test_target_changes_only_at_interval_multiples():
    env = small_env()
    buf = filled_buffer(env)
    ln = QmixLearner(env.obs_dim, env.n, env.n_actions, env.state_dim, TrainConfig(batch=4, target_interval=3))
    train(ln, buf, 10, np.random.default_rng(0))
    changed = [step for (step, h), (_, prev) in zip(ln.trace[1:], ln.trace) if h != prev]
    assert changed == [3, 6, 9] == ln.copies


def test_continuous_targets_follow_their_own_intervals():
    env = small_env(continuous=True)
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(50)
    for _ in range(5):
        s = env.reset()
        steps = []
        while True:
            a = rng.uniform(-1, 1, (env.n, 2))
            obs = np.stack([env.observe(s, i) for i in range(env.n)])
            s2, r, done, _ = env.step(a, rng)
            steps.append(JointTransition(s.t, obs, a, r, np.stack([env.observe(s2, i) for i in range(env.n)]),
                                         env.state_vector(s), env.state_vector(s2), done, Origin.REAL))
            s = s2
            if done:
                break
        buf.add(Episode.from_joint(steps))
    lo, hi = env.action_box
    cfg = TrainConfig(batch=4, policy_target_interval=2, value_target_interval=3)
    ln = MaddpgLearner(env.obs_dim, env.n, lo, hi, cfg)
    train(ln, buf, 7, rng)
    pol = [s for (s, p, _), (_, pp, _) in zip(ln.trace[1:], ln.trace) if p != pp]
    val = [s for (s, _, v), (_, _, vv) in zip(ln.trace[1:], ln.trace) if v != vv]
    assert pol == [2, 4, 6] and val == [3, 6]
    with pytest.raises(BranchMismatch):
        train(QmixLearner(env.obs_dim, env.n, 4, env.state_dim, cfg), buf, 1, rng)


def test_sampling_ignores_origin():
    env = small_env()
    buf = filled_buffer(env, n_real=3, n_dt=9)
    rng = np.random.default_rng(5)
    picks = [e.origin for _ in range(2000) for e in buf.sample(1, rng)]
    observed = [picks.count(Origin.REAL), picks.count(Origin.DT)]
    assert stats.chisquare(observed, [500, 1500]).pvalue > 0.01
    batch = [e.origin for e in buf.sample(64, rng)]
    assert Origin.REAL in batch and Origin.DT in batch


def test_buffer_rules():
    env = small_env()
    buf = filled_buffer(env, 2, 0)
    with pytest.raises(ValueError):
        ReplayBuffer(0)
    cont = filled_buffer(env, 1, 0)
    ep = cont.episodes[0]
    with pytest.raises(ValueError):
        buf.add(Episode(ep.obs, ep.state, np.zeros((ep.length, 2, 2)), ep.reward, ep.done, Origin.DT))
    b = to_batch(list(buf.episodes))
    assert b.mask.sum() == sum(e.length for e in buf.episodes)
    with pytest.raises(ValueError):
        TrainConfig(batch=0)
    with pytest.raises(ValueError):
        TrainConfig(target_interval=0)


def test_zero_twin_epochs_is_pure_real_training():
    env = small_env()
    run = hybrid_epochs(env, [("real", 6)], TrainConfig(batch=4))
    assert run.dt_episodes == 0 and run.real_episodes == 6
    assert run.buffer.origin_counts()[Origin.DT] == 0


def test_twin_epoch_before_any_real_data_is_deferred():
    env = small_env()
    run = hybrid_epochs(env, [("dt", 3), ("real", 2)], TrainConfig(batch=4))
    assert run.deferred == 3
    assert [e.origin for e in run.log] == [Origin.REAL] * 2 + [Origin.DT] * 3


def test_lossy_uploads_are_patched_during_real_epochs():
    env = small_env()
    run = hybrid_epochs(env, [("real", 5)], TrainConfig(batch=4), upload_loss=0.3)
    assert sum(e.patched for e in run.log) > 0
    for ep in run.buffer.episodes:
        assert np.isfinite(ep.reward).all()


# -- environment ------------------------------------------------------------------------------------

def test_zero_auvs_collect_nothing():
    env = CollectionEnv(n_auvs=0, n_sns=3, grid=4, horizon=5)
    env.reset()
    assert zero_auv_rate(env) == 0.0


def test_collection_rate_is_collected_fraction():
    env = small_env()
    for s, a, r, s2 in closed_loop(env, 6, seed=4):
        assert 0.0 <= env.collection_rate(s2) <= 1.0
        assert env.collection_rate(s2) == s2.collected.sum() / env.m


def brute_force(env):
    """Best return over every action sequence; deterministic dynamics only."""
    best = -np.inf
    for seq in itertools.product(range(env.m), repeat=env.horizon):
        s, total = env.reset(), 0.0
        for a in seq:
            s, r, done, _ = env.step([a], np.random.default_rng(0))
            total += r
            if done:
                break
        best = max(best, total)
    return best


def test_adjacent_sn_collected_in_one_slot():
    env = CollectionEnv(n_auvs=1, n_sns=1, grid=3, horizon=4, sn_positions=[(1, 0)], starts=[(0, 0)],
                        currents={})
    v, policy = value_iteration(env)
    assert v == pytest.approx(1 - env.energy_penalty)
    env.reset()
    s, r, done, _ = env.step([policy[(0, (0, 0), 0)]], np.random.default_rng(0))
    assert done and s.collected.all()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_value_iteration_matches_brute_force(seed):
    env = CollectionEnv(n_auvs=1, n_sns=3, grid=3, horizon=6, seed=seed, currents={})
    assert value_iteration(env)[0] == pytest.approx(brute_force(env))


def test_value_iteration_with_currents_matches_monte_carlo():
    env = CollectionEnv(n_auvs=1, n_sns=2, grid=3, horizon=5, seed=1,
                        currents={(1, 1): Current(1, 0, 0.5), (0, 1): Current(0, 1, 0.3)})
    v, policy = value_iteration(env)
    rng = np.random.default_rng(0)
    total = 0.0
    runs = 4000
    for _ in range(runs):
        s = env.reset()
        mask = lambda st: sum(1 << j for j in range(env.m) if st.collected[j])
        while True:
            a = policy[(s.t, tuple(s.pos[0].astype(int)), mask(s))]
            s, r, done, _ = env.step([a], rng)
            total += r
            if done:
                break
    assert total / runs == pytest.approx(v, abs=0.05)


# -- serialization ----------------------------------------------------------------------------------

def test_model_round_trip(tmp_path):
    env = small_env()
    ln = QmixLearner(env.obs_dim, env.n, env.n_actions, env.state_dim, TrainConfig())
    blob, manifest = pack(ln.models())
    back = unpack(blob, manifest)
    for m, tensors in ln.models().items():
        for k, v in tensors.items():
            assert np.array_equal(back[m][k], v.astype("<f4"))
    save(ln.models(), tmp_path / "m.bin")
    again = load(tmp_path / "m.bin")
    assert pack(again)[0] == blob
    with pytest.raises(ValueError):
        unpack(blob[:-4], manifest)
