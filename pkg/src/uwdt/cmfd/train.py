"""Centralised hybrid training: learners for the discrete (mixing) and
continuous (centralised critic) branches, the training loop with target
copies at fixed intervals, and the alternation of real and twin epochs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..sim.rng import aux_rng
from .agents import EnvReplica, JointTransition, Origin, Transition, Unpatchable, act_continuous, act_discrete, aggregate_joint, \
    lost, patch_joint
from .buffer import Episode, ReplayBuffer, to_batch
from .env import CollectionEnv, CurrentEstimator
from .losses import agent_inputs, maddpg_policy_gradient, maddpg_value_loss, qmix_loss
from .nets import Adam, Critic, Drqn, Mixer, Policy, copy_params, params_hash


class BranchMismatch(TypeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 16
    gamma: float = 0.95
    lr: float = 1e-3
    actor_lr: float = 1e-3
    hidden: int = 16
    embed: int = 8
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal: int = 500
    target_interval: int = 50
    policy_target_interval: int = 50
    value_target_interval: int = 50
    train_every: int = 1
    buffer_capacity: int = 1000
    sigma: float = 0.2

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch size must be >= 1")
        for name in ("target_interval", "policy_target_interval", "value_target_interval", "train_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")

    def epsilon(self, episode: int) -> float:
        f = min(episode / max(self.eps_anneal, 1), 1.0)
        return self.eps_start + f * (self.eps_end - self.eps_start)


class QmixLearner:
    kind = "discrete"

    def __init__(self, obs_dim: int, n_agents: int, n_actions: int, state_dim: int, cfg: TrainConfig, seed: int = 0):
        rng = aux_rng(seed, 41)
        self.cfg = cfg
        self.n = n_agents
        self.drqn = Drqn(obs_dim + n_agents, cfg.hidden, n_actions, rng)
        self.mixer = Mixer(n_agents, state_dim, cfg.embed, rng)
        self.target_drqn = copy_params(self.drqn.params)
        self.target_mixer = copy_params(self.mixer.params)
        self.opt = Adam(cfg.lr)
        self.steps = 0
        self.copies: list[int] = []
        self.trace: list[tuple[int, str]] = [(0, self.target_hash())]

    def target_hash(self) -> str:
        return params_hash({**{"q." + k: v for k, v in self.target_drqn.items()},
                            **{"m." + k: v for k, v in self.target_mixer.items()}})

    def train_step(self, buffer: ReplayBuffer, rng: np.random.Generator) -> float:
        batch = to_batch(buffer.sample(self.cfg.batch, rng))
        loss, gq, gm = qmix_loss(batch, self.drqn, self.mixer, self.target_drqn, self.target_mixer, self.cfg.gamma)
        params = {**{"q." + k: v for k, v in self.drqn.params.items()},
                  **{"m." + k: v for k, v in self.mixer.params.items()}}
        grads = {**{"q." + k: v for k, v in gq.items()}, **{"m." + k: v for k, v in gm.items()}}
        self.opt.step(params, grads)
        self.steps += 1
        if self.steps % self.cfg.target_interval == 0:
            self.target_drqn = copy_params(self.drqn.params)
            self.target_mixer = copy_params(self.mixer.params)
            self.copies.append(self.steps)
        self.trace.append((self.steps, self.target_hash()))
        return loss

    def inputs(self, obs: np.ndarray) -> np.ndarray:
        return agent_inputs(obs[None, None])[0]

    def models(self) -> dict[str, dict]:
        return {"drqn": self.drqn.params, "mixer": self.mixer.params}


class MaddpgLearner:
    kind = "continuous"

    def __init__(self, obs_dim: int, n_agents: int, low, high, cfg: TrainConfig, seed: int = 0):
        rng = aux_rng(seed, 42)
        self.cfg = cfg
        self.n = n_agents
        k = len(low)
        self.policies = [Policy(obs_dim, cfg.hidden, low, high, rng) for _ in range(n_agents)]
        self.critics = [Critic(obs_dim * n_agents, k * n_agents, cfg.hidden, rng) for _ in range(n_agents)]
        self.target_policies = [copy_params(p.params) for p in self.policies]
        self.target_critics = [copy_params(c.params) for c in self.critics]
        self.popt = [Adam(cfg.actor_lr) for _ in range(n_agents)]
        self.copt = [Adam(cfg.lr) for _ in range(n_agents)]
        self.value_steps = 0
        self.policy_steps = 0
        self.trace: list[tuple[int, str, str]] = [(0, self.policy_hash(), self.value_hash())]

    def policy_hash(self) -> str:
        return params_hash({f"{i}.{k}": v for i, p in enumerate(self.target_policies) for k, v in p.items()})

    def value_hash(self) -> str:
        return params_hash({f"{i}.{k}": v for i, p in enumerate(self.target_critics) for k, v in p.items()})

    def train_step(self, buffer: ReplayBuffer, rng: np.random.Generator) -> float:
        batch = buffer.sample_steps(self.cfg.batch, rng)
        tp = list(zip(self.policies, self.target_policies))
        total = 0.0
        for i in range(self.n):
            loss, g = maddpg_value_loss(batch, self.critics[i], self.target_critics[i], tp, self.cfg.gamma)
            self.copt[i].step(self.critics[i].params, g)
            total += loss
        self.value_steps += 1
        for i in range(self.n):
            _, g = maddpg_policy_gradient(batch, i, self.policies[i], self.critics[i])
            self.popt[i].step(self.policies[i].params, g, ascent=True)
        self.policy_steps += 1
        if self.value_steps % self.cfg.value_target_interval == 0:
            self.target_critics = [copy_params(c.params) for c in self.critics]
        if self.policy_steps % self.cfg.policy_target_interval == 0:
            self.target_policies = [copy_params(p.params) for p in self.policies]
        self.trace.append((self.value_steps, self.policy_hash(), self.value_hash()))
        return total / self.n

    def models(self) -> dict[str, dict]:
        out = {}
        for i in range(self.n):
            out[f"policy{i}"] = self.policies[i].params
            out[f"critic{i}"] = self.critics[i].params
        return out


def train(learner, buffer: ReplayBuffer, steps: int, rng: np.random.Generator) -> list[float]:
    """Sample hybrid batches and update; target copies happen inside the learner
    at their configured intervals."""
    if not len(buffer):
        raise ValueError("buffer is empty")
    if buffer.kind != learner.kind:
        raise BranchMismatch(f"{learner.kind} learner cannot train on {buffer.kind} episodes")
    return [learner.train_step(buffer, rng) for _ in range(steps)]


# -- rollouts -----------------------------------------------------------------------------------------

@dataclass
class EpisodeLog:
    index: int
    origin: Origin
    collection_rate: float
    ret: float
    loss: float
    patched: int = 0
    unpatchable: int = 0


def _policy_actions(learner, env: CollectionEnv, s, hidden, eps, rng):
    obs = np.stack([env.observe(s, i) for i in range(env.n)])
    if learner.kind == "discrete":
        a, hidden = act_discrete(learner.drqn, learner.inputs(obs), hidden, eps, rng)
        return obs, a, hidden
    a = np.stack([act_continuous(learner.policies[i], obs[i], eps * learner.cfg.sigma / max(learner.cfg.eps_start, 1e-9),
                                 rng) for i in range(env.n)])
    return obs, a, hidden


def rollout(env: CollectionEnv, learner, eps: float, rng: np.random.Generator, env_rng: np.random.Generator,
            origin: Origin, replica: EnvReplica | None = None, upload_loss: float = 0.0,
            loss_rng: np.random.Generator | None = None, estimator: CurrentEstimator | None = None):
    """One episode.  Real episodes go through upload (possibly lossy),
    aggregation and patching; twin episodes are recorded directly."""
    s = env.reset()
    hidden = np.zeros((env.n, getattr(learner.cfg, "hidden", 1)))
    steps, ret = [], 0.0
    uploads: list[list[Transition]] = []
    dones = []
    while True:
        obs, a, hidden = _policy_actions(learner, env, s, hidden, eps, rng)
        s2, r, done, info = env.step(a, env_rng)
        ret += r
        if env.continuous and estimator is not None and origin is Origin.REAL:
            pushed = dict(info.drift)
            for i in range(env.n):
                cell = tuple(int(round(c)) for c in info.intended[i])
                estimator.observe(cell, pushed.get(cell, (0, 0)))
        nobs = np.stack([env.observe(s2, i) for i in range(env.n)])
        trs = []
        for i in range(env.n):
            if origin is Origin.REAL and upload_loss > 0 and loss_rng.random() < upload_loss:
                trs.append(lost(i, s.t))
                continue
            trs.append(Transition(i, s.t, obs[i], a[i], nobs[i]))
        if replica is not None:
            for tr in trs:
                replica.ingest(tr)
        uploads.append(trs)
        dones.append(done)
        if origin is Origin.DT or replica is None:
            steps.append(JointTransition(s.t, obs, np.asarray(a), r, nobs, env.state_vector(s), env.state_vector(s2),
                                         done, origin))
        s = s2
        if done:
            break
    patched = unpatchable = 0
    if replica is not None and origin is Origin.REAL:
        for t, trs in enumerate(uploads):
            joint = aggregate_joint(trs, t, env.n, replica, origin, dones[t])
            was_impaired = not joint.intact
            try:
                joint = patch_joint(joint, replica)
            except Unpatchable:
                unpatchable += 1
                break
            patched += int(was_impaired)
            steps.append(joint)
        replica.learn_currents()
    return steps, ret, env.collection_rate(), patched, unpatchable


def evaluate(env: CollectionEnv, learner, episodes: int, seed: int) -> float:
    """Mean greedy collection rate on fresh current draws."""
    rates = []
    for k in range(episodes):
        _, _, rate, _, _ = rollout(env, learner, 0.0, aux_rng(seed, 51, k), aux_rng(seed, 52, k), Origin.DT)
        rates.append(rate)
    return float(np.mean(rates)) if rates else 0.0


@dataclass
class HybridRun:
    learner: object
    buffer: ReplayBuffer
    log: list[EpisodeLog] = field(default_factory=list)
    estimator: CurrentEstimator = field(default_factory=CurrentEstimator)
    deferred: int = 0

    @property
    def real_episodes(self) -> int:
        return sum(1 for e in self.log if e.origin is Origin.REAL)

    @property
    def dt_episodes(self) -> int:
        return sum(1 for e in self.log if e.origin is Origin.DT)


def hybrid_epochs(env: CollectionEnv, schedule: list[tuple[str, int]], cfg: TrainConfig, seed: int = 0,
                  upload_loss: float = 0.0, learner=None, train_steps: int = 1) -> HybridRun:
    """Run ``schedule`` (a list of ("real"|"dt", episodes) epochs).  Real epochs
    roll out in ``env`` and feed the twin's current estimate; twin epochs roll
    out in a replica built from that estimate.  A twin epoch asked for before
    any real data exists is deferred until after the next real epoch."""
    learner = learner or QmixLearner(env.obs_dim, env.n, env.n_actions, env.state_dim, cfg, seed)
    run = HybridRun(learner, ReplayBuffer(cfg.buffer_capacity))
    act_rng, env_rng, loss_rng, train_rng = (aux_rng(seed, 60, k) for k in range(4))
    queue = list(schedule)
    k = 0
    while queue:
        kind, count = queue.pop(0)
        if kind not in ("real", "dt"):
            raise ValueError(f"unknown epoch kind {kind!r}")
        if kind == "dt" and run.estimator.observations == 0:
            run.deferred += count
            nxt = next((i for i, (kk, _) in enumerate(queue) if kk == "real"), None)
            if nxt is not None:
                queue.insert(nxt + 1, (kind, count))
            continue
        for _ in range(count):
            eps = cfg.epsilon(k)
            if kind == "real":
                replica = None if env.continuous else EnvReplica(env, run.estimator)
                steps, ret, rate, patched, unp = rollout(env, learner, eps, act_rng, env_rng, Origin.REAL, replica,
                                                        upload_loss, loss_rng, run.estimator)
                origin = Origin.REAL
            else:
                twin = env.with_currents(run.estimator.estimate())
                steps, ret, rate, patched, unp = rollout(twin, learner, eps, act_rng, env_rng, Origin.DT)
                origin = Origin.DT
            if steps:
                run.buffer.add(Episode.from_joint(steps))
            loss = float("nan")
            if len(run.buffer) >= min(cfg.batch, 4) and (k + 1) % cfg.train_every == 0:
                losses = train(learner, run.buffer, train_steps, train_rng)
                loss = losses[-1]
            run.log.append(EpisodeLog(k, origin, rate, ret, loss, patched, unp))
            k += 1
    return run
