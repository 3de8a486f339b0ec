"""Decentralised action selection and central assembly of joint transitions."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .env import CollectionEnv, CurrentEstimator, EnvState
from .nets import Drqn, Mixer, Policy


class Origin(str, Enum):
    REAL = "Real"
    DT = "DT"


class Unpatchable(LookupError):
    pass


def act_discrete(model: Drqn, x: np.ndarray, hidden: np.ndarray, eps: float, rng: np.random.Generator):
    """Epsilon-greedy over the DRQN's Q values; the hidden state always advances."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    q, h2, _ = model.step(np.atleast_2d(x), np.atleast_2d(hidden))
    greedy = q.argmax(axis=1)
    explore = rng.random(len(greedy)) < eps
    rand = rng.integers(model.n_actions, size=len(greedy))
    a = np.where(explore, rand, greedy)
    if np.ndim(x) == 1:
        return int(a[0]), h2[0]
    return a, h2


def act_continuous(policy: Policy, x: np.ndarray, sigma: float, rng: np.random.Generator | None = None):
    """clip(mu(x) + N(0, sigma), box)."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    a, _ = policy.forward(np.atleast_2d(x))
    if sigma > 0:
        a = a + rng.normal(0.0, sigma, size=a.shape)
    a = np.clip(a, policy.low, policy.high)
    return a[0] if np.ndim(x) == 1 else a


def mix(q: np.ndarray, s: np.ndarray, mixer: Mixer) -> np.ndarray:
    out, _ = mixer.forward(np.atleast_2d(q), np.atleast_2d(s))
    return out


# -- transitions -------------------------------------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    agent: int
    step: int
    obs: np.ndarray | None
    action: object
    next_obs: np.ndarray | None
    impaired: frozenset = frozenset()


@dataclass
class JointTransition:
    step: int
    obs: np.ndarray            # (n, d)
    action: np.ndarray         # (n,) or (n, k)
    reward: float
    next_obs: np.ndarray
    state: np.ndarray
    next_state: np.ndarray
    done: bool
    origin: Origin
    impaired: dict[int, frozenset] = field(default_factory=dict)

    @property
    def intact(self) -> bool:
        return not any(self.impaired.values())


def lost(agent: int, step: int) -> Transition:
    return Transition(agent, step, None, None, None, frozenset({"obs", "action", "next_obs"}))


class EnvReplica:
    """The central twin's record of an episode: states reconstructed from any
    intact upload (every observation carries the broadcast state), team
    rewards recomputed from consecutive states, and the drift seen along
    the way fed to a current estimator."""

    def __init__(self, env: CollectionEnv, estimator: CurrentEstimator | None = None, max_age_steps: int | None = None):
        self.env = env
        self.states: dict[int, EnvState] = {}
        self.estimator = estimator
        self.max_age_steps = max_age_steps

    def ingest(self, tr: Transition) -> None:
        if tr.obs is not None and "obs" not in tr.impaired:
            self.states.setdefault(tr.step, self.env.decode(tr.obs, tr.agent))
        if tr.next_obs is not None and "next_obs" not in tr.impaired:
            self.states.setdefault(tr.step + 1, self.env.decode(tr.next_obs, tr.agent))

    def has(self, step: int) -> bool:
        return step in self.states and step + 1 in self.states

    def reward(self, step: int) -> float:
        s, s2 = self.states[step], self.states[step + 1]
        newly = int(s2.collected.sum() - s.collected.sum())
        moves = 0
        for i in range(self.env.n):
            if s.t == 0 and s2.last[i] < 0:
                continue
            target = self.env.sns[s2.last[i]]
            moves += int(self.env._toward(s.pos[i], target) != (0, 0))
        return newly - self.env.energy_penalty * moves

    def learn_currents(self) -> None:
        """Compare where each AUV meant to go with where it ended up."""
        if self.estimator is None:
            return
        for k in sorted(self.states):
            if k + 1 not in self.states:
                continue
            s, s2 = self.states[k], self.states[k + 1]
            for i in range(self.env.n):
                a = int(s2.last[i])
                if a < 0:
                    continue
                step = self.env._toward(s.pos[i], self.env.sns[a])
                nxt = s.pos[i] + step
                if self.env._blocked(nxt):
                    nxt = s.pos[i]
                disp = tuple(int(v) for v in (s2.pos[i] - nxt))
                self.estimator.observe((int(nxt[0]), int(nxt[1])), disp)


def aggregate_joint(transitions: list[Transition], step: int, n_agents: int, replica: EnvReplica | None,
                    origin: Origin = Origin.REAL, done: bool = False, reward: float | None = None) -> JointTransition:
    """Stack per-agent uploads in agent order; a missing agent becomes an
    impaired placeholder.  The team reward comes from the replica."""
    by_agent = {}
    for tr in transitions:
        if tr.step != step:
            raise ValueError(f"transition of agent {tr.agent} is for step {tr.step}, expected {step}")
        by_agent[tr.agent] = tr
    ordered = [by_agent.get(i, lost(i, step)) for i in range(n_agents)]
    d = replica.env.obs_dim if replica is not None else next(len(t.obs) for t in ordered if t.obs is not None)
    obs = np.stack([t.obs if t.obs is not None else np.zeros(d) for t in ordered])
    nobs = np.stack([t.next_obs if t.next_obs is not None else np.zeros(d) for t in ordered])
    acts = [t.action if t.action is not None else 0 for t in ordered]
    impaired = {t.agent: t.impaired for t in ordered if t.impaired}
    if reward is None:
        reward = replica.reward(step) if replica is not None and replica.has(step) else float("nan")
    state = replica.env.state_vector(replica.states[step]) if replica is not None and step in replica.states \
        else np.zeros(len(obs[0]))
    nstate = replica.env.state_vector(replica.states[step + 1]) if replica is not None and step + 1 in replica.states \
        else np.zeros(len(obs[0]))
    return JointTransition(step, obs, np.asarray(acts), float(reward), nobs, state, nstate, done, origin, impaired)


def patch_joint(joint: JointTransition, replica: EnvReplica) -> JointTransition:
    """Rebuild impaired observations (and the action, which every peer's next
    observation carries) from the replica; intact fields are left alone."""
    if joint.intact and np.isfinite(joint.reward):
        return joint
    if not replica.has(joint.step):
        raise Unpatchable(f"replica has no state for step {joint.step}")
    env = replica.env
    s, s2 = replica.states[joint.step], replica.states[joint.step + 1]
    obs, nobs, acts = joint.obs.copy(), joint.next_obs.copy(), joint.action.copy()
    for i, flags in joint.impaired.items():
        if "obs" in flags:
            obs[i] = env.observe(s, i)
        if "next_obs" in flags:
            nobs[i] = env.observe(s2, i)
        if "action" in flags:
            acts[i] = s2.last[i]
    reward = joint.reward if np.isfinite(joint.reward) else replica.reward(joint.step)
    return replace(joint, obs=obs, next_obs=nobs, action=acts, reward=reward, state=env.state_vector(s),
                   next_state=env.state_vector(s2), impaired={})
