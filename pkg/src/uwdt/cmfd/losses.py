"""Training objectives: the monotone-mixing TD loss and the centralised
critic / deterministic policy-gradient pair.  Gradients never reach target
parameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import Critic, Drqn, Mixer, Params, Policy


@dataclass
class EpisodeBatch:
    """B episodes padded to T steps.  ``obs``/``state`` hold T+1 entries."""
    obs: np.ndarray       # (T+1, B, n, d)
    state: np.ndarray     # (T+1, B, S)
    actions: np.ndarray   # (T, B, n) int
    reward: np.ndarray    # (T, B)
    done: np.ndarray      # (T, B) 1 where the step ended the episode
    mask: np.ndarray      # (T, B) 1 for real steps, 0 for padding

    @property
    def shape(self) -> tuple[int, int, int]:
        T, B, n = self.actions.shape
        return T, B, n


def agent_inputs(obs: np.ndarray) -> np.ndarray:
    """(T, B, n, d) -> (T, B*n, d+n): observation plus one-hot agent id."""
    T, B, n, d = obs.shape
    eye = np.broadcast_to(np.eye(n), (T, B, n, n))
    return np.concatenate([obs, eye], axis=-1).reshape(T, B * n, d + n)


def qmix_loss(batch: EpisodeBatch, drqn: Drqn, mixer: Mixer, target_drqn: Params, target_mixer: Params,
              gamma: float, params: Params | None = None, mixer_params: Params | None = None):
    """Mean squared TD error of Q_tot.  The bootstrap maximises each agent's
    own target Q separately, which maximises the monotone Q_tot as well.
    Returns (loss, drqn grads, mixer grads)."""
    T, B, n = batch.shape
    X = agent_inputs(batch.obs)
    Q, caches = drqn.forward(X, params=params)
    A = Q.shape[-1]
    Q = Q.reshape(T + 1, B, n, A)
    idx = batch.actions[..., None]
    chosen = np.take_along_axis(Q[:T], idx, axis=-1)[..., 0]
    Qt, _ = drqn.forward(X, params=target_drqn)
    best_next = Qt.reshape(T + 1, B, n, A)[1:].max(axis=-1)
    qtot, mcache = mixer.forward(chosen.reshape(T * B, n), batch.state[:T].reshape(T * B, -1), mixer_params)
    qnext, _ = mixer.forward(best_next.reshape(T * B, n), batch.state[1:].reshape(T * B, -1), target_mixer)
    y = batch.reward.reshape(-1) + gamma * (1 - batch.done.reshape(-1)) * qnext
    m = batch.mask.reshape(-1)
    count = max(m.sum(), 1.0)
    err = (qtot - y) * m
    loss = float((err ** 2).sum() / count)
    dqtot = 2 * err / count
    gmix, dq = mixer.backward(mcache, dqtot, mixer_params)
    dQ = np.zeros((T + 1, B, n, A))
    np.put_along_axis(dQ[:T], idx, dq.reshape(T, B, n)[..., None], axis=-1)
    gq = drqn.backward(caches, dQ.reshape(T + 1, B * n, A), params)
    return loss, gq, gmix


@dataclass
class StepBatch:
    obs: np.ndarray       # (B, n, d)
    actions: np.ndarray   # (B, n, k)
    reward: np.ndarray    # (B,)
    next_obs: np.ndarray  # (B, n, d)
    done: np.ndarray      # (B,)


def _joint(x: np.ndarray) -> np.ndarray:
    return x.reshape(len(x), -1)


def maddpg_value_loss(batch: StepBatch, critic: Critic, target_critic: Params,
                      target_policies: list[tuple[Policy, Params]], gamma: float, params: Params | None = None):
    """Critic regression onto r + gamma * Q'(tau', mu'(tau')).  Returns (loss, grads)."""
    B, n, _ = batch.obs.shape
    nxt = [pol.forward(batch.next_obs[:, k], p)[0] for k, (pol, p) in enumerate(target_policies)]
    q_next, _ = critic.forward(_joint(batch.next_obs), np.concatenate(nxt, axis=1), target_critic)
    y = batch.reward + gamma * (1 - batch.done) * q_next
    q, cache = critic.forward(_joint(batch.obs), _joint(batch.actions), params)
    err = q - y
    loss = float(np.mean(err ** 2))
    g, _, _ = critic.backward(cache, 2 * err / B, params)
    return loss, g


def policy_objective(batch: StepBatch, agent: int, policy: Policy, critic: Critic,
                     params: Params | None = None) -> tuple[float, tuple]:
    a_i, pcache = policy.forward(batch.obs[:, agent], params)
    acts = batch.actions.copy()
    acts[:, agent] = a_i
    q, ccache = critic.forward(_joint(batch.obs), _joint(acts))
    return float(q.mean()), (pcache, ccache, acts.shape)


def maddpg_policy_gradient(batch: StepBatch, agent: int, policy: Policy, critic: Critic,
                           params: Params | None = None) -> tuple[float, Params]:
    """J = mean_b Q(tau, a_1..mu_i(tau_i)..a_N) and its gradient in the policy
    parameters, through dQ/da_i."""
    J, (pcache, ccache, shape) = policy_objective(batch, agent, policy, critic, params)
    B, n, k = shape
    _, _, dact = critic.backward(ccache, np.full(B, 1.0 / B))
    da_i = dact.reshape(B, n, k)[:, agent]
    g, _ = policy.backward(pcache, da_i, params)
    return J, g


def ascend(params: Params, grads: Params, alpha: float) -> None:
    for k in params:
        params[k] += alpha * grads[k]
