"""Episodic replay memory shared by real and twin-generated experience."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .agents import JointTransition, Origin
from .losses import EpisodeBatch, StepBatch


@dataclass
class Episode:
    obs: np.ndarray       # (T+1, n, d)
    state: np.ndarray     # (T+1, S)
    actions: np.ndarray   # (T, n) or (T, n, k)
    reward: np.ndarray    # (T,)
    done: np.ndarray      # (T,)
    origin: Origin

    @property
    def length(self) -> int:
        return len(self.reward)

    @property
    def continuous(self) -> bool:
        return self.actions.ndim == 3

    @classmethod
    def from_joint(cls, steps: list[JointTransition]) -> "Episode":
        if not steps:
            raise ValueError("empty episode")
        for a, b in zip(steps, steps[1:]):
            if b.step != a.step + 1:
                raise ValueError("episode steps must be consecutive")
        obs = np.stack([j.obs for j in steps] + [steps[-1].next_obs])
        state = np.stack([j.state for j in steps] + [steps[-1].next_state])
        return cls(obs, state, np.stack([j.action for j in steps]), np.array([j.reward for j in steps]),
                   np.array([float(j.done) for j in steps]), steps[0].origin)


class ReplayBuffer:
    """Bounded FIFO of episodes.  Sampling is uniform over stored episodes
    and ignores where they came from."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.episodes: deque[Episode] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.episodes)

    def add(self, ep: Episode) -> None:
        if self.episodes and ep.continuous != self.episodes[0].continuous:
            raise ValueError("buffer mixes discrete and continuous episodes")
        self.episodes.append(ep)

    @property
    def kind(self) -> str | None:
        if not self.episodes:
            return None
        return "continuous" if self.episodes[0].continuous else "discrete"

    def origin_counts(self) -> dict[Origin, int]:
        out = {o: 0 for o in Origin}
        for e in self.episodes:
            out[e.origin] += 1
        return out

    def sample(self, b: int, rng: np.random.Generator) -> list[Episode]:
        if not self.episodes:
            raise ValueError("buffer is empty")
        if b < 1:
            raise ValueError("batch size must be >= 1")
        replace = b > len(self.episodes)
        idx = rng.choice(len(self.episodes), size=b, replace=replace)
        return [self.episodes[i] for i in idx]

    def sample_steps(self, b: int, rng: np.random.Generator) -> StepBatch:
        eps = self.sample(b, rng)
        picks = [(e, int(rng.integers(e.length))) for e in eps]
        return StepBatch(np.stack([e.obs[t] for e, t in picks]), np.stack([e.actions[t] for e, t in picks]),
                         np.array([e.reward[t] for e, t in picks]), np.stack([e.obs[t + 1] for e, t in picks]),
                         np.array([e.done[t] for e, t in picks]))


def to_batch(episodes: list[Episode]) -> EpisodeBatch:
    """Pad to the longest episode; padded steps are masked out."""
    T = max(e.length for e in episodes)
    B = len(episodes)
    n, d = episodes[0].obs.shape[1:]
    S = episodes[0].state.shape[1]
    obs = np.zeros((T + 1, B, n, d))
    state = np.zeros((T + 1, B, S))
    actions = np.zeros((T, B, n), dtype=int)
    reward = np.zeros((T, B))
    done = np.zeros((T, B))
    mask = np.zeros((T, B))
    for b, e in enumerate(episodes):
        L = e.length
        obs[: L + 1, b] = e.obs
        state[: L + 1, b] = e.state
        actions[:L, b] = e.actions
        reward[:L, b] = e.reward
        done[:L, b] = e.done
        mask[:L, b] = 1.0
    return EpisodeBatch(obs, state, actions, reward, done, mask)
