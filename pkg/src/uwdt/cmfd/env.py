"""Toy multi-AUV data-collection environment and a value-iteration oracle.

AUVs move on a grid over sensor nodes (SNs) lying on the seabed.  Each
step every AUV broadcasts its state and picks a target SN (discrete
variant) or a velocity (continuous variant), moves one cell toward it, and
may then be pushed by the local current.  An SN is collected the first time
an AUV reaches its cell.  Team reward is the number of newly collected SNs
minus a small energy charge per move.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..sim.rng import aux_rng

MOVES = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class Current:
    dx: int
    dy: int
    prob: float


@dataclass
class EnvState:
    pos: np.ndarray          # (n, 2) float
    last: np.ndarray         # (n,) int, -1 before the first action
    collected: np.ndarray    # (m,) bool
    t: int

    def copy(self) -> "EnvState":
        return EnvState(self.pos.copy(), self.last.copy(), self.collected.copy(), self.t)


@dataclass
class StepInfo:
    intended: np.ndarray
    drift: list[tuple[tuple[int, int], tuple[int, int]]] = field(default_factory=list)
    moves: int = 0
    newly: int = 0


class CollectionEnv:
    def __init__(self, n_auvs: int = 2, n_sns: int = 10, grid: int = 6, horizon: int = 20, seed: int = 0,
                 currents: dict[tuple[int, int], Current] | None = None, energy_penalty: float = 0.02,
                 obstacles: frozenset = frozenset(), continuous: bool = False, sn_positions=None,
                 starts=None):
        if n_sns < 1:
            raise ValueError("need at least one SN")
        self.n, self.m, self.grid, self.horizon = n_auvs, n_sns, grid, horizon
        self.seed = seed
        self.energy_penalty = energy_penalty
        self.obstacles = frozenset(obstacles)
        self.continuous = continuous
        rng = aux_rng(seed, 31)
        free = [c for c in itertools.product(range(grid), range(grid)) if c not in self.obstacles]
        if sn_positions is None:
            idx = rng.choice(len(free), size=n_sns, replace=False)
            sn_positions = [free[i] for i in sorted(idx)]
        self.sns = np.asarray(sn_positions, dtype=float).reshape(n_sns, 2)
        if currents is None:
            currents = {}
            cells = rng.choice(len(free), size=max(grid * grid // 4, 1), replace=False)
            for i in sorted(cells):
                d = MOVES[int(rng.integers(4))]
                currents[free[i]] = Current(d[0], d[1], float(rng.uniform(0.2, 0.6)))
        self.currents = dict(currents)
        if starts is None:
            starts = [(0, 0), (grid - 1, grid - 1), (0, grid - 1), (grid - 1, 0)][:n_auvs]
            starts += [(i % grid, grid // 2) for i in range(n_auvs - len(starts))]
        self.starts = np.asarray(starts, dtype=float).reshape(n_auvs, 2)
        self.state: EnvState | None = None

    # -- spaces ---------------------------------------------------------------------------------
    @property
    def n_actions(self) -> int:
        return self.m

    @property
    def action_box(self) -> tuple[np.ndarray, np.ndarray]:
        return -np.ones(2), np.ones(2)

    @property
    def obs_dim(self) -> int:
        return 2 * self.n + self.n + self.m + 1

    @property
    def state_dim(self) -> int:
        return self.obs_dim

    # -- observation encoding ---------------------------------------------------------------------
    def state_vector(self, s: EnvState) -> np.ndarray:
        return np.concatenate([s.pos.reshape(-1) / self.grid, (s.last + 1) / self.m,
                               s.collected.astype(float), [s.t / self.horizon]])

    def observe(self, s: EnvState, agent: int) -> np.ndarray:
        """The agent's own position first, then everything exchanged by broadcast."""
        order = [agent] + [j for j in range(self.n) if j != agent]
        return np.concatenate([s.pos[order].reshape(-1) / self.grid, (s.last[order] + 1) / self.m,
                               s.collected.astype(float), [s.t / self.horizon]])

    def decode(self, obs: np.ndarray, agent: int) -> EnvState:
        """Inverse of :meth:`observe`."""
        n, m = self.n, self.m
        order = [agent] + [j for j in range(n) if j != agent]
        pos = np.empty((n, 2))
        last = np.empty(n, dtype=int)
        raw_pos = obs[: 2 * n].reshape(n, 2) * self.grid
        raw_last = obs[2 * n: 3 * n] * m - 1
        for k, j in enumerate(order):
            pos[j] = raw_pos[k] if self.continuous else np.round(raw_pos[k])
            last[j] = int(round(raw_last[k]))
        collected = obs[3 * n: 3 * n + m] > 0.5
        t = int(round(obs[-1] * self.horizon))
        return EnvState(pos, last, collected, t)

    # -- dynamics ----------------------------------------------------------------------------------
    def reset(self) -> EnvState:
        s = EnvState(self.starts.copy(), -np.ones(self.n, dtype=int), np.zeros(self.m, dtype=bool), 0)
        self._collect(s)
        self.state = s
        return s

    def _collect(self, s: EnvState) -> int:
        newly = 0
        for k in range(self.m):
            if s.collected[k]:
                continue
            d = np.abs(s.pos - self.sns[k]).max(axis=1)
            if (d < 0.5 if self.continuous else d == 0).any():
                s.collected[k] = True
                newly += 1
        return newly

    def _toward(self, p: np.ndarray, target: np.ndarray) -> tuple[int, int]:
        dx, dy = target - p
        if dx != 0:
            return (int(np.sign(dx)), 0)
        if dy != 0:
            return (0, int(np.sign(dy)))
        return (0, 0)

    def _blocked(self, cell) -> bool:
        x, y = cell
        return not (0 <= x < self.grid and 0 <= y < self.grid) or (int(x), int(y)) in self.obstacles

    def transition(self, s: EnvState, actions, rng: np.random.Generator) -> tuple[EnvState, float, StepInfo]:
        s2 = s.copy()
        info = StepInfo(np.zeros((self.n, 2)))
        for i in range(self.n):
            if self.continuous:
                v = np.clip(np.asarray(actions[i], dtype=float), -1.0, 1.0)
                nxt = np.clip(s.pos[i] + v, 0.0, self.grid - 1)
                info.moves += int(np.any(v != 0))
                info.intended[i] = nxt
                cell = tuple(int(round(c)) for c in nxt)
                cur = self.currents.get(cell)
                if cur is not None and rng.random() < cur.prob:
                    nxt = np.clip(nxt + (cur.dx, cur.dy), 0.0, self.grid - 1)
                    info.drift.append((cell, (cur.dx, cur.dy)))
                s2.pos[i] = nxt
                continue
            a = int(actions[i])
            if not 0 <= a < self.m:
                raise ValueError(f"action {a} outside [0, {self.m})")
            s2.last[i] = a
            step = self._toward(s.pos[i], self.sns[a])
            nxt = s.pos[i] + step
            if self._blocked(nxt):
                nxt = s.pos[i].copy()
            info.moves += int(step != (0, 0))
            info.intended[i] = nxt
            cell = (int(nxt[0]), int(nxt[1]))
            cur = self.currents.get(cell)
            if cur is not None and rng.random() < cur.prob:
                pushed = nxt + (cur.dx, cur.dy)
                if not self._blocked(pushed):
                    info.drift.append((cell, (cur.dx, cur.dy)))
                    nxt = pushed
            s2.pos[i] = nxt
        s2.t = s.t + 1
        info.newly = self._collect(s2)
        return s2, info.newly - self.energy_penalty * info.moves, info

    def step(self, actions, rng: np.random.Generator) -> tuple[EnvState, float, bool, StepInfo]:
        if self.state is None:
            raise RuntimeError("reset() first")
        s2, r, info = self.transition(self.state, actions, rng)
        self.state = s2
        return s2, r, s2.t >= self.horizon or bool(s2.collected.all()), info

    def collection_rate(self, s: EnvState | None = None) -> float:
        s = s or self.state
        return float(s.collected.mean()) if self.n else 0.0

    def with_currents(self, currents: dict[tuple[int, int], Current]) -> "CollectionEnv":
        """Same layout, different current field (used to build a replica)."""
        return CollectionEnv(self.n, self.m, self.grid, self.horizon, self.seed, currents, self.energy_penalty,
                             self.obstacles, self.continuous, self.sns.tolist(), self.starts.tolist())


class CurrentEstimator:
    """Learns the current field from observed drift: per cell, the push
    frequency among visits and the most common push direction."""

    def __init__(self):
        self.visits: dict[tuple[int, int], int] = {}
        self.pushes: dict[tuple[int, int], dict[tuple[int, int], int]] = {}

    def observe(self, intended_cell: tuple[int, int], displacement: tuple[int, int]) -> None:
        self.visits[intended_cell] = self.visits.get(intended_cell, 0) + 1
        if displacement != (0, 0):
            d = self.pushes.setdefault(intended_cell, {})
            d[displacement] = d.get(displacement, 0) + 1

    def estimate(self) -> dict[tuple[int, int], Current]:
        out = {}
        for cell, dirs in sorted(self.pushes.items()):
            (dx, dy), k = max(sorted(dirs.items()), key=lambda kv: kv[1])
            out[cell] = Current(dx, dy, k / self.visits[cell])
        return out

    @property
    def observations(self) -> int:
        return sum(self.visits.values())


def zero_auv_rate(env: CollectionEnv) -> float:
    return 0.0 if env.n == 0 else env.collection_rate()


# -- oracle -----------------------------------------------------------------------------------------

def value_iteration(env: CollectionEnv, gamma: float = 1.0) -> tuple[float, dict]:
    """Exact optimal expected return of a single-AUV discrete env from reset,
    by backward induction over (position, collected set, time)."""
    if env.n != 1 or env.continuous:
        raise ValueError("oracle handles one AUV on the discrete grid")
    cells = [c for c in itertools.product(range(env.grid), range(env.grid)) if c not in env.obstacles]
    masks = range(1 << env.m)
    V = {(c, k): 0.0 for c in cells for k in masks}
    policy = {}
    for t in range(env.horizon - 1, -1, -1):
        newV = {}
        for c in cells:
            for k in masks:
                if k == (1 << env.m) - 1:
                    newV[(c, k)] = 0.0
                    continue
                best, arg = -np.inf, 0
                for a in range(env.m):
                    val = 0.0
                    for (c2, p) in _outcomes(env, c, a):
                        k2 = k
                        for j in range(env.m):
                            if tuple(env.sns[j].astype(int)) == c2:
                                k2 |= 1 << j
                        gain = bin(k2).count("1") - bin(k).count("1")
                        moved = env._toward(np.array(c, float), env.sns[a]) != (0, 0)
                        val += p * (gain - env.energy_penalty * moved + gamma * V[(c2, k2)])
                    if val > best + 1e-12:
                        best, arg = val, a
                newV[(c, k)] = best
                policy[(t, c, k)] = arg
        V = newV
    s = env.reset()
    c0 = tuple(s.pos[0].astype(int))
    k0 = sum(1 << j for j in range(env.m) if s.collected[j])
    return V[(c0, k0)], policy


def _outcomes(env: CollectionEnv, c, a):
    p = np.array(c, float)
    step = env._toward(p, env.sns[a])
    nxt = p + step
    if env._blocked(nxt):
        nxt = p
    cell = (int(nxt[0]), int(nxt[1]))
    cur = env.currents.get(cell)
    if cur is None or cur.prob == 0:
        return [(cell, 1.0)]
    pushed = (cell[0] + cur.dx, cell[1] + cur.dy)
    if env._blocked(pushed):
        return [(cell, 1.0)]
    return [(cell, 1.0 - cur.prob), (pushed, cur.prob)]
