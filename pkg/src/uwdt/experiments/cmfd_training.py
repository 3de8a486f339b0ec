"""Hybrid real/twin training of cooperating AUVs on the collection toy.

For every seed two learners see the same number of episodes: one trains on
real episodes only, the other alternates short real epochs with long twin
epochs so that at most ``max_real_fraction`` of its episodes are real.
Greedy collection rates of the two are compared.  A separate closed-loop
trial measures how well lost uploads are rebuilt from the twin's replica.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..cmfd.agents import EnvReplica, Origin, Transition, Unpatchable, aggregate_joint, lost, patch_joint
from ..cmfd.env import CollectionEnv
from ..cmfd.train import HybridRun, MaddpgLearner, TrainConfig, evaluate, hybrid_epochs
from ..sim.rng import aux_rng
from .base import Check, ExperimentOutput


@dataclass
class CmfdConfig:
    n_auvs: int = 2
    n_sns: int = 10
    grid: int = 6
    horizon: int = 14
    episodes: int = 1500
    real_per_epoch: int = 5
    epochs: int = 3
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    eval_episodes: int = 100
    tolerance: float = 0.03
    max_real_fraction: float = 0.01
    upload_loss: float = 0.2
    patch_episodes: int = 50
    min_patched_fraction: float = 0.95
    continuous_episodes: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(batch=16, lr=3e-3, eps_anneal=750))
    seed: int = 0

    def hybrid_schedule(self) -> list[tuple[str, int]]:
        dt = self.episodes // self.epochs - self.real_per_epoch
        if dt < 0:
            raise ValueError("real_per_epoch exceeds the epoch length")
        return [("real", self.real_per_epoch), ("dt", dt)] * self.epochs

    def env(self, seed: int, continuous: bool = False) -> CollectionEnv:
        return CollectionEnv(self.n_auvs, self.n_sns, self.grid, self.horizon, seed=seed, continuous=continuous)


@dataclass
class PatchTrial:
    impaired: int = 0
    patched: int = 0
    unpatchable: int = 0
    mismatches: int = 0
    compared: int = 0

    @property
    def patched_fraction(self) -> float:
        return self.patched / self.impaired if self.impaired else 1.0


def patch_trial(env: CollectionEnv, episodes: int, upload_loss: float, seed: int, lossless_replica: bool) -> PatchTrial:
    """Random-policy episodes in the ground-truth env.

    With ``lossless_replica`` every upload reaches the replica, then each
    agent's record in turn is dropped from the joint transition and rebuilt;
    rebuilt observations must equal the true ones bit for bit.  Otherwise
    uploads are lost with probability ``upload_loss`` before the replica
    sees them, and impaired joints are patched or counted Unpatchable."""
    act_rng, env_rng, loss_rng = aux_rng(seed, 70), aux_rng(seed, 71), aux_rng(seed, 72)
    out = PatchTrial()
    for _ in range(episodes):
        replica = EnvReplica(env)
        s = env.reset()
        truth, uploads = [], []
        done = False
        while not done:
            a = act_rng.integers(env.n_actions, size=env.n)
            obs = np.stack([env.observe(s, i) for i in range(env.n)])
            s2, _, done, _ = env.step(a, env_rng)
            nobs = np.stack([env.observe(s2, i) for i in range(env.n)])
            truth.append((obs, a, nobs))
            trs = []
            for i in range(env.n):
                tr = Transition(i, s.t, obs[i], int(a[i]), nobs[i])
                if lossless_replica:
                    replica.ingest(tr)
                    trs.append(tr)
                elif loss_rng.random() < upload_loss:
                    trs.append(lost(i, s.t))
                else:
                    replica.ingest(tr)
                    trs.append(tr)
            uploads.append(trs)
            s = s2
        for t, trs in enumerate(uploads):
            obs, a, nobs = truth[t]
            variants = [[tr for tr in trs if tr.agent != k] for k in range(env.n)] if lossless_replica else [trs]
            for v in variants:
                joint = aggregate_joint(v, t, env.n, replica, Origin.REAL)
                if joint.intact:
                    continue
                out.impaired += 1
                try:
                    fixed = patch_joint(joint, replica)
                except Unpatchable:
                    out.unpatchable += 1
                    continue
                out.patched += 1
                out.compared += 1
                same = (fixed.obs.tobytes() == obs.tobytes() and fixed.next_obs.tobytes() == nobs.tobytes()
                        and np.array_equal(fixed.action, a))
                out.mismatches += int(not same)
    return out


def _log_run(out: ExperimentOutput, run: HybridRun, seed: int, arm: str) -> None:
    for e in run.log:
        out.log.add(float(e.index), seed, f"{arm}.collection_rate", e.collection_rate)
        out.log.add(float(e.index), seed, f"{arm}.return", e.ret)
        out.log.add(float(e.index), seed, f"{arm}.loss", e.loss)
        out.log.add(float(e.index), seed, f"{arm}.origin_real", int(e.origin is Origin.REAL))


def run_cmfd(cfg: CmfdConfig) -> ExperimentOutput:
    out = ExperimentOutput("cmfd_training")
    started = time.perf_counter()
    schedule = cfg.hybrid_schedule()
    total = sum(n for _, n in schedule)
    real_count = sum(n for k, n in schedule if k == "real")
    rows = []
    for seed in cfg.seeds:
        env = cfg.env(seed)
        real_run = hybrid_epochs(env, [("real", total)], cfg.train, seed=seed)
        hybrid_run = hybrid_epochs(env, schedule, cfg.train, seed=seed, upload_loss=cfg.upload_loss)
        r_real = evaluate(env, real_run.learner, cfg.eval_episodes, seed + 1000)
        r_hyb = evaluate(env, hybrid_run.learner, cfg.eval_episodes, seed + 1000)
        counts = hybrid_run.buffer.origin_counts()
        rows.append({"seed": seed, "real_only_rate": r_real, "hybrid_rate": r_hyb,
                     "real_episodes": hybrid_run.real_episodes, "dt_episodes": hybrid_run.dt_episodes,
                     "buffer_real": counts[Origin.REAL], "buffer_dt": counts[Origin.DT],
                     "patched": sum(e.patched for e in hybrid_run.log),
                     "unpatchable": sum(e.unpatchable for e in hybrid_run.log)})
        _log_run(out, real_run, seed, "real_only")
        _log_run(out, hybrid_run, seed, "hybrid")
        for arm, run in (("real_only", real_run), ("hybrid", hybrid_run)):
            window = max(total // 30, 1)
            rates = [e.collection_rate for e in run.log]
            for k in range(0, len(rates), window):
                out.figures.setdefault("collection_rate_vs_episode", []).append(
                    (f"{arm}.seed{seed}", float(k), float(np.mean(rates[k:k + window]))))
        if seed == cfg.seeds[-1]:
            out.models = hybrid_run.learner.models()
    out.tables["hybrid_vs_real"] = rows
    mean_real = float(np.mean([r["real_only_rate"] for r in rows]))
    mean_hyb = float(np.mean([r["hybrid_rate"] for r in rows]))
    frac = real_count / total

    exact = patch_trial(cfg.env(cfg.seed), cfg.patch_episodes, 0.0, cfg.seed, lossless_replica=True)
    lossy = patch_trial(cfg.env(cfg.seed), cfg.patch_episodes, cfg.upload_loss, cfg.seed, lossless_replica=False)
    out.tables["patching"] = [{"mode": "lossless_replica", **vars(exact)}, {"mode": f"loss_{cfg.upload_loss}", **vars(lossy)}]

    if cfg.continuous_episodes:
        env = cfg.env(cfg.seed, continuous=True)
        lo, hi = env.action_box
        learner = MaddpgLearner(env.obs_dim, env.n, lo, hi, cfg.train, cfg.seed)
        n = cfg.continuous_episodes
        cont = hybrid_epochs(env, [("real", max(n // 10, 1)), ("dt", n - max(n // 10, 1))], cfg.train,
                             seed=cfg.seed, learner=learner)
        _log_run(out, cont, cfg.seed, "continuous")
        out.summary["continuous.final_rate"] = evaluate(env, learner, cfg.eval_episodes, cfg.seed + 1000)

    out.checks += [
        Check("real_fraction", frac <= cfg.max_real_fraction, f"{real_count}/{total} = {frac:.4f}"),
        Check("hybrid_within_tolerance", mean_hyb >= mean_real - cfg.tolerance,
              f"hybrid {mean_hyb:.4f} vs real-only {mean_real:.4f} over seeds {list(cfg.seeds)}"),
        Check("patching_exact", exact.mismatches == 0 and exact.unpatchable == 0 and exact.compared > 0,
              f"{exact.compared} rebuilt, {exact.mismatches} differ"),
        Check("patching_coverage", lossy.patched_fraction >= cfg.min_patched_fraction,
              f"{lossy.patched}/{lossy.impaired} patched, {lossy.unpatchable} unpatchable"),
    ]
    out.summary.update({
        "real_only_rate": mean_real, "hybrid_rate": mean_hyb, "gap": mean_real - mean_hyb,
        "real_fraction": frac, "patched_fraction": lossy.patched_fraction,
        "elapsed_s": time.perf_counter() - started,
    })
    return out
