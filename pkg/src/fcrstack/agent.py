"""Double DQN learner: masked epsilon-greedy acting, replay, target network,
validation-based snapshot selection and greedy evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .env import OBS_DIM, BatteryEnv, EpisodeSpec, RewardConfig
from .qnet import Adam, QFunction, td_loss_and_grads
from .safety import N_ACTIONS

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    batch_size: int = 256
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000
    sync_every: int = 1000
    grad_steps_per_env_step: int = 1
    episodes: int = 200
    warmup: int = 1000
    buffer_capacity: int = 200_000
    hidden: tuple[int, ...] = (128, 128)
    eval_every: int = 10
    reward_scale: float = 0.01
    huber_kappa: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not (0 <= self.eps_end <= 1 and 0 <= self.eps_start <= 1):
            raise ValueError("epsilon values must lie in [0, 1]")
        if self.sync_every < 1 or self.batch_size < 1 or self.episodes < 0:
            raise ValueError("sync_every and batch_size must be >= 1, episodes >= 0")
        if self.eps_decay_steps < 1 or self.eval_every < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("eps_decay_steps, eval_every >= 1 and buffer_capacity >= batch_size required")

    def epsilon(self, step: int) -> float:
        frac = min(step / self.eps_decay_steps, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, n_actions: int = N_ACTIONS):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_mask = np.ones((capacity, n_actions), dtype=bool)
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._i = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, next_mask, done) -> None:
        i = self._i
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.next_mask[i] = next_mask
        self.done[i] = done
        self._i = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return (
            self.obs[idx], self.actions[idx], self.rewards[idx],
            self.next_obs[idx], self.next_mask[idx], self.done[idx],
        )


def select_action(q: QFunction, obs, mask, epsilon: float = 0.0, rng: np.random.Generator | None = None) -> int:
    mask = np.asarray(mask, dtype=bool)
    allowed = np.flatnonzero(mask)
    if allowed.size == 0:
        raise ValueError("every action is masked")
    if epsilon > 0:
        if rng is None:
            raise ValueError("exploration needs a random generator")
        if rng.random() < epsilon:
            return int(rng.choice(allowed))
    values = np.where(mask, q(obs), -np.inf)
    return int(np.argmax(values))


def ddqn_targets(rewards, next_obs, next_mask, done, q_online: QFunction, q_target: QFunction, gamma: float) -> np.ndarray:
    """``r + gamma * Q_target(s', argmax_{unmasked a'} Q_online(s', a'))``; ``r`` when done."""
    rewards = np.atleast_1d(np.asarray(rewards, dtype=float))
    next_obs = np.atleast_2d(next_obs)
    next_mask = np.atleast_2d(np.asarray(next_mask, dtype=bool))
    if not next_mask.any(axis=1).all():
        raise ValueError("every next state needs at least one unmasked action")
    online = np.where(next_mask, q_online(next_obs), -np.inf)
    best = np.argmax(online, axis=1)
    bootstrap = q_target(next_obs)[np.arange(len(best)), best]
    return rewards + gamma * np.where(np.atleast_1d(done), 0.0, bootstrap)


def ddqn_target(reward, next_obs, next_mask, done, q_online, q_target, gamma) -> float:
    return float(ddqn_targets([reward], [next_obs], [next_mask], [done], q_online, q_target, gamma)[0])


# -- evaluation ---------------------------------------------------------------


@dataclass
class DayMetrics:
    day: str
    total_profit: float
    fcr_revenue: float
    imbalance_profit: float
    cycles: float
    overrides: int
    violations: int
    reward: float

    FIELDS = ("day", "total_profit", "fcr_revenue", "imbalance_profit", "cycles", "overrides", "violations", "reward")


@dataclass
class EvalReport:
    days: list[DayMetrics]

    @property
    def total_profit(self) -> float:
        return self.fcr_revenue + self.imbalance_profit

    @property
    def fcr_revenue(self) -> float:
        return math.fsum(d.fcr_revenue for d in self.days)

    @property
    def imbalance_profit(self) -> float:
        return math.fsum(d.imbalance_profit for d in self.days)

    @property
    def cycles(self) -> float:
        return math.fsum(d.cycles for d in self.days)

    def aggregate(self) -> DayMetrics:
        return DayMetrics(
            "total", self.total_profit, self.fcr_revenue, self.imbalance_profit, self.cycles,
            sum(d.overrides for d in self.days), sum(d.violations for d in self.days),
            math.fsum(d.reward for d in self.days),
        )

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(DayMetrics.FIELDS)
            for d in [*self.days, self.aggregate()]:
                w.writerow([d.day] + [repr(float(getattr(d, f))) if isinstance(getattr(d, f), float) else getattr(d, f) for f in DayMetrics.FIELDS[1:]])


Policy = Callable[[np.ndarray, np.ndarray], int]


def run_episode(env: BatteryEnv, spec, policy: Policy) -> DayMetrics:
    obs = env.reset(spec)
    mask = env.action_mask()
    reward = 0.0
    while True:
        out = env.step(policy(obs, mask))
        reward += out.reward
        obs, mask = out.obs, out.mask
        if out.done:
            break
    day = spec.day if isinstance(spec, EpisodeSpec) else spec
    fcr = float(env.ledger.fcr_revenue)
    imb = float(env.ledger.imbalance_cash)
    return DayMetrics(
        str(day), fcr + imb, fcr, imb, float(env.discharged / env.params.e_cap),
        int(env.override_steps), int(env.violation_steps), float(reward),
    )


def greedy_policy(q: QFunction) -> Policy:
    return lambda obs, mask: select_action(q, obs, mask, 0.0)


def evaluate(q: QFunction, env: BatteryEnv, days: Sequence | None = None) -> EvalReport:
    """Greedy roll-out over ``days`` (default: every day the env allows)."""
    days = env.days if days is None else list(days)
    policy = greedy_policy(q)
    return EvalReport([run_episode(env, d, policy) for d in days])


# -- training -------------------------------------------------------------------


@dataclass
class TrainResult:
    q: QFunction
    final_q: QFunction
    log: list[dict]
    best_validation_profit: float
    best_episode: int
    evaluations: list[tuple[int, float]] = field(default_factory=list)

    def log_to_csv(self, path) -> None:
        if not self.log:
            Path(path).write_text("episode\n")
            return
        keys = list(self.log[0])
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for row in self.log:
                w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})


EnvFactory = Callable[[Sequence], BatteryEnv]


def train(
    env_factory: EnvFactory,
    cfg: TrainConfig,
    reward_cfg: RewardConfig,
    train_days: Sequence,
    val_days: Sequence,
) -> TrainResult:
    """DDQN over episodes drawn from ``train_days``; keeps the best validation snapshot.

    ``env_factory(days)`` must build an environment restricted to ``days``.
    """
    train_days = sorted(train_days)
    val_days = sorted(val_days)
    if not train_days or not val_days:
        raise ValueError("training needs at least one training and one validation day")
    rng = np.random.default_rng(cfg.seed)
    env = env_factory(train_days)
    val_env = env_factory(val_days)
    q = QFunction(OBS_DIM, N_ACTIONS, cfg.hidden, seed=cfg.seed)
    target = q.copy()
    opt = Adam(q.params, lr=cfg.lr)
    buf = ReplayBuffer(cfg.buffer_capacity, OBS_DIM)

    best_q, best_val, best_ep = q.copy(), -np.inf, -1
    evaluations: list[tuple[int, float]] = []
    rows: list[dict] = []
    step = updates = 0

    for ep in range(cfg.episodes):
        day = train_days[int(rng.integers(len(train_days)))]
        obs = env.reset(EpisodeSpec(day, seed=int(rng.integers(2**31))))
        mask = env.action_mask()
        sums = np.zeros(4)
        losses = []
        while True:
            a = select_action(q, obs, mask, cfg.epsilon(step), rng)
            out = env.step(a)
            sums += out.parts
            buf.add(obs, a, out.reward * cfg.reward_scale, out.obs, out.mask, out.done)
            obs, mask = out.obs, out.mask
            step += 1
            if len(buf) >= max(cfg.warmup, cfg.batch_size):
                for _ in range(cfg.grad_steps_per_env_step):
                    o, act, r, no, nm, d = buf.sample(cfg.batch_size, rng)
                    y = ddqn_targets(r, no, nm, d, q, target, reward_cfg.gamma)
                    loss, grads = td_loss_and_grads(q, o, act, y, cfg.huber_kappa)
                    if not np.isfinite(loss):
                        raise TrainingDiverged(f"non-finite loss at episode {ep}, update {updates}")
                    opt.step(grads)
                    losses.append(loss)
                    updates += 1
                    if updates % cfg.sync_every == 0:
                        target.load_from(q)
            if out.done:
                break

        row = {
            "episode": ep,
            "day": str(day),
            "steps": step,
            "epsilon": cfg.epsilon(step),
            "reward": float(sums.sum()),
            "r_imb": float(sums[0]),
            "r_soe": float(sums[1]),
            "r_cycle": float(sums[2]),
            "r_override": float(sums[3]),
            "overrides": int(env.override_steps),
            "cycles": float(env.discharged / env.params.e_cap),
            "profit": float(env.ledger.total),
            "loss": float(np.mean(losses)) if losses else float("nan"),
            "validation_profit": "",
        }
        if (ep + 1) % cfg.eval_every == 0 or ep == cfg.episodes - 1:
            val = evaluate(q, val_env, val_days).total_profit
            evaluations.append((ep, val))
            row["validation_profit"] = val
            if val > best_val:
                best_val, best_ep, best_q = val, ep, q.copy()
            log.info("episode %d: reward %.1f, validation profit %.2f", ep, row["reward"], val)
        rows.append(row)

    if not evaluations:
        best_val = evaluate(q, val_env, val_days).total_profit
        best_q = q.copy()
    return TrainResult(best_q, q, rows, float(best_val), best_ep, evaluations)
