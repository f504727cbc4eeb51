"""PPO fine-tuning of the LoRA policy against the composite reward.

Trajectories are peptides: each residue (and the final EOS) is one action,
the terminal whitened reward lands on the EOS step, and intermediate steps
pay zero. Advantages come from GAE over the value head's predictions.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import IO, Callable

import numpy as np

from . import numerics as nm
from .numerics.tensor import exp as t_exp, reduce_sum
from .physchem import DEFAULT_SCALE, PropertyVector, descriptor_vector
from .policy import BOS, PAD, PolicyModel, sample
from .reward import RewardBreakdown, RewardConfig, process_rewards
from .rng import substream

LOG_COLUMNS = (
    "iteration",
    "mean_reward",
    "mean_s",
    "frac_active",
    "mean_charge",
    "mean_hydrophobicity",
    "mean_moment",
    "mean_pI",
    "entropy",
    "clip_fraction",
)


@dataclass(frozen=True)
class PpoConfig:
    n_actors: int = 32
    horizon: int = 51
    max_len: int = 50
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    discount: float = 1.0
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatch_size: int = 8
    lr: float = 1e-3
    iterations: int = 40
    ratio_guard: float = 0.5
    max_logp_gap: float = 50.0
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.clip_eps < 1.0):
            raise ValueError(f"clip epsilon must lie in (0,1), got {self.clip_eps}")
        if self.n_actors < 1 or self.horizon < 1:
            raise ValueError("actor count and horizon must be >= 1")
        if self.minibatch_size < 1 or self.epochs < 1 or self.iterations < 1:
            raise ValueError("epochs, minibatch size and iterations must be >= 1")


@dataclass
class RolloutBatch:
    ids: np.ndarray
    actions: np.ndarray
    mask: np.ndarray
    old_log_probs: np.ndarray
    values: np.ndarray
    rewards_raw: np.ndarray
    rewards_scaled: np.ndarray
    rewards_whitened: np.ndarray
    step_rewards: np.ndarray
    breakdowns: list[RewardBreakdown]
    peptides: list
    props: list[PropertyVector]
    mean_entropy: float
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.actions.shape[0]


def rollout(
    policy: PolicyModel,
    reward_fn: Callable,
    cfg: PpoConfig,
    seed: int,
) -> RolloutBatch:
    """Sample N trajectories, score them once at the end, whiten the rewards."""
    residue_cap = min(cfg.max_len, cfg.horizon - 1, policy.config.max_len)
    samples = sample(
        policy,
        cfg.n_actors,
        max_len=residue_cap,
        seed=seed,
        source="generated_rl",
        id_prefix="rl",
    )
    n = len(samples)
    t_max = max(s.tokens.size for s in samples)
    ids = np.full((n, t_max + 1), PAD, dtype=np.int64)
    ids[:, 0] = BOS
    actions = np.full((n, t_max), PAD, dtype=np.int64)
    mask = np.zeros((n, t_max))
    old_lp = np.zeros((n, t_max))
    for i, s in enumerate(samples):
        k = s.tokens.size
        ids[i, 1 : k + 1] = s.tokens
        actions[i, :k] = s.tokens
        mask[i, :k] = 1.0
        old_lp[i, :k] = s.log_probs

    values_t, log_probs_t = policy.values_and_log_probs(ids[:, :-1])
    values = values_t.data * mask
    lp = log_probs_t.data
    step_entropy = -(np.exp(lp) * lp).sum(axis=-1)
    mean_entropy = float((step_entropy * mask).sum() / mask.sum())

    rewards = np.zeros(n)
    breakdowns: list[RewardBreakdown] = []
    props: list[PropertyVector] = []
    for i, s in enumerate(samples):
        try:
            bd = reward_fn(s.peptide)
        except Exception as exc:
            raise RuntimeError(
                f"reward evaluation failed for sequence {s.peptide.id} ({s.peptide.residues}): {exc}"
            ) from exc
        breakdowns.append(bd)
        rewards[i] = bd.r_total
        props.append(descriptor_vector(s.peptide, DEFAULT_SCALE))

    scaled, whitened = process_rewards(rewards)
    step_rewards = np.zeros((n, t_max))
    for i, s in enumerate(samples):
        step_rewards[i, s.tokens.size - 1] = whitened[i]

    return RolloutBatch(
        ids=ids,
        actions=actions,
        mask=mask,
        old_log_probs=old_lp,
        values=values,
        rewards_raw=rewards,
        rewards_scaled=scaled,
        rewards_whitened=whitened,
        step_rewards=step_rewards,
        breakdowns=breakdowns,
        peptides=[s.peptide for s in samples],
        props=props,
        mean_entropy=mean_entropy,
    )


def compute_advantages(batch: RolloutBatch, cfg: PpoConfig) -> RolloutBatch:
    """GAE over the zero-padded terminal-reward trajectories, then whitening.

    Returns are discounted reward-to-go sums, the regression targets of the
    value head; at discount 1 every step's return equals the whitened
    terminal reward.
    """
    n, t_max = batch.actions.shape
    advantages = np.zeros((n, t_max))
    returns = np.zeros((n, t_max))
    for i in range(n):
        steps = int(batch.mask[i].sum())
        running_adv = 0.0
        running_ret = 0.0
        for t in range(steps - 1, -1, -1):
            next_value = batch.values[i, t + 1] if t + 1 < steps else 0.0
            delta = batch.step_rewards[i, t] + cfg.discount * next_value - batch.values[i, t]
            running_adv = delta + cfg.discount * cfg.gae_lambda * running_adv
            running_ret = batch.step_rewards[i, t] + cfg.discount * running_ret
            advantages[i, t] = running_adv
            returns[i, t] = running_ret

    valid = batch.mask > 0.0
    flat = advantages[valid]
    std = flat.std()
    if std < 1e-12:
        advantages[valid] = 0.0
    else:
        advantages[valid] = (flat - flat.mean()) / std
    batch.advantages = advantages
    batch.returns = returns
    return batch


@dataclass
class PpoLosses:
    policy: nm.Tensor
    value: nm.Tensor
    entropy: nm.Tensor
    total: nm.Tensor
    clip_fraction: float
    approx_kl: float
    mean_ratio_dev: float


def ppo_losses(
    new_log_probs: nm.Tensor,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    values: nm.Tensor,
    returns: np.ndarray,
    entropy_steps: nm.Tensor,
    mask: np.ndarray,
    cfg: PpoConfig,
) -> PpoLosses:
    """Clipped surrogate + value regression + entropy bonus, masked means."""
    count = mask.sum()
    if count < 1:
        raise ValueError("loss over an empty batch")
    gap = np.abs((new_log_probs.data - old_log_probs) * mask).max()
    if gap > cfg.max_logp_gap:
        raise FloatingPointError(
            f"log-prob gap {gap:.1f} exceeds {cfg.max_logp_gap}; policy has diverged from the rollout snapshot"
        )
    inv = 1.0 / count
    ratio = t_exp(new_log_probs - old_log_probs)
    surrogate = nm.minimum(ratio * advantages, nm.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * advantages)
    l_policy = -reduce_sum(surrogate * mask) * inv
    diff = values - returns
    l_value = reduce_sum(diff * diff * mask) * inv
    h = reduce_sum(entropy_steps * mask) * inv
    total = l_policy + cfg.value_coef * l_value - cfg.entropy_coef * h
    clip_fraction = float(((np.abs(ratio.data - 1.0) > cfg.clip_eps) * mask).sum() / count)
    approx_kl = float(((old_log_probs - new_log_probs.data) * mask).sum() / count)
    mean_ratio_dev = float((np.abs(ratio.data - 1.0) * mask).sum() / count)
    return PpoLosses(
        policy=l_policy,
        value=l_value,
        entropy=h,
        total=total,
        clip_fraction=clip_fraction,
        approx_kl=approx_kl,
        mean_ratio_dev=mean_ratio_dev,
    )


def _minibatch_losses(policy: PolicyModel, batch: RolloutBatch, rows: np.ndarray, cfg: PpoConfig) -> PpoLosses:
    ids = batch.ids[rows]
    actions = batch.actions[rows]
    mask = batch.mask[rows]
    safe_actions = np.where(mask > 0.0, actions, 0)
    values_t, lp_t = policy.values_and_log_probs(ids[:, :-1])
    new_lp = nm.gather_last(lp_t, safe_actions)
    entropy_steps = -reduce_sum(t_exp(lp_t) * lp_t, axis=-1)
    return ppo_losses(
        new_lp,
        batch.old_log_probs[rows],
        batch.advantages[rows],
        values_t,
        batch.returns[rows],
        entropy_steps,
        mask,
        cfg,
    )


def train_rl(
    policy: PolicyModel,
    scorer,
    reward_cfg: RewardConfig,
    cfg: PpoConfig,
    seed: int = 0,
    log_sink: str | Path | IO[str] | None = None,
    checkpoint_dir: str | Path | None = None,
) -> tuple[PolicyModel, list[dict]]:
    """Iterate rollout -> advantages -> clipped updates over the LoRA policy.

    The policy must already carry LoRA deltas (the base stays frozen). Updates
    whose mean |ratio - 1| exceeds the guard are skipped and counted in the
    log row.
    """
    if not policy.lora:
        raise ValueError("RL fine-tuning requires a LoRA-attached policy")
    from .reward import make_reward_fn

    reward_fn = make_reward_fn(scorer, reward_cfg)
    params = policy.trainable()
    opt = nm.Adam(params, lr=cfg.lr)
    rows_log: list[dict] = []

    for iteration in range(1, cfg.iterations + 1):
        it_seed = int(substream(seed, f"ppo.rollout.{iteration}").integers(1 << 62))
        batch = rollout(policy, reward_fn, cfg, seed=it_seed)
        compute_advantages(batch, cfg)

        shuffle_rng = substream(seed, f"ppo.shuffle.{iteration}")
        clip_fracs: list[float] = []
        kls: list[float] = []
        skipped = 0
        for _ in range(cfg.epochs):
            order = shuffle_rng.permutation(batch.n)
            for start in range(0, batch.n, cfg.minibatch_size):
                rows = order[start : start + cfg.minibatch_size]
                losses = _minibatch_losses(policy, batch, rows, cfg)
                if losses.mean_ratio_dev > cfg.ratio_guard:
                    skipped += 1
                    continue
                opt.zero_grad()
                losses.total.backward()
                opt.step()
                clip_fracs.append(losses.clip_fraction)
                kls.append(losses.approx_kl)

        mean_s = float(np.mean([bd.s for bd in batch.breakdowns]))
        frac_active = float(np.mean([bd.s >= reward_cfg.breakpoint for bd in batch.breakdowns]))
        row = {
            "iteration": iteration,
            "mean_reward": float(batch.rewards_raw.mean()),
            "mean_s": mean_s,
            "frac_active": frac_active,
            "mean_charge": float(np.mean([p.net_charge for p in batch.props])),
            "mean_hydrophobicity": float(np.mean([p.hydrophobicity for p in batch.props])),
            "mean_moment": float(np.mean([p.hydrophobic_moment for p in batch.props])),
            "mean_pI": float(np.mean([p.isoelectric_point for p in batch.props])),
            "entropy": batch.mean_entropy,
            "clip_fraction": float(np.mean(clip_fracs)) if clip_fracs else 0.0,
            "approx_kl": float(np.mean(kls)) if kls else 0.0,
            "skipped_updates": skipped,
        }
        rows_log.append(row)
        if cfg.checkpoint_every and checkpoint_dir and iteration % cfg.checkpoint_every == 0:
            policy.save(Path(checkpoint_dir) / f"policy_iter{iteration:04d}.ckpt", meta={"iteration": iteration})

    if log_sink is not None:
        write_training_log(rows_log, log_sink)
    return policy, rows_log


def write_training_log(rows: list[dict], sink: str | Path | IO[str]) -> None:
    """TSV with one row per iteration in the documented column order."""
    from .sequences import _write_text

    lines = ["\t".join(LOG_COLUMNS)]
    for row in rows:
        lines.append(
            "\t".join(
                str(row[c]) if c == "iteration" else repr(float(row[c])) for c in LOG_COLUMNS
            )
        )
    _write_text(sink, "\n".join(lines) + "\n")
