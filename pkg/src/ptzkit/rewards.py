"""Composite reward shaping and a GRPO-style optimizer with a toy policy.

The reward averages four terms in [-1, 1]: bbox IoU plus piecewise-linear
shapings of the pan, tilt and zoom errors.  Angle terms pay 1 at zero error,
fall linearly to 0 at the tolerance, then go linearly negative until the
penalty saturates at -1.  The zoom term pays inside an undershoot band below
the target value and penalizes outside it on both sides.

Policy optimization follows the clipped group-relative surrogate: rewards are
normalized within each sampled group into advantages, importance ratios are
clipped to a trust region, and a KL term pulls the policy toward a frozen
reference.  The policy here is a stack of three independent linear-softmax
heads over discrete action bins, small enough that log-probabilities, KL
divergences and objective gradients are all available in closed form, which
is what the finite-difference tests verify.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ptzkit.camera import BBoxPx, CameraIntrinsics, CameraState, TargetSpec, apply_action, iou, project
from ptzkit.codec import ActionDelta

HEADS = ("pan", "tilt", "zoom")


@dataclass(frozen=True)
class RewardConfig:
    angle_tol: float = 1.0
    angle_penalty_span: float = 10.0
    zoom_band: float = 50.0
    zoom_penalty_span: float = 50.0

    def __post_init__(self):
        if min(self.angle_tol, self.angle_penalty_span, self.zoom_band, self.zoom_penalty_span) <= 0:
            raise ValueError("all reward spans must be positive")


@dataclass(frozen=True)
class RewardBreakdown:
    r_iou: float
    r_theta1: float
    r_theta2: float
    r_zoom: float

    @property
    def total(self) -> float:
        return (self.r_iou + self.r_theta1 + self.r_theta2 + self.r_zoom) / 4.0


def angle_reward(pred: float, gt: float, cfg: RewardConfig = RewardConfig()) -> float:
    """1 at zero error, 0 at the tolerance, saturating to -1 beyond it."""
    e = abs(pred - gt)
    if e <= cfg.angle_tol:
        return 1.0 - e / cfg.angle_tol
    return -min((e - cfg.angle_tol) / cfg.angle_penalty_span, 1.0)


def zoom_reward(pred: float, gt: float, cfg: RewardConfig = RewardConfig()) -> float:
    """1 at the target, 0 at the bottom of the undershoot band, negative outside.

    The paying band is [gt - zoom_band, gt]; undershoot below it and any
    overshoot above the target are penalized linearly, saturating at -1.
    """
    if gt - cfg.zoom_band <= pred <= gt:
        return 1.0 - (gt - pred) / cfg.zoom_band
    if pred < gt - cfg.zoom_band:
        outside = (gt - cfg.zoom_band) - pred
    else:
        outside = pred - gt
    return -min(outside / cfg.zoom_penalty_span, 1.0)


def composite_reward(
    pred: ActionDelta,
    gt: ActionDelta,
    pred_bbox: BBoxPx,
    gt_bbox: BBoxPx,
    cfg: RewardConfig = RewardConfig(),
) -> RewardBreakdown:
    return RewardBreakdown(
        r_iou=iou(pred_bbox, gt_bbox),
        r_theta1=angle_reward(pred.pan_deg, gt.pan_deg, cfg),
        r_theta2=angle_reward(pred.tilt_deg, gt.tilt_deg, cfg),
        r_zoom=zoom_reward(pred.zoom_units, gt.zoom_units, cfg),
    )


def group_advantages(rewards: Sequence[float], std_guard: float = 1e-8) -> list[float]:
    """Group-normalized advantages: (r - mean) / (population std + guard)."""
    if len(rewards) < 2:
        raise ValueError("advantage normalization needs at least 2 rewards")
    r = np.asarray(rewards, dtype=np.float64)
    std = float(r.std())
    return list((r - r.mean()) / (std + std_guard))


@dataclass(frozen=True)
class GRPOConfig:
    clip_eps: float = 0.2
    kl_weight: float = 0.04
    group_size: int = 8
    learning_rate: float = 4.0  # suits the toy policy's unit reward scale
    std_guard: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must be in (0, 1)")
        if self.kl_weight < 0.0:
            raise ValueError("kl_weight must be non-negative")
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")


def default_bins() -> dict[str, np.ndarray]:
    return {
        "pan": np.arange(-30, 31, 1, dtype=np.int64),
        "tilt": np.arange(-30, 31, 1, dtype=np.int64),
        "zoom": np.arange(0, 301, 10, dtype=np.int64),
    }


class ToyPolicy:
    """Three independent linear-softmax heads over discrete action bins.

    Each head owns a weight matrix of shape (n_bins, n_features + 1); the
    trailing column multiplies a constant 1 appended to the feature vector.
    Zero weights give the uniform distribution over bins.
    """

    def __init__(self, bins: dict[str, np.ndarray], weights: dict[str, np.ndarray]):
        self.bins = {h: np.asarray(bins[h], dtype=np.int64) for h in HEADS}
        self.weights = {h: np.asarray(weights[h], dtype=np.float64) for h in HEADS}
        for h in HEADS:
            if self.weights[h].shape[0] != self.bins[h].shape[0]:
                raise ValueError(f"{h} weight rows must match bin count")
        self.n_features = self.weights[HEADS[0]].shape[1] - 1

    @classmethod
    def init(cls, n_features: int, bins: dict[str, np.ndarray] | None = None) -> "ToyPolicy":
        bins = bins if bins is not None else default_bins()
        weights = {h: np.zeros((bins[h].shape[0], n_features + 1)) for h in HEADS}
        return cls(bins, weights)

    def clone(self) -> "ToyPolicy":
        return ToyPolicy(
            {h: self.bins[h].copy() for h in HEADS},
            {h: self.weights[h].copy() for h in HEADS},
        )

    def _phi(self, features: np.ndarray) -> np.ndarray:
        phi = np.append(np.asarray(features, dtype=np.float64), 1.0)
        if phi.shape[0] != self.n_features + 1:
            raise ValueError(f"expected {self.n_features} features, got {phi.shape[0] - 1}")
        return phi

    def log_probs(self, features: np.ndarray) -> dict[str, np.ndarray]:
        phi = self._phi(features)
        out = {}
        for h in HEADS:
            z = self.weights[h] @ phi
            z = z - z.max()
            out[h] = z - math.log(np.exp(z).sum())
        return out

    def logp(self, features: np.ndarray, bin_idx: Sequence[int]) -> float:
        lp = self.log_probs(features)
        return float(sum(lp[h][bin_idx[j]] for j, h in enumerate(HEADS)))

    def sample(self, features: np.ndarray, rng: np.random.Generator) -> tuple[tuple[int, int, int], ActionDelta]:
        lp = self.log_probs(features)
        idx = []
        for h in HEADS:
            p = np.exp(lp[h])
            p = p / p.sum()
            idx.append(int(rng.choice(p.shape[0], p=p)))
        action = ActionDelta(
            int(self.bins["pan"][idx[0]]),
            int(self.bins["tilt"][idx[1]]),
            int(self.bins["zoom"][idx[2]]),
        )
        return (idx[0], idx[1], idx[2]), action

    def greedy(self, features: np.ndarray) -> ActionDelta:
        lp = self.log_probs(features)
        return ActionDelta(
            int(self.bins["pan"][int(np.argmax(lp["pan"]))]),
            int(self.bins["tilt"][int(np.argmax(lp["tilt"]))]),
            int(self.bins["zoom"][int(np.argmax(lp["zoom"]))]),
        )

    def kl_to(self, ref: "ToyPolicy", features: np.ndarray) -> float:
        """Analytic KL(self || ref) at this prompt, summed over heads."""
        lp = self.log_probs(features)
        lp_ref = ref.log_probs(features)
        total = 0.0
        for h in HEADS:
            p = np.exp(lp[h])
            total += float(np.sum(p * (lp[h] - lp_ref[h])))
        return total

    def to_dict(self) -> dict:
        return {
            "bins": {h: self.bins[h].tolist() for h in HEADS},
            "weights": {h: self.weights[h].tolist() for h in HEADS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyPolicy":
        return cls(
            {h: np.asarray(d["bins"][h]) for h in HEADS},
            {h: np.asarray(d["weights"][h]) for h in HEADS},
        )


def save_policy(path, policy: ToyPolicy, seed: int | None = None) -> None:
    doc = policy.to_dict()
    if seed is not None:
        doc["seed"] = seed
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_policy(path) -> ToyPolicy:
    with open(path, "r", encoding="utf-8") as fh:
        return ToyPolicy.from_dict(json.load(fh))


@dataclass(frozen=True)
class Rollout:
    action: ActionDelta
    bins: tuple[int, int, int]
    pred_bbox: BBoxPx
    logp_cur: float
    logp_old: float
    logp_ref: float
    reward: float
    advantage: float


@dataclass
class RolloutGroup:
    """One prompt's sampled outcomes plus the categorical context for the KL term."""

    prompt_id: str
    features: np.ndarray
    rollouts: list[Rollout]
    cur_log_probs: dict[str, np.ndarray]
    ref_log_probs: dict[str, np.ndarray]
    gt_action: ActionDelta | None = None

    def __post_init__(self):
        if len(self.rollouts) < 2:
            raise ValueError("a rollout group needs at least 2 outcomes")


@dataclass(frozen=True)
class GrpoTask:
    """A prompt for the toy loop: features plus the scene needed to score rollouts."""

    prompt_id: str
    features: np.ndarray
    camera: CameraState
    target: TargetSpec
    gt_action: ActionDelta
    gt_bbox: BBoxPx


def build_rollout_group(
    policy: ToyPolicy,
    ref_policy: ToyPolicy,
    task: GrpoTask,
    k: CameraIntrinsics,
    cfg: GRPOConfig,
    reward_cfg: RewardConfig,
    rng: np.random.Generator,
) -> RolloutGroup:
    """Sample a group on-policy and score each rollout through the simulator."""
    cur_lp = policy.log_probs(task.features)
    ref_lp = ref_policy.log_probs(task.features)
    sampled = []
    rewards = []
    for _ in range(cfg.group_size):
        bins, action = policy.sample(task.features, rng)
        state = apply_action(task.camera, action)
        pred_bbox = project(state, k, task.target)
        breakdown = composite_reward(action, task.gt_action, pred_bbox, task.gt_bbox, reward_cfg)
        sampled.append((bins, action, pred_bbox))
        rewards.append(breakdown.total)
    advantages = group_advantages(rewards, cfg.std_guard)
    rollouts = []
    for (bins, action, pred_bbox), reward, adv in zip(sampled, rewards, advantages):
        lp = float(sum(cur_lp[h][bins[j]] for j, h in enumerate(HEADS)))
        rollouts.append(
            Rollout(
                action=action,
                bins=bins,
                pred_bbox=pred_bbox,
                logp_cur=lp,
                logp_old=lp,  # sampling is on-policy
                logp_ref=float(sum(ref_lp[h][bins[j]] for j, h in enumerate(HEADS))),
                reward=reward,
                advantage=adv,
            )
        )
    return RolloutGroup(
        prompt_id=task.prompt_id,
        features=np.asarray(task.features, dtype=np.float64),
        rollouts=rollouts,
        cur_log_probs=cur_lp,
        ref_log_probs=ref_lp,
        gt_action=task.gt_action,
    )


def _group_kl(cur_lp: dict[str, np.ndarray], ref_lp: dict[str, np.ndarray]) -> float:
    total = 0.0
    for h in HEADS:
        p = np.exp(cur_lp[h])
        total += float(np.sum(p * (cur_lp[h] - ref_lp[h])))
    return total


def _clipped_term(s: float, advantage: float, clip_eps: float) -> float:
    clipped = min(max(s, 1.0 - clip_eps), 1.0 + clip_eps)
    return min(s * advantage, clipped * advantage)


def grpo_objective(group: RolloutGroup, cfg: GRPOConfig) -> float:
    """Clipped surrogate minus the KL penalty, averaged over the group."""
    total = 0.0
    for r in group.rollouts:
        if not (math.isfinite(r.logp_cur) and math.isfinite(r.logp_old)):
            raise ValueError("non-finite log-probabilities in rollout group")
        s = math.exp(r.logp_cur - r.logp_old)
        total += _clipped_term(s, r.advantage, cfg.clip_eps)
    kl = _group_kl(group.cur_log_probs, group.ref_log_probs)
    return total / len(group.rollouts) - cfg.kl_weight * kl


def objective_under_policy(policy: ToyPolicy, groups: Sequence[RolloutGroup], cfg: GRPOConfig) -> float:
    """The batch objective with current log-probabilities recomputed from ``policy``.

    Behavior (old) and reference log-probabilities stay as stored, so this is
    the function of the policy parameters whose gradient ``grpo_step`` takes.
    """
    total = 0.0
    for group in groups:
        cur_lp = policy.log_probs(group.features)
        g = 0.0
        for r in group.rollouts:
            lp = float(sum(cur_lp[h][r.bins[j]] for j, h in enumerate(HEADS)))
            s = math.exp(lp - r.logp_old)
            g += _clipped_term(s, r.advantage, cfg.clip_eps)
        kl = _group_kl(cur_lp, group.ref_log_probs)
        total += g / len(group.rollouts) - cfg.kl_weight * kl
    return total / len(groups)


@dataclass(frozen=True)
class StepStats:
    mean_reward: float
    mean_kl: float
    clip_fraction: float
    mae_pan: float
    mae_tilt: float
    mae_zoom: float


def grpo_step(
    policy: ToyPolicy, groups: Sequence[RolloutGroup], cfg: GRPOConfig
) -> tuple[ToyPolicy, StepStats]:
    """One ascent step on the batch objective via the analytic gradient."""
    grads = {h: np.zeros_like(policy.weights[h]) for h in HEADS}
    n_groups = len(groups)
    n_rollouts = 0
    n_clipped = 0
    reward_sum = 0.0
    kl_sum = 0.0
    abs_err = np.zeros(3)
    n_err = 0
    for group in groups:
        phi = policy._phi(group.features)
        cur_lp = policy.log_probs(group.features)
        probs = {h: np.exp(cur_lp[h]) for h in HEADS}
        n = len(group.rollouts)
        for r in group.rollouts:
            n_rollouts += 1
            reward_sum += r.reward
            lp = float(sum(cur_lp[h][r.bins[j]] for j, h in enumerate(HEADS)))
            if not math.isfinite(lp) or not math.isfinite(r.logp_old):
                raise ValueError("non-finite log-probabilities in rollout group")
            s = math.exp(lp - r.logp_old)
            clipped = (r.advantage > 0 and s > 1.0 + cfg.clip_eps) or (
                r.advantage < 0 and s < 1.0 - cfg.clip_eps
            )
            if clipped:
                n_clipped += 1
                continue
            coef = s * r.advantage / (n * n_groups)
            if coef == 0.0:
                continue
            for j, h in enumerate(HEADS):
                dz = -probs[h] * coef
                dz[r.bins[j]] += coef
                grads[h] += np.outer(dz, phi)
        if group.gt_action is not None:
            gt = np.array(group.gt_action.as_tuple(), dtype=np.float64)
            for r in group.rollouts:
                abs_err += np.abs(np.array(r.action.as_tuple(), dtype=np.float64) - gt)
                n_err += 1
        kl = 0.0
        for h in HEADS:
            diff = cur_lp[h] - group.ref_log_probs[h]
            kl_h = float(np.sum(probs[h] * diff))
            kl += kl_h
            if cfg.kl_weight > 0.0:
                dz = probs[h] * (diff - kl_h)
                grads[h] -= (cfg.kl_weight / n_groups) * np.outer(dz, phi)
        kl_sum += kl
    new_weights = {h: policy.weights[h] + cfg.learning_rate * grads[h] for h in HEADS}
    if any(not np.all(np.isfinite(w)) for w in new_weights.values()):
        raise ValueError("non-finite gradient step")
    new_policy = ToyPolicy({h: policy.bins[h] for h in HEADS}, new_weights)
    mae = abs_err / n_err if n_err else np.full(3, float("nan"))
    stats = StepStats(
        mean_reward=reward_sum / n_rollouts,
        mean_kl=kl_sum / n_groups,
        clip_fraction=n_clipped / n_rollouts,
        mae_pan=float(mae[0]),
        mae_tilt=float(mae[1]),
        mae_zoom=float(mae[2]),
    )
    return new_policy, stats


def grpo_train(
    policy: ToyPolicy,
    tasks: Sequence[GrpoTask],
    k: CameraIntrinsics,
    cfg: GRPOConfig,
    reward_cfg: RewardConfig,
    steps: int,
    seed: int = 0,
) -> tuple[ToyPolicy, list[StepStats]]:
    """On-policy training loop: sample groups for every task, take one step."""
    if not tasks:
        raise ValueError("no tasks to train on")
    ref = policy.clone()
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(steps):
        groups = [
            build_rollout_group(policy, ref, task, k, cfg, reward_cfg, rng) for task in tasks
        ]
        policy, stats = grpo_step(policy, groups, cfg)
        history.append(stats)
    return policy, history


def write_training_log(path, history: Sequence[StepStats]) -> None:
    """Line-delimited per-step records of the training trajectory."""
    with open(path, "w", encoding="utf-8") as fh:
        for step, st in enumerate(history):
            rec = {
                "step": step,
                "mean_reward": st.mean_reward,
                "mean_kl": st.mean_kl,
                "clip_fraction": st.clip_fraction,
                "mae_pan": st.mae_pan,
                "mae_tilt": st.mae_tilt,
                "mae_zoom": st.mae_zoom,
            }
            fh.write(json.dumps(rec) + "\n")
