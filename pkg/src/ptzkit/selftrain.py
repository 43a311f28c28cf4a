"""Multi-round IoU-filtered self-training over pluggable policies.

Each round the current policy predicts an (action, bbox) pair for every
training sample; samples whose predicted bbox overlaps the ground-truth box
above the round's IoU threshold survive, carrying the predicted action as
their new label and (optionally) the ground-truth box as supervision.  The
policy is refit on the survivors and scored on a held-out split.  Policies
are adapters around the oracle, a noise-corrupted oracle, a fitted regressor,
or a trained toy policy, so the loop runs end to end on synthetic scenes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

import numpy as np

from ptzkit import pseudolabel as pl
from ptzkit.camera import (
    BBoxPx,
    CameraIntrinsics,
    CameraState,
    TargetSpec,
    VISIBILITY_FULL,
    apply_action,
    area_ratio,
    iou,
    oracle_action,
    project,
    round_half_away,
)
from ptzkit.codec import MAX_ACTION_VALUE, ActionDelta
from ptzkit.pseudolabel import FeatureVec, RegressorConfig, RegressorModel
from ptzkit.rewards import GrpoTask, ToyPolicy

DEFAULT_FILL_RATIO = 0.30


class EmptyFilterError(RuntimeError):
    """An IoU filter round kept nothing; continuing would fabricate trends."""

    def __init__(self, round_idx: int, threshold: float):
        self.round_idx = round_idx
        self.threshold = threshold
        super().__init__(
            f"round {round_idx} filtered every sample at IoU threshold {threshold}"
        )


@dataclass(frozen=True)
class CompletionConfig:
    center_frac: float = 0.1
    min_area_ratio: float = 0.25
    require_full_visibility: bool = True


@dataclass(frozen=True)
class SampleTuple:
    id: str
    instruction: str
    features: FeatureVec
    camera_init: CameraState
    target: TargetSpec
    gt_action: ActionDelta
    gt_bbox_post: BBoxPx


@dataclass(frozen=True)
class MetricsReport:
    mae_theta1: float
    mae_theta2: float
    mae_zoom: float
    mean_iou: float
    completion_rate: float
    n_samples: int


@dataclass(frozen=True)
class RoundDiagnostics:
    n_total: int
    n_kept: int
    kept_fraction: float
    mean_iou_all: float
    mean_iou_kept: float


@dataclass(frozen=True)
class RoundReport:
    round_idx: int
    threshold: float | None
    kept_fraction: float
    metrics: MetricsReport


@dataclass(frozen=True)
class IterationConfig:
    rounds: int = 2
    iou_thresholds: tuple[float, ...] = (0.7, 0.95)
    replace_bbox: bool = True
    refit_each_round: bool = True
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if any(not 0.0 <= t <= 1.0 for t in self.iou_thresholds):
            raise ValueError("IoU thresholds must lie in [0, 1]")
        if len(self.iou_thresholds) < self.rounds - 1:
            raise ValueError("need at least rounds - 1 IoU thresholds")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in (0, 1)")

    def threshold_for_round(self, round_idx: int) -> float:
        # rounds beyond the list reuse its last threshold
        return self.iou_thresholds[min(round_idx - 1, len(self.iou_thresholds) - 1)]


class PolicyAdapter(Protocol):
    def predict(self, sample: SampleTuple) -> tuple[ActionDelta, BBoxPx]: ...


def _simulate_bbox(sample: SampleTuple, action: ActionDelta, k: CameraIntrinsics) -> BBoxPx:
    return project(apply_action(sample.camera_init, action), k, sample.target)


@dataclass(frozen=True)
class OraclePolicy:
    k: CameraIntrinsics
    fill_ratio: float = DEFAULT_FILL_RATIO

    def predict(self, sample: SampleTuple) -> tuple[ActionDelta, BBoxPx]:
        action = oracle_action(sample.camera_init, self.k, sample.target, self.fill_ratio)
        return action, _simulate_bbox(sample, action, self.k)


def _sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    # keyed by (seed, id) so per-sample noise is order-independent
    digest = hashlib.blake2b(sample_id.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(np.random.SeedSequence([seed, int.from_bytes(digest, "big")]))


@dataclass(frozen=True)
class NoisyOraclePolicy:
    """Oracle action plus Gaussian noise, rounded back to integers."""

    k: CameraIntrinsics
    sigma_pan: float = 5.0
    sigma_tilt: float = 5.0
    sigma_zoom: float = 30.0
    seed: int = 0
    fill_ratio: float = DEFAULT_FILL_RATIO

    def predict(self, sample: SampleTuple) -> tuple[ActionDelta, BBoxPx]:
        exact = oracle_action(sample.camera_init, self.k, sample.target, self.fill_ratio)
        rng = _sample_rng(self.seed, sample.id)
        noise = rng.normal(0.0, [self.sigma_pan, self.sigma_tilt, self.sigma_zoom])
        lim = MAX_ACTION_VALUE
        action = ActionDelta(
            max(-lim, min(lim, round_half_away(exact.pan_deg + noise[0]))),
            max(-lim, min(lim, round_half_away(exact.tilt_deg + noise[1]))),
            max(0, min(lim, round_half_away(exact.zoom_units + noise[2]))),
        )
        return action, _simulate_bbox(sample, action, self.k)


@dataclass(frozen=True)
class RegressorPolicy:
    model: RegressorModel
    k: CameraIntrinsics

    def predict(self, sample: SampleTuple) -> tuple[ActionDelta, BBoxPx]:
        pred = self.model.predict(sample.features)
        lim = MAX_ACTION_VALUE
        action = ActionDelta(
            max(-lim, min(lim, round_half_away(float(pred[0])))),
            max(-lim, min(lim, round_half_away(float(pred[1])))),
            max(0, min(lim, round_half_away(float(pred[2])))),
        )
        return action, _simulate_bbox(sample, action, self.k)


@dataclass(frozen=True)
class ToyPolicyAdapter:
    """Greedy (argmax) decoding of a trained toy policy."""

    policy: ToyPolicy
    k: CameraIntrinsics

    def predict(self, sample: SampleTuple) -> tuple[ActionDelta, BBoxPx]:
        action = self.policy.greedy(sample.features.as_array(False))
        return action, _simulate_bbox(sample, action, self.k)


@dataclass(frozen=True)
class ConstantPolicy:
    action: ActionDelta
    k: CameraIntrinsics

    def predict(self, sample: SampleTuple) -> tuple[ActionDelta, BBoxPx]:
        return self.action, _simulate_bbox(sample, self.action, self.k)


def make_samples(
    scene: Sequence[tuple[str, TargetSpec]],
    k: CameraIntrinsics,
    camera_init: CameraState = CameraState(),
    fill_ratio: float = DEFAULT_FILL_RATIO,
    templates: Sequence[str] = pl.DEFAULT_TEMPLATES,
    seed: int = 0,
) -> tuple[list[SampleTuple], list[tuple[str, str]]]:
    """Oracle-labeled samples for every target fully visible from the start pose."""
    rng = np.random.default_rng(seed)
    samples: list[SampleTuple] = []
    skipped: list[tuple[str, str]] = []
    for target_id, target in scene:
        template = templates[int(rng.integers(0, len(templates)))]
        bbox0 = project(camera_init, k, target)
        if bbox0.visibility != VISIBILITY_FULL:
            skipped.append((target_id, f"initial view is {bbox0.visibility}"))
            continue
        x_norm, y_norm = pl.normalize_center(bbox0, k.image_w, k.image_h)
        w1 = area_ratio(bbox0, k)
        _, w2_crop = pl.isotropic_crop(bbox0, k.image_w, k.image_h)
        zoom_feat = 0.5 * math.log2(w2_crop / w1)
        try:
            gt = oracle_action(camera_init, k, target, fill_ratio)
        except ValueError as exc:
            skipped.append((target_id, str(exc)))
            continue
        samples.append(
            SampleTuple(
                id=target_id,
                instruction=template.format(phrase=target.phrase),
                features=FeatureVec(x_norm, y_norm, w1, zoom_feat),
                camera_init=camera_init,
                target=target,
                gt_action=gt,
                gt_bbox_post=project(apply_action(camera_init, gt), k, target),
            )
        )
    return samples, skipped


def relabel(dataset: Sequence[SampleTuple], policy: PolicyAdapter) -> list[SampleTuple]:
    """Replace every working action label with the policy's prediction."""
    return [replace(s, gt_action=policy.predict(s)[0]) for s in dataset]


def completion(post_bbox: BBoxPx, k: CameraIntrinsics, cfg: CompletionConfig = CompletionConfig()) -> bool:
    """Centered-and-magnified predicate on the post-action view."""
    if post_bbox.is_empty():
        return False
    if cfg.require_full_visibility and post_bbox.visibility != VISIBILITY_FULL:
        return False
    cx, cy = post_bbox.center()
    dx = cx - k.image_w / 2.0
    dy = cy - k.image_h / 2.0
    if (dx * dx + dy * dy) ** 0.5 > cfg.center_frac * min(k.image_w, k.image_h):
        return False
    return area_ratio(post_bbox, k) >= cfg.min_area_ratio


def evaluate(
    policy: PolicyAdapter,
    testset: Sequence[SampleTuple],
    k: CameraIntrinsics,
    completion_cfg: CompletionConfig = CompletionConfig(),
) -> MetricsReport:
    """Per-dimension MAE, mean post-action IoU, and completion rate."""
    if not testset:
        raise ValueError("empty test set")
    abs_err = np.zeros(3)
    iou_sum = 0.0
    completed = 0
    for s in testset:
        action, bbox = policy.predict(s)
        abs_err += np.abs(
            np.array(action.as_tuple(), dtype=np.float64)
            - np.array(s.gt_action.as_tuple(), dtype=np.float64)
        )
        iou_sum += iou(bbox, s.gt_bbox_post)
        completed += bool(completion(bbox, k, completion_cfg))
    n = len(testset)
    return MetricsReport(
        mae_theta1=float(abs_err[0] / n),
        mae_theta2=float(abs_err[1] / n),
        mae_zoom=float(abs_err[2] / n),
        mean_iou=iou_sum / n,
        completion_rate=completed / n,
        n_samples=n,
    )


def run_round(
    dataset: Sequence[SampleTuple],
    policy: PolicyAdapter,
    threshold: float,
    replace_bbox: bool = True,
) -> tuple[list[SampleTuple], RoundDiagnostics]:
    """One filter round: keep samples whose predicted bbox beats the threshold.

    Kept samples carry the predicted action as their label; their supervision
    box is the ground-truth box when ``replace_bbox`` is on, otherwise the
    predicted box.
    """
    if not dataset:
        raise ValueError("empty dataset")
    refined: list[SampleTuple] = []
    iou_all = 0.0
    iou_kept = 0.0
    for s in dataset:
        action, bbox = policy.predict(s)
        overlap = iou(bbox, s.gt_bbox_post)
        iou_all += overlap
        if overlap > threshold:
            iou_kept += overlap
            refined.append(
                replace(
                    s,
                    gt_action=action,
                    gt_bbox_post=s.gt_bbox_post if replace_bbox else bbox,
                )
            )
    n, n_kept = len(dataset), len(refined)
    return refined, RoundDiagnostics(
        n_total=n,
        n_kept=n_kept,
        kept_fraction=n_kept / n,
        mean_iou_all=iou_all / n,
        mean_iou_kept=(iou_kept / n_kept) if n_kept else 0.0,
    )


PolicyFactory = Callable[[Sequence[SampleTuple], int], PolicyAdapter]


def regressor_policy_factory(k: CameraIntrinsics, cfg: RegressorConfig) -> PolicyFactory:
    """Refit operation: a fresh regressor on the round's dataset, seeded per round."""

    def factory(samples: Sequence[SampleTuple], round_idx: int) -> RegressorPolicy:
        round_cfg = replace(cfg, seed=cfg.seed + round_idx)
        model = pl.fit([(s.features, s.gt_action) for s in samples], round_cfg)
        return RegressorPolicy(model, k)

    return factory


def split_dataset(
    dataset: Sequence[SampleTuple], test_fraction: float, seed: int
) -> tuple[list[SampleTuple], list[SampleTuple]]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    n_test = max(1, int(round(len(dataset) * test_fraction)))
    test_idx = set(order[:n_test].tolist())
    train = [s for i, s in enumerate(dataset) if i not in test_idx]
    test = [s for i, s in enumerate(dataset) if i in test_idx]
    return train, test


def iterate(
    dataset: Sequence[SampleTuple],
    cfg: IterationConfig,
    policy_factory: PolicyFactory,
    k: CameraIntrinsics,
    testset: Sequence[SampleTuple] | None = None,
    completion_cfg: CompletionConfig = CompletionConfig(),
    on_round: Callable[[int, Sequence[SampleTuple]], None] | None = None,
) -> list[RoundReport]:
    """Fit, then repeat (predict, filter, relabel, refit), scoring every round.

    Round 0 is the baseline fit on the raw dataset.  Round r >= 1 filters at
    the configured threshold (reusing the last one when the list is short),
    refits on the survivors when ``refit_each_round`` is on, and evaluates on
    the held-out split.  An empty post-filter set aborts the run.  ``on_round``
    receives each round's refined dataset, e.g. to write it out.
    """
    if testset is None:
        train, testset = split_dataset(dataset, cfg.test_fraction, cfg.seed)
    else:
        train = list(dataset)
    if not train or not testset:
        raise ValueError("empty train or test split")
    policy = policy_factory(train, 0)
    reports = [
        RoundReport(0, None, 1.0, evaluate(policy, testset, k, completion_cfg))
    ]
    current = train
    for round_idx in range(1, cfg.rounds + 1):
        threshold = cfg.threshold_for_round(round_idx)
        current, diag = run_round(current, policy, threshold, cfg.replace_bbox)
        if not current:
            raise EmptyFilterError(round_idx, threshold)
        if on_round is not None:
            on_round(round_idx, current)
        if cfg.refit_each_round:
            try:
                policy = policy_factory(current, round_idx)
            except ValueError as exc:
                raise ValueError(
                    f"round {round_idx} kept only {len(current)} samples at IoU "
                    f"threshold {threshold}; refit failed: {exc}"
                ) from exc
        reports.append(
            RoundReport(
                round_idx,
                threshold,
                diag.kept_fraction,
                evaluate(policy, testset, k, completion_cfg),
            )
        )
    return reports


def grpo_tasks_from_samples(samples: Sequence[SampleTuple]) -> list[GrpoTask]:
    return [
        GrpoTask(
            prompt_id=s.id,
            features=s.features.as_array(False),
            camera=s.camera_init,
            target=s.target,
            gt_action=s.gt_action,
            gt_bbox=s.gt_bbox_post,
        )
        for s in samples
    ]


# --- file formats ----------------------------------------------------------


def write_round_reports(path, reports: Sequence[RoundReport]) -> None:
    """One JSON object per round with the filter and test metrics."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            rec = {
                "round": r.round_idx,
                "threshold": r.threshold,
                "kept_fraction": r.kept_fraction,
                "mean_iou": r.metrics.mean_iou,
                "mae_theta1": r.metrics.mae_theta1,
                "mae_theta2": r.metrics.mae_theta2,
                "mae_zoom": r.metrics.mae_zoom,
                "cr": r.metrics.completion_rate,
            }
            fh.write(json.dumps(rec) + "\n")


def sample_to_pseudolabel(s: SampleTuple, k: CameraIntrinsics) -> pl.PseudoLabel:
    return pl.PseudoLabel(
        record_id=s.id,
        instruction=s.instruction,
        action=s.gt_action,
        gt_bbox_post=s.gt_bbox_post,
        w1=s.features.w1,
        w2=area_ratio(s.gt_bbox_post, k),
    )


def write_samples(path, samples: Sequence[SampleTuple]) -> None:
    """Full sample tuples, one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            rec = {
                "id": s.id,
                "instruction": s.instruction,
                "features": {
                    "x_norm": s.features.x_norm,
                    "y_norm": s.features.y_norm,
                    "w1": s.features.w1,
                    "zoom_feat": s.features.zoom_feat,
                },
                "camera": {
                    "pan": s.camera_init.pan,
                    "tilt": s.camera_init.tilt,
                    "zoom": s.camera_init.zoom_units,
                },
                "target": {
                    "azimuth": s.target.azimuth,
                    "elevation": s.target.elevation,
                    "distance": s.target.distance,
                    "width": s.target.width,
                    "height": s.target.height,
                    "phrase": s.target.phrase,
                },
                "gt_action": {
                    "pan": s.gt_action.pan_deg,
                    "tilt": s.gt_action.tilt_deg,
                    "zoom": s.gt_action.zoom_units,
                },
                "gt_bbox_post": s.gt_bbox_post.as_list(),
                "gt_bbox_visibility": s.gt_bbox_post.visibility,
            }
            fh.write(json.dumps(rec) + "\n")


def read_samples(path) -> list[SampleTuple]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                f = rec["features"]
                b = rec["gt_bbox_post"]
                out.append(
                    SampleTuple(
                        id=str(rec["id"]),
                        instruction=str(rec["instruction"]),
                        features=FeatureVec(
                            float(f["x_norm"]),
                            float(f["y_norm"]),
                            float(f["w1"]),
                            None if f.get("zoom_feat") is None else float(f["zoom_feat"]),
                        ),
                        camera_init=CameraState(
                            rec["camera"]["pan"], rec["camera"]["tilt"], rec["camera"]["zoom"]
                        ),
                        target=TargetSpec(
                            azimuth=float(rec["target"]["azimuth"]),
                            elevation=float(rec["target"]["elevation"]),
                            distance=float(rec["target"]["distance"]),
                            width=float(rec["target"]["width"]),
                            height=float(rec["target"]["height"]),
                            phrase=str(rec["target"]["phrase"]),
                        ),
                        gt_action=ActionDelta(
                            rec["gt_action"]["pan"],
                            rec["gt_action"]["tilt"],
                            rec["gt_action"]["zoom"],
                        ),
                        gt_bbox_post=BBoxPx(
                            float(b[0]),
                            float(b[1]),
                            float(b[2]),
                            float(b[3]),
                            str(rec.get("gt_bbox_visibility", VISIBILITY_FULL)),
                        ),
                    )
                )
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad sample record ({exc})") from None
    return out
