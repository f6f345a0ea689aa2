"""Trajectory value types and the diversity/accuracy metric suite.

Conventions (fixed across the whole package and documented in report
headers):

* ADE/FDE and their multi-modal variants use the per-timestep mean
  Euclidean pose distance, ``min_k (1/T) * sum_t ||x_k^t - gt^t||``.
* APD uses the Euclidean norm of whole flattened trajectories.
* ASD averages per-timestep pose distances before taking the nearest
  neighbor; FSD uses the final pose only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Context",
    "Example",
    "Dataset",
    "SampleSet",
    "MetricsReport",
    "as_trajectory",
    "traj_distance",
    "ade",
    "fde",
    "apd",
    "asd_fsd",
    "build_multimodal_gt",
    "mm_metrics",
    "evaluate_sample_sets",
]

METRIC_NAMES = ("apd", "asd", "fsd", "ade", "fde", "mmade", "mmfde")

METRIC_CONVENTIONS = (
    "ADE/FDE/MMADE/MMFDE: min over samples of per-timestep mean Euclidean "
    "pose distance (FDE: final pose only); APD: mean pairwise Euclidean "
    "distance of flattened trajectories; ASD/FSD: mean over samples of the "
    "nearest-other-sample distance (per-timestep averaged / final pose)."
)


def as_trajectory(steps) -> np.ndarray:
    """Validate and return a T x D float trajectory array.

    Raises ValueError on wrong rank, empty axes, or non-finite entries.
    """
    arr = np.asarray(steps, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"trajectory must be a T x D array with T, D >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("trajectory contains non-finite entries")
    return arr


@dataclass(frozen=True)
class Context:
    """Forecasting context: past trajectory plus optional flat side features."""

    past: np.ndarray
    features: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "past", as_trajectory(self.past))
        feats = np.asarray(self.features, dtype=float).reshape(-1)
        if not np.all(np.isfinite(feats)):
            raise ValueError("context features contain non-finite entries")
        object.__setattr__(self, "features", feats)

    def flat(self) -> np.ndarray:
        """Past trajectory flattened and concatenated with the feature vector."""
        return np.concatenate([self.past.reshape(-1), self.features])


@dataclass(frozen=True)
class Example:
    context: Context
    future: np.ndarray
    id: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "future", as_trajectory(self.future))


@dataclass(frozen=True)
class Dataset:
    """Shape-homogeneous ordered collection of forecasting examples."""

    examples: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        examples = tuple(self.examples)
        object.__setattr__(self, "examples", examples)
        if examples:
            t, d = examples[0].future.shape
            h = examples[0].context.past.shape[0]
            ids = set()
            for ex in examples:
                if ex.future.shape != (t, d) or ex.context.past.shape != (h, d):
                    raise ValueError("dataset examples are not shape-homogeneous")
                if ex.id in ids:
                    raise ValueError(f"duplicate example id {ex.id}")
                ids.add(ex.id)
            meta = dict(self.meta)
            meta.setdefault("T", t)
            meta.setdefault("H", h)
            meta.setdefault("D", d)
            object.__setattr__(self, "meta", meta)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


@dataclass(frozen=True)
class SampleSet:
    """K forecast samples for one context, stored as a K x T x D array."""

    samples: np.ndarray
    context_id: int = -1

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ValueError(f"samples must be a K x T x D array with K >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples contain non-finite entries")
        object.__setattr__(self, "samples", arr)

    @property
    def k(self) -> int:
        return self.samples.shape[0]

    def flat(self) -> np.ndarray:
        """Samples flattened to a K x (T*D) matrix."""
        return self.samples.reshape(self.samples.shape[0], -1)


@dataclass(frozen=True)
class MetricsReport:
    """Per-example metric table plus dataset means."""

    per_example: tuple  # of dicts: {"id": int, "apd": float, ...}
    means: dict
    conventions: str = METRIC_CONVENTIONS

    def mean(self, name: str) -> float:
        return self.means[name]


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def traj_distance(a, b) -> float:
    """Euclidean norm of the flattened difference between two trajectories."""
    a = as_trajectory(a)
    b = as_trajectory(b)
    _check_same_shape(a, b)
    return float(np.linalg.norm((a - b).reshape(-1)))


def _per_step_mean_dist(samples: np.ndarray, gt: np.ndarray) -> np.ndarray:
    # samples: (K, T, D), gt: (T, D) -> (K,) mean-over-t pose distance
    return np.linalg.norm(samples - gt[None], axis=2).mean(axis=1)


def ade(samples: SampleSet, gt) -> float:
    """Min over samples of the per-timestep mean Euclidean pose distance."""
    gt = as_trajectory(gt)
    _check_same_shape(samples.samples[0], gt)
    return float(_per_step_mean_dist(samples.samples, gt).min())


def fde(samples: SampleSet, gt) -> float:
    """Min over samples of the final-pose Euclidean distance."""
    gt = as_trajectory(gt)
    _check_same_shape(samples.samples[0], gt)
    return float(np.linalg.norm(samples.samples[:, -1] - gt[-1], axis=1).min())


def apd(samples: SampleSet) -> float:
    """Average pairwise Euclidean distance between flattened samples.

    Requires K >= 2; permutation invariant; zero iff all samples coincide.
    """
    k = samples.k
    if k < 2:
        raise ValueError("apd requires at least 2 samples")
    flat = samples.flat()
    dists = np.linalg.norm(flat[:, None, :] - flat[None, :, :], axis=2)
    return float(dists.sum() / (k * (k - 1)))


def asd_fsd(samples: SampleSet) -> tuple[float, float]:
    """Nearest-other-sample self distances (per-timestep averaged, final pose).

    ASD_i = min_{j != i} mean_t ||x_i^t - x_j^t||; FSD_i uses the final pose
    only. Both are averaged over i. The two minima are taken independently.
    """
    k = samples.k
    if k < 2:
        raise ValueError("asd/fsd require at least 2 samples")
    arr = samples.samples
    step_dists = np.linalg.norm(arr[:, None] - arr[None, :], axis=3)  # (K, K, T)
    mean_dists = step_dists.mean(axis=2)
    final_dists = step_dists[:, :, -1]
    off = ~np.eye(k, dtype=bool)
    asd_val = mean_dists[off].reshape(k, k - 1).min(axis=1).mean()
    fsd_val = final_dists[off].reshape(k, k - 1).min(axis=1).mean()
    return float(asd_val), float(fsd_val)


def build_multimodal_gt(dataset: Dataset, eps: float) -> dict[int, list[np.ndarray]]:
    """Group futures of examples whose contexts lie within eps of each anchor.

    Membership is pairwise to the anchor (no transitive closure): example j
    contributes its future to anchor i iff ||ctx_j - ctx_i|| <= eps on
    flattened contexts. Each anchor always keeps its own future.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    ctx = np.stack([ex.context.flat() for ex in dataset.examples])
    dists = np.linalg.norm(ctx[:, None, :] - ctx[None, :, :], axis=2)
    out: dict[int, list[np.ndarray]] = {}
    for i, ex in enumerate(dataset.examples):
        members = np.flatnonzero(dists[i] <= eps)
        futures = [dataset.examples[j].future for j in members]
        if i not in members:  # guard against float noise on the self distance
            futures.insert(0, ex.future)
        out[ex.id] = futures
    return out


def mm_metrics(samples: SampleSet, gt_set: list) -> tuple[float, float]:
    """ADE/FDE averaged over a multi-modal ground-truth set."""
    if len(gt_set) == 0:
        raise ValueError("gt_set must be non-empty")
    ades = [ade(samples, gt) for gt in gt_set]
    fdes = [fde(samples, gt) for gt in gt_set]
    return float(np.mean(ades)), float(np.mean(fdes))


def evaluate_sample_sets(dataset: Dataset, sample_sets: dict[int, SampleSet], eps: float) -> MetricsReport:
    """Compute the full metric table for per-example sample sets.

    ``sample_sets`` maps example id -> SampleSet; every dataset example must
    be covered. ``eps`` is the multi-modal context-grouping threshold.
    """
    missing = [ex.id for ex in dataset.examples if ex.id not in sample_sets]
    if missing:
        raise ValueError(f"missing sample sets for example ids {missing}")
    mm_gt = build_multimodal_gt(dataset, eps)
    rows = []
    for ex in dataset.examples:
        ss = sample_sets[ex.id]
        asd_val, fsd_val = asd_fsd(ss)
        mmade, mmfde = mm_metrics(ss, mm_gt[ex.id])
        rows.append(
            {
                "id": ex.id,
                "apd": apd(ss),
                "asd": asd_val,
                "fsd": fsd_val,
                "ade": ade(ss, ex.future),
                "fde": fde(ss, ex.future),
                "mmade": mmade,
                "mmfde": mmfde,
            }
        )
    means = {name: float(np.mean([r[name] for r in rows])) for name in METRIC_NAMES}
    return MetricsReport(per_example=tuple(rows), means=means)
