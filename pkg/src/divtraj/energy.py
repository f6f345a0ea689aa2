"""Diversity and quality objectives for trajectory sample sets.

Includes the expected-cardinality loss for direct-code samplers, the
energy-based objective for affine-flow samplers (RBF diversity energy,
min-distance reconstruction energy, optional similar-slice energy for
controllable prediction), and the joint multi-sample variant that adds the
three terms over whole multi-agent trajectories.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dpp import DppKernel, expected_cardinality
from .flows import AffineFlowSet, kl_to_standard_normal
from .trajectory import SampleSet, as_trajectory

__all__ = [
    "EnergyConfig",
    "diversity_energy",
    "reconstruction_energy",
    "similarity_energy",
    "dsf_loss",
    "dlow_loss",
    "joint_sampler_loss",
]


@dataclass(frozen=True)
class EnergyConfig:
    """Weights and scales of the flow-sampler objective.

    ``joint_split``, when set, is a pair (J_s, J_d) of disjoint covering
    index tuples over the last (state) axis: the similar-slice energy acts
    on J_s and the diversity energy is then restricted to J_d.
    """

    sigma_d: float = 100.0
    lambda_d: float = 25.0
    lambda_r: float = 2.0
    lambda_s: float = 0.0
    beta: float = 1.0
    joint_split: tuple | None = None

    def __post_init__(self):
        if self.sigma_d <= 0:
            raise ValueError("sigma_d must be > 0")
        for name in ("lambda_d", "lambda_r", "lambda_s", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.joint_split is not None:
            j_s, j_d = self.joint_split
            object.__setattr__(self, "joint_split", (tuple(j_s), tuple(j_d)))

    def validate_split(self, dim: int) -> None:
        if self.joint_split is not None:
            _validate_partition(self.joint_split, dim)


def _validate_partition(split, dim: int) -> None:
    j_s, j_d = split
    if set(j_s) & set(j_d):
        raise ValueError("invalid partition: J_s and J_d must be disjoint")
    if set(j_s) | set(j_d) != set(range(dim)):
        raise ValueError(f"invalid partition: J_s and J_d must cover all {dim} state dimensions")


def _pairwise_sq_dists(flat: np.ndarray) -> np.ndarray:
    diff = flat[:, None, :] - flat[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _slice_flat(samples: SampleSet, dims) -> np.ndarray:
    # restrict the state axis to `dims` before flattening; empty -> (K, 0)
    k = samples.k
    if len(dims) == 0:
        return np.zeros((k, 0))
    return samples.samples[:, :, list(dims)].reshape(k, -1)


def diversity_energy(samples: SampleSet, sigma_d: float, dims=None) -> float:
    """RBF pairwise-proximity energy in (0, 1]; 1 iff all samples coincide.

    ``dims``, when given, restricts the distance to those state dimensions
    (controllable mode).
    """
    if sigma_d <= 0:
        raise ValueError("sigma_d must be > 0")
    k = samples.k
    if k < 2:
        raise ValueError("diversity energy requires K >= 2")
    flat = samples.flat() if dims is None else _slice_flat(samples, dims)
    d2 = _pairwise_sq_dists(flat)
    off = ~np.eye(k, dtype=bool)
    return float(np.exp(-d2[off] / sigma_d).sum() / (k * (k - 1)))


def reconstruction_energy(samples: SampleSet, gt) -> float:
    """Min squared flattened distance from the sample set to the ground truth."""
    gt = as_trajectory(gt)
    if samples.samples[0].shape != gt.shape:
        raise ValueError(f"shape mismatch: {samples.samples[0].shape} vs {gt.shape}")
    diff = samples.flat() - gt.reshape(-1)[None, :]
    return float(np.einsum("ij,ij->i", diff, diff).min())


def similarity_energy(samples: SampleSet, split) -> float:
    """Mean pairwise squared distance over the similar-slice dimensions J_s.

    An empty J_s gives 0 by convention.
    """
    k = samples.k
    if k < 2:
        raise ValueError("similarity energy requires K >= 2")
    _validate_partition(split, samples.samples.shape[2])
    flat = _slice_flat(samples, split[0])
    if flat.shape[1] == 0:
        return 0.0
    d2 = _pairwise_sq_dists(flat)
    off = ~np.eye(k, dtype=bool)
    return float(d2[off].sum() / (k * (k - 1)))


def dsf_loss(kernel: DppKernel) -> float:
    """Negated expected cardinality of the sample-set DPP; in (-N, 0]."""
    return -expected_cardinality(kernel)


def dlow_loss(flows: AffineFlowSet, samples: SampleSet, gt, cfg: EnergyConfig) -> dict:
    """Weighted flow-sampler objective with per-term breakdown.

    total = beta * sum_k KL_k + lambda_d * E_d + lambda_r * E_r
    (+ lambda_s * E_s over the J_s slice when a split is configured, with
    E_d then restricted to the J_d slice).
    """
    cfg.validate_split(samples.samples.shape[2])
    kl_sum = float(np.sum(kl_to_standard_normal(flows)))
    if cfg.joint_split is None:
        e_d = diversity_energy(samples, cfg.sigma_d)
        e_s = 0.0
    else:
        j_s, j_d = cfg.joint_split
        e_d = diversity_energy(samples, cfg.sigma_d, dims=j_d)
        e_s = similarity_energy(samples, (j_s, j_d))
    e_r = reconstruction_energy(samples, gt)
    terms = {
        "kl": cfg.beta * kl_sum,
        "diversity": cfg.lambda_d * e_d,
        "reconstruction": cfg.lambda_r * e_r,
    }
    if cfg.joint_split is not None:
        terms["similarity"] = cfg.lambda_s * e_s
    return {
        "total": float(sum(terms.values())),
        "terms": terms,
        "raw": {"kl_sum": kl_sum, "e_d": e_d, "e_r": e_r, "e_s": e_s},
    }


def joint_sampler_loss(sample_sets, gt, kls, sigma_d: float) -> float:
    """Joint multi-sample loss: best-sample squared error + KL sum + RBF
    pairwise proximity over whole joint trajectories (0 when K = 1)."""
    if sigma_d <= 0:
        raise ValueError("sigma_d must be > 0")
    stacked = np.stack([np.asarray(y, dtype=float) for y in sample_sets])
    gt = np.asarray(gt, dtype=float)
    if stacked.shape[1:] != gt.shape:
        raise ValueError(f"shape mismatch: samples {stacked.shape[1:]} vs gt {gt.shape}")
    k = stacked.shape[0]
    flat = stacked.reshape(k, -1)
    diff = flat - gt.reshape(-1)[None, :]
    recon = float(np.einsum("ij,ij->i", diff, diff).min())
    kl_sum = float(np.sum(np.asarray(kls, dtype=float)))
    if k < 2:
        return recon + kl_sum
    d2 = _pairwise_sq_dists(flat)
    off = ~np.eye(k, dtype=bool)
    div = float(np.exp(-d2[off] / sigma_d).sum() / (k * (k - 1)))
    return recon + kl_sum + div
