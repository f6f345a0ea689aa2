"""Invertible affine latent maps, their KL to the standard normal, and noise.

A flow set carries K maps z_k = A_k @ eps + b_k sharing one noise draw; the
direct-code sampler is the degenerate case where the K latent codes are the
parameters themselves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AffineFlowSet",
    "DsfCodes",
    "apply_flows",
    "invert_flow",
    "kl_to_standard_normal",
    "sample_noise",
]

DET_TOL = 1e-12


@dataclass(frozen=True)
class AffineFlowSet:
    """K invertible affine maps (A_k, b_k) over an n_z-dimensional latent space."""

    A: np.ndarray  # (K, n_z, n_z)
    b: np.ndarray  # (K, n_z)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2] or A.shape[0] < 1:
            raise ValueError(f"A must be (K, n_z, n_z) with K >= 1, got {A.shape}")
        if b.shape != A.shape[:2]:
            raise ValueError(f"b must be (K, n_z), got {b.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("flow parameters contain non-finite entries")
        dets = np.linalg.det(A)
        if np.any(np.abs(dets) <= DET_TOL):
            raise ValueError("flow not invertible: |det A_k| below threshold")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def k(self) -> int:
        return self.A.shape[0]

    @property
    def n_z(self) -> int:
        return self.A.shape[1]

    @staticmethod
    def identity(k: int, n_z: int) -> "AffineFlowSet":
        return AffineFlowSet(A=np.tile(np.eye(n_z), (k, 1, 1)), b=np.zeros((k, n_z)))


@dataclass(frozen=True)
class DsfCodes:
    """K directly parameterized latent codes (a sampler with no input)."""

    codes: np.ndarray  # (K, n_z)

    def __post_init__(self):
        codes = np.atleast_2d(np.asarray(self.codes, dtype=float))
        if codes.shape[0] < 1:
            raise ValueError("need K >= 1 codes")
        if not np.all(np.isfinite(codes)):
            raise ValueError("codes contain non-finite entries")
        object.__setattr__(self, "codes", codes)

    @property
    def k(self) -> int:
        return self.codes.shape[0]

    @property
    def n_z(self) -> int:
        return self.codes.shape[1]


def apply_flows(flows: AffineFlowSet, eps) -> np.ndarray:
    """Map one shared noise vector through all K flows: z_k = A_k @ eps + b_k."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (flows.n_z,):
        raise ValueError(f"eps must have shape ({flows.n_z},), got {eps.shape}")
    return np.einsum("kij,j->ki", flows.A, eps) + flows.b


def invert_flow(flows: AffineFlowSet, k: int, z) -> np.ndarray:
    """Recover the noise that flow k maps to z: eps = A_k^{-1} (z - b_k)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (flows.n_z,):
        raise ValueError(f"z must have shape ({flows.n_z},), got {z.shape}")
    A = flows.A[k]
    if abs(np.linalg.det(A)) <= DET_TOL:
        raise ValueError("flow not invertible")
    return np.linalg.solve(A, z - flows.b[k])


def kl_to_standard_normal(flows: AffineFlowSet, k: int | None = None):
    """Analytic KL of the flow-induced Gaussian N(b, A A^T) to N(0, I).

    KL_k = 0.5 * (tr(A A^T) + b'b - n_z - log det(A A^T)); zero iff A is
    orthogonal and b = 0. Returns one float for a given k, else the (K,)
    vector.
    """
    A = flows.A if k is None else flows.A[None, k]
    b = flows.b if k is None else flows.b[None, k]
    n_z = flows.n_z
    tr = np.einsum("kij,kij->k", A, A)
    sq = np.einsum("ki,ki->k", b, b)
    _, logabsdet = np.linalg.slogdet(A)
    kl = 0.5 * (tr + sq - n_z - 2.0 * logabsdet)
    return kl if k is None else float(kl[0])


def sample_noise(seed, n_z: int) -> np.ndarray:
    """n_z i.i.d. standard normal draws from a seeded, platform-stable generator."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n_z)
