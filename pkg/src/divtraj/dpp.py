"""DPP kernel construction, likelihood, expected cardinality, and MAP inference.

The L-ensemble kernel is L = Diag(r) * S * Diag(r) with an RBF similarity
matrix S over flattened trajectories and a latent-space quality vector r
that is flat inside a sphere of radius R and decays exponentially outside.
R is the chi-squared quantile radius containing a target fraction of
standard-normal mass.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import gammaincinv

__all__ = [
    "KernelConfig",
    "GroundSet",
    "DppKernel",
    "build_similarity",
    "quality_radius",
    "build_quality",
    "build_kernel",
    "expected_cardinality",
    "dpp_log_prob",
    "brute_force_oracle",
    "greedy_map",
]

# Eigenvalues of L in [-PSD_TOL * max(1, lambda_max), 0) are clamped to 0;
# anything lower is treated as a broken input, not repaired.
PSD_TOL = 1e-8

BRUTE_FORCE_MAX_N = 20


@dataclass(frozen=True)
class KernelConfig:
    """Hyperparameters of the trajectory DPP kernel."""

    sim_scale: float = 1.0
    base_quality: float = 1.0
    rho: float = 0.9
    latent_dim: int = 2

    def __post_init__(self):
        if self.sim_scale <= 0:
            raise ValueError("sim_scale must be > 0")
        if self.base_quality <= 0:
            raise ValueError("base_quality must be > 0")
        if not 0 < self.rho < 1:
            raise ValueError("rho must be in (0, 1)")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")

    @property
    def radius(self) -> float:
        return quality_radius(self.latent_dim, self.rho)


@dataclass(frozen=True)
class GroundSet:
    """N candidate items (flattened trajectories) with their latent codes."""

    items: np.ndarray  # (N, F)
    latents: np.ndarray  # (N, n_z)

    def __post_init__(self):
        items = np.atleast_2d(np.asarray(self.items, dtype=float))
        latents = np.atleast_2d(np.asarray(self.latents, dtype=float))
        if items.shape[0] < 1 or items.shape[0] != latents.shape[0]:
            raise ValueError("items and latents must be aligned, N >= 1")
        if not (np.all(np.isfinite(items)) and np.all(np.isfinite(latents))):
            raise ValueError("ground set contains non-finite entries")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "latents", latents)

    @property
    def n(self) -> int:
        return self.items.shape[0]


@dataclass(frozen=True)
class DppKernel:
    L: np.ndarray
    S: np.ndarray
    r: np.ndarray
    eigvals: np.ndarray  # ascending, tiny negatives clamped to 0
    eigvecs: np.ndarray

    @property
    def n(self) -> int:
        return self.L.shape[0]


def build_similarity(items, sim_scale: float) -> np.ndarray:
    """RBF similarity S_ij = exp(-sim_scale * d^2(x_i, x_j)), unit diagonal."""
    if sim_scale <= 0:
        raise ValueError("sim_scale must be > 0")
    items = np.atleast_2d(np.asarray(items, dtype=float))
    if not np.all(np.isfinite(items)):
        raise ValueError("items contain non-finite entries")
    diff = items[:, None, :] - items[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    s = np.exp(-sim_scale * d2)
    np.fill_diagonal(s, 1.0)
    return s


def quality_radius(latent_dim: int, rho: float) -> float:
    """Radius of the latent sphere containing a ``rho`` fraction of N(0, I) mass.

    R^2 is the chi-squared quantile with ``latent_dim`` degrees of freedom,
    obtained by inverting the regularized lower incomplete gamma function
    P(n/2, R^2/2) = rho.
    """
    if not 0 < rho < 1:
        raise ValueError("rho must be in (0, 1)")
    if latent_dim < 1:
        raise ValueError("latent_dim must be >= 1")
    return float(np.sqrt(2.0 * gammaincinv(latent_dim / 2.0, rho)))


def build_quality(latents, config: KernelConfig) -> np.ndarray:
    """Latent-space quality: flat at the base value inside the sphere,
    exponentially decaying outside; continuous at the boundary."""
    latents = np.atleast_2d(np.asarray(latents, dtype=float))
    if latents.shape[1] != config.latent_dim:
        raise ValueError(
            f"latent dim mismatch: got {latents.shape[1]}, config has {config.latent_dim}"
        )
    sq_norms = np.einsum("ij,ij->i", latents, latents)
    r2 = config.radius**2
    omega = config.base_quality
    return np.where(sq_norms <= r2, omega, omega * np.exp(-(sq_norms - r2)))


def build_kernel(ground: GroundSet, config: KernelConfig) -> DppKernel:
    """Assemble L = Diag(r) * S * Diag(r) and cache its eigendecomposition."""
    s = build_similarity(ground.items, config.sim_scale)
    r = build_quality(ground.latents, config)
    L = r[:, None] * s * r[None, :]
    eigvals, eigvecs = np.linalg.eigh(L)
    floor = -PSD_TOL * max(1.0, float(eigvals[-1]))
    if eigvals[0] < floor:
        raise ValueError(f"kernel not PSD: min eigenvalue {eigvals[0]:.3e} below {floor:.3e}")
    eigvals = np.clip(eigvals, 0.0, None)
    return DppKernel(L=L, S=s, r=r, eigvals=eigvals, eigvecs=eigvecs)


def expected_cardinality(kernel: DppKernel) -> float:
    """E|Y| = sum_n lambda_n / (lambda_n + 1) over the kernel eigenvalues."""
    lam = kernel.eigvals
    return float(np.sum(lam / (lam + 1.0)))


def dpp_log_prob(kernel: DppKernel, subset) -> float:
    """log P(Y) = log det(L_Y) - log det(L + I); -inf signals a singular L_Y."""
    subset = list(subset)
    if len(set(subset)) != len(subset):
        raise ValueError("subset indices must be distinct")
    n = kernel.n
    if any(i < 0 or i >= n for i in subset):
        raise ValueError("subset index out of range")
    log_norm = float(np.sum(np.log1p(kernel.eigvals)))
    if not subset:
        return -log_norm
    sub = kernel.L[np.ix_(subset, subset)]
    try:
        chol = np.linalg.cholesky(sub)
    except np.linalg.LinAlgError:
        return -np.inf
    return float(2.0 * np.sum(np.log(np.diag(chol))) - log_norm)


def brute_force_oracle(kernel: DppKernel) -> dict:
    """Enumerate all subsets: returns sum_Y det(L_Y) and the subset-size average.

    Independent of the eigenvalue paths; N is capped to keep 2^N enumeration
    tractable.
    """
    n = kernel.n
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force limited to N <= {BRUTE_FORCE_MAX_N}, got {n}")
    total = 1.0  # empty subset, det = 1
    weighted_size = 0.0
    for size in range(1, n + 1):
        for subset in combinations(range(n), size):
            det = float(np.linalg.det(kernel.L[np.ix_(subset, subset)]))
            total += det
            weighted_size += size * det
    return {"normalization": total, "expected_card": weighted_size / total}


def greedy_map(kernel: DppKernel) -> list[int]:
    """Greedy MAP inference: grow Y by the best log-det marginal gain.

    Stops when the best gain is strictly negative (zero gains are accepted);
    ties break toward the lowest item index. Returns items in selection
    order. Uses an incremental Cholesky factor of L_Y: for candidate x the
    gain is log of the Schur complement d = L_xx - w'w with C w = L[Y, x].
    """
    L = kernel.L
    n = kernel.n
    selected: list[int] = []
    remaining = list(range(n))
    chol = np.zeros((0, 0))
    while remaining:
        gains = np.full(len(remaining), -np.inf)
        ws = []
        for idx, x in enumerate(remaining):
            if selected:
                w = np.linalg.solve(chol, L[selected, x]) if chol.size else np.zeros(0)
                d = L[x, x] - w @ w
            else:
                w = np.zeros(0)
                d = L[x, x]
            ws.append(w)
            if d > 0:
                gains[idx] = np.log(d)
        best = int(np.argmax(gains))  # first max -> lowest index tie-break
        if not np.isfinite(gains[best]) or gains[best] < 0:
            break
        x = remaining.pop(best)
        w = ws[best]
        d_sqrt = np.sqrt(L[x, x] - w @ w)
        m = len(selected)
        new_chol = np.zeros((m + 1, m + 1))
        new_chol[:m, :m] = chol
        new_chol[m, :m] = w
        new_chol[m, m] = d_sqrt
        chol = new_chol
        selected.append(x)
    return selected
