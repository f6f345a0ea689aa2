"""Optimizers for the two trajectory samplers.

``train_dsf`` fits K directly parameterized latent codes against the
negated expected cardinality of the DPP kernel over the decoded set.
``train_dlow`` fits K affine latent flows against the weighted energy
objective (KL + diversity + reconstruction, optionally a similar-slice
term), with the expectation over the shared noise approximated by a fixed
set of per-run common random draws.

Both trainers require decoders with the additive-context property
(``decode(z, ctx) = decode(z, None) + context_offset(ctx)``): pairwise
energies and kernel similarities are then context-invariant, and the
reconstruction term folds the context offset into its target. Analytic
gradients are used for affine decoders exposing ``jacobian``; all other
paths fall back to central finite differences over the parameter vector.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dpp import GroundSet, KernelConfig, build_kernel
from .energy import EnergyConfig
from .flows import DET_TOL, AffineFlowSet, DsfCodes
from .trajectory import Dataset, Example

__all__ = [
    "TrainConfig",
    "TrainReport",
    "numeric_gradient",
    "AdamState",
    "adam_step",
    "train_dsf",
    "train_dlow",
]


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "dsf"  # "dsf" | "dlow"
    k: int = 10
    iters: int = 300
    lr: float = 5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    fd_step: float = 1e-4
    noise_draws_per_iter: int = 8
    kernel: KernelConfig = field(default_factory=KernelConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    fix_first_identity: bool = False
    context_featurization: bool = False

    def __post_init__(self):
        if self.mode not in ("dsf", "dlow"):
            raise ValueError(f"mode must be 'dsf' or 'dlow', got {self.mode!r}")
        for name in ("k", "iters", "noise_draws_per_iter"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr < 0:  # zero is allowed as an explicit no-op probe
            raise ValueError("lr must be >= 0")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be > 0")


@dataclass(frozen=True)
class TrainReport:
    """Per-iteration loss trace (evaluated before each update) plus finals."""

    trace: tuple  # of {"iter": int, "total": float, "terms": dict}
    final_loss: float
    final_terms: dict
    wall_time: float
    seed: int
    mode: str
    extras: dict = field(default_factory=dict)

    @property
    def initial_loss(self) -> float:
        return self.trace[0]["total"]


def numeric_gradient(f, at, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient with per-coordinate step h = step * max(1, |x|)."""
    x = np.asarray(at, dtype=float).copy()
    grad = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        orig = x[i]
        x[i] = orig + h
        f_plus = f(x)
        x[i] = orig - h
        f_minus = f(x)
        x[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"objective is non-finite near coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def init(n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return AdamState(m=np.zeros(n), v=np.zeros(n), t=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params, grad, state: AdamState, lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; pure and deterministic."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape:
        raise ValueError("params/grad shape mismatch")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, t=t)


def _dim_columns(dims, t_steps: int, state_dim: int) -> np.ndarray:
    """Flattened column indices of the given state dimensions (row-major T x D)."""
    return np.array([t * state_dim + d for t in range(t_steps) for d in dims], dtype=int)


class _DsfObjective:
    """Negated expected cardinality of the kernel over the decoded code set.

    Context offsets cancel in pairwise similarities and qualities are
    latent-only, so the loss is context-invariant for additive decoders.
    """

    def __init__(self, decoder, kcfg: KernelConfig, k: int):
        if kcfg.latent_dim != decoder.n_z:
            raise ValueError("kernel latent_dim must match the decoder latent dim")
        self.decoder = decoder
        self.kcfg = kcfg
        self.radius_sq = kcfg.radius**2
        self.k = k
        self.analytic = hasattr(decoder, "jacobian")

    def _codes(self, params: np.ndarray) -> np.ndarray:
        return params.reshape(self.k, self.decoder.n_z)

    def _kernel(self, codes: np.ndarray):
        items = self.decoder.decode_batch(codes, None).reshape(codes.shape[0], -1)
        return build_kernel(GroundSet(items=items, latents=codes), self.kcfg)

    def loss(self, params: np.ndarray) -> float:
        # fast path for finite-difference sweeps: same kernel math as
        # build_kernel without object construction/validation
        codes = self._codes(params)
        items = self.decoder.decode_batch(codes, None).reshape(codes.shape[0], -1)
        diff = items[:, None, :] - items[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        s = np.exp(-self.kcfg.sim_scale * d2)
        np.fill_diagonal(s, 1.0)
        sq = np.einsum("ij,ij->i", codes, codes)
        r = np.where(
            sq <= self.radius_sq,
            self.kcfg.base_quality,
            self.kcfg.base_quality * np.exp(-(sq - self.radius_sq)),
        )
        lam = np.clip(np.linalg.eigvalsh(r[:, None] * s * r[None, :]), 0.0, None)
        return float(-np.sum(lam / (lam + 1.0)))

    def breakdown(self, params: np.ndarray) -> dict:
        total = self.loss(params)
        return {"total": total, "terms": {"neg_expected_cardinality": total}}

    def grad(self, params: np.ndarray) -> np.ndarray:
        codes = self._codes(params)
        kernel = self._kernel(codes)
        lam, u = kernel.eigvals, kernel.eigvecs
        g_l = -(u * (1.0 / (1.0 + lam) ** 2)) @ u.T  # d(loss)/dL = -(L+I)^{-2}
        r, s = kernel.r, kernel.S
        g_r = 2.0 * (g_l * s) @ r
        pair_w = g_l * np.outer(r, r) * s
        items = self.decoder.decode_batch(codes, None).reshape(codes.shape[0], -1)
        g_items = -4.0 * self.kcfg.sim_scale * (
            pair_w.sum(axis=1)[:, None] * items - pair_w @ items
        )
        g_codes = g_items @ self.decoder.jacobian()
        sq = np.einsum("ij,ij->i", codes, codes)
        outside = sq > self.radius_sq
        if np.any(outside):
            g_codes[outside] += (-2.0 * g_r[outside] * r[outside])[:, None] * codes[outside]
        return g_codes.reshape(-1)


class _DlowObjective:
    """Noise-averaged energy objective over flow parameters.

    Parameter vector layout: trainable A blocks, then trainable b blocks
    (flow 0 excluded when it is pinned to the identity), then the optional
    per-context featurization blocks. With featurization enabled the flows
    become A_k + fold(Ma_k @ f), b_k + Mb_k @ f per example and the loss
    loops over examples (finite-difference gradients only).
    """

    def __init__(self, decoder, examples, cfg: TrainConfig, eps_draws: np.ndarray):
        self.decoder = decoder
        self.ecfg = cfg.energy
        self.eps = eps_draws
        self.k = cfg.k
        self.n_z = decoder.n_z
        self.fix_first = cfg.fix_first_identity
        self.featurized = cfg.context_featurization
        self.analytic = hasattr(decoder, "jacobian") and not self.featurized
        t_steps, state_dim = examples[0].future.shape
        self.ecfg.validate_split(state_dim)
        self.targets = np.stack(
            [ex.future.reshape(-1) - decoder.context_offset(ex.context) for ex in examples]
        )
        self.features = np.stack([ex.context.features for ex in examples])
        if self.ecfg.joint_split is None:
            self.cols_d = np.arange(t_steps * state_dim)
            self.cols_s = np.zeros(0, dtype=int)
        else:
            j_s, j_d = self.ecfg.joint_split
            self.cols_d = _dim_columns(j_d, t_steps, state_dim)
            self.cols_s = _dim_columns(j_s, t_steps, state_dim)

    # --- parameter packing -------------------------------------------------
    @property
    def k0(self) -> int:
        return 1 if self.fix_first else 0

    def n_params(self) -> int:
        base = (self.k - self.k0) * (self.n_z**2 + self.n_z)
        if self.featurized:
            f_dim = self.features.shape[1]
            base += (self.k - self.k0) * (self.n_z**2 + self.n_z) * f_dim
        return base

    def pack(self, flows: AffineFlowSet, feat_block: np.ndarray | None = None) -> np.ndarray:
        parts = [flows.A[self.k0 :].reshape(-1), flows.b[self.k0 :].reshape(-1)]
        if self.featurized:
            n_feat = self.n_params() - parts[0].size - parts[1].size
            parts.append(np.zeros(n_feat) if feat_block is None else feat_block.reshape(-1))
        return np.concatenate(parts)

    def unpack(self, params: np.ndarray):
        k_t, n_z = self.k - self.k0, self.n_z
        n_a, n_b = k_t * n_z * n_z, k_t * n_z
        a = np.tile(np.eye(n_z), (self.k, 1, 1))
        b = np.zeros((self.k, n_z))
        a[self.k0 :] = params[:n_a].reshape(k_t, n_z, n_z)
        b[self.k0 :] = params[n_a : n_a + n_b].reshape(k_t, n_z)
        feat = params[n_a + n_b :] if self.featurized else None
        return a, b, feat

    # --- loss ----------------------------------------------------------------
    def _flow_dets_ok(self, a: np.ndarray) -> bool:
        return bool(np.all(np.abs(np.linalg.det(a)) > DET_TOL))

    def _kl_terms(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        tr = np.einsum("kij,kij->k", a, a)
        sq = np.einsum("ki,ki->k", b, b)
        _, logabsdet = np.linalg.slogdet(a)
        return 0.5 * (tr + sq - self.n_z - 2.0 * logabsdet)

    def _energies(self, a: np.ndarray, b: np.ndarray, targets: np.ndarray):
        """Mean diversity/reconstruction/similar-slice energies over draws."""
        e_draws, k = self.eps.shape[0], self.k
        z = np.einsum("kij,ej->eki", a, self.eps) + b
        v = self.decoder.decode_batch(z.reshape(-1, self.n_z), None).reshape(e_draws, k, -1)
        vd = v[:, :, self.cols_d]
        diff_d = vd[:, :, None, :] - vd[:, None, :, :]
        d2 = np.einsum("eijk,eijk->eij", diff_d, diff_d)
        off = ~np.eye(k, dtype=bool)
        e_div = float(np.exp(-d2[:, off] / self.ecfg.sigma_d).sum() / (e_draws * k * (k - 1)))
        diff_t = v[None, :, :, :] - targets[:, None, None, :]  # (M, E, K, F)
        dist2 = np.einsum("mekf,mekf->mek", diff_t, diff_t)
        e_rec = float(dist2.min(axis=2).mean())
        if self.cols_s.size:
            vs = v[:, :, self.cols_s]
            diff_s = vs[:, :, None, :] - vs[:, None, :, :]
            s2 = np.einsum("eijk,eijk->eij", diff_s, diff_s)
            e_sim = float(s2[:, off].sum() / (e_draws * k * (k - 1)))
        else:
            e_sim = 0.0
        return e_div, e_rec, e_sim, v, dist2

    def breakdown(self, params: np.ndarray) -> dict:
        a, b, feat = self.unpack(params)
        if not self._flow_dets_ok(a):
            raise ValueError("flow not invertible")
        cfg = self.ecfg
        if self.featurized:
            kl_t = div_t = rec_t = sim_t = 0.0
            m = self.targets.shape[0]
            for i in range(m):
                a_i, b_i = self._featurized_flows(a, b, feat, self.features[i])
                if not self._flow_dets_ok(a_i):
                    raise ValueError("flow not invertible")
                kl_t += float(self._kl_terms(a_i, b_i).sum()) / m
                e_div, e_rec, e_sim, _, _ = self._energies(a_i, b_i, self.targets[i : i + 1])
                div_t += e_div / m
                rec_t += e_rec / m
                sim_t += e_sim / m
        else:
            kl_t = float(self._kl_terms(a, b).sum())
            div_t, rec_t, sim_t, _, _ = self._energies(a, b, self.targets)
        terms = {
            "kl": cfg.beta * kl_t,
            "diversity": cfg.lambda_d * div_t,
            "reconstruction": cfg.lambda_r * rec_t,
        }
        if cfg.joint_split is not None:
            terms["similarity"] = cfg.lambda_s * sim_t
        return {"total": float(sum(terms.values())), "terms": terms}

    def _featurized_flows(self, a, b, feat, features):
        k_t, n_z = self.k - self.k0, self.n_z
        f_dim = features.shape[0]
        n_ma = k_t * n_z * n_z * f_dim
        ma = feat[:n_ma].reshape(k_t, n_z, n_z, f_dim)
        mb = feat[n_ma:].reshape(k_t, n_z, f_dim)
        a_i = a.copy()
        b_i = b.copy()
        a_i[self.k0 :] += ma @ features
        b_i[self.k0 :] += mb @ features
        return a_i, b_i

    def loss(self, params: np.ndarray) -> float:
        return self.breakdown(params)["total"]

    def grad(self, params: np.ndarray) -> np.ndarray:
        if self.featurized:
            raise NotImplementedError("featurized flows train via finite differences")
        a, b, _ = self.unpack(params)
        if not self._flow_dets_ok(a):
            raise ValueError("flow not invertible")
        cfg = self.ecfg
        e_draws, k, m = self.eps.shape[0], self.k, self.targets.shape[0]
        g_a = cfg.beta * (a - np.linalg.inv(a).transpose(0, 2, 1))
        g_b = cfg.beta * b.copy()
        _, _, _, v, dist2 = self._energies(a, b, self.targets)
        g_v = np.zeros_like(v)
        off = ~np.eye(k, dtype=bool)
        # diversity energy over the J_d columns
        vd = v[:, :, self.cols_d]
        diff_d = vd[:, :, None, :] - vd[:, None, :, :]
        d2 = np.einsum("eijk,eijk->eij", diff_d, diff_d)
        w = np.exp(-d2 / cfg.sigma_d)
        w[:, ~off] = 0.0
        scale_d = cfg.lambda_d * (-4.0 / (cfg.sigma_d * e_draws * k * (k - 1)))
        g_v[:, :, self.cols_d] += scale_d * (
            w.sum(axis=2)[:, :, None] * vd - np.einsum("eij,ejf->eif", w, vd)
        )
        # reconstruction energy: subgradient at the per-(example, draw) argmin
        k_star = dist2.argmin(axis=2)  # (M, E)
        scale_r = cfg.lambda_r * 2.0 / (m * e_draws)
        m_idx = np.repeat(np.arange(m), e_draws)
        e_idx = np.tile(np.arange(e_draws), m)
        ks = k_star[m_idx, e_idx]
        np.add.at(g_v, (e_idx, ks), scale_r * (v[e_idx, ks] - self.targets[m_idx]))
        # similar-slice energy over the J_s columns
        if cfg.joint_split is not None and self.cols_s.size:
            vs = v[:, :, self.cols_s]
            scale_s = cfg.lambda_s * 4.0 / (e_draws * k * (k - 1))
            g_v[:, :, self.cols_s] += scale_s * (k * vs - vs.sum(axis=1)[:, None, :])
        g_z = np.einsum("ekf,fn->ekn", g_v, self.decoder.jacobian())
        g_a += np.einsum("ekn,em->knm", g_z, self.eps)
        g_b += g_z.sum(axis=0)
        return np.concatenate([g_a[self.k0 :].reshape(-1), g_b[self.k0 :].reshape(-1)])


def _as_examples(data) -> list[Example]:
    if isinstance(data, Dataset):
        return list(data.examples)
    if isinstance(data, Example):
        return [data]
    return list(data)


def _check_decoder_shape(decoder, examples) -> None:
    if examples and hasattr(decoder, "t_steps"):
        t, d = examples[0].future.shape
        if (decoder.t_steps, decoder.state_dim) != (t, d):
            raise ValueError(
                f"decoder output shape ({decoder.t_steps}, {decoder.state_dim}) "
                f"does not match data ({t}, {d})"
            )


def _run_optimizer(objective, params: np.ndarray, cfg: TrainConfig, singular_check=None):
    state = AdamState.init(params.size, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trace = []
    start = time.perf_counter()
    for i in range(cfg.iters):
        bd = objective.breakdown(params)
        trace.append({"iter": i, "total": bd["total"], "terms": bd["terms"]})
        if objective.analytic:
            grad = objective.grad(params)
        else:
            grad = numeric_gradient(objective.loss, params, cfg.fd_step)
        params, state = adam_step(params, grad, state, cfg.lr)
        if singular_check is not None and not singular_check(params):
            raise ValueError(f"flow became singular at iteration {i}")
    final = objective.breakdown(params)
    wall = time.perf_counter() - start
    report = TrainReport(
        trace=tuple(trace),
        final_loss=final["total"],
        final_terms=final["terms"],
        wall_time=wall,
        seed=cfg.seed,
        mode=cfg.mode,
    )
    return params, report


def train_dsf(data, decoder, cfg: TrainConfig, init_codes=None) -> tuple[DsfCodes, TrainReport]:
    """Optimize K direct latent codes against the DPP diversity loss.

    ``data`` may be a Dataset, a single Context/Example, or a sequence of
    them; for additive decoders the loss is context-invariant, so the data
    argument only pins expected shapes.
    """
    if cfg.mode != "dsf":
        raise ValueError("config mode must be 'dsf'")
    if isinstance(data, Dataset):
        _check_decoder_shape(decoder, list(data.examples))
    objective = _DsfObjective(decoder, cfg.kernel, cfg.k)
    rng = np.random.default_rng(cfg.seed)
    if init_codes is None:
        codes0 = rng.normal(0.0, 0.1, size=(cfg.k, decoder.n_z))
    else:
        codes0 = np.asarray(init_codes, dtype=float).reshape(cfg.k, decoder.n_z)
    params, report = _run_optimizer(objective, codes0.reshape(-1), cfg)
    return DsfCodes(codes=params.reshape(cfg.k, decoder.n_z)), report


def train_dlow(data, decoder, cfg: TrainConfig, init_flows=None) -> tuple[AffineFlowSet, TrainReport]:
    """Optimize K affine flows against the noise-averaged energy objective.

    The per-run noise draws are fixed up front (common random numbers across
    iterations), so runs are fully deterministic given (seed, config, data).
    Returns the flow set and the training report; featurization blocks, when
    enabled, are returned via ``report.extras["featurization"]``.
    """
    if cfg.mode != "dlow":
        raise ValueError("config mode must be 'dlow'")
    examples = _as_examples(data)
    if not examples:
        raise ValueError("training data must contain at least one example with a future")
    _check_decoder_shape(decoder, examples)
    rng = np.random.default_rng(cfg.seed)
    a0 = np.tile(np.eye(decoder.n_z), (cfg.k, 1, 1)) + rng.normal(
        0.0, 0.01, size=(cfg.k, decoder.n_z, decoder.n_z)
    )
    b0 = rng.normal(0.0, 0.1, size=(cfg.k, decoder.n_z))
    eps_draws = rng.standard_normal((cfg.noise_draws_per_iter, decoder.n_z))
    if cfg.fix_first_identity:
        a0[0] = np.eye(decoder.n_z)
        b0[0] = 0.0
    flows0 = AffineFlowSet(A=a0, b=b0) if init_flows is None else init_flows
    objective = _DlowObjective(decoder, examples, cfg, eps_draws)
    params0 = objective.pack(flows0)

    def dets_ok(params: np.ndarray) -> bool:
        a, _, _ = objective.unpack(params)
        return objective._flow_dets_ok(a)

    params, report = _run_optimizer(objective, params0, cfg, singular_check=dets_ok)
    a, b, feat = objective.unpack(params)
    flows = AffineFlowSet(A=a, b=b)
    if feat is not None:
        report.extras["featurization"] = feat.tolist()
    return flows, report
