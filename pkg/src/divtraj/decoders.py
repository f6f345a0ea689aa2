"""Deterministic latent-to-trajectory decoders.

``LinearDecoder`` is an affine analytic decoder used for gradient-checked
optimization. ``CrossroadDecoder`` emits one of three fixed route templates
(forward / left / right from the context endpoint) selected purely by the
angle of a 2-d latent code; the angular fraction of each sector equals the
configured mode probability, so decoding standard-normal latents reproduces
the configured route frequencies. Smooth bounded within-mode variation is
added from the angular offset inside the sector and the latent radius; the
variation vanishes on the sector bisector at unit radius. ``TabulatedDecoder``
interpolates a grid of precomputed trajectories so externally produced
models can be evaluated without linking them in.

All decoders here are additive in the context:
``decode(z, ctx) == decode(z, None) + context_offset(ctx)`` (reshaped), a
property the trainers rely on to batch latent codes across contexts.

Route template geometry (speed s, T future steps): forward continues the +x
heading at s per step; left/right are quarter-circle arcs of radius
2*s*T/pi (arc length s*T) traversed in T equal angular increments.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .trajectory import Context

__all__ = [
    "route_templates",
    "LinearDecoder",
    "CrossroadDecoder",
    "TabulatedDecoder",
    "decoder_from_config",
]

ROUTE_NAMES = ("forward", "left", "right")

# Unit endpoint headings of the three routes and their left-normals; the
# within-mode variation displaces along these directions.
_ROUTE_HEADINGS = {
    "forward": np.array([1.0, 0.0]),
    "left": np.array([1.0, 1.0]) / np.sqrt(2.0),
    "right": np.array([1.0, -1.0]) / np.sqrt(2.0),
}


def route_templates(speed: float, t_steps: int) -> dict[str, np.ndarray]:
    """Exact T x 2 route offsets relative to the junction for the three routes."""
    if speed <= 0 or t_steps < 1:
        raise ValueError("speed must be > 0 and t_steps >= 1")
    t = np.arange(1, t_steps + 1, dtype=float)
    forward = np.stack([speed * t, np.zeros(t_steps)], axis=1)
    radius = 2.0 * speed * t_steps / np.pi
    phi = (np.pi / 2.0) * t / t_steps
    left = np.stack([radius * np.sin(phi), radius * (1.0 - np.cos(phi))], axis=1)
    right = left * np.array([1.0, -1.0])
    return {"forward": forward, "left": left, "right": right}


def _wrap_angle(theta):
    """Wrap to [-pi, pi)."""
    return np.mod(theta + np.pi, 2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class LinearDecoder:
    """Affine decoder: reshape(W @ z + c0 + M @ ctx.features) to T x D."""

    W: np.ndarray  # (T*D, n_z)
    c0: np.ndarray  # (T*D,)
    t_steps: int
    state_dim: int
    ctx_proj: np.ndarray | None = None  # (T*D, ctx_feature_dim)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        c0 = np.asarray(self.c0, dtype=float)
        if W.shape[0] != self.t_steps * self.state_dim or c0.shape != (W.shape[0],):
            raise ValueError("W/c0 shapes inconsistent with t_steps * state_dim")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(c0))):
            raise ValueError("decoder parameters contain non-finite entries")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "c0", c0)
        if self.ctx_proj is not None:
            m = np.asarray(self.ctx_proj, dtype=float)
            if m.shape[0] != W.shape[0] or not np.all(np.isfinite(m)):
                raise ValueError("ctx_proj has wrong shape or non-finite entries")
            object.__setattr__(self, "ctx_proj", m)

    @property
    def n_z(self) -> int:
        return self.W.shape[1]

    def context_offset(self, ctx: Context | None) -> np.ndarray:
        """Flattened additive contribution of the context (zero without one)."""
        if ctx is None or self.ctx_proj is None:
            return np.zeros(self.W.shape[0])
        return self.ctx_proj @ ctx.features

    def decode(self, z, ctx: Context | None = None) -> np.ndarray:
        return self.decode_batch(np.asarray(z, dtype=float)[None], ctx)[0]

    def decode_batch(self, Z, ctx: Context | None = None) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if Z.shape[-1] != self.n_z:
            raise ValueError(f"latent dim mismatch: got {Z.shape[-1]}, decoder has {self.n_z}")
        flat = Z @ self.W.T + (self.c0 + self.context_offset(ctx))[None, :]
        return flat.reshape(Z.shape[0], self.t_steps, self.state_dim)

    def jacobian(self, z=None, ctx: Context | None = None) -> np.ndarray:
        """d(flattened trajectory)/dz; constant for an affine decoder."""
        return self.W

    def to_config(self) -> dict:
        cfg = {
            "kind": "linear",
            "W": self.W.tolist(),
            "c0": self.c0.tolist(),
            "t_steps": self.t_steps,
            "state_dim": self.state_dim,
        }
        if self.ctx_proj is not None:
            cfg["ctx_proj"] = self.ctx_proj.tolist()
        return cfg


@dataclass(frozen=True)
class CrossroadDecoder:
    """Three-route decoder over a 2-d latent plane partitioned by angle.

    The forward sector is centered at angle 0 with angular fraction
    mode_probs[0]; left and right sectors follow counterclockwise. Sector
    boundaries are half-open (lower angle inclusive). Mode selection depends
    only on the angle of z; radius and within-sector angular offset add the
    bounded smooth variation.
    """

    mode_probs: tuple = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    speed: float = 1.0
    t_steps: int = 3
    within_mode_scale: float = 0.3

    def __post_init__(self):
        probs = tuple(float(p) for p in self.mode_probs)
        if len(probs) != 3 or any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("mode_probs must be 3 nonnegative values summing to 1")
        if self.within_mode_scale <= 0:
            raise ValueError("within_mode_scale must be > 0")
        object.__setattr__(self, "mode_probs", probs)
        p_f, p_l, p_r = probs
        object.__setattr__(
            self,
            "_centers",
            np.array([0.0, np.pi * p_f + np.pi * p_l, np.pi * p_f + 2.0 * np.pi * p_l + np.pi * p_r]),
        )
        object.__setattr__(self, "_half", np.pi * np.array([p_f, p_l, p_r]))
        tpl = route_templates(self.speed, self.t_steps)
        object.__setattr__(self, "_templates", np.stack([tpl[name] for name in ROUTE_NAMES]))
        heading = np.stack([_ROUTE_HEADINGS[name] for name in ROUTE_NAMES])
        object.__setattr__(self, "_heading", heading)
        object.__setattr__(self, "_lateral", np.stack([-heading[:, 1], heading[:, 0]], axis=1))
        object.__setattr__(
            self, "_ramp", np.arange(1, self.t_steps + 1, dtype=float) / self.t_steps
        )

    n_z = 2
    state_dim = 2

    @property
    def templates(self) -> dict[str, np.ndarray]:
        return route_templates(self.speed, self.t_steps)

    def sector_of(self, Z) -> np.ndarray:
        """Route index (0 forward, 1 left, 2 right) for each latent code."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        theta = np.arctan2(Z[:, 1], Z[:, 0])
        return self._sectors_from_angle(theta)[0]

    def _sectors_from_angle(self, theta: np.ndarray):
        rel = _wrap_angle(theta[:, None] - self._centers[None, :])  # (n, 3)
        hit = (rel >= -self._half) & (rel < self._half)
        sectors = np.where(
            hit[:, 0], 0, np.where(hit[:, 1], 1, np.where(hit[:, 2], 2, int(np.argmax(self._half))))
        )
        return sectors, rel

    def context_offset(self, ctx: Context | None) -> np.ndarray:
        """Flattened junction-anchor translation (the context's last pose)."""
        if ctx is None:
            return np.zeros(self.t_steps * 2)
        return np.tile(ctx.past[-1], self.t_steps)

    def decode(self, z, ctx: Context | None = None) -> np.ndarray:
        return self.decode_batch(np.asarray(z, dtype=float)[None], ctx)[0]

    def decode_batch(self, Z, ctx: Context | None = None) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != 2:
            raise ValueError("crossroad decoder expects 2-d latent codes")
        theta = np.arctan2(Z[:, 1], Z[:, 0])
        sectors, rel = self._sectors_from_angle(theta)
        half = self._half[sectors]
        own_rel = rel[np.arange(Z.shape[0]), sectors]
        offset = np.divide(own_rel, half, out=np.zeros_like(own_rel), where=half > 0)
        radial = np.tanh(np.sqrt(np.einsum("ij,ij->i", Z, Z)) - 1.0)
        wobble_dir = (
            offset[:, None] * self._lateral[sectors] + radial[:, None] * self._heading[sectors]
        )  # (n, 2)
        out = self._templates[sectors] + self.within_mode_scale * (
            self._ramp[None, :, None] * wobble_dir[:, None, :]
        )
        if ctx is not None:
            out = out + ctx.past[-1][None, None, :]
        return out

    def to_config(self) -> dict:
        return {
            "kind": "crossroad",
            "mode_probs": list(self.mode_probs),
            "speed": self.speed,
            "t_steps": self.t_steps,
            "within_mode_scale": self.within_mode_scale,
        }


@dataclass(frozen=True)
class TabulatedDecoder:
    """Grid of (latent -> trajectory) values with multilinear interpolation.

    Latents outside the grid are clamped to the boundary so decoding stays
    total on finite inputs.
    """

    z_grid: tuple  # one ascending axis array per latent dimension
    table: np.ndarray  # grid shape + (T, D), row-major
    t_steps: int
    state_dim: int
    _interp: RegularGridInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        axes = tuple(np.asarray(ax, dtype=float) for ax in self.z_grid)
        table = np.asarray(self.table, dtype=float)
        expected = tuple(len(ax) for ax in axes) + (self.t_steps, self.state_dim)
        if table.shape != expected:
            raise ValueError(f"table shape {table.shape} does not match grid {expected}")
        if not np.all(np.isfinite(table)):
            raise ValueError("table contains non-finite entries")
        object.__setattr__(self, "z_grid", axes)
        object.__setattr__(self, "table", table)
        flat = table.reshape(table.shape[: len(axes)] + (-1,))
        object.__setattr__(
            self, "_interp", RegularGridInterpolator(axes, flat, method="linear")
        )

    @property
    def n_z(self) -> int:
        return len(self.z_grid)

    def context_offset(self, ctx: Context | None) -> np.ndarray:
        return np.zeros(self.t_steps * self.state_dim)

    def decode(self, z, ctx: Context | None = None) -> np.ndarray:
        return self.decode_batch(np.asarray(z, dtype=float)[None], ctx)[0]

    def decode_batch(self, Z, ctx: Context | None = None) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.n_z:
            raise ValueError(f"latent dim mismatch: got {Z.shape[1]}, grid has {self.n_z}")
        clamped = np.column_stack(
            [np.clip(Z[:, i], ax[0], ax[-1]) for i, ax in enumerate(self.z_grid)]
        )
        flat = self._interp(clamped)
        return flat.reshape(Z.shape[0], self.t_steps, self.state_dim)

    def to_config(self) -> dict:
        return {
            "kind": "tabulated",
            "z_grid": [ax.tolist() for ax in self.z_grid],
            "T": self.t_steps,
            "D": self.state_dim,
            "table": self.table.tolist(),
        }


def decoder_from_config(cfg: dict):
    """Rebuild a decoder from its serialized config block."""
    kind = cfg.get("kind")
    if kind == "linear":
        return LinearDecoder(
            W=np.asarray(cfg["W"], dtype=float),
            c0=np.asarray(cfg["c0"], dtype=float),
            t_steps=int(cfg["t_steps"]),
            state_dim=int(cfg["state_dim"]),
            ctx_proj=None if cfg.get("ctx_proj") is None else np.asarray(cfg["ctx_proj"], dtype=float),
        )
    if kind == "crossroad":
        return CrossroadDecoder(
            mode_probs=tuple(cfg["mode_probs"]),
            speed=float(cfg["speed"]),
            t_steps=int(cfg["t_steps"]),
            within_mode_scale=float(cfg["within_mode_scale"]),
        )
    if kind == "tabulated":
        table = np.asarray(cfg["table"], dtype=float)
        return TabulatedDecoder(
            z_grid=tuple(np.asarray(ax, dtype=float) for ax in cfg["z_grid"]),
            table=table,
            t_steps=int(cfg["T"]),
            state_dim=int(cfg["D"]),
        )
    raise ValueError(f"unknown decoder kind: {kind!r}")
