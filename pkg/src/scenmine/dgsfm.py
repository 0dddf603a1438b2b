"""Directed-gradient social force interaction scores.

An egg-shaped repulsive potential, stretched forward along the mover's
heading, yields per-frame, per-neighbor relevance scores that are softmax
normalized over the present neighbors and assembled into an interaction
matrix (ego row fixed to 1, absent slots 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .types import N_SLOTS, T_OBS, InteractionMatrix

MIN_HEADING_SPEED = 0.1  # m/s; below this the heading falls back to +x


@dataclass(frozen=True)
class EggPotentialParams:
    amplitude: float = 1.0       # A
    sigma: float = 10.0          # m, base range
    forward_stretch: float = 2.0  # gamma_f >= 1
    rear_compress: float = 0.5    # gamma_b in (0, 1]
    lateral_scale: float = 0.6    # gamma_l > 0

    def __post_init__(self):
        if min(self.amplitude, self.sigma, self.forward_stretch, self.rear_compress, self.lateral_scale) <= 0:
            raise ValueError("all egg-potential parameters must be positive")
        if not (self.forward_stretch >= 1.0 >= self.rear_compress):
            raise ValueError("requires forward_stretch >= 1 >= rear_compress")


@dataclass(frozen=True)
class DgsfmConfig:
    egg: EggPotentialParams = field(default_factory=EggPotentialParams)
    tau_sum: float = 0.5
    n_dg: int = 25               # extrapolation steps (1 s at 25 Hz)
    dt: float = 0.04
    softmax_temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.tau_sum <= 1.0:
            raise ValueError("tau_sum must lie in [0, 1]")
        if self.n_dg < 1:
            raise ValueError("n_dg must be >= 1")
        if self.softmax_temperature <= 0:
            raise ValueError("softmax_temperature must be positive")


def _heading(v: np.ndarray) -> np.ndarray:
    speed = float(np.hypot(v[0], v[1]))
    if speed < MIN_HEADING_SPEED:
        return np.array([1.0, 0.0])
    return np.asarray(v, dtype=float) / speed


def v_egg(
    r_other: np.ndarray,
    r_self: np.ndarray,
    v_self: np.ndarray,
    egg: EggPotentialParams,
) -> float:
    """Anisotropic exponential repulsion of ``r_other`` inside the field of
    ``r_self`` heading along ``v_self``; range stretched forward, compressed
    to the rear, and scaled laterally."""
    h = _heading(np.asarray(v_self, dtype=float))
    d = np.asarray(r_other, dtype=float) - np.asarray(r_self, dtype=float)
    d_long = d[0] * h[0] + d[1] * h[1]
    d_lat = -d[0] * h[1] + d[1] * h[0]
    s = egg.forward_stretch * egg.sigma if d_long >= 0 else egg.rear_compress * egg.sigma
    rho = np.hypot(d_long / s, d_lat / (egg.lateral_scale * egg.sigma))
    return float(egg.amplitude * np.exp(-rho))


def beta_components(
    ego_pos: np.ndarray,
    ego_vel: np.ndarray,
    nb_pos: np.ndarray,
    nb_vel: np.ndarray,
    cfg: DgsfmConfig,
) -> tuple[float, float]:
    """Intrusion depth into the ego's directional field (beta_a) and the
    short-horizon change of the ego's intrusion into the neighbor's field
    (beta_b; may be negative)."""
    beta_a = v_egg(nb_pos, ego_pos, ego_vel, cfg.egg)
    horizon = cfg.n_dg * cfg.dt
    ego_star = np.asarray(ego_pos, dtype=float) + horizon * np.asarray(ego_vel, dtype=float)
    nb_star = np.asarray(nb_pos, dtype=float) + horizon * np.asarray(nb_vel, dtype=float)
    beta_b = v_egg(ego_star, nb_star, nb_vel, cfg.egg) - v_egg(ego_pos, nb_pos, nb_vel, cfg.egg)
    return beta_a, beta_b


def interaction_scores(
    ego_pos: np.ndarray,       # (T, 2)
    ego_vel: np.ndarray,       # (T, 2)
    neighbor_pos: np.ndarray,  # (N-1, T, 2)
    neighbor_vel: np.ndarray,  # (N-1, T, 2)
    presence: np.ndarray,      # (N-1, T), bool
    cfg: DgsfmConfig,
) -> InteractionMatrix:
    """Framewise softmax-normalized interaction matrix over present
    neighbors; ego row 1, absent slots 0."""
    n_frames = ego_pos.shape[0]
    n_neighbors = neighbor_pos.shape[0]
    if n_neighbors != N_SLOTS - 1 or n_frames != T_OBS:
        raise ValueError(
            f"expected ({N_SLOTS - 1}, {T_OBS}) neighbor slots/frames, "
            f"got ({n_neighbors}, {n_frames})"
        )
    values = np.zeros((N_SLOTS, T_OBS))
    values[0, :] = 1.0
    for t in range(n_frames):
        present = np.flatnonzero(presence[:, t])
        if present.size == 0:
            continue
        betas = np.empty(present.size)
        for k, j in enumerate(present):
            beta_a, beta_b = beta_components(
                ego_pos[t], ego_vel[t], neighbor_pos[j, t], neighbor_vel[j, t], cfg
            )
            betas[k] = cfg.tau_sum * beta_a + (1.0 - cfg.tau_sum) * beta_b
        scaled = betas / cfg.softmax_temperature
        scaled -= scaled.max()
        weights = np.exp(scaled)
        values[1 + present, t] = weights / weights.sum()
    return InteractionMatrix(values)
