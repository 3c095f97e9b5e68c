"""Noise schedule, forward noising, the denoising objective, and DDIM steps.

Timesteps are 1-indexed: t runs over [1, T] with signal retention
``alpha_bar[t-1]``; t = 0 is the clean endpoint with alpha_bar defined
as exactly 1. All functions are pure and fully reentrant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

SCALED_LINEAR = "scaled-linear"
LINEAR = "linear"
COSINE = "cosine"

DEFAULT_TIMESTEPS = 1000
DEFAULT_BETA_START = 8.5e-4
DEFAULT_BETA_END = 1.2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal-retention table: alpha_bar[t-1] for t in [1, T]."""

    timesteps: int
    alpha_bar: np.ndarray
    kind: str = SCALED_LINEAR

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.shape != (self.timesteps,):
            raise ContractError(
                f"alpha_bar must have length {self.timesteps}, got {ab.shape}"
            )
        if np.any(np.diff(ab) >= 0) or ab[0] > 1.0 or ab[-1] <= 0.0:
            raise ContractError("alpha_bar must be strictly decreasing within (0, 1]")

    def at(self, t: int) -> float:
        """alpha_bar at timestep t, with the t = 0 endpoint pinned to 1."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.timesteps:
            raise ContractError(f"timestep {t} outside [0, {self.timesteps}]")
        return float(self.alpha_bar[t - 1])


def make_schedule(
    timesteps: int = DEFAULT_TIMESTEPS,
    kind: str = SCALED_LINEAR,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    if timesteps < 2:
        raise ContractError(f"need at least 2 timesteps, got {timesteps}")
    t = np.arange(timesteps, dtype=np.float64)
    if kind == SCALED_LINEAR:
        betas = np.linspace(beta_start**0.5, beta_end**0.5, timesteps) ** 2
    elif kind == LINEAR:
        betas = np.linspace(beta_start, beta_end, timesteps)
    elif kind == COSINE:
        # alpha_bar from the squared-cosine profile, converted through betas
        # so the strict-monotonicity clamp applies uniformly.
        s = 0.008
        profile = np.cos((t / timesteps + s) / (1 + s) * np.pi / 2) ** 2
        profile_next = np.cos(((t + 1) / timesteps + s) / (1 + s) * np.pi / 2) ** 2
        betas = np.clip(1.0 - profile_next / profile, 0.0, 0.999)
    else:
        raise ContractError(f"unknown schedule kind {kind!r}")
    alpha_bar = np.cumprod(1.0 - betas)
    return NoiseSchedule(timesteps=timesteps, alpha_bar=alpha_bar, kind=kind)


@dataclass(frozen=True)
class DdimPlan:
    """Descending subset of timesteps visited during sampling."""

    taus: tuple[int, ...]

    def __post_init__(self):
        if not self.taus:
            raise ContractError("sampling plan cannot be empty")
        if any(a <= b for a, b in zip(self.taus, self.taus[1:])):
            raise ContractError("plan timesteps must be strictly descending")

    @property
    def steps(self) -> int:
        return len(self.taus)

    def pairs(self):
        """(t, t_prev) hops; the final hop lands on t = 0."""
        dests = list(self.taus[1:]) + [0]
        return list(zip(self.taus, dests))


def make_plan(sched: NoiseSchedule, steps: int) -> DdimPlan:
    """Evenly spaced steps over [1, T] including the top step, rounded down."""
    if not 1 <= steps <= sched.timesteps:
        raise ContractError(
            f"steps must be in [1, {sched.timesteps}], got {steps}"
        )
    if steps == 1:
        return DdimPlan(taus=(sched.timesteps,))
    grid = np.linspace(sched.timesteps, 1, steps)
    taus = np.floor(grid).astype(int)
    return DdimPlan(taus=tuple(int(t) for t in taus))


def add_noise(z0: np.ndarray, eps: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps."""
    z0 = np.asarray(z0, dtype=np.float32)
    eps = np.asarray(eps, dtype=np.float32)
    if z0.shape != eps.shape:
        raise ContractError(f"z0 and eps shapes differ: {z0.shape} vs {eps.shape}")
    if not 1 <= t <= sched.timesteps:
        raise ContractError(f"timestep {t} outside [1, {sched.timesteps}]")
    ab = sched.at(t)
    return np.float32(ab**0.5) * z0 + np.float32((1.0 - ab) ** 0.5) * eps


def training_loss(eps_true: np.ndarray, eps_pred: np.ndarray) -> float:
    """Mean squared error over all elements."""
    eps_true = np.asarray(eps_true, dtype=np.float32)
    eps_pred = np.asarray(eps_pred, dtype=np.float32)
    if eps_true.shape != eps_pred.shape:
        raise ContractError(
            f"prediction shape {eps_pred.shape} differs from target {eps_true.shape}"
        )
    diff = eps_pred.astype(np.float64) - eps_true.astype(np.float64)
    return float(np.mean(diff * diff))


def ddim_step(
    z_t: np.ndarray, eps_pred: np.ndarray, t: int, t_prev: int, sched: NoiseSchedule
) -> np.ndarray:
    """One deterministic (eta = 0) reverse hop from t to t_prev.

    Reconstructs z0_hat = (z_t - sqrt(1 - ab_t) eps) / sqrt(ab_t) and
    re-noises it to level t_prev with the same predicted eps.
    """
    z_t = np.asarray(z_t, dtype=np.float32)
    eps_pred = np.asarray(eps_pred, dtype=np.float32)
    if z_t.shape != eps_pred.shape:
        raise ContractError(f"z_t and eps shapes differ: {z_t.shape} vs {eps_pred.shape}")
    if not (t > t_prev >= 0):
        raise ContractError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    ab_t = sched.at(t)
    ab_prev = sched.at(t_prev)
    z0_hat = (z_t - np.float32((1.0 - ab_t) ** 0.5) * eps_pred) / np.float32(ab_t**0.5)
    return np.float32(ab_prev**0.5) * z0_hat + np.float32((1.0 - ab_prev) ** 0.5) * eps_pred
