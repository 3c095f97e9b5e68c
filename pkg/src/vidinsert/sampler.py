"""DDIM sampling with single- and dual-condition classifier-free guidance.

Each denoising step evaluates the model on three condition bundles that
share the same noisy video latent and differ only in dropped conditions:
fully unconditional, text-only, and text+image. The guided noise estimate
is the affine combination

    eps = (1 - s1) * eps_uncond + (s1 - s2) * eps_text + s2 * eps_text_img

which equals eps_uncond + s1 (eps_text - eps_uncond) + s2 (eps_text_img -
eps_text) algebraically, while making the s1 = 1 / s2 = 0 / (1, 1)
reductions exact in float32.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .conditioning import ConditionBundle, Presence, build_bundle
from .diffusion import DdimPlan, NoiseSchedule, ddim_step
from .errors import ContractError

# Model evaluation contract: (z_input, t, prompt_tokens, n_refs) -> eps array.
ModelFn = Callable[[np.ndarray, int, tuple, int], np.ndarray]
# Bundle builders map a noisy video latent z_t to the assembled input.
BundleBuilder = Callable[[np.ndarray], ConditionBundle]


@dataclass(frozen=True)
class GuidanceConfig:
    s1: float = 6.0  # text guidance scale
    s2: float = 1.5  # image guidance scale
    steps: int = 50

    def __post_init__(self):
        if self.s1 < 0 or self.s2 < 0:
            raise ContractError("guidance scales must be non-negative")
        if self.steps < 1:
            raise ContractError("need at least one sampling step")


def _check_same_shape(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ContractError(f"epsilon shapes differ: {sorted(shapes)}")


def cfg_epsilon(eps_uncond: np.ndarray, eps_text: np.ndarray, s1: float) -> np.ndarray:
    """eps_uncond + s1 * (eps_text - eps_uncond), exact at s1 in {0, 1}."""
    eps_uncond = np.asarray(eps_uncond, dtype=np.float32)
    eps_text = np.asarray(eps_text, dtype=np.float32)
    _check_same_shape(eps_uncond, eps_text)
    s1 = np.float32(s1)
    return (np.float32(1.0) - s1) * eps_uncond + s1 * eps_text


def dual_cfg_epsilon(
    eps_null_null: np.ndarray,
    eps_text_null: np.ndarray,
    eps_text_img: np.ndarray,
    s1: float,
    s2: float,
) -> np.ndarray:
    """Two-axis guidance: text extrapolation plus image extrapolation."""
    eps_null_null = np.asarray(eps_null_null, dtype=np.float32)
    eps_text_null = np.asarray(eps_text_null, dtype=np.float32)
    eps_text_img = np.asarray(eps_text_img, dtype=np.float32)
    _check_same_shape(eps_null_null, eps_text_null, eps_text_img)
    s1 = np.float32(s1)
    s2 = np.float32(s2)
    return (
        (np.float32(1.0) - s1) * eps_null_null
        + (s1 - s2) * eps_text_null
        + s2 * eps_text_img
    )


def make_edit_builders(
    z_cond: np.ndarray,
    z_ref: np.ndarray,
    mask: np.ndarray,
    prompt_tokens: tuple[int, ...],
) -> tuple[BundleBuilder, BundleBuilder, BundleBuilder]:
    """The three bundle builders (null, text, text+image) for one edit.

    The null image condition zeroes both the reference latents and the
    mask channels, matching the training-time dropout representation; the
    null text condition is the empty prompt. The condition video stays in
    every bundle.
    """

    def build(z_t, flags: Presence) -> ConditionBundle:
        return build_bundle(z_t, z_cond, z_ref, mask, prompt_tokens, flags)

    null_null = lambda z_t: build(z_t, Presence(prompt=False, refs=False, mask=False))
    text_null = lambda z_t: build(z_t, Presence(prompt=True, refs=False, mask=False))
    text_img = lambda z_t: build(z_t, Presence(prompt=True, refs=True, mask=True))
    return null_null, text_null, text_img


def sample(
    model_fn: ModelFn,
    builders: Sequence[BundleBuilder],
    plan: DdimPlan,
    sched: NoiseSchedule,
    guidance: GuidanceConfig,
    noise: np.ndarray,
) -> np.ndarray:
    """Run the deterministic DDIM loop and return the final clean latent.

    ``builders`` are the (null,null), (text,null), (text,image) bundle
    builders; the condition half of the input is re-assembled from scratch
    each step, so only the noisy-target half evolves. The output is the
    denoised video latent (f, c, h, w); decoding is the caller's business.
    """
    if len(builders) != 3:
        raise ContractError(f"expected 3 bundle builders, got {len(builders)}")
    z_t = np.array(noise, dtype=np.float32, copy=True)
    for t, t_prev in plan.pairs():
        eps_parts = []
        for build in builders:
            bundle = build(z_t)
            eps_parts.append(
                np.asarray(
                    model_fn(bundle.z_input, t, bundle.prompt_tokens, bundle.n),
                    dtype=np.float32,
                )
            )
        eps = dual_cfg_epsilon(*eps_parts, guidance.s1, guidance.s2)
        z_t = ddim_step(z_t, eps, t, t_prev, sched)
    return z_t
