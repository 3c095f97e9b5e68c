"""Model-input assembly from target/condition latents, references, and mask.

The model consumes one stacked latent block of shape (n + f, 2c, h, w):
reference-image latents (channel-paired with the downsampled mask) come
first along the frame axis, then the video latents (noisy target paired
with the condition video along channels). Condition dropout replaces the
prompt with the empty token sequence, zeroes reference latents, and
zeroes the mask, each independently per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError

EMPTY_PROMPT: tuple[int, ...] = ()


@dataclass
class Quintuple:
    """One training record: prompt, references, first-frame mask, videos."""

    prompt: str
    refs: np.ndarray  # (n, 3, H, W) in [0, 1]
    mask: np.ndarray  # (1, 1, H, W) in [0, 1]
    cond: np.ndarray  # (F, 3, H, W), instance removed
    target: np.ndarray  # (F, 3, H, W), original

    def __post_init__(self):
        if self.cond.shape != self.target.shape:
            raise ContractError(
                f"condition/target shapes differ: {self.cond.shape} vs {self.target.shape}"
            )
        if self.mask.shape != (1, 1) + self.cond.shape[2:]:
            raise ContractError(
                f"mask must be (1, 1, H, W) matching the video, got {self.mask.shape}"
            )
        if self.refs.ndim != 4 or self.refs.shape[1] != 3:
            raise ContractError(f"refs must be (n, 3, H, W), got {self.refs.shape}")


@dataclass(frozen=True)
class Presence:
    """What survived condition dropout."""

    prompt: bool = True
    refs: bool = True
    mask: bool = True


@dataclass(frozen=True)
class DropoutPolicy:
    p_prompt: float = 0.2
    p_refs: float = 0.2
    p_mask: float = 0.5

    def __post_init__(self):
        for p in (self.p_prompt, self.p_refs, self.p_mask):
            if not 0.0 <= p <= 1.0:
                raise ContractError(f"dropout probability {p} outside [0, 1]")


def apply_condition_dropout(
    q: Quintuple, policy: DropoutPolicy, rng: np.random.Generator
) -> tuple[Quintuple, Presence]:
    """Independently drop prompt/references/mask; flags record survivors.

    The dropped prompt becomes the empty string and the dropped mask
    becomes all-zero here; dropped references are zeroed at the latent
    stage (flagged via Presence) so reference count and shapes stay
    static.
    """
    draws = rng.random(3)
    keep_prompt = draws[0] >= policy.p_prompt
    keep_refs = draws[1] >= policy.p_refs
    keep_mask = draws[2] >= policy.p_mask
    out = q
    if not keep_prompt:
        out = replace(out, prompt="")
    if not keep_mask:
        out = replace(out, mask=np.zeros_like(q.mask))
    return out, Presence(prompt=keep_prompt, refs=keep_refs, mask=keep_mask)


def assemble_video_latent(z_target_t: np.ndarray, z_cond: np.ndarray) -> np.ndarray:
    """Channel concat (f, c, h, w) x2 -> (f, 2c, h, w), noisy target first."""
    if z_target_t.shape != z_cond.shape:
        raise ContractError(
            f"target/condition latent shapes differ: {z_target_t.shape} vs {z_cond.shape}"
        )
    return np.concatenate([z_target_t, z_cond], axis=1)


def downsample_mask(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Area-mean downsample of a (1, 1, H, W) mask to (h, w), values stay in [0, 1]."""
    mask = np.asarray(mask, dtype=np.float32)
    if mask.ndim != 4 or mask.shape[:2] != (1, 1):
        raise ContractError(f"mask must be (1, 1, H, W), got {mask.shape}")
    height, width = mask.shape[2], mask.shape[3]
    if height % h != 0 or width % w != 0:
        raise ContractError(
            f"mask dims ({height}, {width}) not divisible by latent dims ({h}, {w})"
        )
    sy, sx = height // h, width // w
    return mask[0, 0].reshape(h, sy, w, sx).mean(axis=(1, 3))


def assemble_image_latent(z_ref: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Pair reference latents with the downsampled mask: (n, c, h, w) -> (n, 2c, h, w).

    The mask is area-averaged to (h, w), repeated over n references and c
    channels, then channel-concatenated after the reference latents.
    """
    z_ref = np.asarray(z_ref, dtype=np.float32)
    if z_ref.ndim != 4:
        raise ContractError(f"reference latents must be (n, c, h, w), got {z_ref.shape}")
    n, c, h, w = z_ref.shape
    small = downsample_mask(mask, h, w)
    mask_block = np.broadcast_to(small, (n, c, h, w)).astype(np.float32)
    return np.concatenate([z_ref, mask_block], axis=1)


def assemble_input(z_image: np.ndarray, z_video_t: np.ndarray) -> np.ndarray:
    """Frame concat: (n, 2c, h, w) ++ (f, 2c, h, w) -> (n + f, 2c, h, w)."""
    z_image = np.asarray(z_image, dtype=np.float32)
    z_video_t = np.asarray(z_video_t, dtype=np.float32)
    if z_image.shape[1:] != z_video_t.shape[1:]:
        raise ContractError(
            f"image/video latent trailing dims differ: {z_image.shape} vs {z_video_t.shape}"
        )
    return np.concatenate([z_image, z_video_t], axis=0)


@dataclass
class ConditionBundle:
    """Assembled model input plus the text condition."""

    z_input: np.ndarray  # (n + f, 2c, h, w)
    prompt_tokens: tuple[int, ...]
    n: int
    flags: Presence

    def __post_init__(self):
        if self.z_input.ndim != 4:
            raise ContractError(f"z_input must be 4-D, got {self.z_input.shape}")


def tokenize(prompt: str, max_tokens: int) -> tuple[int, ...]:
    """Byte-level tokens, truncated to the model budget."""
    return tuple(prompt.encode("utf-8")[:max_tokens])


def build_bundle(
    z_target_t: np.ndarray,
    z_cond: np.ndarray,
    z_ref: np.ndarray,
    mask: np.ndarray,
    prompt_tokens: tuple[int, ...],
    flags: Presence = Presence(),
) -> ConditionBundle:
    """Assemble the full (n + f, 2c, h, w) input, honoring dropout flags."""
    z_ref = np.asarray(z_ref, dtype=np.float32)
    if not flags.refs:
        z_ref = np.zeros_like(z_ref)
    if not flags.mask:
        mask = np.zeros_like(np.asarray(mask, dtype=np.float32))
    tokens = prompt_tokens if flags.prompt else EMPTY_PROMPT
    z_video = assemble_video_latent(z_target_t, z_cond)
    z_image = assemble_image_latent(z_ref, mask)
    z_input = assemble_input(z_image, z_video)
    return ConditionBundle(
        z_input=z_input, prompt_tokens=tokens, n=z_ref.shape[0], flags=flags
    )
