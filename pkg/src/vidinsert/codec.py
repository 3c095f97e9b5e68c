"""Deterministic, invertible video <-> latent codec.

Videos are float32 arrays of shape (F, 3, H, W) with values in [0, 1].
Latents are float32 arrays of shape (f, c, h, w) where

    f = ceil((F - 1) / temporal_factor) + 1
    h = H / spatial_factor,  w = W / spatial_factor

Encoding maps pixel values affinely to [-1, 1] and then rearranges:
frame 0 packs alone into latent frame 0 (its space-to-depth block tiled
across the channel groups); every following run of ``temporal_factor``
frames packs into one latent frame by stacking per-frame space-to-depth
blocks along channels. In ``lossless-packing`` mode this is a pure
permutation (plus the tiling) and decode inverts it bit-exactly. In
``projected`` mode a seeded orthonormal channel projection follows the
packing, which is lossy but shape-compatible with arbitrary ``channels``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import struct

import numpy as np

from .errors import ContractError, ShapeError

VIDEO_MAGIC = b"GIVVID1"

LOSSLESS = "lossless-packing"
PROJECTED = "projected"


@dataclass(frozen=True)
class CodecConfig:
    spatial_factor: int = 2
    temporal_factor: int = 2
    channels: int = 24
    mode: str = LOSSLESS
    seed: int = 0  # projection seed; unused in lossless mode

    def __post_init__(self):
        if self.spatial_factor < 1 or self.temporal_factor < 1 or self.channels < 1:
            raise ContractError("codec factors and channels must be positive")
        if self.mode not in (LOSSLESS, PROJECTED):
            raise ContractError(f"unknown codec mode {self.mode!r}")
        if self.mode == LOSSLESS and self.channels != self.packed_channels:
            raise ContractError(
                f"lossless packing needs channels == 3 * spatial^2 * temporal "
                f"= {self.packed_channels}, got {self.channels}"
            )

    @property
    def packed_channels(self) -> int:
        return 3 * self.spatial_factor**2 * self.temporal_factor


def latent_shape(frames: int, height: int, width: int, cfg: CodecConfig):
    """The (f, c, h, w) produced by encoding an (F, 3, H, W) video."""
    if frames < 1:
        raise ShapeError(f"frame count must be >= 1, got {frames}")
    if (frames - 1) % cfg.temporal_factor != 0:
        raise ShapeError(
            f"frames: F - 1 = {frames - 1} not divisible by temporal factor "
            f"{cfg.temporal_factor}"
        )
    if height % cfg.spatial_factor != 0:
        raise ShapeError(
            f"height: {height} not divisible by spatial factor {cfg.spatial_factor}"
        )
    if width % cfg.spatial_factor != 0:
        raise ShapeError(
            f"width: {width} not divisible by spatial factor {cfg.spatial_factor}"
        )
    f = (frames - 1) // cfg.temporal_factor + 1
    return f, cfg.channels, height // cfg.spatial_factor, width // cfg.spatial_factor


def require_video(video: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    video = np.asarray(video, dtype=np.float32)
    if video.ndim != 4 or video.shape[1] != 3:
        raise ShapeError(f"video must be (F, 3, H, W), got {video.shape}")
    latent_shape(video.shape[0], video.shape[2], video.shape[3], cfg)
    return video


def _space_to_depth(frame: np.ndarray, s: int) -> np.ndarray:
    """(3, H, W) -> (3*s*s, H/s, W/s)."""
    c, height, width = frame.shape
    blocks = frame.reshape(c, height // s, s, width // s, s)
    blocks = blocks.transpose(0, 2, 4, 1, 3)
    return blocks.reshape(c * s * s, height // s, width // s)


def _depth_to_space(block: np.ndarray, s: int) -> np.ndarray:
    packed, h, w = block.shape
    c = packed // (s * s)
    frame = block.reshape(c, s, s, h, w)
    frame = frame.transpose(0, 3, 1, 4, 2)
    return frame.reshape(c, h * s, w * s)


def _projection(cfg: CodecConfig) -> np.ndarray:
    """Seeded (channels, packed) matrix with orthonormal rows."""
    rng = np.random.default_rng((cfg.seed, cfg.spatial_factor, cfg.temporal_factor))
    a = rng.standard_normal((cfg.packed_channels, max(cfg.channels, 1)))
    q, _ = np.linalg.qr(a)
    return np.ascontiguousarray(q[:, : cfg.channels].T.astype(np.float32))


def encode(video: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    video = require_video(video, cfg)
    frames, _, height, width = video.shape
    f, c, h, w = latent_shape(frames, height, width, cfg)
    s, r = cfg.spatial_factor, cfg.temporal_factor
    shifted = video * np.float32(2.0) - np.float32(1.0)

    packed = np.empty((f, cfg.packed_channels, h, w), dtype=np.float32)
    first = _space_to_depth(shifted[0], s)
    packed[0] = np.tile(first, (r, 1, 1))
    for lf in range(1, f):
        group = shifted[1 + (lf - 1) * r : 1 + lf * r]
        packed[lf] = np.concatenate([_space_to_depth(fr, s) for fr in group], axis=0)

    if cfg.mode == LOSSLESS:
        return packed
    proj = _projection(cfg)
    return np.einsum("op,fphw->fohw", proj, packed).astype(np.float32)


def decode(latent: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    latent = np.asarray(latent, dtype=np.float32)
    if latent.ndim != 4 or latent.shape[1] != cfg.channels:
        raise ShapeError(
            f"latent must be (f, {cfg.channels}, h, w) for this config, got {latent.shape}"
        )
    f, _, h, w = latent.shape
    s, r = cfg.spatial_factor, cfg.temporal_factor

    if cfg.mode == LOSSLESS:
        packed = latent
    else:
        proj = _projection(cfg)
        packed = np.einsum("op,fohw->fphw", proj, latent).astype(np.float32)

    per_frame = 3 * s * s
    frames = (f - 1) * r + 1
    video = np.empty((frames, 3, h * s, w * s), dtype=np.float32)
    video[0] = _depth_to_space(packed[0, :per_frame], s)
    for lf in range(1, f):
        for j in range(r):
            block = packed[lf, j * per_frame : (j + 1) * per_frame]
            video[1 + (lf - 1) * r + j] = _depth_to_space(block, s)
    video = (video + np.float32(1.0)) * np.float32(0.5)
    return np.clip(video, 0.0, 1.0)


def write_video(path, video: np.ndarray) -> None:
    """Raw video file: GIVVID1 magic, u64-LE dims (F, C, H, W), f32-LE data."""
    video = np.asarray(video, dtype=np.float32)
    if video.ndim != 4:
        raise ShapeError(f"video file wants 4 dims (F, C, H, W), got {video.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(VIDEO_MAGIC)
        for dim in video.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(np.ascontiguousarray(video, dtype="<f4").tobytes())


def read_video(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(VIDEO_MAGIC))
        if magic != VIDEO_MAGIC:
            raise ContractError(f"{path} is not a raw video file (magic {magic!r})")
        dims = struct.unpack("<4Q", fh.read(32))
        count = int(np.prod(dims, dtype=np.int64))
        raw = fh.read(count * 4)
        if len(raw) != count * 4:
            raise ContractError(f"{path} is truncated")
        return np.frombuffer(raw, dtype="<f4").reshape(dims).copy()


def write_frame_dir(dirpath, video: np.ndarray) -> None:
    """Dump per-frame PPM (3-channel) or PGM (1-channel) files for eyeballing."""
    video = np.asarray(video, dtype=np.float32)
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    channels = video.shape[1]
    quantized = np.clip(np.rint(video * 255.0), 0, 255).astype(np.uint8)
    for k in range(video.shape[0]):
        if channels == 3:
            body = quantized[k].transpose(1, 2, 0).tobytes()
            header = b"P6\n%d %d\n255\n" % (video.shape[3], video.shape[2])
            name = dirpath / f"frame_{k:04d}.ppm"
        elif channels == 1:
            body = quantized[k, 0].tobytes()
            header = b"P5\n%d %d\n255\n" % (video.shape[3], video.shape[2])
            name = dirpath / f"frame_{k:04d}.pgm"
        else:
            raise ShapeError(f"frame dump supports 1 or 3 channels, got {channels}")
        with open(name, "wb") as fh:
            fh.write(header + body)


def read_frame_dir(dirpath) -> np.ndarray:
    """Read a per-frame PPM/PGM directory back to a float video (8-bit lossy)."""
    dirpath = Path(dirpath)
    names = sorted(dirpath.glob("frame_*.p?m"))
    if not names:
        raise ContractError(f"no frame_*.ppm/pgm files in {dirpath}")
    frames = []
    for name in names:
        with open(name, "rb") as fh:
            magic = fh.readline().strip()
            dims = fh.readline().split()
            fh.readline()  # maxval
            width, height = int(dims[0]), int(dims[1])
            if magic == b"P6":
                raw = np.frombuffer(fh.read(width * height * 3), dtype=np.uint8)
                frame = raw.reshape(height, width, 3).transpose(2, 0, 1)
            elif magic == b"P5":
                raw = np.frombuffer(fh.read(width * height), dtype=np.uint8)
                frame = raw.reshape(1, height, width)
            else:
                raise ContractError(f"{name} is not a binary PPM/PGM file")
        frames.append(frame.astype(np.float32) / 255.0)
    return np.stack(frames, axis=0)
