"""Conditional diffusion transformer with full attention over all tokens.

Every latent cell of the (n + f, 2c, h, w) input becomes one token; prompt
tokens are prefixed to the same sequence, and every block applies full
bidirectional attention across everything, so conditions interact purely
through attention. The input projection is a channel-expanded layer whose
second half (the condition channels) starts at exactly zero, leaving the
output independent of condition content at initialization. The noise
prediction is read only at the f video-frame tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError


@dataclass(frozen=True)
class ModelConfig:
    channels: int  # latent channels c; the input layer sees 2c
    depth: int = 4
    width: int = 128
    heads: int = 4
    max_prompt_tokens: int = 32
    vocab_size: int = 256
    patch: int = 1  # per-latent-cell tokens
    max_frames: int = 12  # reference slots + video latent frames
    latent_h: int = 16
    latent_w: int = 16

    def __post_init__(self):
        if self.depth < 1:
            raise ContractError("depth must be >= 1")
        if self.width % self.heads != 0:
            raise ContractError(
                f"width {self.width} not divisible by heads {self.heads}"
            )
        if self.width % 2 != 0:
            raise ContractError("width must be even for the sinusoidal embedding")
        if self.patch != 1:
            raise ContractError("only patch=1 (per-cell tokens) is supported")


def expand_input_layer(weight: np.ndarray, bias: np.ndarray):
    """Widen a (c, d) input projection to (2c, d) with zero new rows.

    The first c input rows are copied; the added condition rows are exactly
    zero so the expanded layer computes the same function of the original
    channels at initialization. The bias is copied unchanged.
    """
    weight = np.asarray(weight, dtype=np.float32)
    bias = np.asarray(bias, dtype=np.float32)
    if weight.ndim != 2 or bias.shape != (weight.shape[1],):
        raise ContractError(
            f"expected (c, d) weight and (d,) bias, got {weight.shape}, {bias.shape}"
        )
    expanded = np.zeros((2 * weight.shape[0], weight.shape[1]), dtype=np.float32)
    expanded[: weight.shape[0]] = weight
    return expanded, bias.copy()


def sinusoidal_embedding(t: int, dim: int) -> np.ndarray:
    """Standard sin/cos timestep features of length dim (dim even)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    angles = float(t) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)]).astype(np.float32)


def param_count(cfg: ModelConfig) -> int:
    """Total scalar parameters as a pure function of the config."""
    d = cfg.width
    n_tokens = cfg.latent_h * cfg.latent_w
    total = 2 * cfg.channels * d + d  # input projection
    total += cfg.vocab_size * d  # prompt token table
    total += cfg.max_prompt_tokens * d  # prompt positions
    total += cfg.max_frames * d + n_tokens * d  # frame + spatial positions
    total += 2 * (d * d + d)  # timestep MLP
    per_block = 4 * d * d + 3 * d  # q, k, v, o projections (no key bias)
    per_block += 2 * 2 * d  # two layer norms
    per_block += d * 4 * d + 4 * d + 4 * d * d + d  # feed-forward
    total += cfg.depth * per_block
    total += 2 * d  # final norm
    total += d * cfg.channels + cfg.channels  # output projection
    return total


class DiTModel:
    """Denoising transformer over prompt + latent-cell tokens."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng((seed, 0xD17))
        d = cfg.width
        std = 0.02

        def init(*shape):
            return T.parameter(rng.normal(0.0, std, size=shape).astype(np.float32))

        self.params: dict[str, T.Tensor] = {}
        p = self.params

        base_w = rng.normal(0.0, std, size=(cfg.channels, d)).astype(np.float32)
        base_b = np.zeros(d, dtype=np.float32)
        in_w, in_b = expand_input_layer(base_w, base_b)
        p["in_proj.w"] = T.parameter(in_w)
        p["in_proj.b"] = T.parameter(in_b)

        p["tok_emb"] = init(cfg.vocab_size, d)
        p["prompt_pos"] = init(cfg.max_prompt_tokens, d)
        p["frame_pos"] = init(cfg.max_frames, d)
        p["spatial_pos"] = init(cfg.latent_h * cfg.latent_w, d)
        p["t_mlp.w1"] = init(d, d)
        p["t_mlp.b1"] = T.parameter(np.zeros(d, dtype=np.float32))
        p["t_mlp.w2"] = init(d, d)
        p["t_mlp.b2"] = T.parameter(np.zeros(d, dtype=np.float32))

        for i in range(cfg.depth):
            pre = f"block{i}."
            p[pre + "ln1.g"] = T.parameter(np.ones(d, dtype=np.float32))
            p[pre + "ln1.b"] = T.parameter(np.zeros(d, dtype=np.float32))
            # no key bias: a shared key offset cancels in the softmax rows
            for name in ("q", "k", "v", "o"):
                p[pre + f"attn.{name}.w"] = init(d, d)
                if name != "k":
                    p[pre + f"attn.{name}.b"] = T.parameter(np.zeros(d, dtype=np.float32))
            p[pre + "ln2.g"] = T.parameter(np.ones(d, dtype=np.float32))
            p[pre + "ln2.b"] = T.parameter(np.zeros(d, dtype=np.float32))
            p[pre + "ffn.w1"] = init(d, 4 * d)
            p[pre + "ffn.b1"] = T.parameter(np.zeros(4 * d, dtype=np.float32))
            p[pre + "ffn.w2"] = init(4 * d, d)
            p[pre + "ffn.b2"] = T.parameter(np.zeros(d, dtype=np.float32))

        p["final_ln.g"] = T.parameter(np.ones(d, dtype=np.float32))
        p["final_ln.b"] = T.parameter(np.zeros(d, dtype=np.float32))
        p["out_proj.w"] = init(d, cfg.channels)
        p["out_proj.b"] = T.parameter(np.zeros(cfg.channels, dtype=np.float32))

    def parameters(self) -> dict[str, T.Tensor]:
        return self.params

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise ContractError(f"checkpoint is missing parameter {name}")
            if arrays[name].shape != p.shape:
                raise ShapeError(
                    f"parameter {name} shape {arrays[name].shape} != expected {p.shape}"
                )
            p.data = np.ascontiguousarray(arrays[name], dtype=np.float32)

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def _heads_split(self, x: T.Tensor, seq: int) -> T.Tensor:
        cfg = self.cfg
        dh = cfg.width // cfg.heads
        return T.transpose(T.reshape(x, (seq, cfg.heads, dh)), (1, 0, 2))

    def _encode_sequence(
        self,
        z_input: np.ndarray,
        t: int,
        prompt_tokens: tuple[int, ...],
        use_positions: bool,
        capture: dict | None,
    ):
        cfg = self.cfg
        p = self.params
        if z_input.ndim != 4 or z_input.shape[1] != 2 * cfg.channels:
            raise ShapeError(
                f"z_input must be (n+f, {2 * cfg.channels}, h, w), got {z_input.shape}"
            )
        total_frames, _, h, w = z_input.shape
        if (h, w) != (cfg.latent_h, cfg.latent_w):
            raise ShapeError(
                f"latent plane {(h, w)} != configured {(cfg.latent_h, cfg.latent_w)}"
            )
        if total_frames > cfg.max_frames:
            raise ShapeError(
                f"{total_frames} latent frames exceed max_frames={cfg.max_frames}"
            )
        if len(prompt_tokens) > cfg.max_prompt_tokens:
            raise ContractError(
                f"prompt has {len(prompt_tokens)} tokens, limit {cfg.max_prompt_tokens}"
            )
        n_lat = total_frames * h * w
        n_prompt = len(prompt_tokens)

        cells = np.ascontiguousarray(
            z_input.transpose(0, 2, 3, 1).reshape(n_lat, 2 * cfg.channels)
        )
        lat = T.matmul(T.constant(cells), p["in_proj.w"]) + p["in_proj.b"]

        if use_positions:
            frame_idx = np.repeat(np.arange(total_frames), h * w)
            cell_idx = np.tile(np.arange(h * w), total_frames)
            lat = lat + T.gather_rows(p["frame_pos"], frame_idx)
            lat = lat + T.gather_rows(p["spatial_pos"], cell_idx)

        t_feat = T.constant(sinusoidal_embedding(t, cfg.width).reshape(1, cfg.width))
        t_emb = T.matmul(t_feat, p["t_mlp.w1"]) + p["t_mlp.b1"]
        t_emb = T.matmul(T.gelu(t_emb), p["t_mlp.w2"]) + p["t_mlp.b2"]
        lat = lat + t_emb

        if n_prompt:
            ids = np.asarray(prompt_tokens, dtype=np.int64)
            txt = T.gather_rows(p["tok_emb"], ids)
            if use_positions:
                txt = txt + T.gather_rows(p["prompt_pos"], np.arange(n_prompt))
            x = T.concat([txt, lat], axis=0)
        else:
            x = lat
        seq = n_prompt + n_lat

        att_scale = 1.0 / math.sqrt(cfg.width // cfg.heads)
        for i in range(cfg.depth):
            pre = f"block{i}."
            normed = T.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            q = self._heads_split(T.matmul(normed, p[pre + "attn.q.w"]) + p[pre + "attn.q.b"], seq)
            k = self._heads_split(T.matmul(normed, p[pre + "attn.k.w"]), seq)
            v = self._heads_split(T.matmul(normed, p[pre + "attn.v.w"]) + p[pre + "attn.v.b"], seq)
            blk_capture = None
            if capture is not None:
                blk_capture = {}
            ctx = T.attention(q, k, v, att_scale, capture=blk_capture)
            if capture is not None:
                capture.setdefault("attn_probs", []).append(blk_capture["probs"])
            ctx = T.reshape(T.transpose(ctx, (1, 0, 2)), (seq, cfg.width))
            x = x + (T.matmul(ctx, p[pre + "attn.o.w"]) + p[pre + "attn.o.b"])
            normed = T.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            hidden = T.gelu(T.matmul(normed, p[pre + "ffn.w1"]) + p[pre + "ffn.b1"])
            x = x + (T.matmul(hidden, p[pre + "ffn.w2"]) + p[pre + "ffn.b2"])

        x = T.layer_norm(x, p["final_ln.g"], p["final_ln.b"])
        return x, n_prompt, total_frames, h, w

    def forward(
        self,
        z_input: np.ndarray,
        t: int,
        prompt_tokens: tuple[int, ...] = (),
        n_refs: int = 0,
        use_positions: bool = True,
        capture: dict | None = None,
    ) -> T.Tensor:
        """Predict the noise on the video latent frames: (f, c, h, w).

        ``z_input`` is the assembled (n + f, 2c, h, w) block whose first
        ``n_refs`` frames are reference slots; the output projection is
        read only at the f video frames' tokens (reference-frame and
        prompt outputs are discarded). Records onto the active tape, so
        the same call serves training and inference.
        """
        x, n_prompt, total_frames, h, w = self._encode_sequence(
            z_input, t, prompt_tokens, use_positions, capture
        )
        if not 0 <= n_refs < total_frames:
            raise ContractError(
                f"n_refs={n_refs} must leave at least one video frame of {total_frames}"
            )
        f_frames = total_frames - n_refs
        video = T.narrow(x, 0, n_prompt + n_refs * h * w, f_frames * h * w)
        out = T.matmul(video, self.params["out_proj.w"]) + self.params["out_proj.b"]
        out = T.reshape(out, (f_frames, h, w, self.cfg.channels))
        return T.transpose(out, (0, 3, 1, 2))

    def forward_array(self, z_input, t, prompt_tokens=(), n_refs=0) -> np.ndarray:
        """Inference convenience: same forward, plain array out (no tape)."""
        return self.forward(z_input, t, prompt_tokens, n_refs).data

    def config_dict(self) -> dict:
        return asdict(self.cfg)
