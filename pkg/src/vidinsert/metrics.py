"""Benchmark metrics: exact Frechet-distance math over pluggable embedders.

The Frechet and cosine mathematics are exact; the feature extractors are
seeded stand-ins (random projections, bag-of-bytes text hashing), so
absolute numbers are only comparable between runs that share embedder
configs. Reports therefore carry an embedder config hash.

Statistics are computed in float64 with unbiased (n - 1) covariance; when
a side has fewer than dim + 1 samples the covariance is shrunk by adding
lambda * I with lambda = 1e-6 * trace / dim.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ContractError

_SHRINK = 1e-6
_NEG_RESIDUE_TOL = 1e-6


class FrameEmbedder:
    """Seeded random-projection embedder: (N, C, H, W) frames -> (N, dim)."""

    def __init__(self, dim: int = 16, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._proj: dict[tuple, np.ndarray] = {}

    def _projection(self, flat_dim: int) -> np.ndarray:
        key = (flat_dim,)
        if key not in self._proj:
            rng = np.random.default_rng((self.seed, flat_dim))
            self._proj[key] = rng.standard_normal((flat_dim, self.dim)) / np.sqrt(flat_dim)
        return self._proj[key]

    def embed(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 4:
            raise ContractError(f"frames must be (N, C, H, W), got {frames.shape}")
        flat = frames.reshape(frames.shape[0], -1)
        return flat @ self._projection(flat.shape[1])

    def config(self) -> dict:
        return {"kind": "frame-random-projection", "dim": self.dim, "seed": self.seed}


class ClipEmbedder:
    """Temporal-pooled clip embedder: one (F, C, H, W) clip -> (2 * dim,).

    Concatenates the mean frame embedding with the mean absolute
    adjacent-frame embedding difference, so shuffling frames changes the
    embedding.
    """

    def __init__(self, dim: int = 16, seed: int = 0):
        self.frame = FrameEmbedder(dim=dim, seed=seed)
        self.dim = 2 * dim

    def embed_clip(self, clip: np.ndarray) -> np.ndarray:
        e = self.frame.embed(clip)
        if e.shape[0] < 2:
            diff = np.zeros(self.frame.dim)
        else:
            diff = np.abs(np.diff(e, axis=0)).mean(axis=0)
        return np.concatenate([e.mean(axis=0), diff])

    def embed(self, clips) -> np.ndarray:
        return np.stack([self.embed_clip(c) for c in clips], axis=0)

    def config(self) -> dict:
        return {"kind": "clip-temporal-pooled", "dim": self.dim, "seed": self.frame.seed}


class TextEmbedder:
    """Bag-of-bytes hashing embedder: text -> (dim,), deterministic per seed."""

    def __init__(self, dim: int = 16, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def embed_text(self, text: str) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float64)
        for token in text.encode("utf-8"):
            digest = hashlib.sha256(bytes([token]) + str(self.seed).encode()).digest()
            index = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            out[index] += sign
        norm = np.linalg.norm(out)
        return out / norm if norm > 0 else out

    def embed(self, texts) -> np.ndarray:
        return np.stack([self.embed_text(t) for t in texts], axis=0)

    def config(self) -> dict:
        return {"kind": "text-bag-of-bytes", "dim": self.dim, "seed": self.seed}


def psd_matrix_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition: V diag(sqrt(l)) V^T."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ContractError(f"matrix must be square, got {matrix.shape}")
    asym = np.abs(matrix - matrix.T).max() if matrix.size else 0.0
    if asym > 1e-6:
        raise ContractError(f"matrix asymmetry {asym:.3g} exceeds 1e-6")
    sym = 0.5 * (matrix + matrix.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.size and eigvals.min() < -1e-8:
        raise ContractError(f"matrix has eigenvalue {eigvals.min():.3g} < -1e-8")
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_distance(
    mu1: np.ndarray, cov1: np.ndarray, mu2: np.ndarray, cov2: np.ndarray
) -> float:
    """||mu1 - mu2||^2 + tr(C1 + C2 - 2 (C1^{1/2} C2 C1^{1/2})^{1/2})."""
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    cov1 = np.asarray(cov1, dtype=np.float64)
    cov2 = np.asarray(cov2, dtype=np.float64)
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape:
        raise ContractError("moment shapes disagree between the two sides")
    root1 = psd_matrix_sqrt(cov1)
    inner = root1 @ cov2 @ root1
    inner = 0.5 * (inner + inner.T)  # symmetrize numerical residue
    cross = psd_matrix_sqrt(inner)
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross))
    if value < 0.0:
        if value < -_NEG_RESIDUE_TOL:
            raise ContractError(f"negative Frechet distance {value:.3g} beyond residue tolerance")
        value = 0.0
    return value


def _moments(features: np.ndarray, shrinkage: bool) -> tuple[np.ndarray, np.ndarray]:
    count, dim = features.shape
    if count < 2:
        raise ContractError(f"need at least 2 samples for covariance, got {count}")
    if count < dim + 1 and not shrinkage:
        raise ContractError(
            f"{count} samples cannot give a full-rank {dim}-dim covariance; "
            "enable shrinkage or add samples"
        )
    mu = features.mean(axis=0)
    cov = np.cov(features, rowvar=False).reshape(dim, dim)
    if count < dim + 1:
        cov = cov + (_SHRINK * np.trace(cov) / dim) * np.eye(dim)
    return mu, cov


def fid(frames_a, frames_b, embedder: FrameEmbedder, shrinkage: bool = True) -> float:
    """Frechet distance between Gaussian fits of frame embeddings."""
    ea = embedder.embed(np.asarray(frames_a))
    eb = embedder.embed(np.asarray(frames_b))
    return frechet_distance(*_moments(ea, shrinkage), *_moments(eb, shrinkage))


def fvd(clips_a, clips_b, embedder: ClipEmbedder, shrinkage: bool = True) -> float:
    """Frechet distance between Gaussian fits of whole-clip embeddings."""
    ea = embedder.embed(clips_a)
    eb = embedder.embed(clips_b)
    return frechet_distance(*_moments(ea, shrinkage), *_moments(eb, shrinkage))


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def similarity_scores(
    gen_videos,
    target_videos,
    prompts,
    embedder_a: FrameEmbedder,
    embedder_b: FrameEmbedder,
    text_embedder: TextEmbedder,
) -> tuple[float, float, float]:
    """Paired cosine similarities: (semantic, fine-grained, text alignment).

    The first two means compare pooled per-video embeddings of generated
    vs target videos under two differently-seeded image embedders; the
    third compares the generated video's pooled embedding against the
    prompt embedding in a shared-dimension space.
    """
    if not (len(gen_videos) == len(target_videos) == len(prompts)):
        raise ContractError(
            f"paired sets must match: {len(gen_videos)} generated, "
            f"{len(target_videos)} target, {len(prompts)} prompts"
        )
    if embedder_a.dim != text_embedder.dim:
        raise ContractError(
            "text alignment needs matching dims between image embedder A "
            f"({embedder_a.dim}) and text embedder ({text_embedder.dim})"
        )
    sims_a, sims_b, sims_t = [], [], []
    for gen, target, prompt in zip(gen_videos, target_videos, prompts):
        pooled_gen_a = embedder_a.embed(gen).mean(axis=0)
        pooled_tgt_a = embedder_a.embed(target).mean(axis=0)
        pooled_gen_b = embedder_b.embed(gen).mean(axis=0)
        pooled_tgt_b = embedder_b.embed(target).mean(axis=0)
        sims_a.append(_cosine(pooled_gen_a, pooled_tgt_a))
        sims_b.append(_cosine(pooled_gen_b, pooled_tgt_b))
        sims_t.append(_cosine(pooled_gen_a, text_embedder.embed_text(prompt)))
    return float(np.mean(sims_a)), float(np.mean(sims_b)), float(np.mean(sims_t))


@dataclass
class MetricReport:
    """Per-run scores, column order as reported: FID, FVD, CLIP-I, DINO-I, CLIP-T.

    fid/fvd are lower-is-better; the three similarity scores are
    higher-is-better in [-1, 1].
    """

    fid: float
    fvd: float
    clip_i: float
    dino_i: float
    clip_t: float
    cases: int
    frames_per_side: int
    config_hash: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def to_table(self) -> str:
        header = f"{'FID (v)':>10} {'FVD (v)':>10} {'CLIP-I (^)':>11} {'DINO-I (^)':>11} {'CLIP-T (^)':>11}"
        row = (
            f"{self.fid:>10.4f} {self.fvd:>10.4f} {self.clip_i:>11.4f} "
            f"{self.dino_i:>11.4f} {self.clip_t:>11.4f}"
        )
        return header + "\n" + row


@dataclass(frozen=True)
class EmbedderSuite:
    """The embedder set used for one evaluation run."""

    frame_dim: int = 16
    clip_dim: int = 12
    text_dim: int = 16
    seed: int = 0

    def build(self):
        clip_img = FrameEmbedder(dim=self.frame_dim, seed=self.seed)
        dino_img = FrameEmbedder(dim=self.frame_dim + 4, seed=self.seed + 1)
        clip_vid = ClipEmbedder(dim=self.clip_dim, seed=self.seed + 2)
        text = TextEmbedder(dim=self.text_dim, seed=self.seed + 3)
        return clip_img, dino_img, clip_vid, text

    def config_hash(self) -> str:
        clip_img, dino_img, clip_vid, text = self.build()
        blob = json.dumps(
            [clip_img.config(), dino_img.config(), clip_vid.config(), text.config()],
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def evaluate(gen_videos, target_videos, prompts, suite: EmbedderSuite = EmbedderSuite()) -> MetricReport:
    """Full benchmark pass over paired generated/target videos."""
    clip_img, dino_img, clip_vid, text = suite.build()
    frames_gen = np.concatenate([np.asarray(v) for v in gen_videos], axis=0)
    frames_tgt = np.concatenate([np.asarray(v) for v in target_videos], axis=0)
    fid_value = fid(frames_gen, frames_tgt, clip_img)
    fvd_value = fvd(gen_videos, target_videos, clip_vid)
    clip_i, dino_i, clip_t = similarity_scores(
        gen_videos, target_videos, prompts, clip_img, dino_img, text
    )
    return MetricReport(
        fid=fid_value,
        fvd=fvd_value,
        clip_i=clip_i,
        dino_i=dino_i,
        clip_t=clip_t,
        cases=len(gen_videos),
        frames_per_side=int(frames_gen.shape[0]),
        config_hash=suite.config_hash(),
    )
