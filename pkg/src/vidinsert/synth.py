"""Synthetic scene pipeline: render sprite videos, produce exact quintuples.

A scene is a seeded background plus a few moving sprites; the designated
target sprite is captioned, detected, tracked, and erased by oracle stages
that mirror the captioner/detector/tracker/eraser contracts of a real
pipeline but are exact by construction: the tracker emits the true
occlusion-aware visibility mask and the eraser re-renders the scene
without the target, so the condition video equals the target video
bit-exactly outside the tracked mask.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable

import numpy as np

from .codec import write_video, read_video
from .conditioning import Quintuple
from .errors import ContractError

PALETTE = {
    "red": (0.90, 0.15, 0.15),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.20, 0.30, 0.90),
    "yellow": (0.95, 0.85, 0.10),
    "magenta": (0.85, 0.20, 0.80),
    "cyan": (0.15, 0.80, 0.85),
    "orange": (0.95, 0.55, 0.10),
    "white": (0.95, 0.95, 0.95),
}

SHAPES = ("circle", "square", "triangle")
BACKGROUNDS = ("gradient", "noise-texture")

NEUTRAL = 0.5  # reference-crop padding value
CLEAR_FRACTION = 0.95  # visible share needed for a "clear" reference frame
MIN_ONCANVAS = 0.25  # frame-0 on-canvas share required of the target


class PipelineSkip(Exception):
    """Raised when a stage cannot produce its output (e.g. occluded target)."""


@dataclass(frozen=True)
class Sprite:
    kind: str  # circle | square | triangle
    color: str  # palette name
    size: float  # diameter / edge length in pixels
    x0: float
    y0: float
    vx: float = 0.0
    vy: float = 0.0
    amp_x: float = 0.0
    amp_y: float = 0.0
    freq_x: float = 0.0
    freq_y: float = 0.0
    phase_x: float = 0.0
    phase_y: float = 0.0
    z_order: int = 0

    def center(self, k: int) -> tuple[float, float]:
        """(cy, cx) at frame k: linear drift plus sinusoidal wobble."""
        two_pi = 2.0 * np.pi
        cx = self.x0 + self.vx * k + self.amp_x * np.sin(two_pi * self.freq_x * k + self.phase_x)
        cy = self.y0 + self.vy * k + self.amp_y * np.sin(two_pi * self.freq_y * k + self.phase_y)
        return float(cy), float(cx)


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    frames: int
    background: str
    seed: int
    sprites: tuple[Sprite, ...]
    target_index: int

    def __post_init__(self):
        if self.background not in BACKGROUNDS:
            raise ContractError(f"unknown background kind {self.background!r}")
        if self.sprites and not 0 <= self.target_index < len(self.sprites):
            raise ContractError(
                f"target index {self.target_index} outside sprite list"
            )


def scene_hash(spec: SceneSpec) -> str:
    blob = json.dumps(asdict(spec), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _stencil(sprite: Sprite, k: int, height: int, width: int) -> np.ndarray:
    """Boolean support of the sprite at frame k, clipped to the canvas."""
    cy, cx = sprite.center(k)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    half = sprite.size / 2.0
    if sprite.kind == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= half * half
    if sprite.kind == "square":
        return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    if sprite.kind == "triangle":
        # upward isoceles triangle inscribed in the sprite's bounding square
        v = yy - (cy - half)
        return (v >= 0) & (v <= sprite.size) & (np.abs(xx - cx) <= v / 2.0)
    raise ContractError(f"unknown sprite kind {sprite.kind!r}")


def _unclipped_area(sprite: Sprite, k: int = 0) -> int:
    """Pixel count of the frame-k support on an open canvas.

    Probes at the same subpixel phase as the real center: rasterized area
    depends on the fractional offset, so an integer-phase probe would
    misjudge the visible fraction.
    """
    cy, cx = sprite.center(k)
    pad = int(np.ceil(sprite.size)) * 2 + 5
    probe = Sprite(
        kind=sprite.kind, color=sprite.color, size=sprite.size,
        x0=pad + (cx - np.floor(cx)), y0=pad + (cy - np.floor(cy)),
    )
    return int(_stencil(probe, 0, 2 * pad + 1, 2 * pad + 1).sum())


def render_background(spec: SceneSpec) -> np.ndarray:
    """Static (3, H, W) background, deterministic from the scene seed."""
    rng = np.random.default_rng((spec.seed, 0xB6))
    if spec.background == "gradient":
        theta = rng.uniform(0, 2 * np.pi)
        c0 = rng.uniform(0.05, 0.45, size=3)
        c1 = rng.uniform(0.55, 0.95, size=3)
        yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
        u = np.cos(theta) * xx / max(spec.width - 1, 1) + np.sin(theta) * yy / max(
            spec.height - 1, 1
        )
        u = (u - u.min()) / max(u.max() - u.min(), 1e-9)
        img = c0[:, None, None] + (c1 - c0)[:, None, None] * u[None]
    else:
        img = rng.uniform(0.1, 0.9, size=(3, spec.height, spec.width))
    return img.astype(np.float32)


def _paint_order(spec: SceneSpec) -> list[int]:
    """Back-to-front sprite indices (z_order ascending, stable)."""
    return sorted(range(len(spec.sprites)), key=lambda i: (spec.sprites[i].z_order, i))


def render_scene(spec: SceneSpec) -> np.ndarray:
    """Deterministic rasterization: (F, 3, H, W), hard-alpha compositing."""
    background = render_background(spec)
    video = np.empty((spec.frames, 3, spec.height, spec.width), dtype=np.float32)
    order = _paint_order(spec)
    for k in range(spec.frames):
        frame = background.copy()
        for i in order:
            sprite = spec.sprites[i]
            mask = _stencil(sprite, k, spec.height, spec.width)
            color = np.asarray(PALETTE[sprite.color], dtype=np.float32)
            frame[:, mask] = color[:, None]
        video[k] = frame
    return video


def _owner_map(spec: SceneSpec, k: int) -> np.ndarray:
    """Which sprite index owns each visible pixel at frame k (-1 = background)."""
    owner = np.full((spec.height, spec.width), -1, dtype=np.int32)
    for i in _paint_order(spec):
        owner[_stencil(spec.sprites[i], k, spec.height, spec.width)] = i
    return owner


def visible_mask(spec: SceneSpec, index: int, k: int) -> np.ndarray:
    """Occlusion-aware boolean visibility of one sprite at frame k."""
    return _owner_map(spec, k) == index


def oracle_caption(spec: SceneSpec) -> tuple[str, str]:
    """Instance word and a templated prompt for the target sprite."""
    if not spec.sprites:
        raise ContractError("scene has no sprites to caption")
    sprite = spec.sprites[spec.target_index]
    cy0, cx0 = sprite.center(0)
    disp = 0.0
    for k in range(1, spec.frames):
        cy, cx = sprite.center(k)
        disp = max(disp, float(np.hypot(cy - cy0, cx - cx0)))
    if disp < 2.0:
        clause = "stays still"
    else:
        cy, cx = sprite.center(spec.frames - 1)
        dy, dx = cy - cy0, cx - cx0
        if abs(dx) >= abs(dy):
            clause = "moves right across the scene" if dx > 0 else "moves left across the scene"
        else:
            clause = "moves down across the scene" if dy > 0 else "moves up across the scene"
    prompt = f"a {sprite.color} {sprite.kind} {clause}"
    return sprite.kind, prompt


def oracle_detect(spec: SceneSpec, frame0: np.ndarray, instance: str) -> tuple[int, int, int, int]:
    """Tight inclusive (y0, x0, y1, x1) box of the target's visible frame-0 support.

    A target with no visible pixel in frame 0 (fully occluded or fully
    off-canvas) raises PipelineSkip.
    """
    del frame0, instance  # contract slots for a real detector backend
    vis = visible_mask(spec, spec.target_index, 0)
    if not vis.any():
        raise PipelineSkip("target not visible in frame 0")
    ys, xs = np.nonzero(vis)
    return int(ys.min()), int(xs.min()), int(ys.max()), int(xs.max())


def oracle_track(spec: SceneSpec, video: np.ndarray, bbox) -> np.ndarray:
    """Per-frame binary visibility masks (F, 1, H, W), occlusion-aware."""
    del video, bbox  # contract slots for a real tracker backend
    mask = np.zeros((spec.frames, 1, spec.height, spec.width), dtype=np.float32)
    for k in range(spec.frames):
        mask[k, 0] = visible_mask(spec, spec.target_index, k)
    return mask


def oracle_erase(spec: SceneSpec, video: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Exact inpainting: re-render the scene with the target sprite deleted."""
    del video, mask  # contract slots for a real inpainting backend
    remaining = tuple(
        s for i, s in enumerate(spec.sprites) if i != spec.target_index
    )
    erased = SceneSpec(
        height=spec.height,
        width=spec.width,
        frames=spec.frames,
        background=spec.background,
        seed=spec.seed,
        sprites=remaining,
        target_index=0 if remaining else 0,
    )
    return render_scene(erased)


@dataclass(frozen=True)
class PipelineStages:
    """Replaceable stage contracts; the defaults are the exact oracles."""

    captioner: Callable = oracle_caption
    detector: Callable = oracle_detect
    tracker: Callable = oracle_track
    eraser: Callable = oracle_erase


ORACLE_STAGES = PipelineStages()


def reference_image(spec: SceneSpec, target_video: np.ndarray) -> np.ndarray:
    """(3, H, W) crop of the target from its first clear frame.

    "Clear" means at least 95% of the sprite's unclipped support is
    visible. The visible pixels are cropped from the rendered frame onto a
    neutral square and nearest-resized to the video's H x W, so the
    reference encodes like a one-frame video. No clear frame -> skip.
    """
    sprite = spec.sprites[spec.target_index]
    for k in range(spec.frames):
        vis = visible_mask(spec, spec.target_index, k)
        if vis.sum() / max(_unclipped_area(sprite, k), 1) < CLEAR_FRACTION:
            continue
        ys, xs = np.nonzero(vis)
        y0, y1, x0, x1 = ys.min(), ys.max(), xs.min(), xs.max()
        crop_h, crop_w = y1 - y0 + 1, x1 - x0 + 1
        side = int(max(crop_h, crop_w))
        square = np.full((3, side, side), NEUTRAL, dtype=np.float32)
        oy, ox = (side - crop_h) // 2, (side - crop_w) // 2
        patch = np.full((3, crop_h, crop_w), NEUTRAL, dtype=np.float32)
        local = vis[y0 : y1 + 1, x0 : x1 + 1]
        patch[:, local] = target_video[k][:, y0 : y1 + 1, x0 : x1 + 1][:, local]
        square[:, oy : oy + crop_h, ox : ox + crop_w] = patch
        iy = (np.arange(spec.height) * side) // spec.height
        ix = (np.arange(spec.width) * side) // spec.width
        return square[:, iy][:, :, ix]
    raise PipelineSkip("no clear frame containing the target")


def random_scene(
    rng: np.random.Generator, height: int, width: int, frames: int
) -> SceneSpec:
    """Draw a scene whose target is at least 25% on-canvas in frame 0."""
    colors = list(PALETTE)
    for _ in range(64):
        n_sprites = int(rng.integers(1, 4))
        sprites = []
        for j in range(n_sprites):
            sprites.append(
                Sprite(
                    kind=SHAPES[int(rng.integers(len(SHAPES)))],
                    color=colors[int(rng.integers(len(colors)))],
                    size=float(rng.uniform(6.0, min(14.0, height / 2.2))),
                    x0=float(rng.uniform(4.0, width - 4.0)),
                    y0=float(rng.uniform(4.0, height - 4.0)),
                    vx=float(rng.uniform(-2.0, 2.0)),
                    vy=float(rng.uniform(-2.0, 2.0)),
                    amp_x=float(rng.uniform(0.0, 2.5)),
                    amp_y=float(rng.uniform(0.0, 2.5)),
                    freq_x=float(rng.uniform(0.05, 0.3)),
                    freq_y=float(rng.uniform(0.05, 0.3)),
                    phase_x=float(rng.uniform(0.0, 2 * np.pi)),
                    phase_y=float(rng.uniform(0.0, 2 * np.pi)),
                    z_order=j,
                )
            )
        spec = SceneSpec(
            height=height,
            width=width,
            frames=frames,
            background=BACKGROUNDS[int(rng.integers(2))],
            seed=int(rng.integers(2**31)),
            sprites=tuple(sprites),
            target_index=int(rng.integers(n_sprites)),
        )
        target = spec.sprites[spec.target_index]
        on_canvas = _stencil(target, 0, height, width).sum()
        if on_canvas / max(_unclipped_area(target), 1) >= MIN_ONCANVAS:
            return spec
    raise ContractError("could not draw a valid scene in 64 attempts")


@dataclass
class ManifestRecord:
    id: int
    seed: int
    scene_hash: str
    prompt: str
    n: int
    target: str
    cond: str
    ref: str
    mask: str
    hashes: dict = field(default_factory=dict)


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_record(spec: SceneSpec, stages: PipelineStages = ORACLE_STAGES):
    """Run the full pipeline on one scene; raises PipelineSkip when stuck."""
    target_video = render_scene(spec)
    instance, prompt = stages.captioner(spec)
    bbox = stages.detector(spec, target_video[0], instance)
    mask = stages.tracker(spec, target_video, bbox)
    cond_video = stages.eraser(spec, target_video, mask)
    ref = reference_image(spec, target_video)
    return target_video, cond_video, ref, mask, prompt


def build_dataset(
    count: int,
    seed: int,
    out_dir,
    height: int = 32,
    width: int = 32,
    frames: int = 9,
    stages: PipelineStages = ORACLE_STAGES,
) -> Path:
    """Generate ``count`` quintuples under ``out_dir``; returns the manifest path.

    Record ids derive their rng from (seed, id, attempt) so generation is
    order-independent and reproducible; scenes the pipeline skips are
    regenerated with the next attempt counter.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"
    records = []
    for rec_id in range(count):
        attempt = 0
        while True:
            rng = np.random.default_rng((seed, rec_id, attempt))
            spec = random_scene(rng, height, width, frames)
            try:
                target, cond, ref, mask, prompt = build_record(spec, stages)
                break
            except PipelineSkip:
                attempt += 1
                if attempt > 200:
                    raise ContractError(
                        f"record {rec_id}: no viable scene after 200 attempts"
                    )
        names = {
            "target": f"{rec_id:06d}_target.vid",
            "cond": f"{rec_id:06d}_cond.vid",
            "ref": f"{rec_id:06d}_ref.vid",
            "mask": f"{rec_id:06d}_mask.vid",
        }
        try:
            write_video(out_dir / names["target"], target)
            write_video(out_dir / names["cond"], cond)
            write_video(out_dir / names["ref"], ref[None])
            write_video(out_dir / names["mask"], mask)
        except OSError as exc:
            raise ContractError(f"record {rec_id}: failed writing files: {exc}") from exc
        record = ManifestRecord(
            id=rec_id,
            seed=seed,
            scene_hash=scene_hash(spec),
            prompt=prompt,
            n=1,
            target=names["target"],
            cond=names["cond"],
            ref=names["ref"],
            mask=names["mask"],
            hashes={k: _sha256_file(out_dir / v) for k, v in names.items()},
        )
        records.append(record)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(asdict(record), sort_keys=True) + "\n")
    return manifest_path


def load_manifest(manifest_path) -> list[ManifestRecord]:
    manifest_path = Path(manifest_path)
    records = []
    with open(manifest_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ManifestRecord(**json.loads(line)))
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ContractError("manifest contains duplicate record ids")
    return records


def validate_manifest(manifest_path) -> list[str]:
    """Existence + hash + shape checks; returns a list of problems."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    problems = []
    for record in load_manifest(manifest_path):
        for key in ("target", "cond", "ref", "mask"):
            rel = getattr(record, key)
            path = root / rel
            if not path.exists():
                problems.append(f"record {record.id}: missing file {rel}")
                continue
            if record.hashes.get(key) != _sha256_file(path):
                problems.append(f"record {record.id}: hash mismatch for {rel}")
        try:
            target = read_video(root / record.target)
            cond = read_video(root / record.cond)
            mask = read_video(root / record.mask)
            if cond.shape != target.shape:
                problems.append(f"record {record.id}: cond/target shape mismatch")
            if mask.shape != (target.shape[0], 1) + target.shape[2:]:
                problems.append(f"record {record.id}: mask shape mismatch")
            if not np.isin(mask, (0.0, 1.0)).all():
                problems.append(f"record {record.id}: mask is not binary")
        except (OSError, ContractError) as exc:
            problems.append(f"record {record.id}: unreadable files ({exc})")
    return problems


def load_quintuple(record: ManifestRecord, root) -> tuple[Quintuple, np.ndarray]:
    """Materialize a training record; returns (quintuple, temporal mask).

    The quintuple carries the first-frame mask only; the full temporal
    mask is returned alongside for evaluation use.
    """
    root = Path(root)
    target = read_video(root / record.target)
    cond = read_video(root / record.cond)
    ref = read_video(root / record.ref)
    mask = read_video(root / record.mask)
    quintuple = Quintuple(
        prompt=record.prompt,
        refs=ref,
        mask=mask[0:1],
        cond=cond,
        target=target,
    )
    return quintuple, mask
