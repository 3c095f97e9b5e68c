"""Training loop, checkpointing, and the end-to-end edit/eval pipelines.

Every random draw derives from (seed, tag, step, slot) via independent
generators, so training is resumable bit-exactly: a checkpoint at step k
followed by steps k+1..m reproduces an uninterrupted run, and the same
(seed, config, dataset) produces identical artifacts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .ckpt import META_KEY, load_arrays, pack_meta, save_arrays, unpack_meta
from .codec import CodecConfig, decode, encode, latent_shape, read_video
from .conditioning import (
    DropoutPolicy,
    Quintuple,
    apply_condition_dropout,
    build_bundle,
    tokenize,
)
from .config import (
    OptimizerConfig,
    RunConfig,
    ScheduleConfig,
    save_config,
)
from .diffusion import NoiseSchedule, add_noise, make_plan, make_schedule
from .errors import ContractError
from .metrics import EmbedderSuite, MetricReport, evaluate
from .model import DiTModel, ModelConfig
from .optim import AdamW
from .sampler import GuidanceConfig, make_edit_builders, sample
from .synth import ManifestRecord, load_manifest, load_quintuple

# rng stream tags; distinct constants keep the derived streams independent
_TAG_BATCH = 101
_TAG_SAMPLE = 102
_TAG_EDIT_NOISE = 103


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; message carries the step and gradient norms."""


@dataclass
class TrainState:
    cfg: RunConfig
    model: DiTModel
    opt: AdamW
    sched: NoiseSchedule
    step: int = 0
    last_loss: float = math.nan
    best_loss: float = math.inf


def build_schedule(cfg: RunConfig) -> NoiseSchedule:
    return make_schedule(
        timesteps=cfg.schedule.timesteps,
        kind=cfg.schedule.kind,
        beta_start=cfg.schedule.beta_start,
        beta_end=cfg.schedule.beta_end,
    )


def init_state(cfg: RunConfig) -> TrainState:
    model = DiTModel(cfg.model, seed=cfg.seed)
    opt = AdamW(
        model.parameters(),
        lr=cfg.optimizer.lr,
        betas=(cfg.optimizer.beta1, cfg.optimizer.beta2),
        eps=cfg.optimizer.eps,
        weight_decay=cfg.optimizer.weight_decay,
    )
    return TrainState(cfg=cfg, model=model, opt=opt, sched=build_schedule(cfg))


def encode_refs(refs: np.ndarray, codec: CodecConfig) -> np.ndarray:
    """Encode (n, 3, H, W) reference images as single-frame latents (n, c, h, w)."""
    if refs.shape[0] == 0:
        f, c, h, w = latent_shape(1, refs.shape[2], refs.shape[3], codec)
        return np.zeros((0, c, h, w), dtype=np.float32)
    return np.concatenate([encode(ref[None], codec) for ref in refs], axis=0)


def sample_loss(
    state: TrainState, quintuple: Quintuple, rng: np.random.Generator
) -> T.Tensor:
    """One record's denoising loss; must run under an active Tape.

    Draw order per sample is fixed: dropout (3 uniforms), timestep, noise.
    """
    cfg = state.cfg
    dropped, flags = apply_condition_dropout(quintuple, cfg.dropout, rng)
    t = int(rng.integers(1, state.sched.timesteps + 1))
    z_target0 = encode(dropped.target, cfg.codec)
    eps = rng.standard_normal(z_target0.shape).astype(np.float32)
    z_target_t = add_noise(z_target0, eps, t, state.sched)
    z_cond = encode(dropped.cond, cfg.codec)
    z_ref = encode_refs(dropped.refs, cfg.codec)
    tokens = tokenize(dropped.prompt, cfg.model.max_prompt_tokens)
    bundle = build_bundle(z_target_t, z_cond, z_ref, dropped.mask, tokens, flags)
    pred = state.model.forward(bundle.z_input, t, bundle.prompt_tokens, n_refs=bundle.n)
    diff = pred - T.constant(eps)
    return T.mean_all(diff * diff)


def train_step(
    state: TrainState, records: list[ManifestRecord], root: Path, step: int
) -> float:
    """One optimizer step over a freshly drawn batch; returns the batch loss."""
    cfg = state.cfg
    batch_rng = np.random.default_rng((cfg.seed, _TAG_BATCH, step))
    picks = batch_rng.integers(0, len(records), size=cfg.batch_size)
    inv_batch = 1.0 / cfg.batch_size
    total = 0.0
    for slot, pick in enumerate(picks):
        quintuple, _ = load_quintuple(records[int(pick)], root)
        rng = np.random.default_rng((cfg.seed, _TAG_SAMPLE, step, slot))
        with T.Tape() as tape:
            loss = sample_loss(state, quintuple, rng)
            T.backward(T.scale(loss, inv_batch), tape)
        total += loss.item()
    state.opt.step()
    state.opt.zero_grad()
    return total * inv_batch


def train(
    cfg: RunConfig,
    manifest_path,
    out_dir,
    resume=None,
    log_every: int = 50,
    quiet: bool = False,
) -> TrainState:
    """Full training run; writes loss.csv, periodic checkpoints, and the
    resolved config under ``out_dir``. Returns the final state."""
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = load_manifest(manifest_path)
    if not records:
        raise ContractError(f"manifest {manifest_path} has no records")
    root = manifest_path.parent

    if resume is not None:
        state = load_checkpoint(resume)
        # the run horizon may grow on resume; everything else must match
        def _core(c):
            d = asdict(c)
            d.pop("max_steps")
            d.pop("checkpoint_every")
            return d

        if _core(state.cfg) != _core(cfg):
            raise ContractError("resume checkpoint was trained with a different config")
        state.cfg = cfg
        mode = "a"
    else:
        state = init_state(cfg)
        mode = "w"
    save_config(cfg, out_dir / "config.ini")
    probe, _ = load_quintuple(records[0], root)
    _check_data_shapes(cfg, probe)

    loss_path = out_dir / "loss.csv"
    with open(loss_path, mode, encoding="utf-8") as loss_fh:
        if mode == "w":
            loss_fh.write("step,loss\n")
        for step in range(state.step + 1, cfg.max_steps + 1):
            loss = train_step(state, records, root, step)
            if not math.isfinite(loss):
                norms = sorted(
                    state.opt.grad_norms().items(), key=lambda kv: -kv[1]
                )[:8]
                dump = ", ".join(f"{k}={v:.3e}" for k, v in norms)
                raise TrainingDiverged(
                    f"non-finite loss at step {step}; largest grad norms: {dump}"
                )
            state.step = step
            state.last_loss = loss
            state.best_loss = min(state.best_loss, loss)
            loss_fh.write(f"{step},{loss:.8f}\n")
            loss_fh.flush()
            if not quiet and (step % log_every == 0 or step == 1):
                print(f"step {step:6d}  loss {loss:.6f}")
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"checkpoint_{step:06d}.ckpt", state)
    save_checkpoint(out_dir / "checkpoint_final.ckpt", state)
    return state


def _check_data_shapes(cfg: RunConfig, quintuple: Quintuple) -> None:
    frames, _, height, width = quintuple.target.shape
    f, c, h, w = latent_shape(frames, height, width, cfg.codec)
    if (h, w) != (cfg.model.latent_h, cfg.model.latent_w):
        raise ContractError(
            f"data encodes to latent plane {(h, w)} but the model expects "
            f"{(cfg.model.latent_h, cfg.model.latent_w)}"
        )
    if quintuple.refs.shape[0] + f > cfg.model.max_frames:
        raise ContractError(
            f"{quintuple.refs.shape[0]} refs + {f} latent frames exceed "
            f"max_frames={cfg.model.max_frames}"
        )


def save_checkpoint(path, state: TrainState) -> None:
    cfg = state.cfg
    meta = {
        "codec": asdict(cfg.codec),
        "model": asdict(cfg.model),
        "schedule": asdict(cfg.schedule),
        "optimizer": asdict(cfg.optimizer),
        "dropout": asdict(cfg.dropout),
        "guidance": asdict(cfg.guidance),
        "run": {
            "batch_size": cfg.batch_size,
            "max_steps": cfg.max_steps,
            "checkpoint_every": cfg.checkpoint_every,
            "seed": cfg.seed,
        },
        "step": state.step,
        "last_loss": state.last_loss,
        "best_loss": state.best_loss,
    }
    arrays: dict[str, np.ndarray] = {META_KEY: pack_meta(meta)}
    arrays["sched.alpha_bar"] = state.sched.alpha_bar.astype(np.float32)
    for name, value in state.model.state().items():
        arrays[f"model.{name}"] = value
    arrays.update(state.opt.state())
    save_arrays(path, arrays)


def load_checkpoint(path) -> TrainState:
    arrays = load_arrays(path)
    if META_KEY not in arrays:
        raise ContractError(f"checkpoint {path} is missing its metadata record")
    meta = unpack_meta(arrays[META_KEY])
    cfg = RunConfig(
        codec=CodecConfig(**meta["codec"]),
        model=ModelConfig(**meta["model"]),
        schedule=ScheduleConfig(**meta["schedule"]),
        optimizer=OptimizerConfig(**meta["optimizer"]),
        dropout=DropoutPolicy(**meta["dropout"]),
        guidance=GuidanceConfig(**meta["guidance"]),
        **meta["run"],
    )
    state = init_state(cfg)
    stored = arrays["sched.alpha_bar"]
    if not np.array_equal(state.sched.alpha_bar.astype(np.float32), stored):
        raise ContractError(
            "stored schedule table disagrees with the config's schedule"
        )
    state.model.load_state(
        {k[len("model.") :]: v for k, v in arrays.items() if k.startswith("model.")}
    )
    state.opt.load_state(arrays, meta["step"])
    state.step = meta["step"]
    state.last_loss = meta["last_loss"]
    state.best_loss = meta["best_loss"]
    return state


def edit(
    state: TrainState,
    cond_video: np.ndarray,
    refs: np.ndarray | None,
    prompt: str,
    mask: np.ndarray | None = None,
    s1: float | None = None,
    s2: float | None = None,
    steps: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Insert the referenced object into the condition video; returns a video.

    An omitted mask means zero mask channels (the dropout-trained path);
    omitted refs mean no reference frames at all (n = 0).
    """
    cfg = state.cfg
    frames, _, height, width = cond_video.shape
    f, c, h, w = latent_shape(frames, height, width, cfg.codec)
    if (h, w) != (cfg.model.latent_h, cfg.model.latent_w):
        raise ContractError(
            f"condition video encodes to {(h, w)}, checkpoint expects "
            f"{(cfg.model.latent_h, cfg.model.latent_w)}"
        )
    if refs is None:
        refs = np.zeros((0, 3, height, width), dtype=np.float32)
    if refs.shape[0] + f > cfg.model.max_frames:
        raise ContractError(
            f"{refs.shape[0]} refs + {f} latent frames exceed the checkpoint's "
            f"max_frames={cfg.model.max_frames}"
        )
    if mask is None:
        mask = np.zeros((1, 1, height, width), dtype=np.float32)
    guidance = GuidanceConfig(
        s1=cfg.guidance.s1 if s1 is None else s1,
        s2=cfg.guidance.s2 if s2 is None else s2,
        steps=cfg.guidance.steps if steps is None else steps,
    )
    z_cond = encode(cond_video, cfg.codec)
    z_ref = encode_refs(refs, cfg.codec)
    tokens = tokenize(prompt, cfg.model.max_prompt_tokens)
    builders = make_edit_builders(z_cond, z_ref, mask, tokens)
    plan = make_plan(state.sched, guidance.steps)
    rng = np.random.default_rng((seed, _TAG_EDIT_NOISE))
    noise = rng.standard_normal((f, c, h, w)).astype(np.float32)

    def model_fn(z_input, t, prompt_tokens, n_refs):
        return state.model.forward_array(z_input, t, prompt_tokens, n_refs)

    z0 = sample(model_fn, builders, plan, state.sched, guidance, noise)
    return decode(z0, cfg.codec)


def _read_video_dir(dirpath: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(dirpath.glob("*.vid"))}


def evaluate_dirs(
    gen_dir, target_dir, prompts: dict[str, str], suite: EmbedderSuite = EmbedderSuite()
) -> MetricReport:
    """Benchmark generated vs target .vid directories paired by file stem."""
    gen_dir, target_dir = Path(gen_dir), Path(target_dir)
    gen_files = _read_video_dir(gen_dir)
    target_files = _read_video_dir(target_dir)
    unmatched = sorted(set(gen_files) ^ set(target_files))
    if unmatched:
        raise ContractError(f"unpaired ids between gen and target: {unmatched}")
    missing_prompts = sorted(set(gen_files) - set(prompts))
    if missing_prompts:
        raise ContractError(f"ids without prompts: {missing_prompts}")
    stems = sorted(gen_files)
    gen_videos = [read_video(gen_files[s]) for s in stems]
    target_videos = [read_video(target_files[s]) for s in stems]
    return evaluate(gen_videos, target_videos, [prompts[s] for s in stems], suite)
