"""Command-line entry points: synth, train, edit, eval, grad-check."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .codec import read_video, write_video
from .config import desk_config, load_config
from .errors import ContractError, ShapeError
from .gradcheck import FD_ATOL, model_battery, primitive_battery
from .harness import (
    TrainingDiverged,
    edit,
    evaluate_dirs,
    load_checkpoint,
    train,
)
from .metrics import EmbedderSuite
from .synth import build_dataset, validate_manifest


def _cmd_synth(args) -> int:
    manifest = build_dataset(
        count=args.count,
        seed=args.seed,
        out_dir=args.out,
        height=args.height,
        width=args.width,
        frames=args.frames,
    )
    problems = validate_manifest(manifest)
    if problems:
        raise ContractError("; ".join(problems))
    print(f"wrote {args.count} records to {manifest}")
    return 0


def _cmd_train(args) -> int:
    cfg = desk_config(seed=args.seed) if args.config is None else load_config(args.config)
    state = train(cfg, args.data, args.out, resume=args.resume)
    print(f"finished at step {state.step}, last loss {state.last_loss:.6f}")
    return 0


def _read_mask(path) -> np.ndarray:
    mask = read_video(path)
    return mask[0:1]  # model conditions on the first-frame mask only


def _cmd_edit(args) -> int:
    state = load_checkpoint(args.ckpt)
    cond = read_video(args.cond)
    refs = None
    if args.ref:
        frames = [read_video(p) for p in args.ref]
        refs = np.concatenate(frames, axis=0)
    mask = _read_mask(args.mask) if args.mask else None
    video = edit(
        state,
        cond,
        refs,
        args.prompt,
        mask=mask,
        s1=args.s1,
        s2=args.s2,
        steps=args.steps,
        seed=args.seed,
    )
    write_video(args.out, video)
    print(f"wrote edited video to {args.out}")
    return 0


def _load_prompts(path) -> dict[str, str]:
    prompts: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            prompts[str(obj["id"])] = obj["prompt"]
    return prompts


def _cmd_eval(args) -> int:
    prompts = _load_prompts(args.prompts)
    report = evaluate_dirs(
        args.gen, args.target, prompts, suite=EmbedderSuite(seed=args.seed)
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_table())
    return 0


def _cmd_grad_check(args) -> int:
    failed = False
    for seed in range(args.seeds):
        results = primitive_battery(seed=seed, step=5e-3)
        for name, err in sorted(results.items()):
            status = "ok" if err < 1e-3 else "FAIL"
            if err >= 1e-3:
                failed = True
            print(f"seed {seed}  {name:<16} max rel err {err:.3e}  {status}")
        rel, absd = model_battery(seed=seed)
        ok = rel < 1e-2 and absd < FD_ATOL
        failed = failed or not ok
        print(
            f"seed {seed}  {'model_loss':<16} rel {rel:.3e} abs {absd:.3e}  "
            f"{'ok' if ok else 'FAIL'}"
        )
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidinsert",
        description="Reference-guided video object insertion, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic quintuple dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--frames", type=int, default=9)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    p.add_argument("--config", default=None, help="config file; desk preset if omitted")
    p.add_argument("--data", required=True, help="manifest.jsonl path")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--seed", type=int, default=0, help="seed for the desk preset")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("edit", help="insert the referenced object into a video")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cond", required=True, help="condition video (.vid)")
    p.add_argument("--ref", action="append", default=[], help="reference image .vid (repeatable)")
    p.add_argument("--prompt", required=True)
    p.add_argument("--mask", default=None, help="optional mask .vid")
    p.add_argument("--s1", type=float, default=None)
    p.add_argument("--s2", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_edit)

    p = sub.add_parser("eval", help="benchmark generated vs target videos")
    p.add_argument("--gen", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--prompts", required=True, help="jsonl with id + prompt fields")
    p.add_argument("--out", required=True, help="report json path")
    p.add_argument("--seed", type=int, default=0, help="embedder seed")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference check of all gradients")
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(func=_cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ShapeError as exc:
        print(f"shape-error: {exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"contract-error: {exc}", file=sys.stderr)
        return 3
    except TrainingDiverged as exc:
        print(f"training-error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
