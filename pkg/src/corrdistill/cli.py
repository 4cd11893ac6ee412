"""Command-line entry point.

Every line written to stdout is a JSON object. Exit codes: 0 ok, 1 failed
self-check, 2 bad configuration or input, 3 I/O failure, 4 numeric abort.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .correspondence import LossConfig
from .data_io import SyntheticConfig, generate_synthetic, load_manifest, read_checkpoint, write_amat, write_checkpoint, write_dataset
from .errors import CorrDistillError, NumericError
from .metrics import evaluate_retrieval, split_agreements
from .optim import ScheduleConfig
from .selfcheck import run_all
from .trainer import TrainConfig, load_teachers, train_stage1, train_stage2

EXIT_OK, EXIT_SELFCHECK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(CorrDistillError):
    """Invalid flag combination."""


def emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _dims(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def cmd_gen_synth(args) -> int:
    cfg = SyntheticConfig(
        num_audios=args.num_audios,
        captions_per_audio=args.captions_per_audio,
        feature_dim=args.dim,
        num_latent_concepts=args.concepts,
        noise_scale=args.noise,
        ambiguity_rate=args.ambiguity,
        seed=args.seed,
    )
    audio, captions, man = generate_synthetic(cfg)
    write_dataset(args.out, audio, captions, man)
    emit({
        "command": "gen-synth",
        "out": str(args.out),
        "num_audios": man.num_audios,
        "num_captions": man.num_captions,
        "feature_dim": cfg.feature_dim,
        "splits": {k: int(v.size) for k, v in man.splits.items()},
    })
    return EXIT_OK


def train_config_from_args(args) -> TrainConfig:
    teachers = tuple(p for p in (args.teachers or "").split(",") if p)
    if args.stage == 2:
        if args.init is None:
            raise UsageError("stage 2 needs --init")
        if not teachers:
            raise UsageError("stage 2 needs --teachers")
    elif teachers or args.lam is not None:
        raise UsageError("--teachers and --lambda only apply to stage 2")
    return TrainConfig(
        batch_size=args.batch,
        schedule=ScheduleConfig(
            lr_peak=args.lr_peak, lr_final=args.lr_final, epochs=args.epochs, warmup_epochs=args.warmup_epochs
        ),
        loss=LossConfig(tau=args.tau, lam=0.0 if args.lam is None else args.lam),
        seed=args.seed,
        stage=args.stage,
        teacher_checkpoint_paths=teachers,
        hidden_dims=_dims(args.hidden),
        embed_dim=args.embed_dim,
    )


def cmd_train(args) -> int:
    cfg = train_config_from_args(args)
    man = load_manifest(args.manifest)
    init = read_checkpoint(args.init) if args.init else None
    if cfg.stage == 1:
        ckpt, history = train_stage1(man, cfg, init)
    else:
        ckpt, history = train_stage2(man, cfg, init, load_teachers(cfg.teacher_checkpoint_paths))
    write_checkpoint(args.out, ckpt)
    history_path = args.history or f"{args.out}.history.json"
    _write_json(history_path, history.to_json())
    for rec in history.records:
        emit({"command": "train", **rec})
    emit({
        "command": "train",
        "checkpoint": str(args.out),
        "history": str(history_path),
        "best_epoch": ckpt.metadata["epoch"],
        "val_map_at_10": ckpt.metadata["val_map_at_10"],
        "num_teachers": ckpt.metadata["num_teachers"],
    })
    return EXIT_OK


def cmd_export(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    man = load_manifest(args.manifest)
    c, audios, captions = split_agreements(ckpt, man, args.split)
    write_amat(args.out, c)
    emit({"command": "export-agreements", "out": str(args.out), "rows": int(audios.size), "cols": int(captions.size)})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    man = load_manifest(args.manifest)
    metrics = evaluate_retrieval(ckpt, man, args.split).as_percentages()
    _write_json(args.out, metrics)
    emit({"command": "evaluate", "split": args.split, **metrics})
    return EXIT_OK


def cmd_self_check(args) -> int:
    rows = run_all(args.seed, corrupt_gradient=args.corrupt_gradient)
    for name, passed, detail in rows:
        emit({"check": name, "passed": passed, "worst": detail})
    ok = all(passed for _, passed, _ in rows)
    emit({"command": "self-check", "passed": ok, "groups": sorted({n.split("/")[0] for n, _, _ in rows})})
    return EXIT_OK if ok else EXIT_SELFCHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corrdistill", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic ambiguous-caption dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--num-audios", type=int, default=300)
    p.add_argument("--captions-per-audio", type=int, default=5)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--ambiguity", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--concepts", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="run stage 1 or stage 2 training")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--history", type=Path, help="history JSON path (default: OUT.history.json)")
    p.add_argument("--init", type=Path)
    p.add_argument("--teachers", help="comma-separated teacher checkpoints")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--warmup-epochs", type=int, default=1)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr-peak", type=float, default=2e-5)
    p.add_argument("--lr-final", type=float, default=1e-7)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", default="256", help="comma-separated hidden sizes; empty for a linear head")
    p.add_argument("--embed-dim", type=int, default=64)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("export-agreements", cmd_export, "write a split's agreement matrix as AMAT"),
        ("evaluate", cmd_evaluate, "text-to-audio retrieval metrics as JSON"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True, type=Path)
        p.add_argument("--manifest", required=True, type=Path)
        p.add_argument("--split", required=True)
        p.add_argument("--out", required=True, type=Path)
        p.set_defaults(func=func)

    p = sub.add_parser("self-check", help="verify gradients, softmax, targets and metrics")
    p.add_argument("--seed", type=int, default=0)
    # test hook: perturbs one analytic gradient entry so the check must fail
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_self_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    except OSError as exc:
        return _fail(EXIT_IO, "io", exc)
    except (CorrDistillError, ValueError) as exc:
        return _fail(EXIT_CONFIG, "config", exc)


def _fail(code: int, kind: str, exc: Exception) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc)}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
