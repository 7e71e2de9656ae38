"""Command-line entry point: ``openad <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 validation or format failure,
3 evaluation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .core import Prediction, SemanticLabel, Task, validate_collection
from .evaluation import EvaluationError, ThresholdGrid, default_operating_point, evaluate, format_report
from .fusion import FusionConfig, align_confidences, dual_threshold_nms
from .geometry import DegenerateCloudError, EmptyCloudError
from .io import (FormatError, SceneValidationError, load_checkpoint, load_grid, load_json_config,
                 load_lifting_manifest, load_predictions, load_scenes, read_embeddings, read_scenes,
                 save_checkpoint, save_lifting_manifest, save_predictions, save_report, save_scenes)
from .semantics import EmbeddingSpaceError, LexicalProvider, MissingEmbeddingError, TableProvider

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_EVAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for invalid data here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _existing(path: Optional[str], flag: str) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{flag}: no such file: {path}")
    return p


def _provider(embeddings: Optional[str]):
    if embeddings is None:
        return LexicalProvider()
    return TableProvider(read_embeddings(_existing(embeddings, "--embeddings")))


def _provider_config(provider) -> dict:
    return {"kind": type(provider).__name__, "space_id": provider.space_id, "dim": provider.dim}


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_validate(args) -> int:
    scenes = read_scenes(_existing(args.scenes, "scenes"))
    violations = validate_collection(scenes)
    for v in violations:
        print(v)
    n_obj = sum(len(s.ground_truths) for s in scenes)
    print(f"{len(scenes)} scene(s), {n_obj} object(s), {len(violations)} violation(s)")
    return EXIT_INVALID if violations else EXIT_OK


def cmd_eval(args) -> int:
    scenes_path = _existing(args.scenes, "--scenes")
    preds_path = _existing(args.preds, "--preds")
    grid = load_grid(_existing(args.grid, "--grid")) if args.grid else None
    provider = _provider(args.embeddings)
    scenes = load_scenes(scenes_path)
    preds = load_predictions(preds_path, provider)
    report = evaluate(scenes, preds, provider, args.task, grid=grid, training_domain=args.training_domain)
    grid = grid or ThresholdGrid.default(args.task)
    config = {
        "command": "eval",
        "version": __version__,
        "task": args.task,
        "scenes": str(scenes_path),
        "preds": str(preds_path),
        "grid": {"positional": list(grid.positional), "semantic": list(grid.semantic)},
        "operating_point": list(default_operating_point(args.task)),
        "training_domain": args.training_domain,
        "embeddings": _provider_config(provider),
    }
    save_report(report, args.out, config)
    print(format_report(report))
    return EXIT_OK


def _flatten(preds: dict) -> list[tuple[str, Prediction]]:
    return [(sid, p) for sid in sorted(preds) for p in preds[sid]]


def _infer_task(*groups: dict) -> Task:
    kinds = {Task.D2 if p.box2d is not None else Task.D3 for g in groups for ps in g.values() for p in ps}
    if len(kinds) > 1:
        raise UsageError("prediction files mix 2d and 3d records; pass --task")
    return kinds.pop() if kinds else Task.D2


def cmd_fuse(args) -> int:
    general_path = _existing(args.general, "--general")
    special_path = _existing(args.specialized, "--specialized")
    raw = load_json_config(_existing(args.config, "--config")) if args.config else {}
    try:
        config = FusionConfig(**raw)
    except (TypeError, ValueError) as e:
        raise FormatError(str(e), str(args.config)) from None
    provider = _provider(args.embeddings)
    general = load_predictions(general_path, provider)
    special = load_predictions(special_path, provider)
    task = Task(args.task) if args.task else _infer_task(general, special)

    # calibrate over the whole file so the mapping sees each model's full score distribution
    flat_general = _flatten(general)
    flat_special = _flatten(special)
    rescored = align_confidences([p for _, p in flat_special], [p for _, p in flat_general], config.calibration) \
        if flat_general else []
    by_scene: dict[str, list[Prediction]] = {}
    for sid, p in flat_special:
        by_scene.setdefault(sid, []).append(p)
    for (sid, _), p in zip(flat_general, rescored):
        by_scene.setdefault(sid, []).append(p)
    fused = {sid: dual_threshold_nms(by_scene[sid], config, task) for sid in sorted(by_scene)}
    save_predictions(fused, args.out)
    n_in = len(flat_general) + len(flat_special)
    n_out = sum(len(v) for v in fused.values())
    print(f"fused {n_in} prediction(s) into {n_out} across {len(fused)} scene(s) "
          f"({task.value}, {json.dumps(config.to_dict(), sort_keys=True)})")
    return EXIT_OK


def cmd_lift(args) -> int:
    from .lifting.model import predict_box

    records = load_lifting_manifest(_existing(args.inputs, "--inputs"))
    model = None
    if args.decoder == "mlp":
        if args.model is None:
            raise UsageError("--decoder mlp needs --model")
        model = load_checkpoint(_existing(args.model, "--model"))
    elif args.model is not None:
        _existing(args.model, "--model")
    provider = _provider(args.embeddings)
    model_id = f"converter-{args.decoder}"
    out: dict[str, list[Prediction]] = {}
    skipped = 0
    for rec in records:
        inp = rec["input"]
        try:
            box = predict_box(inp, model, args.decoder)
        except (EmptyCloudError, DegenerateCloudError) as e:
            print(f"skipping {rec['scene_id']} {inp.label}: {e}", file=sys.stderr)
            skipped += 1
            continue
        out.setdefault(rec["scene_id"], []).append(Prediction(
            label=SemanticLabel(inp.label), embedding=provider.embed(inp.label), confidence=inp.confidence,
            model_id=model_id, box3d=box))
    save_predictions(out, args.out, inline_embedding=args.embeddings is not None)
    print(f"lifted {len(records) - skipped} of {len(records)} object(s) with the {args.decoder} decoder")
    return EXIT_OK


def cmd_train(args) -> int:
    from .lifting.inputs import TrainingPair
    from .lifting.model import ConverterConfig
    from .lifting.train import train_converter

    records = load_lifting_manifest(_existing(args.pairs, "--pairs"))
    raw = load_json_config(_existing(args.config, "--config")) if args.config else {}
    try:
        config = ConverterConfig.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise FormatError(str(e), str(args.config)) from None
    pairs = [TrainingPair(r["input"], r["target"]) for r in records if r["target"] is not None]
    if not pairs:
        raise FormatError("no records carry a target box", str(args.pairs))
    model, history = train_converter(pairs, config)
    save_checkpoint(model, args.out, extra={"n_pairs": len(pairs), "loss_history": history,
                                            "pairs": str(args.pairs)})
    print(f"trained on {len(pairs)} pair(s): loss {history[0]:.4f} -> {history[-1]:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .lifting.synth import SynthConfig, synthesize_suite

    if args.count < 1:
        raise UsageError("--count must be positive")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suite = synthesize_suite(args.seed, args.count, SynthConfig())
    save_scenes([s.scene for s in suite], out / "scenes.json")
    records = [{"scene_id": s.scene.scene_id, "input": i, "target": t}
               for s in suite for i, t in zip(s.inputs, s.targets)]
    save_lifting_manifest(records, out / "lifting.json")
    _write_json({"command": "synth", "version": __version__, "seed": args.seed, "count": args.count,
                 "config": {k: v for k, v in vars(SynthConfig()).items() if k != "categories"},
                 "categories": [list(c) for c in SynthConfig().categories]}, out / "synth_config.json")
    print(f"wrote {len(suite)} scene(s) and {len(records)} lifting record(s) to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="openad", description="Open-world driving detection toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a scene collection against the schema invariants")
    p.add_argument("scenes")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", help="evaluate predictions with joint positional and semantic thresholds")
    p.add_argument("--task", choices=["2d", "3d"], required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--embeddings", help="binary embedding table (default: lexical fallback)")
    p.add_argument("--grid", help="JSON with 'positional' and 'semantic' threshold lists")
    p.add_argument("--training-domain", help="source dataset the model was trained on")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", help="merge a general and a specialized prediction set")
    p.add_argument("--general", required=True)
    p.add_argument("--specialized", required=True)
    p.add_argument("--config", help="JSON fusion config")
    p.add_argument("--task", choices=["2d", "3d"])
    p.add_argument("--embeddings")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("lift", help="lift 2-D detections to 3-D boxes")
    p.add_argument("--inputs", required=True)
    p.add_argument("--model")
    p.add_argument("--decoder", choices=["mlp", "pca"], default="mlp")
    p.add_argument("--embeddings", help="embed labels from this table and store vectors inline")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("train-converter", help="train the 2-D to 3-D converter")
    p.add_argument("--pairs", required=True)
    p.add_argument("--config", help="JSON converter hyperparameters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="generate a synthetic scene suite")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"openad: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, SceneValidationError, MissingEmbeddingError, json.JSONDecodeError) as e:
        print(f"openad: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (EvaluationError, EmbeddingSpaceError) as e:
        print(f"openad: evaluation error: {e}", file=sys.stderr)
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
