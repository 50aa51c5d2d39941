"""Command-line surface: corpus generation, training, evaluation, inspection.

Every command is deterministic given its flags. Exit codes: 0 on success,
1 on runtime failure (bad files, failed checks), 2 on usage errors. All
diagnostics go to stderr; machine-readable artifacts go to stdout or the
requested output files.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import autodiff as ad
from .cfg import build_cfg
from .corpus import (
    ACCEPTANCE_MIX,
    CorpusManifest,
    DEFAULT_MIX,
    TEMPLATES,
    generate_corpus,
)
from .encoder import Vocabulary, surface_tokens
from .features import CLASS_NAMES, argmax_line, build_batch, compute_features, line_mass
from .interp import dump_trace, run_interpreter_a, run_interpreter_b
from .metrics import format_report, report_to_csv
from .minilang import parse
from .softexec import SoftInterpreterModel, write_pointer_csv
from .training import (
    build_model,
    evaluate_checkpoint,
    load_config,
    load_model,
    train,
)

GRAD_CHECK_TOLERANCE = 1e-4

# exercises a branch, a raising division, and straight-line flow
GRAD_CHECK_PROGRAM = "x = input_int()\nif x > 0:\n  y = 1 / x\nz = x + 1\n"
GRAD_CHECK_DESCRIPTION = "one line with one integer from 1 to 9"


def _read_program(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _parse_mix(text: str | None) -> dict[str, float] | None:
    if text is None:
        return None
    if text == "default":
        return dict(DEFAULT_MIX)
    if text == "acceptance":
        return dict(ACCEPTANCE_MIX)
    mix: dict[str, float] = {}
    for part in text.split(","):
        name, _, weight = part.partition("=")
        name = name.strip()
        if name not in TEMPLATES:
            raise ValueError(f"unknown template {name!r} (choose from {sorted(TEMPLATES)})")
        mix[name] = float(weight) if weight else 1.0
    return mix


def _single_program_batch(checkpoint: str, program_path: str, description: str | None):
    """(model, config, batch) for one program under a trained checkpoint."""
    model, config, vocab = load_model(checkpoint)
    feats = compute_features(
        _read_program(program_path),
        vocab,
        description=description,
        method=config.modulation.method,
    )
    return model, config, build_batch([feats], model.encoder_config)


# --- command handlers ---------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    manifest = generate_corpus(
        seed=args.seed,
        size=args.size,
        template_mix=_parse_mix(args.template_mix),
        uninformative=args.uninformative,
    )
    manifest.save(args.out)
    counts = manifest.class_counts("train")
    print(f"wrote {manifest.size} examples to {args.out}")
    print("train classes: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    manifest = CorpusManifest.load(args.corpus)
    result = train(config, manifest, out_dir=args.out)
    print(
        f"best step {result.best_step} "
        f"val weighted-f1 {result.best_val_weighted_f1:.4f} -> {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    manifest = CorpusManifest.load(args.corpus)
    report = evaluate_checkpoint(args.checkpoint, manifest, args.split)
    print(format_report(report), end="")
    csv_text = report_to_csv(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(csv_text)
    else:
        print()
        print(csv_text, end="")
    return 0


def cmd_predict(args) -> int:
    model, config, batch = _single_program_batch(
        args.checkpoint, args.program, args.stdin_desc
    )
    probs = model.forward(batch).probabilities[0]
    record = {
        "predicted": CLASS_NAMES[int(probs.argmax())],
        "distribution": {
            name: round(float(p), 6) for name, p in zip(CLASS_NAMES, probs)
        },
    }
    print(json.dumps(record))
    return 0


def cmd_trace(args) -> int:
    program = parse(_read_program(args.program))
    cfg = build_cfg(program)
    stdin = tuple(args.stdin or ())
    runner = run_interpreter_a if args.interpreter == "a" else run_interpreter_b
    trace = runner(cfg, program, stdin)
    print(dump_trace(cfg, trace))
    return 0


def cmd_heatmap(args) -> int:
    model, config, batch = _single_program_batch(
        args.checkpoint, args.program, args.stdin_desc
    )
    if not isinstance(model, SoftInterpreterModel):
        raise ValueError("heatmap requires a soft-interpreter checkpoint")
    result = model.forward(batch, record_pointer=True)
    write_pointer_csv(args.out, result.pointer[0])
    print(f"wrote pointer heatmap to {args.out}")
    return 0


def cmd_localize(args) -> int:
    model, config, batch = _single_program_batch(
        args.checkpoint, args.program, args.stdin_desc
    )
    if not (isinstance(model, SoftInterpreterModel) and model.exception):
        raise ValueError("localize requires an exception-variant checkpoint")
    result = model.forward(batch, with_origins=True)
    mass = line_mass(result.origins[0], batch.node_lines[0])
    print("line,probability")
    for line in sorted(mass):
        print(f"{line},{mass[line]:.6f}")
    predicted = argmax_line(result.origins[0], batch.node_lines[0])
    print(f"predicted-line,{predicted}")
    return 0


def cmd_grad_check(args) -> int:
    config = load_config(args.config)
    program = parse(GRAD_CHECK_PROGRAM)
    surfaces = [s for s, _, _ in surface_tokens(program)]
    surfaces += GRAD_CHECK_DESCRIPTION.split()
    vocab = Vocabulary.build(surfaces)
    model = build_model(config, len(vocab))
    feats = compute_features(
        GRAD_CHECK_PROGRAM,
        vocab,
        description=GRAD_CHECK_DESCRIPTION,
        method=config.modulation.method,
        target=3,
    )
    batch = build_batch([feats], model.encoder_config)

    def objective():
        loss, _ = model.loss(batch)
        return loss

    error = ad.grad_check(objective, model.store.tensors(), eps=args.eps)
    print(f"max-relative-error,{error:.3e}")
    if error > GRAD_CHECK_TOLERANCE:
        print(f"error: gradient check failed ({error:.3e} > {GRAD_CHECK_TOLERANCE})",
              file=sys.stderr)
        return 1
    return 0


# --- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softinterp",
        description="Soft-interpreter laboratory: corpus, training, inspection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a labeled synthetic corpus")
    p.add_argument("--seed", type=int, required=True, help="generation seed")
    p.add_argument("--size", type=int, required=True, help="minimum example count")
    p.add_argument("--out", required=True, help="manifest output path (JSONL)")
    p.add_argument(
        "--template-mix", default=None,
        help="'default', 'acceptance', or name=weight[,name=weight...]",
    )
    p.add_argument(
        "--uninformative", type=float, default=0.2,
        help="fraction of descriptions replaced by filler (default 0.2)",
    )
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--corpus", required=True, help="corpus manifest path")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    p.add_argument("--checkpoint", required=True, help="checkpoint.bin path")
    p.add_argument("--corpus", required=True, help="corpus manifest path")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"),
                   help="split to score (default test)")
    p.add_argument("--out", default=None, help="write the CSV report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="class distribution for one program")
    p.add_argument("--checkpoint", required=True, help="checkpoint.bin path")
    p.add_argument("--program", required=True, help="mini-language source file")
    p.add_argument("--stdin-desc", default=None,
                   help="resource description of the program's input")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("trace", help="discrete interpreter trace")
    p.add_argument("--program", required=True, help="mini-language source file")
    p.add_argument("--stdin", action="append", default=None,
                   help="one input line (repeatable)")
    p.add_argument("--interpreter", choices=("a", "b"), default="b",
                   help="a: no exception edges; b: raises jump (default b)")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("heatmap", help="instruction-pointer mass CSV")
    p.add_argument("--checkpoint", required=True, help="checkpoint.bin path")
    p.add_argument("--program", required=True, help="mini-language source file")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--stdin-desc", default=None,
                   help="resource description of the program's input")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("localize", help="error-origin distribution + predicted line")
    p.add_argument("--checkpoint", required=True, help="checkpoint.bin path")
    p.add_argument("--program", required=True, help="mini-language source file")
    p.add_argument("--stdin-desc", default=None,
                   help="resource description of the program's input")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("grad-check", help="finite-difference gradient audit")
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--eps", type=float, default=3e-4,
                   help="finite-difference step (default 3e-4; smaller steps "
                        "drown the comparison in float64 roundoff)")
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # operational failure -> exit 1, message on stderr
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
