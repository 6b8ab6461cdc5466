"""Command-line entry point: synth, pretrain, finetune, inspect.

Exit codes: 0 success, 2 invalid arguments, 3 I/O failure, 4 non-finite
training loss, 5 missing annotations.  Every subcommand writes only under
its --out directory, and identical config plus seed reproduces identical
outputs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .audio import SEGMENT_SAMPLES, Affinity, AudioBuffer, log_spectrogram, vad_affinity, write_pgm
from .records import RecordFormatError
from .synth import generate_corpus, load_manifest, load_scan
from .trainer import (
    MissingAnnotations,
    config_from_dict,
    config_to_dict,
    finetune_classification,
    finetune_saliency,
    load_checkpoint,
    pretrain,
    save_checkpoint,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NONFINITE = 4
EXIT_NO_ANNOTATIONS = 5

_RUN_CONFIG_KEYS = {"manifest", "train", "finetune"}
_FINETUNE_KEYS = {"frozen", "frames_per_clip", "eval_frames_per_clip", "sigma"}


class _UsageError(Exception):
    pass


def _fail_usage(message: str):
    raise _UsageError(message)


def _load_run_config(path: Path) -> dict:
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        _fail_usage(f"{path}: not valid JSON ({exc})")
    if not isinstance(doc, dict):
        _fail_usage(f"{path}: config must be a JSON object")
    unknown = sorted(set(doc) - _RUN_CONFIG_KEYS)
    if unknown:
        _fail_usage(f"{path}: unknown config keys: {', '.join(unknown)}")
    if "manifest" not in doc:
        _fail_usage(f"{path}: config needs a 'manifest' path")
    ft = doc.get("finetune", {})
    if not isinstance(ft, dict):
        _fail_usage(f"{path}: 'finetune' must be an object")
    unknown = sorted(set(ft) - _FINETUNE_KEYS)
    if unknown:
        _fail_usage(f"{path}: unknown finetune keys: {', '.join(unknown)}")
    try:
        doc["train"] = config_from_dict(doc.get("train", {}))
    except (ValueError, TypeError) as exc:
        _fail_usage(f"{path}: {exc}")
    manifest = Path(doc["manifest"])
    if not manifest.is_absolute():
        manifest = path.parent / manifest
    doc["manifest"] = manifest
    return doc


def cmd_synth(args) -> int:
    if not 0.0 <= args.rho <= 1.0:
        _fail_usage(f"--rho must be in [0, 1], got {args.rho}")
    if not 0.0 <= args.noise <= 1.0:
        _fail_usage(f"--noise must be in [0, 1], got {args.noise}")
    if args.scans < 3:
        _fail_usage(f"--scans must be >= 3 for the three-way split, got {args.scans}")
    if args.clips < 1:
        _fail_usage(f"--clips must be >= 1, got {args.clips}")
    if args.classes < 2:
        _fail_usage(f"--classes must be >= 2, got {args.classes}")
    manifest = generate_corpus(
        args.out,
        num_scans=args.scans,
        clips_per_scan=args.clips,
        rho=args.rho,
        noise_fraction=args.noise,
        num_classes=args.classes,
        seed=args.seed,
    )
    sizes = {name: len(ids) for name, ids in manifest.splits.items()}
    print(f"wrote {args.scans} scans ({args.clips} clips each) to {args.out}")
    print(f"splits: {json.dumps(sizes)}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    doc = _load_run_config(Path(args.config))
    manifest = load_manifest(doc["manifest"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint, history = pretrain(manifest, doc["train"], log_path=out / "metrics.jsonl")
    save_checkpoint(checkpoint, out / "checkpoint.essl")
    last = history[-1]
    print(f"pretrained {len(history)} epochs; final loss {last['loss']:.4f}")
    if last["pair_acc"] is not None:
        print(f"final pair accuracy {last['pair_acc']:.3f}")
    if last["order_acc"] is not None:
        print(f"final order accuracy {last['order_acc']:.3f}")
    print(f"checkpoint: {out / 'checkpoint.essl'}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    doc = _load_run_config(Path(args.config))
    manifest = load_manifest(doc["manifest"])
    if args.init == "random":
        init_params = None
    else:
        init_params = load_checkpoint(Path(args.init)).params
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ft = doc.get("finetune", {})
    if args.task == "plane":
        keys = {k: ft[k] for k in ("frozen", "frames_per_clip", "eval_frames_per_clip") if k in ft}
        report = finetune_classification(init_params, manifest, doc["train"], **keys)
        summary = f"macro F1 {report['macro_f1']:.3f} over {report['num_classes']} classes"
    else:
        report = finetune_saliency(init_params, manifest, doc["train"], **ft)
        summary = f"KL {report['kl']:.3f}  NSS {report['nss']:.3f}  AUC {report['auc']:.3f}"
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"{args.task} ({report['init']} init): {summary}")
    print(f"report: {report_path}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    scan = load_scan(args.scan)
    clips = scan.clips()
    if not 0 <= args.clip < len(clips):
        _fail_usage(f"--clip must be in [0, {len(clips)}), got {args.clip}")
    clip = clips[args.clip]
    spans = [c.audio_span(scan.fps, scan.audio.sample_rate) for c in clips]
    segment = vad_affinity(scan.audio, spans)[args.clip]
    s0, s1 = spans[args.clip]
    # spectrogram of the clip's central speech-length window
    start = s0 + (s1 - s0 - SEGMENT_SAMPLES) // 2
    spec = log_spectrogram(AudioBuffer(scan.audio.samples[start : start + SEGMENT_SAMPLES], scan.audio.sample_rate))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pgm = out / f"clip{args.clip:03d}.pgm"
    write_pgm(pgm, spec.values)
    level = "High" if segment.level is Affinity.HIGH else "Low"
    print(f"clip {args.clip}: {level} (speech fraction {segment.speech_fraction:.3f})")
    print(f"spectrogram: {pgm}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vispeech",
        description="Self-supervised video-speech representation learning on synthetic scans.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scan corpus plus manifest")
    p.add_argument("--out", required=True, help="output directory for bundles and manifest.json")
    p.add_argument("--scans", type=int, default=10, help="number of scans (default 10)")
    p.add_argument("--clips", type=int, default=20, help="clips per scan (default 20)")
    p.add_argument("--classes", type=int, default=12, help="content classes (default 12)")
    p.add_argument("--rho", type=float, default=0.9, help="video-audio correlation in [0,1] (default 0.9)")
    p.add_argument("--noise", type=float, default=0.3, help="fraction of noise-only clips in [0,1] (default 0.3)")
    p.add_argument("--seed", type=int, default=0, help="corpus seed (default 0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="run self-supervised pretraining from a JSON config")
    p.add_argument("--config", required=True, help="run config: {manifest, train:{...}}; unknown keys rejected")
    p.add_argument("--out", required=True, help="output directory for checkpoint.essl and metrics.jsonl")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune on a downstream task and write a report")
    p.add_argument("--task", required=True, choices=("plane", "saliency"), help="downstream task")
    p.add_argument("--init", required=True, help="checkpoint path, or 'random' for random init")
    p.add_argument("--config", required=True, help="run config: {manifest, train:{...}, finetune:{...}}")
    p.add_argument("--out", required=True, help="output directory for report.json")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("inspect", help="dump one clip's spectrogram and affinity label")
    p.add_argument("--scan", required=True, help="scan bundle prefix (as written by synth)")
    p.add_argument("--clip", type=int, required=True, help="clip index within the scan")
    p.add_argument("--out", required=True, help="output directory for the PGM image")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingAnnotations as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_ANNOTATIONS
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except (OSError, RecordFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # bad values that slipped past argparse (config contents, data shape)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
