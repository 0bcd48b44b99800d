"""Command-line entry point.

Single binary, subcommands for each pipeline stage.  Diagnostics go to
stderr only; stdout carries machine-parsable `KEY = value` lines (or a
report body).  Exit code 0 on success, 1 on any pipeline error, 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import pipeline
from .errors import VadkitError
from .metrics import parse_report, report_to_text, report_to_tsv
from .weights import load_weights

log = logging.getLogger("vadkit.cli")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    raw = os.environ.get("VADKIT_LOG", "error").lower()
    if raw not in _LOG_LEVELS:
        raise VadkitError(f"VADKIT_LOG must be one of {sorted(_LOG_LEVELS)}, got {raw!r}")
    logging.basicConfig(
        stream=sys.stderr,
        level=_LOG_LEVELS[raw],
        format="%(levelname)s %(name)s: %(message)s",
    )


def _emit(key: str, value) -> None:
    if isinstance(value, float):
        value = f"{value:.2f}"
    print(f"{key} = {value}")


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------


def _cmd_features(args) -> int:
    count = pipeline.features_command(args.input, args.out, jobs=args.jobs)
    _emit("UTTERANCES", count)
    return 0


def _cmd_train(args) -> int:
    cfg = pipeline.load_pipeline_config(args.config)
    result = pipeline.train_command(
        args.manifest, cfg, args.out, epochs=args.epochs, seed=args.seed
    )
    _emit("EPOCHS", len(result.loss_curve))
    _emit("FINAL_LOSS", f"{result.loss_curve[-1]:.6f}")
    _emit("INITIAL_VAD_CE", f"{result.initial_vad_ce:.6f}")
    _emit("FINAL_VAD_CE", f"{result.final_vad_ce:.6f}")
    _emit("FRAME_ACCURACY", 100.0 * result.frame_accuracy)
    return 0


def _cmd_segment(args) -> int:
    cfg = pipeline.load_pipeline_config(args.config)
    model = pipeline.load_model(args.weights, cfg)
    sets = pipeline.segment_command(
        model, args.input, args.out, streaming=args.streaming, jobs=args.jobs
    )
    _emit("UTTERANCES", len(sets))
    _emit("SEGMENTS", sum(len(s.segments) for s in sets))
    return 0


def _cmd_eval_dcf(args) -> int:
    result = pipeline.eval_dcf(args.ref_manifest, args.hyp, grid_ms=args.grid_ms, jobs=args.jobs)
    _emit("DCF", result.dcf)
    _emit("P_MISS", result.p_miss)
    _emit("P_FA", result.p_fa)
    return 0


def _cmd_eval_nrr(args) -> int:
    _emit("NRR", pipeline.eval_nrr(args.noise_manifest, args.hyp))
    return 0


def _cmd_eval_cer(args) -> int:
    _emit("CER", pipeline.eval_cer(args.ref, args.hyp))
    return 0


def _cmd_eval_report(args) -> int:
    specs: dict[str, pipeline.ReportSetSpec] = {}

    def spec_for(name: str) -> pipeline.ReportSetSpec:
        return specs.setdefault(name, pipeline.ReportSetSpec(name))

    for name, manifest, hyp in args.set or []:
        spec = spec_for(name)
        spec.ref_manifest = manifest
        spec.hyp_segments = hyp
    for name, manifest, hyp in args.noise_set or []:
        spec = spec_for(name)
        spec.noise_manifest = manifest
        spec.hyp_segments = hyp
    for name, ref, hyp in args.cer_set or []:
        spec = spec_for(name)
        spec.ref_transcripts = ref
        spec.hyp_transcripts = hyp
    if not specs:
        raise VadkitError("eval report needs at least one --set/--noise-set/--cer-set")

    baseline = None
    if args.baseline_report:
        with open(args.baseline_report, "r", encoding="utf-8") as fh:
            baseline = parse_report(fh.read())

    report = pipeline.eval_report(
        list(specs.values()), baseline=baseline, grid_ms=args.grid_ms, jobs=args.jobs
    )
    text = report_to_text(report)  # already newline-terminated
    if args.out:
        pipeline.atomic_write_text(args.out, text)
    else:
        print(text, end="")
    if args.tsv:
        pipeline.atomic_write_text(args.tsv, report_to_tsv(report))
    return 0


def _cmd_size(args) -> int:
    arrays = load_weights(args.weights)
    n_bytes = 4 * sum(a.size for name, a in arrays.items() if name.startswith("encoder."))
    _emit("ENCODER_BYTES", n_bytes)
    _emit("ENCODER_MB", n_bytes / (1024.0 * 1024.0))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    model = None
    if args.weights:
        cfg = pipeline.load_pipeline_config(args.config)
        model = pipeline.load_model(args.weights, cfg)
    level = os.environ.get("VADKIT_LOG", "error").lower()
    uvicorn.run(create_app(model), host=args.host, port=args.port, log_level=level)
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vadkit", description="speech segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract log-mel features to a tensor file")
    p.add_argument("input", help="wav file or manifest")
    p.add_argument("out", help="output tensor container")
    p.add_argument("--config", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=_cmd_features)

    p = sub.add_parser("train", help="train a model on a labeled manifest")
    p.add_argument("manifest")
    p.add_argument("out", help="output weight file")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("segment", help="emit speech segments for audio")
    p.add_argument("weights")
    p.add_argument("input", help="wav file or manifest")
    p.add_argument("out", help="output segment file")
    p.add_argument("--config", default=None)
    p.add_argument("--streaming", action="store_true", help="use the incremental session path")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=_cmd_segment)

    ev = sub.add_parser("eval", help="score hypotheses against references")
    ev_sub = ev.add_subparsers(dest="metric", required=True)

    p = ev_sub.add_parser("dcf", help="detection cost over a manifest")
    p.add_argument("ref_manifest")
    p.add_argument("hyp", help="hypothesis segment file")
    p.add_argument("--grid-ms", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=_cmd_eval_dcf)

    p = ev_sub.add_parser("nrr", help="noise rejection rate over a noise manifest")
    p.add_argument("noise_manifest")
    p.add_argument("hyp", help="hypothesis segment file")
    p.set_defaults(fn=_cmd_eval_nrr)

    p = ev_sub.add_parser("cer", help="character error rate between transcript files")
    p.add_argument("ref")
    p.add_argument("hyp")
    p.set_defaults(fn=_cmd_eval_cer)

    p = ev_sub.add_parser("report", help="multi-set report with averages")
    p.add_argument("--set", nargs=3, action="append", metavar=("NAME", "REF_MANIFEST", "HYP_SEG"))
    p.add_argument("--noise-set", nargs=3, action="append", metavar=("NAME", "MANIFEST", "HYP_SEG"))
    p.add_argument("--cer-set", nargs=3, action="append", metavar=("NAME", "REF_TRN", "HYP_TRN"))
    p.add_argument("--baseline-report", default=None, help="prior report for relative columns")
    p.add_argument("--out", default=None, help="write report text here instead of stdout")
    p.add_argument("--tsv", default=None, help="also write a TSV table")
    p.add_argument("--grid-ms", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=_cmd_eval_report)

    p = sub.add_parser("size", help="encoder footprint of a weight file")
    p.add_argument("weights")
    p.set_defaults(fn=_cmd_size)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--weights", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except VadkitError as err:
        print(f"vadkit: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"vadkit: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
