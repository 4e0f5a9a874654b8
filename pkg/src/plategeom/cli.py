"""
Command-line entry point.

    plategeom analyze corpus.csv --config analysis.ini --out results --jobs 4
    plategeom analyze-one --sound-board sb.ply --back back.ply --size-class violin_viola --out results
    plategeom default-config > analysis.ini
    plategeom synth-corpus --out demo --count 5

``analyze`` and ``analyze-one`` exit with 0 when every instrument reached
status ok or missing_plate, 1 when any failed and 2 on bad input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, defaults
from .config import AnalysisConfig, default_config_text, load_config, parse_emit
from .errors import CorpusError
from .report import CorpusReport, InstrumentRecord, load_corpus_metadata, run_corpus

log = logging.getLogger("plategeom")


def _config(args) -> AnalysisConfig:
    cfg = load_config(args.config, args.out) if args.config else AnalysisConfig(output_dir=Path(args.out))
    if args.emit is not None:
        cfg = replace(cfg, emit=parse_emit(args.emit))
    return cfg


def _print_summary(corpus: CorpusReport, out: Path) -> None:
    for r in corpus.reports:
        print(f"{r.instrument_id}\t{r.status_text}")
    counts = {s: sum(r.status == s for r in corpus.reports) for s in ("ok", "missing_plate", "failed")}
    print(
        f"{len(corpus.reports)} instruments: {counts['ok']} ok, {counts['missing_plate']} missing plate, "
        f"{counts['failed']} failed; results in {out}"
    )


def cmd_analyze(args) -> int:
    cfg = _config(args)
    records = load_corpus_metadata(args.corpus)
    only = [s.strip() for s in args.only.split(",") if s.strip()] if args.only else None
    corpus = run_corpus(records, cfg, jobs=args.jobs, only=only)
    _print_summary(corpus, cfg.output_dir)
    return corpus.exit_code


def cmd_analyze_one(args) -> int:
    if args.sound_board is None and args.back is None:
        raise CorpusError("no-plate", "give --sound-board and/or --back")
    cfg = _config(args)
    size = "cello" if args.size_class == "cello" else "violin"
    record = InstrumentRecord(
        inventory_id=args.id,
        size=size,
        size_class=args.size_class,
        sound_board_path=args.sound_board,
        back_path=args.back,
        body_path=args.body,
    )
    corpus = run_corpus([record], cfg)
    _print_summary(corpus, cfg.output_dir)
    return corpus.exit_code


def cmd_default_config(args) -> int:
    sys.stdout.write(default_config_text())
    return 0


def cmd_synth_corpus(args) -> int:
    from .synthetic import synthetic_corpus

    path = synthetic_corpus(
        args.out, count=args.count, back_only=args.back_only, seed=args.seed,
        rings=args.rings, sectors=args.sectors,
    )
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plategeom", description="Plate geometry analysis for violin-family meshes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="INI file (see default-config)")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
        sp.add_argument("--emit", help="comma-separated subset of svg,csv,json,raster[,timings]")

    a = sub.add_parser("analyze", help="analyse every instrument of a corpus table")
    a.add_argument("corpus", type=Path, help="corpus CSV")
    common(a)
    a.add_argument("--only", help="comma-separated inventory ids to run")
    a.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")
    a.set_defaults(func=cmd_analyze)

    o = sub.add_parser("analyze-one", help="analyse a single instrument given its meshes")
    o.add_argument("--sound-board", type=Path)
    o.add_argument("--back", type=Path)
    o.add_argument("--body", type=Path, help="optional body mesh for PCA pre-alignment")
    o.add_argument("--size-class", choices=defaults.SIZE_CLASSES, default="violin_viola")
    o.add_argument("--id", default="instrument", help="inventory id used in outputs")
    common(o)
    o.set_defaults(func=cmd_analyze_one)

    d = sub.add_parser("default-config", help="print the default configuration")
    d.set_defaults(func=cmd_default_config)

    s = sub.add_parser("synth-corpus", help="write a synthetic corpus of plate pairs")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--count", type=int, default=5)
    s.add_argument("--back-only", type=int, default=1, help="instruments without a sound board")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rings", type=int, default=24)
    s.add_argument("--sectors", type=int, default=64)
    s.set_defaults(func=cmd_synth_corpus)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CorpusError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
