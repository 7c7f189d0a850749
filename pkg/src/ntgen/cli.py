"""Command-line entry point: ``ntgen <command> ...``.

Exit codes: 0 success, 2 input error, 3 artifacts from mismatched stages,
4 evaluation below the preserved-feature floor.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline as pl
from .config import MODEL_KINDS, PipelineConfig
from .errors import InputError, NtgenError, RunawaySequenceError, StageMismatchError
from .features import FeatureTable
from .fixture import ARCHETYPES, FixtureSpec, make_fixture_corpus
from .packets import load_capture
from .sequences import GLOBAL, IP_PAIR

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MISMATCH = 3
EXIT_FLOOR = 4


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    for name in ("k", "model", "aggregation"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg


def cmd_fixture(args) -> int:
    spec = FixtureSpec(archetypes=tuple(args.archetypes.split(",")), pair_count=args.pairs,
                       duration_s=args.duration, seed=args.seed if args.seed is not None else 0,
                       follow_prob=args.follow_prob)
    truth = make_fixture_corpus(spec, args.out)
    print(f"wrote {args.out}: {truth.packet_count} packets, {len(truth.flows)} flows, "
          f"sha256 {truth.digest}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = _config(args)
    ex = pl.extract(args.capture, cfg)
    ex.table.save(args.out)
    a = ex.assembly
    print(f"{args.capture}: {ex.stats.packets} packets, {len(a.flows)} flows, "
          f"{a.orphan_count} orphan and {a.skipped_count} skipped packets -> {args.out}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    cfg = _config(args)
    table = FeatureTable.load(args.table)
    model = pl.cluster(table, cfg)
    Path(args.out).write_text(pl.dump_json(pl.cluster_artifact(model, table)))
    print(f"K={model.K} over {len(table)} flows, inertia {model.training_inertia:.3f} -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    table = FeatureTable.load(args.table)
    model, doc = pl.load_cluster_model(args.clusters)
    pl.check_table(table, doc)
    trained = pl.train(table, model, cfg, pl.file_digest(args.clusters))
    Path(args.out).write_text(pl.dump_json(trained.to_json()))
    print(f"{trained.kind} model ({trained.aggregation}) -> {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _config(args)
    table = FeatureTable.load(args.table)
    if table.source_digest and table.source_digest != pl.file_digest(args.capture):
        raise StageMismatchError(f"feature table was not extracted from {args.capture}")
    model, doc = pl.load_cluster_model(args.clusters)
    pl.check_table(table, doc)
    trained = pl.TrainedModel.from_json(pl.read_json(args.model_file, "sequence model"))
    if trained.cluster_digest and trained.cluster_digest != pl.file_digest(args.clusters):
        raise StageMismatchError("sequence model was trained against a different cluster model")
    packets, _ = load_capture(args.capture)
    plan = pl.make_generation_plan(packets, table, model, trained, cfg)
    trace = pl.run_generation(plan, cfg)
    prov = pl.write_generated(trace, args.out)
    print(f"generated {len(trace.provenance)} flows, {len(trace.packets)} packets -> "
          f"{args.out} (provenance {prov})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    model, _doc = pl.load_cluster_model(args.clusters)
    original = pl.extract(args.original, cfg)
    generated = pl.extract(args.generated, cfg, pl.generated_flow_config(cfg))
    report = pl.evaluate(original, generated, model, cfg)
    out = Path(args.out)
    Path(str(out) + ".csv").write_text(report.feature_csv())
    summary = report.summary_text()
    Path(str(out) + ".txt").write_text(summary)
    sys.stdout.write(summary)
    if report.preserved_fraction < cfg.preserved_floor:
        print(f"preserved fraction {report.preserved_fraction:.3f} is below the floor "
              f"{cfg.preserved_floor}", file=sys.stderr)
        return EXIT_FLOOR
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = _config(args)
    text = cfg.to_ini()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides the configuration)")

    p = argparse.ArgumentParser(prog="ntgen", description="Synthetic traffic from packet captures.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fixture", parents=[common], help="write the synthetic fixture capture")
    s.add_argument("--out", required=True)
    s.add_argument("--pairs", type=int, default=20)
    s.add_argument("--duration", type=float, default=600.0, help="seconds")
    s.add_argument("--archetypes", default=",".join(ARCHETYPES))
    s.add_argument("--follow-prob", type=float, default=0.9)
    s.set_defaults(func=cmd_fixture)

    s = sub.add_parser("extract", parents=[common], help="capture -> feature table")
    s.add_argument("capture")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("cluster", parents=[common], help="feature table -> cluster model")
    s.add_argument("table")
    s.add_argument("--k", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("train", parents=[common], help="table + clusters -> sequence model")
    s.add_argument("table")
    s.add_argument("clusters")
    s.add_argument("--model", choices=MODEL_KINDS)
    s.add_argument("--aggregation", choices=(GLOBAL, IP_PAIR))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", parents=[common], help="sample a new capture")
    s.add_argument("capture")
    s.add_argument("table")
    s.add_argument("clusters")
    s.add_argument("model_file", metavar="model")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", parents=[common], help="compare original and generated captures")
    s.add_argument("original")
    s.add_argument("generated")
    s.add_argument("--clusters", required=True)
    s.add_argument("--aggregation", choices=(GLOBAL, IP_PAIR))
    s.add_argument("--out", required=True, help="report prefix; writes <out>.csv and <out>.txt")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("config", parents=[common], help="print or write the effective configuration")
    s.add_argument("--out")
    s.set_defaults(func=cmd_config)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageMismatchError as exc:
        print(f"ntgen: stage mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (InputError, RunawaySequenceError) as exc:
        print(f"ntgen: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"ntgen: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NtgenError as exc:
        print(f"ntgen: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
