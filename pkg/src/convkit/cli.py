"""Single entry point exposing the pipeline as subcommands.

Exit codes: 0 success, 1 operational failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import sot as sot_mod
from .assembler import (
    BuildResult,
    CorpusPool,
    DatasetSource,
    SessionParams,
    build_dataset,
)
from .config import ConfigError, RunConfig, load_config, write_snapshot
from .core import ManifestError, read_manifest
from .scorer import ScoreConfig, read_hypotheses, score_corpus
from .seeding import derive_seed
from .segmenter import GroupingParams, attach_groups
from .services import ServiceError, build_services
from .transcripts import (
    GenerationPolicy,
    PromptSpec,
    ScriptParseError,
    SeedPool,
    TranscriptGenerationError,
    generate_scripts,
    parse_script,
    render_script,
)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _atomic_write_json(path: Path, obj) -> None:
    _atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_scripts_file(path, pool_format: str = "blocks"):
    pool = SeedPool.load(path, pool_format)
    return tuple(parse_script(example) for example in pool.examples)


def cmd_gen_transcripts(config: RunConfig, out_dir: Path) -> int:
    cfg = config.gen_transcripts
    services = build_services(config.services)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_snapshot(config, out_dir)
    spec = PromptSpec(
        k_shots=cfg.k_shots,
        delimiter=cfg.delimiter,
        instruction_header=cfg.instruction_header,
        rng_seed=derive_seed(config.seed, "transcripts"),
    )
    policy = GenerationPolicy(
        max_speakers=cfg.max_speakers,
        allow_adjacent_repeat=cfg.allow_adjacent_repeat,
        max_attempts=cfg.max_attempts,
        max_tokens=cfg.max_tokens,
        temperature=cfg.temperature,
    )
    scripts_path = out_dir / "scripts.txt"
    stats_path = out_dir / "gen_stats.json"
    if cfg.count == 0:
        _atomic_write_text(scripts_path, "")
        _atomic_write_json(stats_path, {"requested": 0, "generated": 0,
                                        "attempts": 0, "rejections": {}})
        print(f"wrote 0 scripts to {scripts_path}")
        return 0
    pool = SeedPool.load(cfg.pool_file, cfg.pool_format)
    exit_code = 0
    try:
        result = generate_scripts(
            pool, spec, cfg.count, policy, services.completion, jobs=config.jobs
        )
    except TranscriptGenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        result = exc.result
        exit_code = 1
    _atomic_write_text(
        scripts_path,
        "\n\n".join(render_script(s) for s in result.scripts) + ("\n" if result.scripts else ""),
    )
    _atomic_write_json(stats_path, result.stats.as_dict())
    print(f"wrote {len(result.scripts)} scripts to {scripts_path}")
    return exit_code


def cmd_synth(config: RunConfig, out_dir: Path) -> int:
    cfg = config.synth
    services = build_services(config.services)
    if cfg.mode == "overlap_sim":
        if not cfg.pool_manifest:
            raise ConfigError("synth.pool_manifest is required for overlap_sim")
        source = DatasetSource(mode="overlap_sim",
                               pool=CorpusPool.from_manifest(cfg.pool_manifest))
    elif cfg.mode in ("tts_stitch", "conv_tts"):
        if not cfg.scripts_file:
            raise ConfigError(f"synth.scripts_file is required for {cfg.mode}")
        scripts = _load_scripts_file(cfg.scripts_file)
        if cfg.mode == "tts_stitch":
            source = DatasetSource(
                mode="tts_stitch",
                scripts=scripts,
                voice_refs=tuple(cfg.voice_refs),
                utterance_tts=services.utterance_tts,
                random_rir=cfg.rir == "random",
            )
        else:
            source = DatasetSource(
                mode="conv_tts",
                scripts=scripts,
                conversation_tts=services.conversation_tts,
                random_rir=cfg.rir == "random",
            )
    else:
        raise ConfigError(f"unknown synth.mode '{cfg.mode}'")
    params = SessionParams(
        target_overlap_ratio=cfg.overlap_ratio,
        pause_mean=cfg.pause_mean,
        pause_max=cfg.pause_max,
        max_duration=cfg.max_duration,
        snr_db=cfg.snr_db,
        bandlimit=cfg.bandlimit,
        highpass=cfg.highpass,
        rng_seed=derive_seed(config.seed, "synth"),
        sample_rate=cfg.sample_rate,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    write_snapshot(config, out_dir)
    result = build_dataset(
        source,
        params,
        out_dir,
        n_conversations=cfg.count if cfg.target_hours is None else None,
        target_hours=cfg.target_hours,
        jobs=config.jobs,
        encoding=cfg.encoding,
        sot_cfg=sot_mod.SotConfig(change_token=config.sot.change_token),
    )
    _write_build_summary(out_dir, result)
    print(
        f"built {len(result.records)} conversations "
        f"({result.total_audio_seconds:.1f}s audio), {len(result.failures)} failed"
    )
    if result.failures and result.failure_ratio > cfg.max_failure_ratio:
        print(
            f"error: failure ratio {result.failure_ratio:.2f} exceeds "
            f"threshold {cfg.max_failure_ratio:.2f}",
            file=sys.stderr,
        )
        return 1
    return 0


def _write_build_summary(out_dir: Path, result: BuildResult) -> None:
    _atomic_write_json(
        out_dir / "summary.json",
        {
            "records": len(result.records),
            "failures": [dataclasses.asdict(f) for f in result.failures],
            "total_audio_seconds": result.total_audio_seconds,
        },
    )


def cmd_segment(config: RunConfig, out_dir: Path, manifest_path: str) -> int:
    records = read_manifest(manifest_path)
    params = GroupingParams(config.segment.gap_threshold, config.segment.max_span)
    grouped = attach_groups(records, params)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_snapshot(config, out_dir)
    lines = []
    n_groups = 0
    n_discarded = 0
    for gr in grouped:
        n_discarded += len(gr.discarded)
        for group_id, group in gr.groups:
            n_groups += 1
            lines.append(json.dumps({
                "group_id": group_id,
                "audio_path": gr.record.audio_path,
                "span_start": group.span_start,
                "span_end": group.span_end,
                "segments": [
                    {"speaker": s.speaker, "start": s.start, "end": s.end,
                     "text": s.text}
                    for s in sorted(group.segments, key=sot_mod.segment_sort_key)
                ],
            }, ensure_ascii=False))
    _atomic_write_text(out_dir / "groups.jsonl",
                       "\n".join(lines) + ("\n" if lines else ""))
    stats = {"records": len(records), "groups": n_groups, "discarded": n_discarded}
    _atomic_write_json(out_dir / "segment_stats.json", stats)
    print(f"groups {n_groups}, discarded {n_discarded}")
    return 0


def cmd_sot(config: RunConfig, out_dir: Path, manifest_path: str) -> int:
    records = read_manifest(manifest_path)
    params = GroupingParams(config.segment.gap_threshold, config.segment.max_span)
    sot_cfg = sot_mod.SotConfig(change_token=config.sot.change_token)
    grouped = attach_groups(records, params)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_snapshot(config, out_dir)
    lines = []
    for gr in grouped:
        for group_id, group in gr.groups:
            lines.append(json.dumps({
                "group_id": group_id,
                "audio_path": gr.record.audio_path,
                "span_start": group.span_start,
                "span_end": group.span_end,
                "sot_text": sot_mod.serialize_group(group, sot_cfg),
            }, ensure_ascii=False))
    _atomic_write_text(out_dir / "sot_groups.jsonl",
                       "\n".join(lines) + ("\n" if lines else ""))
    print(f"wrote {len(lines)} SOT targets")
    return 0


def cmd_score(config: RunConfig, out_dir: Path, manifest_path: str, hyp_path: str) -> int:
    records = read_manifest(manifest_path)
    hypotheses = read_hypotheses(hyp_path)
    cfg = ScoreConfig(
        grouping=GroupingParams(config.segment.gap_threshold, config.segment.max_span),
        sot=sot_mod.SotConfig(change_token=config.sot.change_token),
        num_streams=config.score.num_streams,
    )
    report = score_corpus(records, hypotheses, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_snapshot(config, out_dir)
    _atomic_write_json(out_dir / "score_report.json", report.as_dict())
    print(f"cpWER {report.cp_wer * 100:.2f}%")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--jobs", type=int, help="parallel worker bound")
    common.add_argument("--out", required=True, help="output directory")

    parser = argparse.ArgumentParser(
        prog="convkit",
        description="Synthetic conversation dataset generation and cpWER scoring",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-transcripts", parents=[common],
                       help="generate tagged conversation scripts")
    p.add_argument("--pool", help="seed pool file override")
    p.add_argument("--count", type=int, help="number of scripts override")

    p = sub.add_parser("synth", parents=[common], help="build a synthetic dataset")
    p.add_argument("--mode", choices=["overlap_sim", "tts_stitch", "conv_tts"])
    p.add_argument("--scripts", help="scripts file override")
    p.add_argument("--count", type=int, help="conversation count override")

    p = sub.add_parser("segment", parents=[common], help="build utterance groups")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("sot", parents=[common], help="serialize group targets")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("score", parents=[common], help="score hypotheses (cpWER)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--hyp", required=True)
    return parser


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.jobs is not None:
        config.jobs = args.jobs
    if args.command == "gen-transcripts":
        if args.pool:
            config.gen_transcripts.pool_file = args.pool
        if args.count is not None:
            config.gen_transcripts.count = args.count
    elif args.command == "synth":
        if args.mode:
            config.synth.mode = args.mode
        if args.scripts:
            config.synth.scripts_file = args.scripts
        if args.count is not None:
            config.synth.count = args.count
    return config


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    try:
        if args.command == "gen-transcripts":
            return cmd_gen_transcripts(config, out_dir)
        if args.command == "synth":
            return cmd_synth(config, out_dir)
        if args.command == "segment":
            return cmd_segment(config, out_dir, args.manifest)
        if args.command == "sot":
            return cmd_sot(config, out_dir, args.manifest)
        if args.command == "score":
            return cmd_score(config, out_dir, args.manifest, args.hyp)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, ScriptParseError, ServiceError, OSError, ValueError,
            RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
