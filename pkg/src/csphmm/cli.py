"""Batch command-line front-end.

Subcommands: extract, train, verify, eval, synth, ttest. Every command is
deterministic given its config and seed, and writes a copy of the resolved
configuration into its output directory. Exit codes: 0 success, 2 validation
or input errors, 3 numeric failures during training.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .errors import CsphmmError, InvalidInputError, NumericFailureError
from .features import (
    FrameSpec,
    MfccSpec,
    extract_mfcc,
    read_features,
    read_wav,
    write_features,
)
from .hmm import TrainConfig, train_order_pipeline
from .serialization import load_model, save_model
from .stats import format_report, ttest_report
from .suprasegmental import SuprasegmentalTopology, train_suprasegmental
from .verification import (
    ModelPair,
    SpeakerModelSet,
    ThresholdPolicy,
    Trial,
    run_protocol,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3


@dataclass
class RunConfig:
    """Resolved knobs for a batch run; mirrors the [section] key = value file."""

    corpus_root: str = "."
    model_dir: str = "models"
    output_dir: str = "out"
    n_states: int = 6
    n_mixtures: int = 4
    order: int = 3
    alpha: float = 0.5
    supra_states: int = 2
    supra_mixtures: int = 2
    max_iters: int = 15
    rel_tol: float = 1e-4
    variance_floor: float = 1e-3
    supra_variance_floor: float = 1.0
    frame_length_ms: float = 25.0
    frame_hop_ms: float = 10.0
    preemphasis: float = 0.97
    window: str = "hamming"
    n_static: int = 16
    n_mel_filters: int = 26
    include_deltas: bool = True
    delta_window: int = 2
    claimants_per_gender: int = 12
    adaptation: bool = False
    adapt_window: int = 20
    theta_start: float = 0.0
    same_gender_imposters: bool = True
    enroll_all_emotions: bool = False
    n_sentences: int = 8
    seed: int = 0
    # synth section
    synth_speakers: int = 30
    synth_repetitions: int = 9
    synth_feature_dim: int = 32
    synth_render_audio: bool = True
    synth_length_min: int = 40
    synth_length_max: int = 80
    synth_sample_rate: int = 16000

    def frame_spec(self) -> FrameSpec:
        return FrameSpec(self.frame_length_ms, self.frame_hop_ms, self.preemphasis, self.window)

    def mfcc_spec(self) -> MfccSpec:
        return MfccSpec(
            self.n_static, self.n_mel_filters, None, self.include_deltas, self.delta_window
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.max_iters, self.rel_tol, self.variance_floor)


_SECTIONS = {
    "paths": ("corpus_root", "model_dir", "output_dir"),
    "model": (
        "n_states", "n_mixtures", "order", "alpha", "supra_states", "supra_mixtures",
        "max_iters", "rel_tol", "variance_floor", "supra_variance_floor",
    ),
    "features": (
        "frame_length_ms", "frame_hop_ms", "preemphasis", "window",
        "n_static", "n_mel_filters", "include_deltas", "delta_window",
    ),
    "protocol": (
        "claimants_per_gender", "adaptation", "adapt_window", "theta_start",
        "same_gender_imposters", "enroll_all_emotions", "n_sentences", "seed",
    ),
    "synth": (
        "synth_speakers", "synth_repetitions", "synth_feature_dim",
        "synth_render_audio", "synth_length_min", "synth_length_max",
        "synth_sample_rate",
    ),
}


def load_config(path: str | Path | None) -> RunConfig:
    config = RunConfig()
    if path is None:
        return config
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise InvalidInputError(f"config file {path} not found")
    for section, keys in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in keys:
            if not parser.has_option(section, key):
                continue
            current = getattr(config, key)
            raw = parser.get(section, key)
            if isinstance(current, bool):
                setattr(config, key, raw.strip().lower() in ("1", "true", "yes", "on"))
            elif isinstance(current, int):
                setattr(config, key, int(raw))
            elif isinstance(current, float):
                setattr(config, key, float(raw))
            else:
                setattr(config, key, raw.strip())
    return config


def dump_config(config: RunConfig, path: Path) -> None:
    parser = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        parser.add_section(section)
        for key in keys:
            parser.set(section, key, str(getattr(config, key)))
    with open(path, "w") as fh:
        parser.write(fh)


def _output_dir(config: RunConfig, override: str | None) -> Path:
    root = override or os.environ.get("CSPHMM_OUTPUT_ROOT") or config.output_dir
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands


def cmd_extract(args) -> int:
    config = load_config(args.config)
    out = _output_dir(config, args.out)
    records = corpus_mod.load_manifest(args.manifest)
    base = Path(args.manifest).parent
    frames, spec = config.frame_spec(), config.mfcc_spec()
    features_dir = out / "features"
    features_dir.mkdir(exist_ok=True)
    index = []
    skipped = written = 0
    for record in records:
        if record.audio_path is None:
            raise InvalidInputError(f"record {record.key} has no audio_path to extract from")
        target = features_dir / f"{record.stem}.shf"
        if target.exists() and not args.force:
            skipped += 1
        else:
            audio = read_wav(base / record.audio_path)
            seq = extract_mfcc(audio, frames, spec)
            write_features(target, seq, frames, spec, audio.sample_rate)
            written += 1
        index.append(
            corpus_mod.UtteranceRecord(
                record.speaker_id, record.gender, record.sentence_id,
                record.repetition, record.emotion,
                audio_path=record.audio_path,
                feature_path=str(target.relative_to(out)),
            )
        )
    corpus_mod.write_manifest(out / "index.jsonl", index)
    dump_config(config, out / "run_config.ini")
    print(f"extract: wrote {written}, skipped {skipped}, indexed {len(index)}")
    return EXIT_OK


def _load_corpus_features(records, root: Path):
    features = {}
    audio = {}
    for record in records:
        if record.feature_path is None:
            raise InvalidInputError(f"record {record.key} has no feature_path; run extract")
        features[record.key], _ = read_features(root / record.feature_path)
        if record.audio_path:
            audio[record.key] = read_wav(root / record.audio_path)
    return features, audio


def cmd_train(args) -> int:
    config = load_config(args.config)
    out = _output_dir(config, args.out)
    root = Path(args.corpus or config.corpus_root)
    records = corpus_mod.load_manifest(root / "manifest.jsonl")
    train_side, _ = corpus_mod.split_train_test(records, config.n_sentences)
    emotions = corpus_mod.EMOTIONS if (args.enroll_all_emotions or config.enroll_all_emotions) \
        else ("neutral",)
    enroll = corpus_mod.enrollment_records(train_side, emotions)
    speakers = sorted({r.speaker_id for r in records})
    missing = [s for s in speakers if not any(r.speaker_id == s for r in enroll)]
    if missing:
        raise InvalidInputError(f"no enrollment utterances for speakers: {missing}")

    features, audio = _load_corpus_features(enroll, root)
    traces_dir = out / "traces"
    traces_dir.mkdir(exist_ok=True)
    topo = SuprasegmentalTopology.halves(config.n_states, config.supra_states)
    train_cfg = config.train_config()
    supra_cfg = TrainConfig(config.max_iters, config.rel_tol, config.supra_variance_floor)
    for i, speaker in enumerate(speakers):
        speaker_records = [r for r in enroll if r.speaker_id == speaker]
        data = [features[r.key] for r in speaker_records]
        acoustic, traces = train_order_pipeline(
            data, config.n_states, max_order=config.order,
            n_mixtures=config.n_mixtures, config=train_cfg, seed=(config.seed, 3, i),
        )
        supra = None
        supra_traces = {}
        speaker_audio = [audio[r.key] for r in speaker_records if r.key in audio]
        if len(speaker_audio) == len(data) and not args.skip_supra:
            supra, report = train_suprasegmental(
                acoustic, data, speaker_audio, topo, frames=config.frame_spec(),
                n_mixtures=config.supra_mixtures, config=supra_cfg, seed=(config.seed, 4, i),
            )
            supra_traces = report.traces
        save_model(out / f"{speaker}.shm3", acoustic, supra)
        lines = []
        for order in sorted(traces):
            lines.append(f"acoustic order {order}: " + " ".join(f"{v:.17g}" for v in traces[order]))
        for order in sorted(supra_traces):
            lines.append(
                f"suprasegmental order {order}: "
                + " ".join(f"{v:.17g}" for v in supra_traces[order])
            )
        (traces_dir / f"{speaker}.trace.txt").write_text("\n".join(lines) + "\n")
    dump_config(config, out / "run_config.ini")
    print(f"train: wrote {len(speakers)} model files to {out}")
    return EXIT_OK


def _build_model_set(model_dir: Path, records, config: RunConfig) -> SpeakerModelSet:
    by_gender: dict[str, list[str]] = {}
    for record in records:
        ids = by_gender.setdefault(record.gender, [])
        if record.speaker_id not in ids:
            ids.append(record.speaker_id)
    claimants = []
    for gender in sorted(by_gender):
        claimants.extend(sorted(by_gender[gender])[: config.claimants_per_gender])
    pairs = {}
    for speaker in sorted({r.speaker_id for r in records}):
        path = model_dir / f"{speaker}.shm3"
        if not path.exists():
            raise InvalidInputError(f"missing model file {path}")
        acoustic, supra = load_model(path)
        pairs[speaker] = ModelPair(acoustic, supra)
    claimant_set = set(claimants)
    return SpeakerModelSet(
        claimants={s: p for s, p in pairs.items() if s in claimant_set},
        imposters={s: p for s, p in pairs.items() if s not in claimant_set},
    )


def cmd_verify(args) -> int:
    config = load_config(args.config)
    out = _output_dir(config, args.out)
    root = Path(args.corpus or config.corpus_root)
    model_dir = Path(args.models or config.model_dir)
    records = corpus_mod.load_manifest(root / "manifest.jsonl")
    _, test_side = corpus_mod.split_train_test(records, config.n_sentences)
    model_set = _build_model_set(model_dir, records, config)
    claimant_ids = sorted(model_set.claimants)
    alpha = config.alpha if args.alpha is None else float(args.alpha)

    assignments = corpus_mod.assign_claims(
        test_side, claimant_ids, seed=config.seed, same_gender=config.same_gender_imposters
    )
    features, audio = _load_corpus_features(test_side, root)
    trials = [
        Trial(
            claimed_id=claimed,
            obs=features[record.key],
            audio=audio.get(record.key),
            true_id=record.speaker_id,
            emotion=record.emotion,
        )
        for record, claimed in assignments
    ]
    gender_of = {r.speaker_id: r.gender for r in records}
    imposter_ids = sorted(model_set.imposters)
    cohort = None
    if config.same_gender_imposters and imposter_ids:
        cohort = {
            c: [s for s in imposter_ids if gender_of[s] == gender_of[c]] or imposter_ids
            for c in claimant_ids
        }
    policy = ThresholdPolicy(config.theta_start, config.adaptation, config.adapt_window)
    result = run_protocol(model_set, trials, alphas=(alpha,), policy=policy, cohort=cohort)[alpha]

    log_path = out / "decisions.jsonl"
    log_path.write_text("".join(r.to_json() + "\n" for r in result.decisions))
    for emotion, curve in sorted(result.det_by_emotion.items()):
        (out / f"det_{emotion}.tsv").write_text(curve.to_tsv())
    if result.det_pooled is not None:
        (out / "det_pooled.tsv").write_text(result.det_pooled.to_tsv())
        print(f"verify: pooled EER = {result.det_pooled.eer:.4f} over {len(trials)} trials")
    dump_config(config, out / "run_config.ini")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .verification import evaluate

    config = load_config(args.config)
    out = _output_dir(config, args.out)
    by_emotion: dict[str, list[tuple[float, bool]]] = {}
    pooled: list[tuple[float, bool]] = []
    for line_no, line in enumerate(Path(args.log).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        entry = json.loads(line)
        if entry.get("true_id") is None:
            continue
        pair = (float(entry["llr"]), entry["true_id"] == entry["claimed_id"])
        pooled.append(pair)
        by_emotion.setdefault(entry.get("emotion") or "unlabeled", []).append(pair)
    if not pooled:
        raise InvalidInputError(f"{args.log}: no labeled decisions to evaluate")
    for emotion in sorted(by_emotion):
        scores = by_emotion[emotion]
        if any(g for _, g in scores) and any(not g for _, g in scores):
            curve = evaluate(scores)
            (out / f"det_{emotion}.tsv").write_text(curve.to_tsv())
            print(f"eval: {emotion} EER = {curve.eer:.4f}")
    curve = evaluate(pooled)
    (out / "det_pooled.tsv").write_text(curve.to_tsv())
    print(f"eval: pooled EER = {curve.eer:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    config = load_config(args.config)
    out = _output_dir(config, args.out)
    seed = config.seed if args.seed is None else int(args.seed)
    specs = corpus_mod.default_speaker_specs(
        n_speakers=config.synth_speakers,
        feature_dim=config.synth_feature_dim,
        n_states=config.n_states,
        seed=seed,
    )
    synthetic = corpus_mod.synthesize_corpus(
        specs,
        n_sentences=config.n_sentences,
        n_repetitions=config.synth_repetitions,
        seed=seed,
        length_range=(config.synth_length_min, config.synth_length_max),
        render_audio=config.synth_render_audio,
        frames=config.frame_spec(),
        sample_rate=config.synth_sample_rate,
    )
    manifest = corpus_mod.write_corpus(synthetic, out, config.frame_spec())
    dump_config(config, out / "run_config.ini")
    print(f"synth: wrote {len(synthetic.records)} utterances under {out} ({manifest})")
    return EXIT_OK


def cmd_ttest(args) -> int:
    if args.tsv:
        table = np.loadtxt(args.tsv, comments="#")
        if table.ndim != 2 or table.shape[1] <= max(args.col_a, args.col_b):
            raise InvalidInputError(f"{args.tsv}: need columns {args.col_a} and {args.col_b}")
        a = table[:, args.col_a]
        b = table[:, args.col_b]
    else:
        if not args.a or not args.b:
            raise InvalidInputError("provide --a and --b value lists, or --tsv")
        a = [float(v) for v in args.a.split()]
        b = [float(v) for v in args.b.split()]
    report = ttest_report(a, b, critical=args.critical, label_a="a", label_b="b")
    print(format_report(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csphmm",
        description="Circular suprasegmental HMM speaker verification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract MFCC features for a WAV manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--force", action="store_true", help="overwrite existing feature files")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train per-speaker models from a corpus directory")
    p.add_argument("--corpus", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--skip-supra", action="store_true", help="acoustic chain only")
    p.add_argument("--enroll-all-emotions", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="run the verification protocol on the test split")
    p.add_argument("--corpus", default=None)
    p.add_argument("--models", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--alpha", default=None, help="fusion weight override")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="recompute DET curves from a decision log")
    p.add_argument("--log", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ttest", help="two-sample t comparison of error-rate lists")
    p.add_argument("--a", default=None, help="whitespace-separated values")
    p.add_argument("--b", default=None, help="whitespace-separated values")
    p.add_argument("--tsv", default=None, help="read two columns of a TSV instead")
    p.add_argument("--col-a", type=int, default=0)
    p.add_argument("--col-b", type=int, default=1)
    p.add_argument("--critical", type=float, default=1.645)
    p.set_defaults(func=cmd_ttest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CsphmmError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
