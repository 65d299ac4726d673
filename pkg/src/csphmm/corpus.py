"""Corpus handling: utterance manifests, the sentence-based train/test split,
and seeded synthetic multi-speaker, multi-emotion corpora.

The synthetic generator samples observation sequences directly in feature
space from per-speaker chains. Emotion conditions perturb each speaker's
emission means and variances (and pitch, when audio is rendered) with a
severity that grows along neutral < happy/fear < sad/disgust < angry, so
verification difficulty rises in that order by construction. Optional audio
rendering produces a harmonic source at the speaker's pitch to drive the
prosody extractor end to end.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ManifestError
from .features import AudioBuffer, FeatureSequence, FrameSpec, write_features, write_wav
from .hmm import HmmModel, random_model, sample_sequence, seeded_rng

EMOTIONS = ("neutral", "happy", "sad", "disgust", "angry", "fear")

# Difficulty ordering of the emotion conditions.
EMOTION_SEVERITY = {
    "neutral": 0.0,
    "happy": 1.0,
    "fear": 1.0,
    "sad": 2.0,
    "disgust": 2.0,
    "angry": 3.0,
}

_REQUIRED_FIELDS = ("speaker_id", "gender", "sentence_id", "repetition", "emotion")


@dataclass(frozen=True)
class UtteranceRecord:
    speaker_id: str
    gender: str
    sentence_id: int
    repetition: int
    emotion: str
    audio_path: str | None = None
    feature_path: str | None = None

    @property
    def key(self) -> tuple[str, int, int, str]:
        return (self.speaker_id, self.sentence_id, self.repetition, self.emotion)

    @property
    def stem(self) -> str:
        return f"{self.speaker_id}_{self.emotion}_s{self.sentence_id}_r{self.repetition}"

    def to_json(self) -> str:
        entry = {
            "speaker_id": self.speaker_id,
            "gender": self.gender,
            "sentence_id": self.sentence_id,
            "repetition": self.repetition,
            "emotion": self.emotion,
        }
        if self.audio_path:
            entry["audio_path"] = self.audio_path
        if self.feature_path:
            entry["feature_path"] = self.feature_path
        return json.dumps(entry, sort_keys=True)


def load_manifest(path: str | Path) -> list[UtteranceRecord]:
    """Parse a JSON-lines manifest, rejecting malformed lines and duplicates."""
    path = Path(path)
    records = []
    seen: dict[tuple, int] = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{line_no}: malformed JSON: {exc}", line_no) from exc
        for name in _REQUIRED_FIELDS:
            if name not in entry:
                raise ManifestError(f"{path}:{line_no}: missing field {name!r}", line_no)
        record = UtteranceRecord(
            speaker_id=str(entry["speaker_id"]),
            gender=str(entry["gender"]),
            sentence_id=int(entry["sentence_id"]),
            repetition=int(entry["repetition"]),
            emotion=str(entry["emotion"]),
            audio_path=entry.get("audio_path"),
            feature_path=entry.get("feature_path"),
        )
        if record.key in seen:
            raise ManifestError(
                f"{path}:{line_no}: duplicate utterance {record.key} "
                f"(first seen on line {seen[record.key]})",
                line_no,
            )
        seen[record.key] = line_no
        records.append(record)
    return records


def write_manifest(path: str | Path, records: list[UtteranceRecord]) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records))


def split_train_test(
    records: list[UtteranceRecord], n_sentences: int = 8
) -> tuple[list[UtteranceRecord], list[UtteranceRecord]]:
    """Partition by sentence id: the first half enrolls, the second half tests.

    The two sides are disjoint and jointly exhaustive; emotion filtering for
    enrollment happens separately (see enrollment_records).
    """
    present = sorted({r.sentence_id for r in records})
    expected = list(range(1, n_sentences + 1))
    missing = sorted(set(expected) - set(present))
    extra = sorted(set(present) - set(expected))
    if missing or extra:
        raise InvalidInputError(
            f"sentence ids must span 1..{n_sentences}; missing {missing}, unexpected {extra}"
        )
    boundary = n_sentences // 2
    train = [r for r in records if r.sentence_id <= boundary]
    test = [r for r in records if r.sentence_id > boundary]
    return train, test


def enrollment_records(
    train: list[UtteranceRecord], emotions: tuple[str, ...] = ("neutral",)
) -> list[UtteranceRecord]:
    """Enrollment material: by default only neutral-emotion utterances."""
    allowed = set(emotions)
    return [r for r in train if r.emotion in allowed]


# ---------------------------------------------------------------------------
# Synthetic corpus


@dataclass
class EmotionShift:
    """How one emotion perturbs a speaker's generative parameters."""

    feature_offset: np.ndarray
    variance_scale: float
    f0_offset: float
    f0_spread_scale: float = 1.0

    def __post_init__(self):
        self.feature_offset = np.asarray(self.feature_offset, dtype=np.float64)
        if self.variance_scale <= 0.0 or self.f0_spread_scale <= 0.0:
            raise InvalidInputError("variance scales must be positive")


@dataclass
class SyntheticSpeakerSpec:
    """Generative description of one synthetic speaker."""

    speaker_id: str
    gender: str
    seed: int
    acoustic: HmmModel
    f0_center: float
    energy_level: float
    shifts: dict[str, EmotionShift]


@dataclass
class SyntheticCorpus:
    records: list[UtteranceRecord]
    features: dict[tuple, FeatureSequence]
    audio: dict[tuple, AudioBuffer] = field(default_factory=dict)
    sample_rate: int = 16000


def build_records(
    speakers: list[tuple[str, str]],
    n_sentences: int = 8,
    n_repetitions: int = 9,
    emotions: tuple[str, ...] = EMOTIONS,
) -> list[UtteranceRecord]:
    """The full (speaker, sentence, repetition, emotion) grid, path-free."""
    return [
        UtteranceRecord(spk, gender, sentence, rep, emotion)
        for spk, gender in speakers
        for emotion in emotions
        for sentence in range(1, n_sentences + 1)
        for rep in range(1, n_repetitions + 1)
    ]


def default_speaker_specs(
    n_speakers: int = 30,
    feature_dim: int = 32,
    n_states: int = 6,
    seed: int = 0,
    speaker_mean_spread: float = 1.0,
    emotion_offset_scale: float = 0.45,
    emotion_variance_growth: float = 0.12,
    emotion_f0_scale: float = 8.0,
    emotions: tuple[str, ...] = EMOTIONS,
) -> list[SyntheticSpeakerSpec]:
    """Seeded population, half tagged male and half female.

    Speakers differ in emission means, transition structure, and pitch center
    (disjoint gender pitch bands). Each (speaker, emotion) pair gets its own
    perturbation direction so emotional mismatch is not common-mode across
    speakers and does not cancel in the background normalization.
    """
    if n_speakers < 2:
        raise InvalidInputError("need at least 2 speakers")
    n_male = (n_speakers + 1) // 2
    specs = []
    for i in range(n_speakers):
        gender = "male" if i < n_male else "female"
        rng = seeded_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0, i)))
        acoustic = random_model(
            n_states,
            order=1,
            feature_dim=feature_dim,
            n_mixtures=1,
            seed=rng,
            mean_scale=speaker_mean_spread,
        )
        if gender == "male":
            low, high, rank, count = 100.0, 145.0, i, n_male
        else:
            low, high, rank, count = 175.0, 235.0, i - n_male, n_speakers - n_male
        f0_center = low + (high - low) * (rank + 0.5) / count + rng.uniform(-2.0, 2.0)
        # Loudness ranks run against pitch ranks so neighbors in pitch still
        # differ somewhere in prosody.
        energy_rank = (rank + count // 2) % count
        energy_level = 0.18 * (0.5 / 0.18) ** ((energy_rank + 0.5) / count)
        energy_level *= float(rng.uniform(0.95, 1.05))
        # One dominant emotional-coloring axis per speaker, plus a smaller
        # per-emotion component: mismatch then grows with severity instead of
        # depending on how each emotion's direction happens to land.
        base_direction = rng.normal(0.0, 1.0, feature_dim)
        base_direction /= np.linalg.norm(base_direction)
        shifts = {}
        for emotion in emotions:
            severity = EMOTION_SEVERITY.get(emotion, 1.0)
            extra = rng.normal(0.0, 1.0, feature_dim)
            extra /= np.linalg.norm(extra)
            direction = 0.8 * base_direction + 0.6 * extra
            direction /= np.linalg.norm(direction)
            shifts[emotion] = EmotionShift(
                feature_offset=severity * emotion_offset_scale * np.sqrt(feature_dim) * direction,
                variance_scale=1.0 + emotion_variance_growth * severity,
                # Arousal raises pitch for every speaker and makes it less
                # steady; both grow with severity, mirroring the spectral
                # mismatch.
                f0_offset=severity * emotion_f0_scale,
                f0_spread_scale=1.0 + 0.6 * severity,
            )
        specs.append(
            SyntheticSpeakerSpec(
                speaker_id=f"spk{i:02d}",
                gender=gender,
                seed=seed,
                acoustic=acoustic,
                f0_center=f0_center,
                energy_level=energy_level,
                shifts=shifts,
            )
        )
    return specs


def _shifted_model(base: HmmModel, shift: EmotionShift) -> HmmModel:
    shifted = base.copy()
    shifted.emissions.means = shifted.emissions.means + shift.feature_offset
    shifted.emissions.variances = shifted.emissions.variances * shift.variance_scale
    return shifted


def _render_audio(
    rng: np.random.Generator,
    n_frames: int,
    f0_base: float,
    energy_level: float,
    frames: FrameSpec,
    sample_rate: int,
    f0_utterance_sd: float = 4.0,
) -> AudioBuffer:
    """Harmonic source with a slowly wandering pitch, one value per frame.

    Each utterance gets its own pitch offset, wander depth, and loudness so
    within-speaker prosody varies the way repeated readings do; without that
    spread, prosodic models collapse onto single utterances.
    """
    hop = frames.hop_samples(sample_rate)
    flen = frames.frame_samples(sample_rate)
    n_samples = (n_frames - 1) * hop + flen
    t = np.arange(n_frames) * hop / sample_rate
    f0_utt = f0_base + rng.normal(0.0, f0_utterance_sd)
    depth = rng.uniform(1.5, 4.5)
    wander = depth * np.sin(2.0 * np.pi * rng.uniform(0.4, 1.2) * t + rng.uniform(0, 2 * np.pi))
    f0_frames = np.maximum(f0_utt + wander + rng.normal(0.0, 0.8, n_frames), 40.0)
    f0_samples = np.repeat(f0_frames, hop)[:n_samples]
    if f0_samples.size < n_samples:
        f0_samples = np.pad(f0_samples, (0, n_samples - f0_samples.size), mode="edge")
    phase = 2.0 * np.pi * np.cumsum(f0_samples) / sample_rate
    wave = np.zeros(n_samples)
    for harmonic in range(1, 6):
        wave += np.sin(harmonic * phase) / harmonic
    loudness = energy_level * rng.uniform(0.85, 1.15)
    wave *= loudness / np.sqrt(np.mean(wave * wave))
    wave += rng.normal(0.0, 1e-4, n_samples)
    peak = np.max(np.abs(wave))
    if peak > 0.95:
        wave *= 0.95 / peak
    return AudioBuffer(wave, sample_rate)


def synthesize_corpus(
    specs: list[SyntheticSpeakerSpec],
    n_sentences: int = 8,
    n_repetitions: int = 9,
    emotions: tuple[str, ...] = EMOTIONS,
    seed: int = 0,
    length_range: tuple[int, int] = (40, 80),
    render_audio: bool = False,
    frames: FrameSpec = FrameSpec(),
    sample_rate: int = 16000,
    f0_utterance_sd: float = 4.0,
) -> SyntheticCorpus:
    """Sample the full utterance grid; a pure function of (specs, seed)."""
    if len(specs) < 2:
        raise InvalidInputError("need at least 2 speakers")
    records = build_records(
        [(s.speaker_id, s.gender) for s in specs], n_sentences, n_repetitions, emotions
    )
    hop_s = frames.hop_samples(sample_rate) / sample_rate
    features: dict[tuple, FeatureSequence] = {}
    audio: dict[tuple, AudioBuffer] = {}
    spec_by_id = {s.speaker_id: s for s in specs}
    speaker_index = {s.speaker_id: i for i, s in enumerate(specs)}
    emotion_index = {e: i for i, e in enumerate(emotions)}
    for record in records:
        spk = spec_by_id[record.speaker_id]
        shift = spk.shifts[record.emotion]
        rng = seeded_rng(
            np.random.SeedSequence(
                entropy=seed,
                spawn_key=(
                    1,
                    speaker_index[record.speaker_id],
                    record.sentence_id,
                    record.repetition,
                    emotion_index[record.emotion],
                ),
            )
        )
        length = int(rng.integers(length_range[0], length_range[1] + 1))
        _, seq = sample_sequence(_shifted_model(spk.acoustic, shift), length, rng, hop_s)
        features[record.key] = seq
        if render_audio:
            audio[record.key] = _render_audio(
                rng, length, spk.f0_center + shift.f0_offset, spk.energy_level,
                frames, sample_rate, f0_utterance_sd * shift.f0_spread_scale,
            )
    return SyntheticCorpus(records, features, audio, sample_rate)


def write_corpus(
    corpus: SyntheticCorpus,
    root: str | Path,
    frames: FrameSpec = FrameSpec(),
) -> Path:
    """Write feature files, any rendered audio, and the manifest under root."""
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    if corpus.audio:
        (root / "audio").mkdir(parents=True, exist_ok=True)
    updated = []
    for record in corpus.records:
        feature_rel = f"features/{record.stem}.shf"
        write_features(
            root / feature_rel,
            corpus.features[record.key],
            frames,
            None,
            corpus.sample_rate,
        )
        audio_rel = None
        if record.key in corpus.audio:
            audio_rel = f"audio/{record.stem}.wav"
            write_wav(root / audio_rel, corpus.audio[record.key])
        updated.append(
            UtteranceRecord(
                record.speaker_id,
                record.gender,
                record.sentence_id,
                record.repetition,
                record.emotion,
                audio_path=audio_rel,
                feature_path=feature_rel,
            )
        )
    write_manifest(root / "manifest.jsonl", updated)
    return root / "manifest.jsonl"


def assign_claims(
    test_records: list[UtteranceRecord],
    claimant_ids: list[str],
    seed: int = 0,
    same_gender: bool = True,
) -> list[tuple[UtteranceRecord, str]]:
    """One trial per test utterance.

    Claimant speakers claim their own identity (genuine attempts); other
    speakers claim a seeded-random claimant, same-gender when possible.
    """
    claimant_set = set(claimant_ids)
    gender_of = {r.speaker_id: r.gender for r in test_records}
    rng = seeded_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2,)))
    assignments = []
    for record in sorted(test_records, key=lambda r: r.key):
        if record.speaker_id in claimant_set:
            assignments.append((record, record.speaker_id))
            continue
        candidates = sorted(
            c for c in claimant_set if not same_gender or gender_of.get(c) == record.gender
        )
        if not candidates:
            candidates = sorted(claimant_set)
        assignments.append((record, str(rng.choice(candidates))))
    return assignments
