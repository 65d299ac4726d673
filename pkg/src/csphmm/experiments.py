"""End-to-end reference experiment on a synthetic corpus.

One run: synthesize a seeded population, enroll each speaker on the neutral
half of the sentence set (chain orders 1 -> 2 -> 3 plus the prosodic layer),
score every test utterance against its claimed identity, and report EER per
emotion for both the acoustic-only weight (alpha = 0) and the fused weight.
Desk-scale by design; the interesting output is the qualitative pattern
(neutral easiest, angry hardest, fusion helping), not absolute rates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import (
    EMOTIONS,
    SyntheticCorpus,
    assign_claims,
    default_speaker_specs,
    enrollment_records,
    split_train_test,
    synthesize_corpus,
)
from .features import FrameSpec
from .hmm import TrainConfig, train_order_pipeline
from .suprasegmental import SuprasegmentalTopology, train_suprasegmental
from .verification import (
    ModelPair,
    ProtocolResult,
    SpeakerModelSet,
    ThresholdPolicy,
    Trial,
    run_protocol,
)


@dataclass
class ReferenceConfig:
    """Defaults sized so one full run stays under half a minute."""

    n_speakers: int = 10
    claimants_per_gender: int = 3
    n_sentences: int = 8
    n_repetitions: int = 4
    emotions: tuple[str, ...] = EMOTIONS
    feature_dim: int = 10
    n_states: int = 6
    n_mixtures: int = 2
    supra_groups: int = 2
    supra_mixtures: int = 1
    alphas: tuple[float, ...] = (0.0, 0.5)
    length_range: tuple[int, int] = (35, 60)
    sample_rate: int = 16000
    speaker_mean_spread: float = 1.15
    emotion_offset_scale: float = 0.9
    emotion_variance_growth: float = 0.22
    emotion_f0_scale: float = 4.5
    f0_utterance_sd: float = 3.0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(max_iters=6, rel_tol=1e-3))
    # The prosodic chain keeps per-speaker variances at the speaker's own
    # global spread (floor fraction 1.0): per-model score scales then stay
    # comparable across claimants, which pooled EERs need.
    supra_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(max_iters=6, rel_tol=1e-3, variance_floor=1.0)
    )
    frames: FrameSpec = field(default_factory=FrameSpec)


@dataclass
class ReferenceResult:
    seed: int
    config: ReferenceConfig
    corpus: SyntheticCorpus
    model_set: SpeakerModelSet
    protocol: dict[float, ProtocolResult]
    traces: dict[str, dict[int, list[float]]]
    supra_traces: dict[str, dict[int, list[float]]]

    def eer_by_emotion(self, alpha: float) -> dict[str, float]:
        result = self.protocol[alpha]
        return {emotion: curve.eer for emotion, curve in result.det_by_emotion.items()}

    def pooled_eer(self, alpha: float) -> float:
        return self.protocol[alpha].det_pooled.eer


def enroll_speakers(
    corpus: SyntheticCorpus, config: ReferenceConfig, seed: int
) -> tuple[dict[str, ModelPair], dict[str, dict], dict[str, dict]]:
    """Train one acoustic + suprasegmental pair per speaker on neutral
    enrollment utterances."""
    train_side, _ = split_train_test(corpus.records, config.n_sentences)
    enroll = enrollment_records(train_side)
    speakers = sorted({r.speaker_id for r in corpus.records})
    topo = SuprasegmentalTopology.halves(config.n_states, config.supra_groups)
    pairs: dict[str, ModelPair] = {}
    traces: dict[str, dict] = {}
    supra_traces: dict[str, dict] = {}
    for i, speaker in enumerate(speakers):
        records = [r for r in enroll if r.speaker_id == speaker]
        data = [corpus.features[r.key] for r in records]
        audio = [corpus.audio[r.key] for r in records if r.key in corpus.audio]
        acoustic, speaker_traces = train_order_pipeline(
            data,
            config.n_states,
            max_order=3,
            n_mixtures=config.n_mixtures,
            config=config.train,
            seed=(seed, 3, i),
        )
        supra = None
        if len(audio) == len(data) and audio:
            supra, report = train_suprasegmental(
                acoustic,
                data,
                audio,
                topo,
                frames=config.frames,
                n_mixtures=config.supra_mixtures,
                config=config.supra_train,
                seed=(seed, 4, i),
            )
            supra_traces[speaker] = report.traces
        pairs[speaker] = ModelPair(acoustic, supra)
        traces[speaker] = speaker_traces
    return pairs, traces, supra_traces


def pick_claimants(corpus: SyntheticCorpus, per_gender: int) -> list[str]:
    by_gender: dict[str, list[str]] = {}
    for record in corpus.records:
        ids = by_gender.setdefault(record.gender, [])
        if record.speaker_id not in ids:
            ids.append(record.speaker_id)
    claimants = []
    for gender in sorted(by_gender):
        claimants.extend(sorted(by_gender[gender])[:per_gender])
    return claimants


def run_reference_experiment(
    seed: int, config: ReferenceConfig = ReferenceConfig()
) -> ReferenceResult:
    specs = default_speaker_specs(
        n_speakers=config.n_speakers,
        feature_dim=config.feature_dim,
        n_states=config.n_states,
        seed=seed,
        speaker_mean_spread=config.speaker_mean_spread,
        emotion_offset_scale=config.emotion_offset_scale,
        emotion_variance_growth=config.emotion_variance_growth,
        emotion_f0_scale=config.emotion_f0_scale,
        emotions=config.emotions,
    )
    corpus = synthesize_corpus(
        specs,
        n_sentences=config.n_sentences,
        n_repetitions=config.n_repetitions,
        emotions=config.emotions,
        seed=seed,
        length_range=config.length_range,
        render_audio=True,
        frames=config.frames,
        sample_rate=config.sample_rate,
        f0_utterance_sd=config.f0_utterance_sd,
    )
    pairs, traces, supra_traces = enroll_speakers(corpus, config, seed)
    claimant_ids = pick_claimants(corpus, config.claimants_per_gender)
    imposter_ids = sorted(set(pairs) - set(claimant_ids))
    model_set = SpeakerModelSet(
        claimants={s: pairs[s] for s in claimant_ids},
        imposters={s: pairs[s] for s in imposter_ids},
    )
    # Per-gender protocol: each claim is judged against same-gender imposters.
    gender_of = {r.speaker_id: r.gender for r in corpus.records}
    cohort = {
        claimant: [s for s in imposter_ids if gender_of[s] == gender_of[claimant]]
        or imposter_ids
        for claimant in claimant_ids
    }
    _, test_side = split_train_test(corpus.records, config.n_sentences)
    trials = [
        Trial(
            claimed_id=claimed,
            obs=corpus.features[record.key],
            audio=corpus.audio.get(record.key),
            true_id=record.speaker_id,
            emotion=record.emotion,
        )
        for record, claimed in assign_claims(test_side, claimant_ids, seed=seed)
    ]
    protocol = run_protocol(
        model_set,
        trials,
        alphas=config.alphas,
        policy=ThresholdPolicy(),
        cohort=cohort if imposter_ids else None,
    )
    return ReferenceResult(seed, config, corpus, model_set, protocol, traces, supra_traces)
