"""Claimed-identity verification: log-likelihood-ratio scoring against a
claimant model and an imposter background, threshold decisions with optional
adaptation, and FAR/FRR/EER/DET evaluation.

The score of a trial is

    llr = fused(claimed speaker) - mean over cohort of fused(imposter)

with every term duration-normalized, so llr is comparable across utterance
lengths. A trial is accepted when llr >= theta; the boundary accepts.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, UnknownSpeakerError
from .features import (
    AudioBuffer,
    FeatureSequence,
    FrameSpec,
    MfccSpec,
    ProsodyTrack,
    extract_mfcc,
    pitch_track,
    read_features,
    read_wav,
)
from .suprasegmental import (
    FusedScore,
    SuprasegmentalModel,
    check_alpha,
    combine_scores,
    fused_log_likelihood,
    suprasegmental_score,
)
from .hmm import HmmModel, normalized_log_likelihood


@dataclass
class ModelPair:
    """One speaker's acoustic chain plus optional suprasegmental layer."""

    acoustic: HmmModel
    supra: SuprasegmentalModel | None = None


@dataclass
class SpeakerModelSet:
    """Enrolled claimants and designated background (imposter) speakers."""

    claimants: dict[str, ModelPair]
    imposters: dict[str, ModelPair] = field(default_factory=dict)

    def __post_init__(self):
        if not self.claimants:
            raise InvalidInputError("model set needs at least one claimant")
        overlap = set(self.claimants) & set(self.imposters)
        if overlap:
            raise InvalidInputError(f"speaker ids {sorted(overlap)} enrolled twice")
        dims = {pair.acoustic.feature_dim for pair in self.all_pairs().values()}
        if len(dims) > 1:
            raise InvalidInputError("all enrolled models must share one feature dimension")

    def all_pairs(self) -> dict[str, ModelPair]:
        merged = dict(self.claimants)
        merged.update(self.imposters)
        return merged

    def pair(self, speaker_id: str) -> ModelPair:
        pairs = self.all_pairs()
        if speaker_id not in pairs:
            raise UnknownSpeakerError(speaker_id)
        return pairs[speaker_id]

    def background_ids(
        self, claimed_id: str, cohort: list[str] | dict[str, list[str]] | None = None
    ) -> list[str]:
        """Cohort for the imposter hypothesis.

        Default: every enrolled speaker other than the claimed one. An
        explicit cohort overrides, minus the claimed id; a dict gives one
        cohort per claimant.
        """
        if isinstance(cohort, dict):
            cohort = cohort.get(claimed_id)
        if cohort is not None:
            ids = [s for s in cohort if s != claimed_id]
        else:
            ids = sorted(s for s in self.all_pairs() if s != claimed_id)
        if not ids:
            raise InvalidInputError(f"no background models available for {claimed_id!r}")
        return ids


@dataclass
class Trial:
    """One claimed-identity attempt."""

    claimed_id: str
    obs: FeatureSequence
    audio: AudioBuffer | None = None
    true_id: str | None = None
    emotion: str | None = None

    @property
    def is_genuine(self) -> bool | None:
        if self.true_id is None:
            return None
        return self.true_id == self.claimed_id


@dataclass
class TrialScore:
    llr: float
    claimant_term: float
    background_term: float
    decision: str | None = None
    threshold_used: float | None = None
    supra_used: bool = True


@dataclass
class Threshold:
    """Decision threshold with a bounded history of recent trial scores."""

    theta: float
    window: int = 20
    history: tuple[float, ...] = ()

    def __post_init__(self):
        if self.window < 1:
            raise InvalidInputError("adaptation window must be >= 1")
        if len(self.history) > self.window:
            raise InvalidInputError("history longer than the window")


def adapt_threshold(threshold: Threshold, new_score: float) -> Threshold:
    """Slide the score window and reset theta to the window mean."""
    history = (threshold.history + (float(new_score),))[-threshold.window :]
    return Threshold(float(np.mean(history)), threshold.window, history)


def decide(llr: float, theta: float) -> str:
    """Accept if and only if llr >= theta."""
    return "accept" if llr >= theta else "reject"


def fused_pair_score(
    pair: ModelPair,
    alpha: float,
    obs,
    audio: AudioBuffer | None = None,
    track: ProsodyTrack | None = None,
) -> FusedScore:
    return fused_log_likelihood(pair.acoustic, pair.supra, alpha, obs, audio, track)


def background_log_likelihood(
    imposters: list[ModelPair],
    alpha: float,
    obs,
    audio: AudioBuffer | None = None,
    track: ProsodyTrack | None = None,
) -> float:
    """Arithmetic mean of the cohort models' fused normalized scores."""
    if not imposters:
        raise InvalidInputError("background needs at least one imposter model")
    scores = [fused_pair_score(pair, alpha, obs, audio, track).value for pair in imposters]
    return float(np.mean(scores))


def llr_score(
    model_set: SpeakerModelSet,
    trial: Trial,
    alpha: float = 0.5,
    cohort: list[str] | dict[str, list[str]] | None = None,
    track: ProsodyTrack | None = None,
) -> TrialScore:
    """Claimant-versus-background log-likelihood ratio, no decision attached."""
    alpha = check_alpha(alpha)
    if trial.claimed_id not in model_set.claimants:
        raise UnknownSpeakerError(trial.claimed_id)
    pair = model_set.claimants[trial.claimed_id]
    if track is None and trial.audio is not None:
        track = pitch_track(trial.audio)
    claimant = fused_pair_score(pair, alpha, trial.obs, trial.audio, track)
    background_ids = model_set.background_ids(trial.claimed_id, cohort)
    background = background_log_likelihood(
        [model_set.pair(s) for s in background_ids], alpha, trial.obs, trial.audio, track
    )
    return TrialScore(
        llr=claimant.value - background,
        claimant_term=claimant.value,
        background_term=background,
        supra_used=claimant.supra_used,
    )


# ---------------------------------------------------------------------------
# DET / EER evaluation


@dataclass
class DetCurve:
    """FAR/FRR over a threshold sweep plus the interpolated EER."""

    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray
    eer: float
    eer_threshold: float

    def to_tsv(self) -> str:
        lines = ["# theta\tfar\tfrr"]
        for theta, far, frr in zip(self.thresholds, self.far, self.frr):
            lines.append(f"{theta:.17g}\t{far:.17g}\t{frr:.17g}")
        lines.append(f"# eer\t{self.eer:.17g}\tat_theta\t{self.eer_threshold:.17g}")
        return "\n".join(lines) + "\n"


def sweep_thresholds(scores: np.ndarray) -> np.ndarray:
    """Distinct scores, midpoints between neighbors, and one point past each end."""
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.sort(
        np.concatenate([[distinct[0] - 1.0], distinct, mids, [distinct[-1] + 1.0]])
    )


def evaluate(scores: list[tuple[float, bool]]) -> DetCurve:
    """DET curve over the midpoint threshold sweep.

    scores: (llr, is_genuine) pairs. FAR(theta) counts imposter scores >= theta
    (the accept rule includes the boundary); FRR(theta) counts genuine scores
    below theta. The EER interpolates linearly between the two sweep points
    bracketing the FAR/FRR crossing.
    """
    genuine = np.array([s for s, g in scores if g], dtype=np.float64)
    imposter = np.array([s for s, g in scores if not g], dtype=np.float64)
    if genuine.size == 0 or imposter.size == 0:
        raise InvalidInputError("evaluation needs both genuine and imposter scores")
    thetas = sweep_thresholds(np.concatenate([genuine, imposter]))
    sorted_gen = np.sort(genuine)
    sorted_imp = np.sort(imposter)
    far = 1.0 - np.searchsorted(sorted_imp, thetas, side="left") / imposter.size
    frr = np.searchsorted(sorted_gen, thetas, side="left") / genuine.size
    diff = far - frr
    crossing = int(np.argmax(diff <= 0.0))
    if diff[crossing] == 0.0:
        eer = float(far[crossing])
        eer_theta = float(thetas[crossing])
    else:
        lo = crossing - 1
        frac = diff[lo] / (diff[lo] - diff[crossing])
        eer = float(far[lo] + frac * (far[crossing] - far[lo]))
        eer_theta = float(thetas[lo] + frac * (thetas[crossing] - thetas[lo]))
    return DetCurve(thetas, far, frr, eer, eer_theta)


# ---------------------------------------------------------------------------
# Batch protocol


@dataclass
class ThresholdPolicy:
    """Fixed theta by default; adaptive mode averages recent scores per claimant."""

    theta_start: float = 0.0
    adaptive: bool = False
    window: int = 20


@dataclass
class DecisionRecord:
    index: int
    claimed_id: str
    true_id: str | None
    emotion: str | None
    llr: float
    claimant_term: float
    background_term: float
    decision: str
    threshold_used: float
    supra_used: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "index": self.index,
                "claimed_id": self.claimed_id,
                "true_id": self.true_id,
                "emotion": self.emotion,
                "llr": self.llr,
                "claimant_term": self.claimant_term,
                "background_term": self.background_term,
                "decision": self.decision,
                "threshold_used": self.threshold_used,
                "supra_used": self.supra_used,
            },
            sort_keys=True,
        )


@dataclass
class ProtocolResult:
    decisions: list[DecisionRecord]
    det_by_emotion: dict[str, DetCurve]
    det_pooled: DetCurve | None


def run_protocol(
    model_set: SpeakerModelSet,
    trials: list[Trial],
    alphas: tuple[float, ...] = (0.5,),
    policy: ThresholdPolicy = ThresholdPolicy(),
    cohort: list[str] | dict[str, list[str]] | None = None,
) -> dict[float, ProtocolResult]:
    """Score every trial, decide, and evaluate DET curves per emotion.

    Several fusion weights can share one pass: the underlying acoustic and
    prosodic terms are computed once per (trial, model) and recombined per
    alpha. With adaptation off the outputs are invariant to trial order.
    """
    alphas = tuple(check_alpha(a) for a in alphas)
    per_alpha: dict[float, list[DecisionRecord]] = {a: [] for a in alphas}
    thresholds: dict[float, dict[str, Threshold]] = {a: {} for a in alphas}

    for index, trial in enumerate(trials):
        if trial.claimed_id not in model_set.claimants:
            raise UnknownSpeakerError(trial.claimed_id)
        track = pitch_track(trial.audio) if trial.audio is not None else None
        background_ids = model_set.background_ids(trial.claimed_id, cohort)

        need_supra = any(a > 0.0 for a in alphas)
        terms: dict[str, tuple[float, float | None]] = {}
        for speaker_id in [trial.claimed_id] + background_ids:
            spk_pair = model_set.pair(speaker_id)
            acoustic = normalized_log_likelihood(spk_pair.acoustic, trial.obs)
            supra = None
            if need_supra and spk_pair.supra is not None and track is not None:
                supra = suprasegmental_score(
                    spk_pair.acoustic, spk_pair.supra, trial.obs, track=track
                )
            terms[speaker_id] = (acoustic, supra)

        for alpha in alphas:
            claimant = combine_scores(*terms[trial.claimed_id], alpha)
            background = float(
                np.mean([combine_scores(*terms[s], alpha).value for s in background_ids])
            )
            llr = claimant.value - background
            threshold = thresholds[alpha].setdefault(
                trial.claimed_id, Threshold(policy.theta_start, policy.window)
            )
            record = DecisionRecord(
                index=index,
                claimed_id=trial.claimed_id,
                true_id=trial.true_id,
                emotion=trial.emotion,
                llr=llr,
                claimant_term=claimant.value,
                background_term=background,
                decision=decide(llr, threshold.theta),
                threshold_used=threshold.theta,
                supra_used=claimant.supra_used,
            )
            per_alpha[alpha].append(record)
            if policy.adaptive:
                thresholds[alpha][trial.claimed_id] = adapt_threshold(threshold, llr)

    results = {}
    for alpha in alphas:
        results[alpha] = ProtocolResult(
            per_alpha[alpha], *_curves_from_records(per_alpha[alpha])
        )
    return results


def _curves_from_records(
    records: list[DecisionRecord],
) -> tuple[dict[str, DetCurve], DetCurve | None]:
    labeled = [r for r in records if r.true_id is not None]
    by_emotion: dict[str, list[tuple[float, bool]]] = {}
    pooled = []
    for record in labeled:
        pair = (record.llr, record.true_id == record.claimed_id)
        pooled.append(pair)
        by_emotion.setdefault(record.emotion or "unlabeled", []).append(pair)
    curves = {}
    for emotion in sorted(by_emotion):
        scores = by_emotion[emotion]
        if any(g for _, g in scores) and any(not g for _, g in scores):
            curves[emotion] = evaluate(scores)
    det_pooled = None
    if pooled and any(g for _, g in pooled) and any(not g for _, g in pooled):
        det_pooled = evaluate(pooled)
    return curves, det_pooled


# ---------------------------------------------------------------------------
# Trial manifests (JSON lines)


def load_trial_manifest(
    path: str | Path,
    frames: FrameSpec = FrameSpec(),
    spec: MfccSpec = MfccSpec(),
    base_dir: str | Path | None = None,
) -> list[Trial]:
    """One JSON object per line: {claimed_id, wav_path or feature_path,
    true_id?, emotion?}. Features come from the feature file when given,
    otherwise they are extracted from the WAV.
    """
    path = Path(path)
    base = Path(base_dir) if base_dir is not None else path.parent
    trials = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}:{line_no}: malformed JSON: {exc}") from exc
        if "claimed_id" not in entry:
            raise InvalidInputError(f"{path}:{line_no}: missing claimed_id")
        if "wav_path" not in entry and "feature_path" not in entry:
            raise InvalidInputError(f"{path}:{line_no}: needs wav_path or feature_path")
        audio = None
        if entry.get("wav_path"):
            audio = read_wav(base / entry["wav_path"])
        if entry.get("feature_path"):
            obs, _ = read_features(base / entry["feature_path"])
        else:
            obs = extract_mfcc(audio, frames, spec)
        trials.append(
            Trial(
                claimed_id=str(entry["claimed_id"]),
                obs=obs,
                audio=audio,
                true_id=entry.get("true_id"),
                emotion=entry.get("emotion"),
            )
        )
    return trials
