"""Suprasegmental layer: prosodic model over groups of acoustic states.

An utterance is Viterbi-aligned against the acoustic chain, each frame's state
is mapped to its suprasegmental group, and maximal runs of one group become
segments. One prosodic vector per segment feeds a small circular chain whose
duration-normalized score fuses with the acoustic score:

    score = (1 - alpha) * acoustic + alpha * suprasegmental

The spanning root group over all segments is realized as the per-segment
normalization of the chain score rather than as an extra chain state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NoValidPathError, TrainingDataEmptyError
from .features import (
    AudioBuffer,
    FrameSpec,
    ProsodyTrack,
    aggregate_prosody,
    pitch_track,
)
from .hmm import (
    EmissionModel,
    HmmModel,
    InitialLaws,
    TopologyMask,
    TrainConfig,
    TransitionTensor,
    _kmeans,
    data_variance_floor,
    normalized_log_likelihood,
    seeded_rng,
    train_lift_pipeline,
    viterbi_align,
)


@dataclass(frozen=True)
class SuprasegmentalTopology:
    """Partition of acoustic states into suprasegmental groups."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for group in self.groups:
            if not group:
                raise InvalidInputError("suprasegmental groups must be non-empty")
            overlap = seen.intersection(group)
            if overlap:
                raise InvalidInputError(f"acoustic states {sorted(overlap)} in two groups")
            seen.update(group)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def validate_for(self, n_acoustic: int) -> None:
        covered = sorted(s for group in self.groups for s in group)
        if covered != list(range(n_acoustic)):
            raise InvalidInputError("groups must cover every acoustic state exactly once")

    def group_of(self, n_acoustic: int) -> np.ndarray:
        self.validate_for(n_acoustic)
        mapping = np.empty(n_acoustic, dtype=np.int64)
        for g, group in enumerate(self.groups):
            for state in group:
                mapping[state] = g
        return mapping

    @classmethod
    def halves(cls, n_acoustic: int = 6, n_groups: int = 2) -> "SuprasegmentalTopology":
        """Contiguous equal split; the 6-state default is ({0,1,2}, {3,4,5})."""
        bounds = [(g * n_acoustic) // n_groups for g in range(n_groups + 1)]
        return cls(tuple(tuple(range(bounds[g], bounds[g + 1])) for g in range(n_groups)))


@dataclass
class SegmentMap:
    """Maximal same-group runs: (group, first_frame, last_frame), inclusive."""

    segments: list[tuple[int, int, int]]

    def __len__(self) -> int:
        return len(self.segments)

    def validate_covering(self, n_frames: int) -> None:
        if not self.segments:
            raise InvalidInputError("empty segment map")
        cursor = 0
        for _, start, end in self.segments:
            if start != cursor or end < start:
                raise InvalidInputError("segments must tile the frame range in order")
            cursor = end + 1
        if cursor != n_frames:
            raise InvalidInputError("segments do not cover the aligned frames")


def group_runs(state_path: np.ndarray, group_of: np.ndarray) -> SegmentMap:
    """Run-length encode a state path after mapping states to groups."""
    groups = group_of[np.asarray(state_path, dtype=np.int64)]
    segments = []
    start = 0
    for t in range(1, groups.size + 1):
        if t == groups.size or groups[t] != groups[start]:
            segments.append((int(groups[start]), start, t - 1))
            start = t
    return SegmentMap(segments)


def segment_utterance(
    acoustic: HmmModel, obs, topo: SuprasegmentalTopology
) -> SegmentMap:
    """Viterbi-align, map states to groups, merge runs."""
    mapping = topo.group_of(acoustic.n_states)
    alignment = viterbi_align(acoustic, obs)
    return group_runs(alignment.state_path, mapping)


def prosodic_matrix(track: ProsodyTrack, segmap: SegmentMap) -> np.ndarray:
    """One prosodic vector per segment, aggregated from a frame-level track.

    The track is expected to share the feature extraction's frame grid; when
    the acoustic sequence runs slightly longer than the track (rounding at the
    utterance tail) the last track frame covers the overhang.
    """
    rows = []
    n_track = len(track)
    for _, start, end in segmap.segments:
        lo = min(start, n_track - 1)
        hi = min(end, n_track - 1)
        piece = ProsodyTrack(
            track.frame_times[lo : hi + 1],
            track.f0[lo : hi + 1],
            track.voiced[lo : hi + 1],
            track.log_rms[lo : hi + 1],
            track.frame_length_s,
            track.frame_hop_s,
        )
        duration = (end - start) * track.frame_hop_s + track.frame_length_s
        rows.append(aggregate_prosody(piece, duration).as_array())
    return np.vstack(rows)


@dataclass
class SuprasegmentalModel:
    """Prosodic chain over suprasegmental states, layered on an acoustic model."""

    topology: SuprasegmentalTopology
    chain: HmmModel

    def __post_init__(self):
        if self.chain.n_states != self.topology.n_groups:
            raise InvalidInputError("chain size must equal the number of groups")


@dataclass
class TrainingReport:
    traces: dict[int, list[float]]
    n_utterances: int
    n_skipped: int


def initialize_supra_chain(
    prosodic_seqs: list[np.ndarray],
    group_seqs: list[np.ndarray],
    n_groups: int,
    n_mixtures: int,
    rng: np.random.Generator,
    variance_floor: np.ndarray,
) -> HmmModel:
    """Group-supervised order-1 starting point for the prosodic chain.

    A segment labeled with group g is an observation of chain state g, so the
    initial law and transition rows come from plain counts and each state's
    emissions fit its own group's segments. Groups that never occur keep a
    pooled fallback and zero starting mass; the zero-count M-step rule then
    leaves them untouched during EM.
    """
    mask = TopologyMask.circular(n_groups)
    psi = np.zeros(n_groups)
    bigrams = np.zeros((n_groups, n_groups))
    for groups in group_seqs:
        psi[groups[0]] += 1.0
        for a, b in zip(groups[:-1], groups[1:]):
            bigrams[a, b] += 1.0
    psi /= psi.sum()
    uniform = mask.allowed / mask.allowed.sum(axis=1, keepdims=True)
    sums = bigrams.sum(axis=1, keepdims=True)
    transitions = np.where(sums > 0, bigrams / np.where(sums > 0, sums, 1.0), uniform)

    pooled = np.vstack(prosodic_seqs)
    dim = pooled.shape[1]
    weights = np.zeros((n_groups, n_mixtures))
    means = np.zeros((n_groups, n_mixtures, dim))
    variances = np.zeros((n_groups, n_mixtures, dim))
    for g in range(n_groups):
        rows = [seq[groups == g] for seq, groups in zip(prosodic_seqs, group_seqs)]
        frames_g = np.vstack([r for r in rows if r.size] or [pooled])
        if frames_g.shape[0] < n_mixtures:
            frames_g = pooled
        centers, assign = _kmeans(frames_g, n_mixtures, rng)
        for j in range(n_mixtures):
            members = frames_g[assign == j]
            weights[g, j] = max(members.shape[0], 1)
            means[g, j] = centers[j]
            if members.shape[0] >= 2:
                variances[g, j] = np.maximum(members.var(axis=0), variance_floor)
            else:
                variances[g, j] = np.maximum(frames_g.var(axis=0), variance_floor)
        weights[g] /= weights[g].sum()
    chain = HmmModel(
        1,
        mask,
        InitialLaws(psi),
        TransitionTensor(1, transitions),
        EmissionModel(weights, means, variances),
    )
    chain.validate()
    return chain


def train_suprasegmental(
    acoustic: HmmModel,
    data: list,
    audio: list[AudioBuffer],
    topo: SuprasegmentalTopology | None = None,
    frames: FrameSpec = FrameSpec(),
    order: int = 3,
    n_mixtures: int = 2,
    config: TrainConfig = TrainConfig(),
    seed=0,
) -> tuple[SuprasegmentalModel, TrainingReport]:
    """Segment every utterance with the acoustic model and fit the prosodic
    chain on the per-segment vectors: group-supervised initialization, then
    the usual order 1 -> lift -> ... -> order 3 EM refinement. Utterances
    whose alignment fails are skipped and counted.
    """
    if len(data) != len(audio):
        raise InvalidInputError("feature and audio lists must be parallel")
    topo = topo or SuprasegmentalTopology.halves(acoustic.n_states)
    sequences: list[np.ndarray] = []
    group_seqs: list[np.ndarray] = []
    skipped = 0
    for seq, aud in zip(data, audio):
        try:
            segmap = segment_utterance(acoustic, seq, topo)
        except NoValidPathError:
            skipped += 1
            continue
        track = pitch_track(aud, frames)
        sequences.append(prosodic_matrix(track, segmap))
        group_seqs.append(np.array([g for g, _, _ in segmap.segments], dtype=np.int64))
    if not sequences:
        raise TrainingDataEmptyError("every utterance was skipped; nothing to train on")
    floor = data_variance_floor(sequences, config.variance_floor)
    initial = initialize_supra_chain(
        sequences, group_seqs, topo.n_groups, n_mixtures, seeded_rng(seed), floor
    )
    chain, traces = train_lift_pipeline(initial, sequences, max_order=order, config=config)
    report = TrainingReport(traces, len(sequences), skipped)
    return SuprasegmentalModel(topo, chain), report


@dataclass
class FusedScore:
    """Weighted combination of normalized acoustic and prosodic scores.

    When the prosodic side is unavailable (no audio, or no valid alignment)
    the score falls back to the acoustic term alone with alpha forced to 0,
    and supra_used records the downgrade.
    """

    value: float
    acoustic: float
    suprasegmental: float | None
    alpha_requested: float
    alpha_effective: float
    supra_used: bool


def check_alpha(alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"fusion weight must lie in [0, 1], got {alpha}")
    return float(alpha)


def combine_scores(acoustic: float, suprasegmental: float | None, alpha: float) -> FusedScore:
    alpha = check_alpha(alpha)
    if suprasegmental is None or alpha == 0.0:
        effective = 0.0
        value = acoustic
    elif alpha == 1.0:
        effective = 1.0
        value = suprasegmental
    else:
        effective = alpha
        value = (1.0 - alpha) * acoustic + alpha * suprasegmental
    return FusedScore(
        value=value,
        acoustic=acoustic,
        suprasegmental=suprasegmental,
        alpha_requested=alpha,
        alpha_effective=effective,
        supra_used=suprasegmental is not None and alpha > 0.0,
    )


def suprasegmental_score(
    acoustic: HmmModel,
    supra: SuprasegmentalModel,
    obs,
    audio: AudioBuffer | None = None,
    track: ProsodyTrack | None = None,
    frames: FrameSpec = FrameSpec(),
) -> float | None:
    """Per-segment normalized prosodic log-likelihood, or None when the
    utterance cannot be segmented or carries no audio."""
    if track is None:
        if audio is None:
            return None
        track = pitch_track(audio, frames)
    try:
        segmap = segment_utterance(acoustic, obs, supra.topology)
    except NoValidPathError:
        return None
    matrix = prosodic_matrix(track, segmap)
    score = normalized_log_likelihood(supra.chain, matrix)
    # A segment pattern with zero prior mass (e.g. a start group never seen in
    # enrollment) scores -inf; treat it like any other prosodic failure.
    return score if np.isfinite(score) else None


def fused_log_likelihood(
    acoustic: HmmModel,
    supra: SuprasegmentalModel | None,
    alpha: float,
    obs,
    audio: AudioBuffer | None = None,
    track: ProsodyTrack | None = None,
    frames: FrameSpec = FrameSpec(),
) -> FusedScore:
    """Duration-normalized acoustic score fused with the prosodic score."""
    alpha = check_alpha(alpha)
    acoustic_term = normalized_log_likelihood(acoustic, obs)
    supra_term = None
    if supra is not None and alpha > 0.0:
        supra_term = suprasegmental_score(acoustic, supra, obs, audio, track, frames)
    return combine_scores(acoustic_term, supra_term, alpha)
