import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import assert_monotone_trace
from csphmm.corpus import default_speaker_specs, synthesize_corpus
from csphmm.errors import InvalidInputError
from csphmm.features import AudioBuffer, FrameSpec, pitch_track
from csphmm.hmm import (
    EmissionModel,
    HmmModel,
    InitialLaws,
    TopologyMask,
    TrainConfig,
    TransitionTensor,
    normalized_log_likelihood,
    random_model,
)
from csphmm.suprasegmental import (
    SegmentMap,
    SuprasegmentalTopology,
    combine_scores,
    fused_log_likelihood,
    group_runs,
    prosodic_matrix,
    segment_utterance,
    suprasegmental_score,
    train_suprasegmental,
)
from oracles import run_length_encode


def dominant_emission_model(n_states, means_1d, var=0.01):
    mask = TopologyMask.circular(n_states)
    means = np.asarray(means_1d, dtype=float)[:, None]
    return HmmModel(
        1,
        mask,
        InitialLaws(np.full(n_states, 1.0 / n_states)),
        TransitionTensor.uniform(mask, 1),
        EmissionModel.single_gaussian(means, np.full((n_states, 1), var)),
    )


def default_topology():
    return SuprasegmentalTopology.halves(6, 2)


# ---------------------------------------------------------------------------
# topology


def test_halves_partition():
    topo = default_topology()
    assert topo.groups == ((0, 1, 2), (3, 4, 5))
    mapping = topo.group_of(6)
    assert list(mapping) == [0, 0, 0, 1, 1, 1]


def test_topology_rejects_overlap_and_gaps():
    with pytest.raises(InvalidInputError):
        SuprasegmentalTopology(((0, 1), (1, 2)))
    topo = SuprasegmentalTopology(((0, 1), (3,)))
    with pytest.raises(InvalidInputError):
        topo.validate_for(4)
    with pytest.raises(InvalidInputError):
        SuprasegmentalTopology(((0, 1), ()))


# ---------------------------------------------------------------------------
# segmentation


def test_group_runs_single_group():
    mapping = default_topology().group_of(6)
    runs = group_runs(np.zeros(5, dtype=int), mapping)
    assert runs.segments == [(0, 0, 4)]


def test_group_runs_documented_example():
    mapping = default_topology().group_of(6)
    path = np.array([0, 1, 3, 4, 0])  # groups 0, 0, 1, 1, 0
    runs = group_runs(path, mapping)
    assert runs.segments == [(0, 0, 1), (1, 2, 3), (0, 4, 4)]


@given(st.lists(st.integers(0, 5), min_size=1, max_size=40))
def test_group_runs_matches_independent_rle(path):
    mapping = default_topology().group_of(6)
    runs = group_runs(np.array(path), mapping)
    expected = run_length_encode([int(mapping[s]) for s in path])
    assert runs.segments == expected
    runs.validate_covering(len(path))


def test_segment_utterance_reencodes_viterbi_path():
    from csphmm.hmm import viterbi_align

    model = random_model(6, 1, feature_dim=2, n_mixtures=1, seed=3)
    obs = np.random.default_rng(0).normal(0, 1, (30, 2))
    topo = default_topology()
    segmap = segment_utterance(model, obs, topo)
    path = viterbi_align(model, obs).state_path
    mapping = topo.group_of(6)
    assert segmap.segments == run_length_encode([int(mapping[s]) for s in path])
    segmap.validate_covering(30)


def test_segment_map_covering_validation():
    with pytest.raises(InvalidInputError):
        SegmentMap([(0, 0, 2), (1, 4, 5)]).validate_covering(6)
    with pytest.raises(InvalidInputError):
        SegmentMap([]).validate_covering(0)


# ---------------------------------------------------------------------------
# fusion arithmetic


def test_combine_alpha_zero_is_exactly_acoustic():
    fused = combine_scores(-10.0, -20.0, 0.0)
    assert fused.value == -10.0
    assert fused.supra_used is False


def test_combine_alpha_one_is_exactly_suprasegmental():
    fused = combine_scores(-10.0, -20.0, 1.0)
    assert fused.value == -20.0
    assert fused.supra_used is True


def test_combine_midpoint():
    fused = combine_scores(-10.0, -20.0, 0.5)
    assert fused.value == -15.0


def test_combine_missing_supra_falls_back():
    fused = combine_scores(-10.0, None, 0.7)
    assert fused.value == -10.0
    assert fused.alpha_effective == 0.0
    assert fused.supra_used is False


def test_combine_rejects_bad_alpha():
    with pytest.raises(InvalidInputError):
        combine_scores(-1.0, -2.0, 1.5)


@given(st.floats(0.0, 1.0))
def test_combine_affine_in_alpha(alpha):
    acoustic, supra = -3.25, -9.75
    fused = combine_scores(acoustic, supra, alpha)
    expected = (1 - alpha) * acoustic + alpha * supra
    assert fused.value == pytest.approx(expected, abs=1e-12)


# ---------------------------------------------------------------------------
# end-to-end fusion on synthetic material


@pytest.fixture(scope="module")
def small_corpus():
    specs = default_speaker_specs(n_speakers=2, feature_dim=6, n_states=6, seed=0)
    return specs, synthesize_corpus(
        specs, n_sentences=2, n_repetitions=3, emotions=("neutral",),
        seed=0, length_range=(30, 40), render_audio=True,
    )


@pytest.fixture(scope="module")
def trained_pair(small_corpus):
    from csphmm.hmm import train_order_pipeline

    specs, corpus = small_corpus
    speaker = specs[0].speaker_id
    records = [r for r in corpus.records if r.speaker_id == speaker]
    data = [corpus.features[r.key] for r in records]
    audio = [corpus.audio[r.key] for r in records]
    acoustic, _ = train_order_pipeline(
        data, 6, max_order=3, n_mixtures=1, config=TrainConfig(max_iters=4), seed=0
    )
    supra, report = train_suprasegmental(
        acoustic, data, audio, n_mixtures=1, config=TrainConfig(max_iters=4), seed=0
    )
    return corpus, records, acoustic, supra, report


def test_supra_training_traces_monotone(trained_pair):
    *_, report = trained_pair
    for trace in report.traces.values():
        assert_monotone_trace(trace)
    assert report.n_skipped == 0


def test_fused_score_is_affine_in_alpha(trained_pair):
    corpus, records, acoustic, supra, _ = trained_pair
    key = records[0].key
    obs, audio = corpus.features[key], corpus.audio[key]
    values = {
        alpha: fused_log_likelihood(acoustic, supra, alpha, obs, audio).value
        for alpha in (0.0, 0.25, 0.5, 0.75, 1.0)
    }
    for alpha in (0.25, 0.5, 0.75):
        expected = (1 - alpha) * values[0.0] + alpha * values[1.0]
        assert values[alpha] == pytest.approx(expected, abs=1e-12)


def test_fused_alpha_endpoints_match_terms(trained_pair):
    corpus, records, acoustic, supra, _ = trained_pair
    key = records[1].key
    obs, audio = corpus.features[key], corpus.audio[key]
    fused0 = fused_log_likelihood(acoustic, supra, 0.0, obs, audio)
    assert fused0.value == normalized_log_likelihood(acoustic, obs)
    fused1 = fused_log_likelihood(acoustic, supra, 1.0, obs, audio)
    track = pitch_track(audio)
    assert fused1.value == suprasegmental_score(acoustic, supra, obs, track=track)


def test_fused_without_audio_falls_back_to_acoustic(trained_pair):
    corpus, records, acoustic, supra, _ = trained_pair
    key = records[0].key
    obs = corpus.features[key]
    fused = fused_log_likelihood(acoustic, supra, 0.5, obs, audio=None)
    assert fused.value == normalized_log_likelihood(acoustic, obs)
    assert fused.supra_used is False
    assert fused.alpha_effective == 0.0


def test_prosodic_matrix_rows_match_segment_count(trained_pair):
    corpus, records, acoustic, supra, _ = trained_pair
    key = records[2].key
    obs, audio = corpus.features[key], corpus.audio[key]
    segmap = segment_utterance(acoustic, obs, supra.topology)
    track = pitch_track(audio)
    matrix = prosodic_matrix(track, segmap)
    assert matrix.shape == (len(segmap), 7)
    assert np.all(np.isfinite(matrix))


# ---------------------------------------------------------------------------
# degenerate one-group training


def test_single_group_training_keeps_unseen_state_initialization():
    # emissions overwhelmingly prefer states 0..2, so every frame aligns
    # inside group 0 and group 1 never occurs in the prosodic sequences
    acoustic = dominant_emission_model(6, [0.0, 0.1, 0.2, 50.0, 50.0, 50.0])
    rng = np.random.default_rng(0)
    data = [rng.normal(0.1, 0.2, (25, 1)) for _ in range(4)]
    sr = 16000
    audio = [
        AudioBuffer(0.3 * np.sin(2 * np.pi * 150 * np.arange(int(0.35 * sr)) / sr), sr)
        for _ in range(4)
    ]
    supra, report = train_suprasegmental(
        acoustic, data, audio, n_mixtures=1, config=TrainConfig(max_iters=4), seed=0
    )
    chain = supra.chain
    # all utterances are one segment of group 0
    assert np.array_equal(chain.initials.psi1, np.array([1.0, 0.0]))
    for trace in report.traces.values():
        assert_monotone_trace(trace)
    chain.validate()


def test_training_rejects_mismatched_lists():
    acoustic = dominant_emission_model(6, [0, 1, 2, 3, 4, 5])
    with pytest.raises(InvalidInputError):
        train_suprasegmental(acoustic, [np.zeros((5, 1))], [], n_mixtures=1)


def test_speakers_with_distinct_pitch_separate_on_prosody():
    # two speakers, far apart in pitch; own-model prosody must win almost always
    specs = default_speaker_specs(n_speakers=2, feature_dim=4, n_states=6, seed=3)
    specs[0].f0_center, specs[1].f0_center = 120.0, 220.0
    corpus = synthesize_corpus(
        specs, n_sentences=4, n_repetitions=4, emotions=("neutral",),
        seed=3, length_range=(30, 45), render_audio=True,
    )
    from csphmm.hmm import train_order_pipeline

    models = {}
    held_out = {}
    for spec in specs:
        records = [r for r in corpus.records if r.speaker_id == spec.speaker_id]
        train_records = [r for r in records if r.sentence_id <= 2]
        held_out[spec.speaker_id] = [r for r in records if r.sentence_id > 2]
        data = [corpus.features[r.key] for r in train_records]
        audio = [corpus.audio[r.key] for r in train_records]
        acoustic, _ = train_order_pipeline(
            data, 6, max_order=3, n_mixtures=1, config=TrainConfig(max_iters=4), seed=1
        )
        supra, _ = train_suprasegmental(
            acoustic, data, audio, n_mixtures=1,
            config=TrainConfig(max_iters=4, variance_floor=1.0), seed=1,
        )
        models[spec.speaker_id] = (acoustic, supra)

    wins = total = 0
    for spec in specs:
        own_ac, own_supra = models[spec.speaker_id]
        other_id = next(s.speaker_id for s in specs if s.speaker_id != spec.speaker_id)
        oth_ac, oth_supra = models[other_id]
        for record in held_out[spec.speaker_id]:
            obs = corpus.features[record.key]
            track = pitch_track(corpus.audio[record.key])
            own = suprasegmental_score(own_ac, own_supra, obs, track=track)
            other = suprasegmental_score(oth_ac, oth_supra, obs, track=track)
            total += 1
            wins += own is not None and (other is None or own > other)
    assert wins / total >= 0.95
