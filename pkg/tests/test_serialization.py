import numpy as np
import pytest

from csphmm.errors import InvalidInputError
from csphmm.hmm import random_model
from csphmm.serialization import load_model, save_model
from csphmm.suprasegmental import SuprasegmentalModel, SuprasegmentalTopology


def assert_models_bit_identical(a, b):
    assert a.order == b.order
    assert np.array_equal(a.topology.allowed, b.topology.allowed)
    assert np.array_equal(a.initials.psi1, b.initials.psi1)
    for x, y in ((a.initials.startup2, b.initials.startup2),
                 (a.initials.startup3, b.initials.startup3)):
        assert (x is None) == (y is None)
        if x is not None:
            assert np.array_equal(x, y)
    assert np.array_equal(a.transitions.values, b.transitions.values)
    assert np.array_equal(a.emissions.weights, b.emissions.weights)
    assert np.array_equal(a.emissions.means, b.emissions.means)
    assert np.array_equal(a.emissions.variances, b.emissions.variances)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_round_trip_is_bit_exact(tmp_path, order):
    model = random_model(4, order, feature_dim=5, n_mixtures=3, seed=order)
    path = tmp_path / f"m{order}.shm3"
    save_model(path, model)
    loaded, supra = load_model(path)
    assert supra is None
    assert_models_bit_identical(model, loaded)


def test_round_trip_with_suprasegmental_section(tmp_path):
    acoustic = random_model(6, 3, feature_dim=8, n_mixtures=2, seed=1)
    chain = random_model(2, 3, feature_dim=7, n_mixtures=1, seed=2)
    supra = SuprasegmentalModel(SuprasegmentalTopology.halves(6, 2), chain)
    path = tmp_path / "pair.shm3"
    save_model(path, acoustic, supra)
    loaded_acoustic, loaded_supra = load_model(path)
    assert_models_bit_identical(acoustic, loaded_acoustic)
    assert loaded_supra is not None
    assert loaded_supra.topology.groups == ((0, 1, 2), (3, 4, 5))
    assert_models_bit_identical(chain, loaded_supra.chain)


def test_double_round_trip_is_stable(tmp_path):
    model = random_model(3, 2, feature_dim=4, n_mixtures=2, seed=5)
    p1, p2 = tmp_path / "a.shm3", tmp_path / "b.shm3"
    save_model(p1, model)
    loaded, _ = load_model(p1)
    save_model(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_rejects_bad_magic_and_trailing_bytes(tmp_path):
    bad = tmp_path / "bad.shm3"
    bad.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(InvalidInputError, match="magic"):
        load_model(bad)

    model = random_model(2, 1, feature_dim=2, seed=0)
    good = tmp_path / "good.shm3"
    save_model(good, model)
    truncated = tmp_path / "trunc.shm3"
    truncated.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(InvalidInputError, match="truncated"):
        load_model(truncated)
    padded = tmp_path / "padded.shm3"
    padded.write_bytes(good.read_bytes() + b"\x00")
    with pytest.raises(InvalidInputError, match="trailing"):
        load_model(padded)
