import numpy as np
import pytest

from ncp.rng import stream


def test_same_path_same_sequence():
    a = stream(42, "x", 3).random(8)
    b = stream(42, "x", 3).random(8)
    assert np.array_equal(a, b)


def test_different_paths_differ():
    a = stream(42, "x", 3).random(8)
    b = stream(42, "x", 4).random(8)
    c = stream(43, "x", 3).random(8)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_string_components_are_stable():
    a = stream(0, "sample", 0).integers(2**32)
    b = stream(0, "sample", 0).integers(2**32)
    assert a == b
    assert stream(0, "sample", 0).integers(2**32) != stream(0, "gibbs", 0).integers(2**32)


def test_rejects_negative_and_odd_types():
    with pytest.raises(ValueError):
        stream(1, -3)
    with pytest.raises(TypeError):
        stream(1, 2.5)
