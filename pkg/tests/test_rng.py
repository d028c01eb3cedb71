import numpy as np

from planted_reductions.rng import child_rng, draw_key, hash_signs, make_rng, stable_hash


def test_rng_same_seed_and_label_repeat() -> None:
    first = make_rng(7, "sample").standard_normal(5)
    second = make_rng(7, "sample").standard_normal(5)
    assert np.array_equal(first, second)


def test_rng_labels_give_different_streams() -> None:
    first = make_rng(7, "sample").integers(0, 2**32, size=8)
    second = make_rng(7, "reduce").integers(0, 2**32, size=8)
    assert not np.array_equal(first, second)


def test_rng_child_is_deterministic() -> None:
    first = child_rng(make_rng(3), "stage/0").random(4)
    second = child_rng(make_rng(3), "stage/0").random(4)
    assert np.array_equal(first, second)


def test_rng_stable_hash() -> None:
    assert stable_hash("stage") == stable_hash("stage")
    assert stable_hash("stage") != stable_hash("stages")
    assert 0 <= stable_hash("") < 2**64


def test_rng_hash_signs_are_balanced_signs() -> None:
    key = draw_key(make_rng(11))
    coords = np.arange(20000)
    signs = hash_signs(key, coords)
    assert set(np.unique(signs).tolist()) == {-1, 1}
    assert abs(signs.mean()) < 5 / np.sqrt(coords.shape[0])
    assert np.array_equal(signs, hash_signs(key, coords))
    assert not np.array_equal(signs, hash_signs(key + 1, coords))


def test_rng_hash_signs_depend_only_on_key_and_coordinate() -> None:
    key = draw_key(make_rng(5))
    wide = hash_signs(key, np.arange(200))
    assert hash_signs(key, np.array([7, 150])).tolist() == [wide[7], wide[150]]
    assert int(hash_signs(key, 42)) == wide[42]
    grid = hash_signs(key, np.array([[3, 3], [199, 0]]))
    assert grid.shape == (2, 2)
    assert grid.tolist() == [[wide[3], wide[3]], [wide[199], wide[0]]]
    other = hash_signs(draw_key(make_rng(6)), np.arange(200))
    assert np.mean(other == wide) < 0.75
