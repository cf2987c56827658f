"""Deterministic splittable random streams."""

import numpy as np
import pytest

from kinefisher.rng import RandomTree, as_generator


class TestRandomTree:
    def test_same_path_same_stream(self):
        a = RandomTree(0).child("fit").child(3).generator().standard_normal(8)
        b = RandomTree(0).child("fit").child(3).generator().standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_sibling_streams_differ(self):
        root = RandomTree(0)
        a = root.child(0).generator().standard_normal(8)
        b = root.child(1).generator().standard_normal(8)
        assert not np.array_equal(a, b)

    def test_label_types_are_distinct(self):
        root = RandomTree(0)
        a = root.child(1).generator().standard_normal(4)
        b = root.child("1").generator().standard_normal(4)
        assert not np.array_equal(a, b)

    def test_seed_changes_stream(self):
        a = RandomTree(0).child("x").generator().standard_normal(4)
        b = RandomTree(1).child("x").generator().standard_normal(4)
        assert not np.array_equal(a, b)

    def test_child_order_does_not_matter(self):
        root = RandomTree(9)
        _ = root.child("other")
        a = root.child("target").generator().standard_normal(4)
        fresh = RandomTree(9).child("target").generator().standard_normal(4)
        np.testing.assert_array_equal(a, fresh)

    def test_generator_is_fresh_each_call(self):
        node = RandomTree(2).child("n")
        a = node.generator().standard_normal(4)
        b = node.generator().standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_deep_paths(self):
        node = RandomTree(5)
        for label in ("a", 2, "b", 17, "leaf"):
            node = node.child(label)
        x = node.generator().uniform()
        assert 0.0 <= x < 1.0

    def test_rejects_bad_seeds_and_labels(self):
        with pytest.raises(ValueError):
            RandomTree(-1)
        with pytest.raises(ValueError):
            RandomTree(0).child(-2)
        with pytest.raises(TypeError):
            RandomTree(0).child(1.5)


class TestAsGenerator:
    def test_accepts_random_tree(self):
        g = as_generator(RandomTree(1))
        assert isinstance(g, np.random.Generator)

    def test_passes_generator_through(self):
        g = np.random.default_rng(0)
        assert as_generator(g) is g

    def test_rejects_other_types(self):
        with pytest.raises(TypeError):
            as_generator(42)
