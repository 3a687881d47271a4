import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segal.augment import (StrongTransform, WeakTransform, class_mask, classmix,
                           select_mix_classes, strong_augment, weak_augment)
from segal.errors import InvalidArgumentError


def _img(h=12, w=12, seed=0):
    return np.random.default_rng(seed).random((h, w, 3)).astype(np.float32)


class TestWeakAugment:
    def test_flip_twice_is_identity(self):
        img = _img()
        tf = WeakTransform(0, 0, 12, 12, hflip=True)
        assert np.array_equal(tf.apply(tf.apply(img)), img)

    def test_label_and_image_get_same_transform(self, rng):
        img = _img()
        label = (img[..., 0] * 10).astype(np.int32)
        out_img, out_lbl, _ = weak_augment(img, label, rng, crop_h=8, crop_w=8)
        assert np.array_equal((out_img[..., 0] * 10).astype(np.int32), out_lbl)

    def test_seeded_rng_reproducible(self):
        img = _img()
        a = weak_augment(img, None, np.random.default_rng(5), crop_h=6, crop_w=6)
        b = weak_augment(img, None, np.random.default_rng(5), crop_h=6, crop_w=6)
        assert np.array_equal(a[0], b[0]) and a[2] == b[2]

    def test_crop_larger_than_image_errors(self, rng):
        with pytest.raises(InvalidArgumentError):
            weak_augment(_img(), None, rng, crop_h=20, crop_w=4)


class TestStrongAugment:
    def test_zero_jitter_scale_one_is_identity(self):
        img = _img()
        out, tf = strong_augment(img, np.random.default_rng(1), scale_min=1.0,
                                 scale_max=1.0, jitter=0.0, flip_prob=0.0)
        assert np.allclose(out, img, atol=1e-6)
        assert tf.scale == 1.0 and not tf.hflip

    def test_identity_transform_transport(self):
        tf = StrongTransform(scale=1.0, hflip=False, in_h=6, in_w=6)
        arr = np.arange(36).reshape(6, 6)
        assert np.array_equal(tf.transport(arr, fill=-1), arr)
        assert tf.valid_mask().all()

    def test_output_in_unit_range(self):
        img = _img()
        for seed in range(5):
            out, _ = strong_augment(img, np.random.default_rng(seed), jitter=0.4)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_downscale_pads_invalid(self):
        tf = StrongTransform(scale=0.5, hflip=False, in_h=8, in_w=8)
        valid = tf.valid_mask()
        assert valid.sum() == 16  # 4x4 scaled copy centered
        lbl = tf.transport(np.ones((8, 8), dtype=np.int64), fill=255)
        assert (lbl[~valid] == 255).all() and (lbl[valid] == 1).all()

    def test_round_trip_identity_on_overlap(self):
        # flip-only and integer upscale round trips are exact
        arr = np.arange(64).reshape(8, 8)
        for scale in (1.0, 2.0):
            tf = StrongTransform(scale=scale, hflip=True, in_h=8, in_w=8)
            back = tf.inverse_transport(tf.transport(arr, fill=-1), fill=-1)
            overlap = back != -1
            assert overlap.any()
            assert np.array_equal(back[overlap], arr[overlap])


class TestSelectMixClasses:
    def test_tail_first_fill(self, rng):
        picked = select_mix_classes({0, 1, 2, 3}, head={0, 1}, tail={2, 3},
                                    balanced=True, rng=rng)
        assert picked == {2, 3}

    def test_singleton_present(self, rng):
        for balanced in (False, True):
            assert select_mix_classes({5}, {5}, set(), balanced, rng) == {5}

    def test_half_rounded_up(self, rng):
        picked = select_mix_classes({0, 1, 2}, {0, 1, 2}, set(), False, rng)
        assert len(picked) == 2

    def test_empty_present_errors(self, rng):
        with pytest.raises(InvalidArgumentError):
            select_mix_classes(set(), {0}, {1}, False, rng)

    def test_uniform_frequency_within_3_sigma(self):
        # k=2 of 4 classes: each class has inclusion probability 1/2
        rng = np.random.default_rng(123)
        n = 10_000
        counts = np.zeros(4)
        for _ in range(n):
            for c in select_mix_classes({0, 1, 2, 3}, set(), set(), False, rng):
                counts[c] += 1
        p = 0.5
        sigma = math.sqrt(n * p * (1 - p))
        assert np.abs(counts - n * p).max() < 3 * sigma

    def test_balanced_tail_dominance(self):
        # balanced picks at least as many tail classes in expectation
        rng = np.random.default_rng(7)
        present, head, tail = {0, 1, 2, 3, 4}, {0, 1, 2}, {3, 4}
        n = 10_000
        tail_bal = sum(len(select_mix_classes(present, head, tail, True, rng) & tail)
                       for _ in range(n))
        tail_unb = sum(len(select_mix_classes(present, head, tail, False, rng) & tail)
                       for _ in range(n))
        assert tail_bal >= tail_unb


class TestClassMix:
    def _trio(self, lbl):
        img = np.stack([lbl, lbl, lbl], axis=-1).astype(np.float32)
        conf = (lbl + 1).astype(np.float32) / 10
        return img, lbl, conf

    def test_all_present_classes_gives_source(self):
        src_lbl = np.array([[1, 0], [0, 1]])
        tgt_lbl = np.array([[2, 2], [2, 2]])
        s = self._trio(src_lbl)
        t = self._trio(tgt_lbl)
        img, lbl, conf = classmix(*s, *t, classes={0, 1})
        assert np.array_equal(lbl, src_lbl)
        assert np.array_equal(img, s[0]) and np.array_equal(conf, s[2])

    def test_empty_classes_gives_target(self):
        s = self._trio(np.array([[1, 0], [0, 1]]))
        t = self._trio(np.array([[2, 2], [2, 2]]))
        img, lbl, conf = classmix(*s, *t, classes=set())
        assert np.array_equal(lbl, t[1]) and np.array_equal(img, t[0])

    def test_two_by_two_exhaustive(self):
        src_lbl = np.array([[1, 0], [0, 1]])
        tgt_lbl = np.array([[7, 8], [9, 6]])
        s = self._trio(src_lbl)
        t = self._trio(tgt_lbl)
        _, lbl, _ = classmix(*s, *t, classes={1})
        # oracle: exhaustive pixel check
        expected = np.array([[1, 8], [9, 1]])
        assert np.array_equal(lbl, expected)

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_pixel_identity_across_channels(self, seed):
        gen = np.random.default_rng(seed)
        src_lbl = gen.integers(0, 4, (5, 5))
        tgt_lbl = gen.integers(0, 4, (5, 5))
        s_img, _, s_conf = self._trio(src_lbl)
        t_img, _, t_conf = self._trio(tgt_lbl)
        classes = set(int(c) for c in gen.choice(4, size=2, replace=False))
        img, lbl, conf = classmix(s_img, src_lbl, s_conf, t_img, tgt_lbl, t_conf, classes)
        mask = class_mask(src_lbl, classes)
        for arr, s_arr, t_arr in ((lbl, src_lbl, tgt_lbl), (conf, s_conf, t_conf)):
            assert np.array_equal(arr[mask], s_arr[mask])
            assert np.array_equal(arr[~mask], t_arr[~mask])
        assert np.array_equal(img[mask], s_img[mask])
        assert np.array_equal(img[~mask], t_img[~mask])

    def test_shape_mismatch_errors(self):
        s = self._trio(np.zeros((2, 2), dtype=int))
        t = self._trio(np.zeros((3, 3), dtype=int))
        with pytest.raises(InvalidArgumentError):
            classmix(*s, *t, classes={0})
