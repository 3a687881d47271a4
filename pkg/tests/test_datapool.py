import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segal.datapool import (ClassDistribution, PoolState, Status,
                            build_region_grid, class_pixel_distribution,
                            init_split, init_split_ids, _rle_decode, _rle_encode)
from segal.errors import (DuplicateAcquisitionError, EmptyPoolError,
                          InvalidArgumentError)

from conftest import make_toy_dataset


class TestRegionGrid:
    def test_camvid_geometry(self):
        grid = build_region_grid(360, 480, 30, 30)
        assert (grid.rows, grid.cols, len(grid)) == (12, 16, 192)

    def test_cityscapes_geometry(self):
        grid = build_region_grid(688, 688, 43, 43)
        assert (grid.rows, grid.cols, len(grid)) == (16, 16, 256)

    def test_single_region_identity_tiling(self):
        grid = build_region_grid(5, 5, 5, 5)
        assert len(grid) == 1
        region = grid.region((0, 0))
        assert (region.y0, region.x0, region.h, region.w) == (0, 0, 5, 5)

    def test_ragged_last_row_col(self):
        grid = build_region_grid(10, 10, 4, 4)
        assert (grid.rows, grid.cols) == (3, 3)
        assert grid.region((2, 2)).h == 2 and grid.region((2, 2)).w == 2

    @given(h=st.integers(1, 40), w=st.integers(1, 40),
           rh=st.integers(1, 17), rw=st.integers(1, 17))
    @settings(max_examples=60, deadline=None)
    def test_regions_tile_exactly(self, h, w, rh, rw):
        grid = build_region_grid(h, w, rh, rw)
        cover = np.zeros((h, w), dtype=int)
        for region in grid:
            cover[region.slices] += 1
        assert (cover == 1).all()

    def test_invalid_dimensions(self):
        with pytest.raises(InvalidArgumentError):
            build_region_grid(0, 10, 3, 3)
        with pytest.raises(InvalidArgumentError):
            build_region_grid(10, 10, 3, -1)


class TestInitSplit:
    def test_camvid_count(self):
        pool = init_split_ids([f"i{n}" for n in range(367)], 360, 480, 0.1, 0, 30, 30)
        labeled = pool.ids_with_status(Status.LABELED)
        assert len(labeled) == 37
        assert len(pool.ids_with_status(Status.UNLABELED)) == 330

    def test_cityscapes_count_half_up(self):
        pool = init_split_ids([f"i{n}" for n in range(2675)], 8, 8, 0.1, 0, 4, 4)
        assert len(pool.ids_with_status(Status.LABELED)) == 268

    def test_same_seed_same_split(self):
        ids = [f"i{n}" for n in range(50)]
        a = init_split_ids(ids, 8, 8, 0.2, 7, 4, 4)
        b = init_split_ids(ids, 8, 8, 0.2, 7, 4, 4)
        assert a.ids_with_status(Status.LABELED) == b.ids_with_status(Status.LABELED)

    def test_fraction_bounds(self):
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(InvalidArgumentError):
                init_split_ids(["a", "b"], 4, 4, bad, 0, 2, 2)

    def test_floor_of_one_image(self):
        pool = init_split_ids([f"i{n}" for n in range(30)], 4, 4, 0.01, 0, 2, 2)
        assert len(pool.ids_with_status(Status.LABELED)) == 1

    def test_from_dataset(self, toy_dataset):
        pool = init_split(toy_dataset, 0.34, 3, 8, 8)
        assert len(pool.ids_with_status(Status.LABELED)) == 2
        assert pool.grid.height == toy_dataset.height


class TestReveal:
    def _pool(self, n=4, size=60, region=30):
        return init_split_ids([f"i{k}" for k in range(n)], 360, 480, 1 / n, 5, 30, 30)

    def test_single_region_reveals_900_pixels(self):
        pool = self._pool()
        target = pool.ids_with_status(Status.UNLABELED)[0]
        pool.reveal_regions([(target, (0, 0))], cycle=0)
        assert pool.status(target) is Status.PARTIAL
        assert pool.known_pixel_count(target) == 900

    def test_full_cover_becomes_labeled(self):
        pool = self._pool()
        target = pool.ids_with_status(Status.UNLABELED)[0]
        pool.reveal_regions([(target, rid) for rid in pool.grid.region_ids()], cycle=0)
        assert pool.status(target) is Status.LABELED

    def test_duplicate_reveal_errors(self):
        pool = self._pool()
        target = pool.ids_with_status(Status.UNLABELED)[0]
        pool.reveal_regions([(target, (1, 1))], cycle=0)
        with pytest.raises(DuplicateAcquisitionError):
            pool.reveal_regions([(target, (1, 1))], cycle=1)
        with pytest.raises(DuplicateAcquisitionError):
            pool.reveal_regions([(target, (2, 2)), (target, (2, 2))], cycle=1)

    def test_reveal_on_labeled_image_errors(self):
        pool = self._pool()
        labeled = pool.ids_with_status(Status.LABELED)[0]
        with pytest.raises(DuplicateAcquisitionError):
            pool.reveal_regions([(labeled, (0, 0))], cycle=0)

    def test_monotone_known_mask(self):
        pool = self._pool()
        target = pool.ids_with_status(Status.UNLABELED)[0]
        before = pool.known_mask(target)
        pool.reveal_regions([(target, (0, 1))], cycle=0)
        after = pool.known_mask(target)
        assert (after | before).sum() == after.sum()
        assert (after & ~before).sum() == 900

    def test_fraction_conservation(self):
        pool = self._pool()
        target = pool.ids_with_status(Status.UNLABELED)[0]
        f0 = pool.labeled_fraction()
        pool.reveal_regions([(target, (3, 3)), (target, (4, 4))], cycle=0)
        total = len(pool.image_ids) * 360 * 480
        assert pool.labeled_fraction() == pytest.approx(f0 + 1800 / total, abs=1e-12)


class TestLabeledFraction:
    def test_camvid_initial(self):
        pool = init_split_ids([f"i{n}" for n in range(367)], 360, 480, 0.1, 0, 30, 30)
        assert pool.labeled_fraction() == pytest.approx(37 / 367, abs=5e-5)

    def test_empty_and_full(self):
        grid_ids = ["a", "b"]
        pool = PoolState(grid_ids, build_region_grid(4, 4, 2, 2), seed=0)
        assert pool.labeled_fraction() == 0.0
        for image_id in grid_ids:
            pool.mark_fully_labeled(image_id)
        assert pool.labeled_fraction() == 1.0


class TestClassDistribution:
    def test_head_tail_from_shares(self):
        counts = np.array([500, 300, 150, 50])
        dist = ClassDistribution.from_counts(counts)
        assert dist.head == {0, 1}
        assert dist.tail == {2, 3}

    def test_boundary_share_is_head(self):
        dist = ClassDistribution.from_counts(np.array([50, 50]))
        assert dist.head == {0, 1}
        assert dist.tail == set()

    def test_partition_property(self, rng):
        for _ in range(25):
            k = int(rng.integers(2, 9))
            counts = rng.integers(0, 100, size=k)
            if counts.sum() == 0:
                counts[0] = 1
            dist = ClassDistribution.from_counts(counts)
            assert dist.head | dist.tail == set(range(k))
            assert dist.head & dist.tail == set()

    def test_empty_pool_error(self):
        with pytest.raises(EmptyPoolError):
            ClassDistribution.from_counts(np.zeros(3, dtype=int))

    def test_counts_ignore_excluded_and_grow_after_reveal(self):
        ds = make_toy_dataset(n_train=4, n_val=0, n_test=0, size=16, ignore_band=True)
        pool = init_split(ds, 0.25, 0, 8, 8)
        dist0 = class_pixel_distribution(pool, ds)
        assert dist0.pixel_count.sum() == 16 * 16 - 2 * 16  # ignore band excluded
        target = pool.ids_with_status(Status.UNLABELED)[0]
        pool.reveal_regions([(target, (1, 0))], cycle=0)
        dist1 = class_pixel_distribution(pool, ds)
        assert dist1.pixel_count.sum() > dist0.pixel_count.sum()

    def test_ignore_counts_toward_fraction_not_distribution(self):
        ds = make_toy_dataset(n_train=2, n_val=0, n_test=0, size=16, ignore_band=True)
        pool = init_split(ds, 0.5, 0, 8, 8)
        assert pool.labeled_fraction() == pytest.approx(0.5)
        dist = class_pixel_distribution(pool, ds)
        assert dist.pixel_count.sum() == 16 * 16 - 2 * 16


class TestPersistence:
    @given(st.lists(st.booleans(), min_size=1, max_size=64))
    @settings(max_examples=50, deadline=None)
    def test_rle_round_trip(self, bits):
        w = len(bits)
        mask = np.array(bits, dtype=bool).reshape(1, w)
        assert np.array_equal(_rle_decode(_rle_encode(mask), 1, w), mask)

    def test_pool_round_trip_bit_exact(self):
        pool = init_split_ids([f"i{n}" for n in range(9)], 12, 12, 0.25, 3, 5, 5)
        target = pool.ids_with_status(Status.UNLABELED)[0]
        pool.reveal_regions([(target, (0, 0)), (target, (2, 2))], cycle=0)
        pool.reveal_regions([(target, (1, 2))], cycle=1)
        loaded = PoolState.from_json(pool.to_json())
        assert loaded.seed == pool.seed
        assert loaded.image_ids == pool.image_ids
        for image_id in pool.image_ids:
            assert loaded.status(image_id) == pool.status(image_id)
            assert np.array_equal(loaded.known_mask(image_id), pool.known_mask(image_id))
        assert [r.as_tuple() for r in loaded.acquisition_log] == \
               [r.as_tuple() for r in pool.acquisition_log]

    def test_corrupt_rle_rejected(self):
        import json
        pool = init_split_ids(["a", "b", "c"], 6, 6, 0.34, 0, 3, 3)
        target = pool.ids_with_status(Status.UNLABELED)[0]
        pool.reveal_regions([(target, (0, 0))], cycle=0)
        doc = json.loads(pool.to_json())
        for entry in doc["images"]:
            if "known_rle" in entry:
                entry["known_rle"][0] += 1
        with pytest.raises(InvalidArgumentError):
            PoolState.from_json(json.dumps(doc))
