"""Sampling, dataset generation, splitting, persistence, and the hull."""
import numpy as np
import pytest

from microcell import (convex_hull, generate_dataset, latin_hypercube_t,
                       sample_alphas, split)
from microcell.dataset import (property_array, read_csv, read_scaling,
                               sample_candidates, write_csv, write_scaling)
from microcell.errors import ValidationError
from microcell.homogenization import homogenize
from microcell.hull import PropertyHull, clip_polygon, project_to_polygon


def gift_wrap(points):
    """Brute-force O(n^2) hull oracle; returns vertex tuples CCW."""
    pts = [tuple(p) for p in np.asarray(points, dtype=float)]
    start = min(pts)
    hull = [start]
    while True:
        cur = hull[-1]
        cand = None
        for p in pts:
            if p == cur:
                continue
            if cand is None:
                cand = p
                continue
            cross = ((cand[0] - cur[0]) * (p[1] - cur[1])
                     - (cand[1] - cur[1]) * (p[0] - cur[0]))
            far = (np.hypot(p[0] - cur[0], p[1] - cur[1])
                   > np.hypot(cand[0] - cur[0], cand[1] - cur[1]))
            if cross > 0 or (cross == 0 and far):
                cand = p
        if cand == start:
            return hull
        hull.append(cand)


class TestSimplexSampling:
    def test_deterministic(self):
        np.testing.assert_array_equal(sample_alphas(50, seed=3), sample_alphas(50, seed=3))

    def test_sum_and_bounds(self):
        a = sample_alphas(200, seed=4)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(a >= 0)

    def test_uniform_mean(self):
        a = sample_alphas(100_000, seed=5)
        np.testing.assert_allclose(a.mean(axis=0), [1 / 3] * 3, atol=0.01)


class TestLatinHypercube:
    def test_single_sample_in_range(self):
        t = latin_hypercube_t(1, seed=6)
        assert t.shape == (1, 3)
        assert np.all((t >= -0.4) & (t <= 0.4))

    def test_strata_distinct(self):
        t = latin_hypercube_t(10, seed=7)
        for dim in range(3):
            strata = np.floor((t[:, dim] + 0.4) / 0.8 * 10).astype(int)
            assert sorted(strata) == list(range(10))

    def test_marginal_histogram_exact(self):
        t = latin_hypercube_t(1000, seed=8)
        for dim in range(3):
            counts, _ = np.histogram(t[:, dim], bins=10, range=(-0.4, 0.4))
            np.testing.assert_array_equal(counts, 100)

    def test_bad_range(self):
        with pytest.raises(ValidationError):
            latin_hypercube_t(5, lo=0.4, hi=-0.4, seed=0)


class TestSplit:
    def test_large_split_sizes(self):
        train, test = split(list(range(924)), ratio=0.8, seed=1)
        assert (len(train), len(test)) == (739, 185)

    def test_small(self):
        train, test = split(list(range(10)), ratio=0.8, seed=2)
        assert (len(train), len(test)) == (8, 2)

    def test_partition(self):
        items = list(range(37))
        train, test = split(items, seed=3)
        assert sorted(train + test) == items
        assert not set(train) & set(test)

    def test_empty(self):
        with pytest.raises(ValidationError):
            split([], seed=0)


class TestHull:
    def test_unit_square(self):
        hull = convex_hull([(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5)])
        assert hull.A.shape == (4, 3)
        assert hull.contains(0.5, 0.5)
        assert not hull.contains(2.0, 2.0)

    def test_feasibility_of_inputs(self):
        rng = np.random.default_rng(9)
        pts = rng.random((50, 2)) * [100, 0.3]
        hull = convex_hull(pts)
        assert np.all(hull.evaluate(pts[:, 0], pts[:, 1]) <= 1e-9)

    def test_matches_gift_wrap_oracle(self):
        rng = np.random.default_rng(10)
        pts = rng.random((100, 2))
        hull = convex_hull(pts)
        oracle = {tuple(np.round(v, 10)) for v in gift_wrap(pts)}
        mine = {tuple(np.round(v, 10)) for v in hull.vertices}
        assert mine == oracle

    def test_degenerate_collinear(self):
        with pytest.raises(ValidationError):
            convex_hull([(0, 0), (1, 1), (2, 2)])

    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        hull = convex_hull(rng.random((30, 2)))
        path = tmp_path / "hull.json"
        hull.save(path)
        loaded = PropertyHull.load(path)
        np.testing.assert_array_equal(loaded.A, hull.A)
        assert {tuple(np.round(v, 9)) for v in loaded.vertices} == \
               {tuple(np.round(v, 9)) for v in hull.vertices}

    def test_clip_polygon(self):
        square = np.array([(0, 0), (2, 0), (2, 2), (0, 2)], dtype=float)
        clipped = clip_polygon(square, np.array([[1.0, 0.0, -1.0]]))  # x <= 1
        assert clipped[:, 0].max() == pytest.approx(1.0)
        assert clipped[:, 0].min() == pytest.approx(0.0)

    def test_projection_geometry(self):
        square = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)
        inside = project_to_polygon(np.array([0.3, 0.4]), square)
        np.testing.assert_allclose(inside, [0.3, 0.4])
        foot = project_to_polygon(np.array([1.5, 0.5]), square)
        np.testing.assert_allclose(foot, [1.0, 0.5])
        corner = project_to_polygon(np.array([2.0, 2.0]), square)
        np.testing.assert_allclose(corner, [1.0, 1.0])


class TestGenerateDataset:
    def test_smoke_pipeline(self):
        records = generate_dataset(8, seed=13, resolution=8)
        assert len(records) == 8
        for r in records:
            assert r.E_H > 0 and -1 < r.nu_H < 0.5 and 0 < r.vf < 1
        assert [r.id for r in records] == list(range(8))

    def test_deterministic(self):
        a = generate_dataset(4, seed=14, resolution=8)
        b = generate_dataset(4, seed=14, resolution=8)
        assert [(r.params, r.E_H, r.nu_H, r.vf) for r in a] == \
               [(r.params, r.E_H, r.nu_H, r.vf) for r in b]

    def test_thread_count_invariant(self):
        a = generate_dataset(4, seed=15, resolution=8, threads=1)
        b = generate_dataset(4, seed=15, resolution=8, threads=2)
        assert [(r.params, r.E_H) for r in a] == [(r.params, r.E_H) for r in b]

    def test_single_record(self):
        records = generate_dataset(1, seed=16, resolution=8)
        assert len(records) == 1

    def test_records_rehomogenize(self):
        records = generate_dataset(5, seed=17, resolution=8)
        rng = np.random.default_rng(0)
        for r in (records[i] for i in rng.integers(0, len(records), 3)):
            props = homogenize(r.params, resolution=8)
            assert props.E_H == pytest.approx(r.E_H, rel=1e-9)
            assert props.nu_H == pytest.approx(r.nu_H, rel=1e-9)


class TestPersistence:
    def test_csv_roundtrip_bytes(self, tmp_path):
        records = generate_dataset(5, seed=18, resolution=8)
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_csv(records, p1)
        write_csv(read_csv(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_scaling_file(self, tmp_path):
        records = generate_dataset(6, seed=19, resolution=8)
        train, _ = split(records, seed=19)
        path = tmp_path / "scaling.json"
        write_scaling(path, records, train, seed=19, resolution=8)
        payload = read_scaling(path)
        props = property_array(train)
        assert payload["E_min"] == props[:, 0].min()
        assert payload["seed"] == 19
        assert payload["n_train"] == len(train)

    def test_candidates_are_valid_params(self):
        for p in sample_candidates(20, seed=20):
            assert abs(sum(p.alphas) - 1) < 1e-9
            assert np.all(np.abs(p.ts) <= 0.4)
