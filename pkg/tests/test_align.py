import itertools

import numpy as np
import pytest

from spacealign import align, dataio
from spacealign import numkernel as nk
from spacealign.errors import CorrespondenceError, InvalidInput, ShapeError, UnknownSpaceError

from conftest import random_orthogonal


def make_spaces(rng, m=3, n=40, d=6, noise=0.0, ids=None):
    """Matched spaces that are exact mutual rotations plus optional noise."""
    z = rng.standard_normal((n, d))
    sample_ids = [f"train-{i:05d}" for i in range(n)]
    spaces = []
    for j in range(m):
        r = random_orthogonal(d, rng)
        x = z @ r + noise * rng.standard_normal((n, d))
        sid = ids[j] if ids else f"space{j:02d}"
        spaces.append(dataio.EmbeddingMatrix(sid, "train", x, sample_ids))
    return spaces


class TestFitPairwise:
    def test_identical_spaces_identity_maps(self, rng):
        z = rng.standard_normal((20, 4))
        ids = [f"train-{i}" for i in range(20)]
        a = dataio.EmbeddingMatrix("a", "train", z, ids)
        b = dataio.EmbeddingMatrix("b", "train", z.copy(), ids)
        maps = align.fit_pairwise([a, b])
        np.testing.assert_allclose(maps[("a", "b")], np.eye(4), atol=1e-10)
        np.testing.assert_allclose(maps[("b", "a")], np.eye(4), atol=1e-10)

    def test_rotation_oracle(self, rng):
        z = rng.standard_normal((30, 5))
        r = random_orthogonal(5, rng)
        ids = [f"train-{i}" for i in range(30)]
        x1 = dataio.EmbeddingMatrix("s1", "train", z, ids)
        x2 = dataio.EmbeddingMatrix("s2", "train", z @ r, ids)
        maps = align.fit_pairwise([x1, x2])
        # map from s2 back into s1 undoes the rotation
        assert np.linalg.norm(maps[("s2", "s1")] - r.T) < 1e-8
        assert np.linalg.norm(maps[("s1", "s2")] - r) < 1e-8

    def test_map_count(self, rng):
        maps = align.fit_pairwise(make_spaces(rng, m=3))
        assert len(maps) == 6

    def test_mismatched_ids(self, rng):
        a = dataio.EmbeddingMatrix("a", "train", rng.standard_normal((4, 2)), ["1", "2", "3", "4"])
        b = dataio.EmbeddingMatrix("b", "train", rng.standard_normal((4, 2)), ["1", "2", "3", "x"])
        with pytest.raises(CorrespondenceError):
            align.fit_pairwise([a, b])


class TestFitGpa:
    def test_identical_copies(self, rng):
        z = rng.standard_normal((15, 4))
        ids = [f"t-{i}" for i in range(15)]
        spaces = [dataio.EmbeddingMatrix(f"s{j}", "train", z.copy(), ids) for j in range(4)]
        uni = align.fit_gpa(spaces)
        assert uni.fit_log[0] < 1e-16
        for j in range(1, 4):
            assert np.linalg.norm(uni.maps["s0"] - uni.maps[f"s{j}"]) < 1e-10

    def test_m2_matches_pairwise(self, rng):
        spaces = make_spaces(rng, m=2, noise=0.05)
        uni = align.fit_gpa(spaces)
        direct = align.fit_pairwise(spaces)
        ids = [s.space_id for s in spaces]
        induced = align.induced_pairwise(uni, ids[0], ids[1])
        assert np.linalg.norm(induced - direct[(ids[0], ids[1])]) < 1e-6

    def test_exact_rotations_zero_dispersion(self, rng):
        spaces = make_spaces(rng, m=4, n=60, d=8, noise=0.0)
        uni = align.fit_gpa(spaces)
        total = sum(np.linalg.norm(s.data) ** 2 for s in spaces)
        assert uni.fit_log[-1] < 1e-8 * total

    def test_dispersion_nonincreasing(self, rng):
        spaces = make_spaces(rng, m=5, n=50, d=6, noise=0.4)
        uni = align.fit_gpa(spaces)
        log = np.array(uni.fit_log)
        assert np.all(np.diff(log) <= 1e-9 * np.maximum(log[:-1], 1.0))

    def test_consensus_is_mean_of_mapped(self, rng):
        spaces = make_spaces(rng, m=3, noise=0.2)
        uni = align.fit_gpa(spaces)
        mean = np.mean([s.data @ uni.maps[s.space_id] for s in spaces], axis=0)
        assert np.linalg.norm(mean - uni.consensus) < 1e-10

    def test_maps_orthogonal(self, rng):
        spaces = make_spaces(rng, m=3, noise=0.3)
        uni = align.fit_gpa(spaces)
        for omega in uni.maps.values():
            assert np.linalg.norm(omega.T @ omega - np.eye(omega.shape[0])) < 1e-10

    def test_init_modes_agree_on_clean_data(self, rng):
        spaces = make_spaces(rng, m=3, noise=0.0)
        total = sum(np.linalg.norm(s.data) ** 2 for s in spaces)
        for mode in ("first-space", "mean-of-raw"):
            uni = align.fit_gpa(spaces, align.GpaConfig(init_mode=mode))
            assert uni.fit_log[-1] < 1e-8 * total


class TestGpaAdd:
    def test_duplicate_data_recovers_map(self, rng):
        spaces = make_spaces(rng, m=3, noise=0.1)
        uni = align.fit_gpa(spaces)
        clone = dataio.EmbeddingMatrix("newcomer", "train", spaces[1].data.copy(), spaces[1].sample_ids)
        extended = align.gpa_add(uni, clone)
        assert np.linalg.norm(extended.maps["newcomer"] - uni.maps[spaces[1].space_id]) < 1e-8

    def test_base_maps_untouched(self, rng):
        spaces = make_spaces(rng, m=3, noise=0.1)
        uni = align.fit_gpa(spaces)
        before = {sid: uni.maps[sid].copy() for sid in uni.space_ids}
        extra = dataio.EmbeddingMatrix("extra", "train", rng.standard_normal(spaces[0].data.shape), spaces[0].sample_ids)
        extended = align.gpa_add(uni, extra)
        for sid in before:
            assert np.array_equal(extended.maps[sid], before[sid])
            assert np.array_equal(uni.maps[sid], before[sid])
        assert np.array_equal(extended.consensus, uni.consensus)

    def test_translation_composes_through_consensus(self, rng):
        spaces = make_spaces(rng, m=3, noise=0.05)
        uni = align.fit_gpa(spaces)
        extra = dataio.EmbeddingMatrix("extra", "train", rng.standard_normal(spaces[0].data.shape), spaces[0].sample_ids)
        ext = align.gpa_add(uni, extra)
        x = rng.standard_normal((7, spaces[0].dim))
        via_translate = align.translate(ext, x, "extra", spaces[0].space_id)
        direct = x @ ext.maps["extra"] @ ext.maps[spaces[0].space_id].T
        np.testing.assert_allclose(via_translate, direct, atol=1e-12)

    def test_duplicate_id_rejected(self, rng):
        spaces = make_spaces(rng, m=2)
        uni = align.fit_gpa(spaces)
        with pytest.raises(InvalidInput):
            align.gpa_add(uni, spaces[0])

    def test_dim_mismatch(self, rng):
        spaces = make_spaces(rng, m=2, d=4)
        uni = align.fit_gpa(spaces)
        bad = dataio.EmbeddingMatrix("bad", "train", rng.standard_normal((40, 5)), spaces[0].sample_ids)
        with pytest.raises(ShapeError):
            align.gpa_add(uni, bad)


class TestTranslate:
    @pytest.fixture
    def universe(self, rng):
        return align.fit_gpa(make_spaces(rng, m=4, n=30, d=5, noise=0.1))

    def test_identity_when_same_space(self, universe, rng):
        x = rng.standard_normal((6, 5))
        np.testing.assert_allclose(align.translate(universe, x, "space00", "space00"), x, atol=1e-12)

    def test_round_trip(self, universe, rng):
        x = rng.standard_normal((6, 5))
        there = align.translate(universe, x, "space00", "space01")
        back = align.translate(universe, there, "space01", "space00")
        assert np.linalg.norm(back - x) < 1e-10

    def test_cycle_consistency_all_triples(self, universe, rng):
        x = rng.standard_normal((6, 5))
        for a, b, c in itertools.permutations(universe.space_ids[:4], 3):
            direct = align.translate(universe, x, a, c)
            hop = align.translate(universe, align.translate(universe, x, a, b), b, c)
            assert np.linalg.norm(direct - hop) < 1e-10

    def test_unknown_space(self, universe, rng):
        with pytest.raises(UnknownSpaceError):
            align.translate(universe, rng.standard_normal((2, 5)), "space00", "nowhere")

    def test_to_from_universe_inverse(self, universe, rng):
        x = rng.standard_normal((8, 5))
        u = align.to_universe(universe, x, "space02")
        back = align.from_universe(universe, u, "space02")
        assert np.linalg.norm(back - x) < 1e-10

    def test_isometry_row_norms(self, universe, rng):
        x = rng.standard_normal((8, 5))
        u = align.to_universe(universe, x, "space01")
        np.testing.assert_allclose(np.linalg.norm(u, axis=1), np.linalg.norm(x, axis=1), atol=1e-10)

    def test_isometry_pairwise_distances(self, universe, rng):
        x = rng.standard_normal((10, 5))
        u = align.to_universe(universe, x, "space03")
        din = np.linalg.norm(x[:, None] - x[None, :], axis=2)
        dout = np.linalg.norm(u[:, None] - u[None, :], axis=2)
        np.testing.assert_allclose(dout, din, atol=1e-10)

    def test_consensus_is_mean_of_universe_views(self, rng):
        spaces = make_spaces(rng, m=3, noise=0.2)
        uni = align.fit_gpa(spaces)
        views = [align.to_universe(uni, s.data, s.space_id) for s in spaces]
        assert np.linalg.norm(np.mean(views, axis=0) - uni.consensus) < 1e-8


class TestUniverseProperties:
    def test_gauge_freedom(self, rng):
        spaces = make_spaces(rng, m=3, n=25, d=4, noise=0.2)
        uni = align.fit_gpa(spaces)
        q = random_orthogonal(4, rng)
        conjugated = align.Universe(
            space_ids=uni.space_ids,
            maps={sid: uni.maps[sid] @ q for sid in uni.space_ids},
            consensus=uni.consensus @ q,
            fit_log=uni.fit_log,
        )
        for a in uni.space_ids:
            for b in uni.space_ids:
                if a == b:
                    continue
                before = align.induced_pairwise(uni, a, b)
                after = align.induced_pairwise(conjugated, a, b)
                assert np.linalg.norm(before - after) < 1e-10

    def test_save_load_round_trip(self, rng, tmp_path):
        uni = align.fit_gpa(make_spaces(rng, m=3, noise=0.1))
        uni.save(tmp_path / "universe")
        back = align.Universe.load(tmp_path / "universe")
        assert back.space_ids == uni.space_ids
        assert np.array_equal(back.consensus, uni.consensus)
        for sid in uni.space_ids:
            assert np.array_equal(back.maps[sid], uni.maps[sid])
        assert back.fit_log == uni.fit_log
