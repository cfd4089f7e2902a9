import numpy as np
import pytest

from spacealign import dataio, gcca
from spacealign import numkernel as nk
from spacealign.errors import InvalidRank, UnknownSpaceError


def make_spaces(rng, m=3, n=40, d=6, shared=0.8, ids=None):
    """Matched spaces with partly shared latent content."""
    z = rng.standard_normal((n, d))
    sample_ids = [f"train-{i:05d}" for i in range(n)]
    spaces = []
    for j in range(m):
        mix = shared * z + (1 - shared) * rng.standard_normal((n, d))
        basis = rng.standard_normal((d, d))
        sid = ids[j] if ids else f"space{j:02d}"
        spaces.append(dataio.EmbeddingMatrix(sid, "train", mix @ basis, sample_ids))
    return spaces


def random_feasible_phi(rng, total_rank, r):
    q, _ = np.linalg.qr(rng.standard_normal((total_rank, r)))
    return q


class TestFitGcca:
    def test_identical_spaces_null_objective(self, rng):
        z = rng.standard_normal((30, 5))
        ids = [f"t-{i}" for i in range(30)]
        spaces = [dataio.EmbeddingMatrix(f"s{j}", "train", z.copy(), ids) for j in range(3)]
        model = gcca.fit_gcca(spaces, rank=4)
        assert np.all(np.abs(model.eigenvalues) < 1e-10)
        assert gcca.model_objective(model) < 1e-10

    def test_exact_feature_map(self, rng):
        spaces = make_spaces(rng)
        model = gcca.fit_gcca(spaces, rank=3)
        for s in spaces:
            basis = model.basis(s.space_id)
            lhs = s.data @ basis.q_exact
            rhs = basis.left @ basis.phi
            assert np.linalg.norm(lhs - rhs) < 1e-8

    def test_trace_identity_and_eigen_sum(self, rng):
        spaces = make_spaces(rng, m=4, n=50, d=7)
        model = gcca.fit_gcca(spaces, rank=3)
        lefts = [model.per_space[s.space_id].left for s in spaces]
        phis = [model.per_space[s.space_id].phi for s in spaces]
        objective = gcca.gcca_objective(lefts, phis)
        s_block = gcca.build_block_matrix(lefts)
        phi = model.stacked_phi()
        trace_form = float(np.trace(phi.T @ s_block @ phi))
        assert abs(objective - trace_form) < 1e-8
        assert abs(objective - model.eigenvalues.sum()) < 1e-8

    def test_constraint_stacked_orthonormal(self, rng):
        model = gcca.fit_gcca(make_spaces(rng), rank=4)
        phi = model.stacked_phi()
        assert np.linalg.norm(phi.T @ phi - np.eye(4)) < 1e-10

    def test_block_matrix_psd(self, rng):
        spaces = make_spaces(rng, m=3)
        model = gcca.fit_gcca(spaces, rank=2)
        lefts = [model.per_space[s.space_id].left for s in spaces]
        eigs = np.linalg.eigvalsh(gcca.build_block_matrix(lefts))
        assert eigs.min() > -1e-8
        assert np.all(model.eigenvalues >= -1e-8)
        assert np.all(np.diff(model.eigenvalues) >= -1e-12)

    def test_rank_too_large(self, rng):
        spaces = make_spaces(rng, m=2, n=20, d=4)
        with pytest.raises(InvalidRank):
            gcca.fit_gcca(spaces, rank=9)

    def test_optimality_against_random_feasible(self, rng):
        # solver objective is a global minimum over the feasible set
        spaces = make_spaces(rng, m=3, n=30, d=6)
        model = gcca.fit_gcca(spaces, rank=3)
        lefts = [model.per_space[s.space_id].left for s in spaces]
        ranks = [b.shape[1] for b in lefts]
        best = gcca.model_objective(model)
        for _ in range(1000):
            phi = random_feasible_phi(rng, sum(ranks), 3)
            blocks = np.split(phi, np.cumsum(ranks)[:-1])
            sampled = gcca.gcca_objective(lefts, blocks)
            assert sampled - best >= 1e-10


class TestGccaEmbed:
    def test_fit_data_embedding_matches(self, rng):
        spaces = make_spaces(rng)
        model = gcca.fit_gcca(spaces, rank=3)
        for s in spaces:
            emb = gcca.gcca_embed(model, s.data, s.space_id)
            basis = model.basis(s.space_id)
            assert np.linalg.norm(emb - basis.left @ basis.phi) < 1e-8

    def test_zero_row_maps_to_zero(self, rng):
        model = gcca.fit_gcca(make_spaces(rng), rank=2)
        out = gcca.gcca_embed(model, np.zeros((1, 6)), "space00")
        np.testing.assert_allclose(out, 0.0, atol=1e-15)

    def test_linearity(self, rng):
        model = gcca.fit_gcca(make_spaces(rng), rank=2)
        x = rng.standard_normal((4, 6))
        y = rng.standard_normal((4, 6))
        lhs = gcca.gcca_embed(model, x + y, "space01")
        rhs = gcca.gcca_embed(model, x, "space01") + gcca.gcca_embed(model, y, "space01")
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_unknown_space(self, rng):
        model = gcca.fit_gcca(make_spaces(rng), rank=2)
        with pytest.raises(UnknownSpaceError):
            gcca.gcca_embed(model, np.zeros((1, 6)), "nope")

    def test_scaled_variant_differs_by_singular_scaling(self, rng):
        spaces = make_spaces(rng)
        model = gcca.fit_gcca(spaces, rank=3)
        s = spaces[0]
        basis = model.basis(s.space_id)
        scaled = gcca.gcca_embed(model, s.data, s.space_id, scaled=True)
        assert np.linalg.norm(scaled - (basis.left * basis.singular) @ basis.phi) < 1e-8


class TestSharedSubspace:
    def test_orthonormal(self, rng):
        spaces = make_spaces(rng)
        model = gcca.fit_gcca(spaces, rank=3)
        b = gcca.shared_subspace(model, spaces)
        assert np.linalg.norm(b.T @ b - np.eye(3)) < 1e-10

    def test_identical_spaces_subspace_matches(self, rng):
        z = rng.standard_normal((25, 5))
        ids = [f"t-{i}" for i in range(25)]
        spaces = [dataio.EmbeddingMatrix(f"s{j}", "train", z.copy(), ids) for j in range(3)]
        model = gcca.fit_gcca(spaces, rank=3)
        b = gcca.shared_subspace(model, spaces)
        # subspace-angle oracle: col(B) must coincide with the span of the
        # per-space shared embeddings, itself inside col(U_1)
        y = gcca.gcca_embed(model, z, "s0")
        qy, _ = np.linalg.qr(y)
        angles = np.linalg.svd(b.T @ qy, compute_uv=False)
        np.testing.assert_allclose(angles, 1.0, atol=1e-8)
        u1 = model.basis("s0").left
        inside = np.linalg.svd(u1.T @ b, compute_uv=False)
        np.testing.assert_allclose(inside, 1.0, atol=1e-8)

    def test_energy_matches_svd_oracle(self, rng):
        spaces = make_spaces(rng, m=3, n=30, d=6)
        model = gcca.fit_gcca(spaces, rank=3)
        g = np.hstack([gcca.gcca_embed(model, s.data, s.space_id) for s in spaces])
        b = gcca.shared_subspace(model, spaces)
        energy = np.linalg.norm(b.T @ g) ** 2
        singulars = np.linalg.svd(g, compute_uv=False)
        assert abs(energy - np.sum(singulars[:3] ** 2)) < 1e-8


class TestSerialization:
    def test_round_trip(self, rng, tmp_path):
        spaces = make_spaces(rng)
        model = gcca.fit_gcca(spaces, rank=3)
        model.save(tmp_path / "gcca")
        back = gcca.SharedBasisModel.load(tmp_path / "gcca")
        assert back.space_ids == model.space_ids
        assert back.rank == model.rank
        np.testing.assert_allclose(back.eigenvalues, model.eigenvalues, atol=0)
        for s in spaces:
            a = gcca.gcca_embed(model, s.data, s.space_id)
            b = gcca.gcca_embed(back, s.data, s.space_id)
            assert np.array_equal(a, b)
