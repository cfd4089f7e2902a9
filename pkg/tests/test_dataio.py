import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spacealign import dataio
from spacealign import numkernel as nk
from spacealign.errors import ConfigError, FormatError, InvalidInput, InvalidSpec


def make_embedding(rng, n=5, d=3, split="train", space_id="spaceA"):
    data = rng.standard_normal((n, d)).astype(np.float32).astype(np.float64)
    ids = [f"{split}-{i:04d}" for i in range(n)]
    return dataio.EmbeddingMatrix(space_id=space_id, split=split, data=data, sample_ids=ids)


class TestPersistence:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        e = make_embedding(rng)
        path = tmp_path / "a.emb"
        dataio.write_embeddings(e, path)
        back = dataio.read_embeddings(path)
        assert np.array_equal(back.data, e.data)
        assert back.sample_ids == e.sample_ids
        assert back.space_id == e.space_id and back.split == e.split
        # writing the read-back copy reproduces the same bytes
        path2 = tmp_path / "b.emb"
        dataio.write_embeddings(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_truncated_payload(self, rng, tmp_path):
        e = make_embedding(rng)
        path = tmp_path / "a.emb"
        dataio.write_embeddings(e, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: 25 + 10])  # mid-payload
        with pytest.raises(FormatError) as err:
            dataio.read_embeddings(path)
        assert err.value.offset is not None

    def test_header_overstates_payload(self, rng, tmp_path):
        e = make_embedding(rng, n=4, d=2)
        path = tmp_path / "a.emb"
        dataio.write_embeddings(e, path)
        blob = bytearray(path.read_bytes())
        blob[8:16] = (1000).to_bytes(8, "little")  # rows field
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            dataio.read_embeddings(path)

    def test_bad_magic(self, rng, tmp_path):
        e = make_embedding(rng)
        path = tmp_path / "a.emb"
        dataio.write_embeddings(e, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError) as err:
            dataio.read_embeddings(path)
        assert err.value.offset == 0

    def test_float64_matrix_round_trip(self, rng, tmp_path):
        m = rng.standard_normal((6, 6))
        path = tmp_path / "m.emb"
        dataio.write_matrix(path, m, "omega")
        assert np.array_equal(dataio.read_matrix(path), m)


class TestEmbeddingMatrix:
    def test_duplicate_ids_rejected(self, rng):
        with pytest.raises(InvalidInput):
            dataio.EmbeddingMatrix("s", "train", rng.standard_normal((2, 2)), ["a", "a"])

    def test_nan_rejected(self):
        with pytest.raises(InvalidInput):
            dataio.EmbeddingMatrix("s", "train", np.array([[np.nan, 1.0]]), ["a"])

    def test_bad_split_rejected(self, rng):
        with pytest.raises(InvalidInput):
            dataio.EmbeddingMatrix("s", "dev", rng.standard_normal((1, 2)), ["a"])


class TestGenerateSynthetic:
    def test_exact_rotations(self):
        spec = dataio.SynthSpec(num_spaces=3, samples=60, dim=8, latent_dim=8, noise_sigma=0.0, seed=4)
        res = dataio.generate_synthetic(spec)
        mats = res.matrices("train")
        for a in mats:
            for b in mats:
                omega = nk.orthogonal_procrustes(a.data, b.data)
                resid = np.linalg.norm(a.data @ omega - b.data)
                assert resid < 1e-8

    def test_distortion_none_identical_spaces(self):
        spec = dataio.SynthSpec(num_spaces=3, samples=30, dim=6, latent_dim=4, noise_sigma=0.0, distortion="none", seed=1)
        res = dataio.generate_synthetic(spec)
        mats = res.matrices("train")
        assert np.array_equal(mats[0].data, mats[1].data)
        assert np.array_equal(mats[0].data, mats[2].data)

    def test_weak_pair_strength_zero_is_noop(self):
        base = dict(num_spaces=4, samples=50, dim=6, latent_dim=4, noise_sigma=0.1, seed=9)
        plain = dataio.generate_synthetic(dataio.SynthSpec(**base))
        weak = dataio.generate_synthetic(dataio.SynthSpec(**base, weak_pair=((0, 1), 0.0)))
        for key in plain.embeddings:
            assert np.array_equal(plain.embeddings[key].data, weak.embeddings[key].data)

    def test_weak_pair_corrupts_train_only(self):
        base = dict(num_spaces=4, samples=50, dim=6, latent_dim=4, noise_sigma=0.1, seed=9)
        plain = dataio.generate_synthetic(dataio.SynthSpec(**base))
        weak = dataio.generate_synthetic(dataio.SynthSpec(**base, weak_pair=((0, 1), 0.5)))
        assert not np.array_equal(weak.embeddings[("space00", "train")].data, plain.embeddings[("space00", "train")].data)
        assert np.array_equal(weak.embeddings[("space00", "test")].data, plain.embeddings[("space00", "test")].data)
        assert np.array_equal(weak.embeddings[("space02", "train")].data, plain.embeddings[("space02", "train")].data)
        assert weak.weak_space_ids == ["space00", "space01"]

    def test_determinism(self):
        spec = dict(num_spaces=3, samples=40, dim=5, latent_dim=3, noise_sigma=0.2, distortion="linear", seed=77)
        r1 = dataio.generate_synthetic(dataio.SynthSpec(**spec))
        r2 = dataio.generate_synthetic(dataio.SynthSpec(**spec))
        for key in r1.embeddings:
            assert np.array_equal(r1.embeddings[key].data, r2.embeddings[key].data)
        for split in r1.labels:
            assert np.array_equal(r1.labels[split], r2.labels[split])

    def test_labels_cover_all_classes(self):
        spec = dataio.SynthSpec(num_spaces=2, samples=40, dim=4, latent_dim=2, num_classes=5, seed=3)
        res = dataio.generate_synthetic(spec)
        for split in ("train", "val", "test"):
            assert set(res.labels[split]) == set(range(5))

    def test_invalid_latent_dim(self):
        with pytest.raises(InvalidSpec):
            dataio.SynthSpec(num_spaces=3, samples=10, dim=4, latent_dim=5)

    def test_sample_ids_align_across_spaces(self):
        spec = dataio.SynthSpec(num_spaces=3, samples=20, dim=4, latent_dim=2, seed=0)
        res = dataio.generate_synthetic(spec)
        train = res.matrices("train")
        assert train[0].sample_ids == train[1].sample_ids == train[2].sample_ids


class TestCorruptCorrespondence:
    def test_fraction_zero_identity(self):
        c = dataio.Correspondence.identity(10)
        out = dataio.corrupt_correspondence(c, 0.0, seed=1)
        assert np.array_equal(out.permutation, c.permutation)

    def test_exact_block_size(self):
        c = dataio.Correspondence.identity(100)
        out = dataio.corrupt_correspondence(c, 0.75, seed=5)
        moved = np.sum(out.permutation != c.permutation)
        assert moved == 75
        assert np.array_equal(np.sort(out.permutation), np.arange(100))

    def test_same_seed_same_permutation(self):
        c = dataio.Correspondence.identity(50)
        a = dataio.corrupt_correspondence(c, 0.4, seed=9)
        b = dataio.corrupt_correspondence(c, 0.4, seed=9)
        assert np.array_equal(a.permutation, b.permutation)

    def test_fraction_out_of_range(self):
        with pytest.raises(InvalidInput):
            dataio.corrupt_correspondence(dataio.Correspondence.identity(5), 1.5, seed=0)

    @given(n=st.integers(min_value=2, max_value=200), frac=st.floats(min_value=0.0, max_value=1.0), seed=st.integers(0, 2**30))
    @settings(max_examples=60, deadline=None)
    def test_always_bijection_with_requested_cardinality(self, n, frac, seed):
        c = dataio.Correspondence.identity(n)
        out = dataio.corrupt_correspondence(c, frac, seed)
        assert np.array_equal(np.sort(out.permutation), np.arange(n))
        k = int(np.floor(frac * n))
        moved = int(np.sum(out.permutation != c.permutation))
        assert moved == (k if k >= 2 else 0)


class TestManifest:
    def test_round_trip_and_missing_file(self, rng, tmp_path):
        spec = dataio.SynthSpec(num_spaces=2, samples=10, dim=3, latent_dim=2, seed=0)
        res = dataio.generate_synthetic(spec)
        for sid in res.space_ids:
            (tmp_path / sid).mkdir()
            for split in ("train", "val", "test"):
                dataio.write_embeddings(res.embeddings[(sid, split)], tmp_path / sid / f"{split}.emb")
        dataio.write_labels(res.labels, tmp_path / "labels.json")
        manifest = dataio.Manifest(
            spaces=[dataio.ManifestSpace(sid, sid, 3) for sid in res.space_ids],
            splits={"train": "train.emb", "val": "val.emb", "test": "test.emb"},
            labels="labels.json",
            root=tmp_path,
        )
        manifest.save(tmp_path / "manifest.json")
        back = dataio.Manifest.load(tmp_path / "manifest.json")
        assert back.space_ids() == res.space_ids
        loaded = dataio.read_embeddings(back.embedding_path("space00", "test"))
        assert loaded.split == "test"
        labels = dataio.read_labels(back.labels_path())
        assert np.array_equal(labels["train"], res.labels["train"])
        # deleting a referenced file must fail validation
        (tmp_path / "space00" / "val.emb").unlink()
        with pytest.raises(ConfigError):
            dataio.Manifest.load(tmp_path / "manifest.json")
