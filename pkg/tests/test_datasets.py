import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnnbench.circuits import DomainError
from qnnbench.datasets import (
    CapacityError,
    DegenerateCorpusError,
    FormatError,
    ImageCorpus,
    fit_pca,
    generate_hypercube,
    hypercube_label,
    load_mnist_binary,
    load_pgm_corpus,
    load_version,
    make_versions,
    pca_reduce,
    read_idx,
    read_pgm,
    save_version,
    write_idx,
    write_pgm,
)


def assert_balanced(version):
    y = version.labels
    assert np.sum(y == 0) == np.sum(y == 1) == version.N // 2
    for idx in (version.train_idx, version.val_idx):
        assert np.sum(y[idx] == 0) == np.sum(y[idx] == 1)
    assert len(version.train_idx) == int(0.8 * version.N)
    assert len(version.val_idx) == int(0.2 * version.N)
    assert set(version.train_idx).isdisjoint(version.val_idx)


class TestHypercube:
    def test_labels(self):
        assert hypercube_label([0.9, 0.8]) == 1
        assert hypercube_label([0.1, 0.2]) == 0

    def test_n500_split(self):
        v = generate_hypercube(2, 500, 7)
        assert_balanced(v)
        assert len(v.train_idx) == 400 and len(v.val_idx) == 100

    @settings(max_examples=25, deadline=None)
    @given(st.sampled_from([2, 4, 8, 16, 32, 64]), st.integers(1, 30), st.integers(0, 2**31))
    def test_invariants(self, d, half_tenths, seed):
        v = generate_hypercube(d, 10 * half_tenths, seed)
        assert_balanced(v)
        assert v.features.shape == (v.N, d)
        assert np.all((v.features >= 0) & (v.features <= 1))
        np.testing.assert_array_equal(v.labels, [hypercube_label(x) for x in v.features])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=16), st.randoms())
    def test_label_permutation_invariant(self, x, random):
        shuffled = list(x)
        random.shuffle(shuffled)
        assert hypercube_label(x) == hypercube_label(shuffled)

    def test_deterministic(self):
        a, b = generate_hypercube(4, 100, 3), generate_hypercube(4, 100, 3)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.train_idx, b.train_idx)

    @pytest.mark.parametrize("d,N", [(3, 100), (2, 101)])
    def test_preconditions(self, d, N):
        with pytest.raises(ValueError):
            generate_hypercube(d, N, 0)


class TestIdx:
    def test_full_size_header(self, tmp_path):
        path = tmp_path / "images-idx3-ubyte"
        write_idx(path, np.zeros((60000, 28, 28), dtype=np.uint8))
        assert path.read_bytes()[:4] == b"\x00\x00\x08\x03"
        assert read_idx(path, 0x00000803).shape == (60000, 28, 28)

    def test_gzip_round_trip(self, tmp_path, rng):
        arr = rng.integers(0, 256, (5, 3, 4)).astype(np.uint8)
        write_idx(tmp_path / "a.gz", arr)
        with gzip.open(tmp_path / "a.gz") as fh:
            assert fh.read(4) == b"\x00\x00\x08\x03"
        np.testing.assert_array_equal(read_idx(tmp_path / "a.gz"), arr)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"\x12\x34\x08\x03" + b"\x00" * 12)
        with pytest.raises(FormatError, match="byte offset 0"):
            read_idx(tmp_path / "x")

    def test_wrong_expected_magic(self, tmp_path):
        write_idx(tmp_path / "labels", np.zeros(3, dtype=np.uint8))
        with pytest.raises(FormatError, match="0x00000803"):
            read_idx(tmp_path / "labels", 0x00000803)

    def test_truncated_payload(self, tmp_path):
        data = struct.pack(">HBBIII", 0, 8, 3, 2, 28, 28) + b"\x00" * 100
        (tmp_path / "t").write_bytes(data)
        with pytest.raises(FormatError, match=f"byte offset {len(data)}"):
            read_idx(tmp_path / "t")

    def test_truncated_dims(self, tmp_path):
        (tmp_path / "t").write_bytes(struct.pack(">HBBI", 0, 8, 3, 2))
        with pytest.raises(FormatError, match="byte offset 8"):
            read_idx(tmp_path / "t")

    def test_mnist_binary(self, tmp_path):
        images = np.zeros((3, 2, 2), dtype=np.uint8)
        images[0, 0, 0] = 255
        labels = np.array([1, 7, 0], dtype=np.uint8)
        write_idx(tmp_path / "img", images)
        write_idx(tmp_path / "lab", labels)
        corpus = load_mnist_binary(tmp_path / "img", tmp_path / "lab")
        assert corpus.images.shape == (2, 2, 2)
        np.testing.assert_array_equal(corpus.labels, [1, 0])
        assert corpus.images[0, 0, 0] == 1.0 and corpus.images[0, 1, 1] == 0.0

    def test_count_mismatch(self, tmp_path):
        write_idx(tmp_path / "img", np.zeros((3, 2, 2), dtype=np.uint8))
        write_idx(tmp_path / "lab", np.zeros(2, dtype=np.uint8))
        with pytest.raises(FormatError):
            load_mnist_binary(tmp_path / "img", tmp_path / "lab")


class TestPgm:
    def test_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, (5, 7)) / 255
        write_pgm(tmp_path / "a.pgm", img)
        np.testing.assert_allclose(read_pgm(tmp_path / "a.pgm"), img, atol=1e-12)

    def test_comment_in_header(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
        np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[0.0, 1.0]])

    def test_wrong_magic(self, tmp_path):
        (tmp_path / "p.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(FormatError, match="byte offset 0"):
            read_pgm(tmp_path / "p.pgm")

    def test_truncated(self, tmp_path):
        (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n\x00\x00")
        with pytest.raises(FormatError, match="truncated"):
            read_pgm(tmp_path / "t.pgm")

    def test_corpus(self, tmp_path, rng):
        for label in ("cat", "dog"):
            (tmp_path / label).mkdir()
            for i in range(3):
                write_pgm(tmp_path / label / f"{i}.pgm", rng.random((4, 6)))
        corpus = load_pgm_corpus(tmp_path)
        assert corpus.image_shape == (4, 6)
        np.testing.assert_array_equal(corpus.labels, [0, 0, 0, 1, 1, 1])

    def test_corpus_needs_two_classes(self, tmp_path):
        (tmp_path / "only").mkdir()
        with pytest.raises(FormatError):
            load_pgm_corpus(tmp_path)


class TestPca:
    def test_full_rank_reconstruction(self, rng):
        X = rng.random((40, 6))
        model = fit_pca(X, 6)
        np.testing.assert_allclose(model.reconstruct(model.project(X)), X, atol=1e-6)

    def test_identical_vectors_rejected(self):
        with pytest.raises(DegenerateCorpusError):
            fit_pca(np.ones((10, 4)), 2)

    def test_too_many_components(self, rng):
        with pytest.raises(DomainError):
            fit_pca(rng.random((10, 4)), 5)

    def test_analytic_eigenvectors(self, rng):
        # covariance [[3, 1], [1, 3]] has eigenvectors (1, 1)/sqrt2 (eigenvalue 4) and (1, -1)/sqrt2 (2)
        X = rng.multivariate_normal([0, 0], [[3, 1], [1, 3]], size=400)
        X = X - X.mean(axis=0)
        L = np.linalg.cholesky(np.array([[3, 1], [1, 3]]))
        X = X @ np.linalg.inv(np.linalg.cholesky(np.cov(X.T))).T @ L.T  # exact sample covariance
        model = fit_pca(X, 2)
        expected = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
        for got, want in zip(model.components, expected):
            assert min(np.abs(got - want).max(), np.abs(got + want).max()) < 1e-6
        np.testing.assert_allclose(model.explained_variance, [4, 2], atol=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 8))
    def test_orthonormal(self, seed, d):
        X = np.random.default_rng(seed).random((30, 8))
        C = fit_pca(X, d).components
        np.testing.assert_allclose(C @ C.T, np.eye(d), atol=1e-8)

    def test_min_max_points(self, rng):
        X = rng.random((50, 5))
        model = fit_pca(X, 2)
        Z = model.project(X)
        for c in range(2):
            assert pca_reduce(model, X[np.argmax(Z[:, c])])[0][c] == pytest.approx(1.0, abs=1e-12)
            assert pca_reduce(model, X[np.argmin(Z[:, c])])[0][c] == pytest.approx(0.0, abs=1e-12)

    def test_clamping(self, rng):
        X = rng.random((50, 3))
        model = fit_pca(X, 1)
        far = model.mean + 10 * model.components[0]
        values, clamped = pca_reduce(model, far)
        assert values[0] == 1.0 and clamped == 1

    def test_fit_corpus_needs_no_clamping(self, rng):
        X = rng.random((50, 5))
        values, clamped = pca_reduce(fit_pca(X, 3), X)
        assert clamped == 0 and values.min() >= 0 and values.max() <= 1


def toy_corpus(rng, per_class=60, shape=(4, 4)):
    labels = np.repeat([0, 1], per_class)
    images = rng.random((2 * per_class,) + shape) * 0.5 + labels[:, None, None] * 0.5
    return ImageCorpus(images, labels, "toy")


class TestVersions:
    def test_two_balanced_versions(self, rng):
        corpus = toy_corpus(rng)
        versions = make_versions(corpus, (20, 50), seed=5, pca=fit_pca(corpus.flattened(), 3))
        assert [v.N for v in versions] == [20, 50]
        for v in versions:
            assert_balanced(v)
            assert v.d == 3 and np.all((v.features >= 0) & (v.features <= 1))

    def test_n50_split(self, rng):
        (v,) = make_versions(toy_corpus(rng), (50,), seed=1)
        assert_balanced(v)
        assert (len(v.train_idx), len(v.val_idx)) == (40, 10)
        assert v.image_shape == (4, 4)

    def test_same_seed_same_indices(self, rng):
        corpus = toy_corpus(rng)
        a, b = make_versions(corpus, (40,), 9), make_versions(corpus, (40,), 9)
        assert a[0].metadata["source_indices"] == b[0].metadata["source_indices"]
        np.testing.assert_array_equal(a[0].train_idx, b[0].train_idx)

    def test_capacity(self, rng):
        with pytest.raises(CapacityError):
            make_versions(toy_corpus(rng, per_class=10), (40,), 0)

    def test_hypercube_source(self):
        versions = make_versions("hypercube", (50, 100), seed=2, d=4)
        assert [v.name for v in versions] == ["hypercube-none-d4-N50", "hypercube-none-d4-N100"]

    def test_mnist_sample(self, mnist_arrays):
        images, labels = mnist_arrays
        keep = labels <= 1
        corpus = ImageCorpus(images[keep] / 255.0, labels[keep].astype(int), "mnist")
        (v,) = make_versions(corpus, (200,), 0, pca=fit_pca(corpus.flattened(), 2))
        assert_balanced(v)

    def test_save_load(self, tmp_path, rng):
        (v,) = make_versions(toy_corpus(rng), (30,), seed=4)
        w = load_version(save_version(v, tmp_path / v.name))
        np.testing.assert_array_equal(w.features, v.features)
        np.testing.assert_array_equal(w.val_idx, v.val_idx)
        assert w.manifest() == v.manifest()
