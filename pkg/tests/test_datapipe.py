import weakref

import numpy as np
import pytest

from allnet import datapipe as dp

from oracles import stats_two_pass


def write_manifest(path, rows):
    path.write_text("path,label\n" + "".join(f"{p},{y}\n" for p, y in rows), encoding="utf-8")


class ArraySource:
    """In-memory image source keyed by manifest path."""

    def __init__(self, images):
        self.images = images

    def load(self, rel):
        return self.images[rel].copy()


class CountingSource:
    """Tracks how many decoded images are alive at once."""

    def __init__(self, inner):
        self.inner = inner
        self.live = 0
        self.peak = 0
        self.loads = 0

    def load(self, rel):
        arr = self.inner.load(rel)
        self.loads += 1
        self.live += 1
        self.peak = max(self.peak, self.live)
        weakref.finalize(arr, self._release)
        return arr

    def _release(self):
        self.live -= 1


def random_images(rng, names, h=6, w=6):
    return {name: rng.random((3, h, w)).astype(np.float32) for name in names}


class TestManifest:
    def test_loads_in_file_order(self, tmp_path):
        path = tmp_path / "m.csv"
        write_manifest(path, [("a.ppm", 0), ("b.ppm", 1)])
        m = dp.load_manifest(path)
        assert m.entries == (("a.ppm", 0), ("b.ppm", 1))

    def test_crlf_accepted(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_bytes(b"path,label\r\na.ppm,1\r\n")
        assert dp.load_manifest(path).entries == (("a.ppm", 1),)

    def test_bad_label_names_line(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("path,label\na.ppm,0\nb.ppm,2\n")
        with pytest.raises(dp.ManifestError, match=r":3:"):
            dp.load_manifest(path)

    def test_duplicate_path_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        write_manifest(path, [("a.ppm", 0), ("a.ppm", 1)])
        with pytest.raises(dp.ManifestError, match="duplicate"):
            dp.load_manifest(path)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("a.ppm,0\n")
        with pytest.raises(dp.ManifestError, match="header"):
            dp.load_manifest(path)

    def test_full_scale_synthetic_class_counts(self, tmp_path):
        path = tmp_path / "m.csv"
        rows = [(f"img_{i:05d}.ppm", 1 if i < 7272 else 0) for i in range(10691)]
        write_manifest(path, rows)
        m = dp.load_manifest(path)
        labels = m.labels()
        assert len(m) == 10691
        assert int(labels.sum()) == 7272
        assert int((labels == 0).sum()) == 3419


class TestSplit:
    def test_full_scale_sizes(self):
        m = dp.Manifest(tuple((f"i{i}.ppm", 0) for i in range(10691)))
        train, val, test = dp.split(m, dp.SplitSpec((0.6, 0.2, 0.2), seed=7))
        assert (len(train), len(val), len(test)) == (6414, 2138, 2139)

    def test_tiny_floor_rule(self):
        m = dp.Manifest(tuple((f"i{i}.ppm", 0) for i in range(5)))
        train, val, test = dp.split(m, dp.SplitSpec((0.6, 0.2, 0.2), seed=0))
        assert (len(train), len(val), len(test)) == (3, 1, 1)

    def test_partition_property_random_cases(self):
        rng = np.random.default_rng(60)
        for _ in range(100):
            n = int(rng.integers(3, 400))
            seed = int(rng.integers(0, 2**63 - 1))
            m = dp.Manifest(tuple((f"i{i}.ppm", int(i % 2)) for i in range(n)))
            parts = dp.split(m, dp.SplitSpec((0.6, 0.2, 0.2), seed=seed))
            recombined = sorted(p for part in parts for p in part.paths())
            assert recombined == sorted(m.paths())

    def test_same_seed_reproduces(self):
        m = dp.Manifest(tuple((f"i{i}.ppm", 0) for i in range(57)))
        a = dp.split(m, dp.SplitSpec(seed=123))
        b = dp.split(m, dp.SplitSpec(seed=123))
        assert all(x.entries == y.entries for x, y in zip(a, b))

    def test_bad_ratios_rejected(self):
        with pytest.raises(ValueError):
            dp.SplitSpec((0.5, 0.2, 0.2), seed=0)


class TestStats:
    def test_constant_images(self):
        images = {f"i{k}.ppm": np.full((3, 4, 4), 0.25, np.float32) for k in range(3)}
        m = dp.Manifest(tuple((p, 0) for p in images))
        stats = dp.compute_stats(m, ArraySource(images), (4, 4))
        assert np.allclose(stats.mean, 0.25, atol=1e-7)
        assert np.allclose(stats.std, 0.0, atol=1e-7)

    def test_two_single_pixel_images(self):
        images = {
            "a.ppm": np.zeros((3, 1, 1), np.float32),
            "b.ppm": np.full((3, 1, 1), 2.0, np.float32),
        }
        m = dp.Manifest((("a.ppm", 0), ("b.ppm", 1)))
        stats = dp.compute_stats(m, ArraySource(images), (1, 1))
        assert np.allclose(stats.mean, 1.0)
        assert np.allclose(stats.std, 1.0)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(61)
        images = random_images(rng, [f"i{k}.ppm" for k in range(12)], 5, 7)
        m = dp.Manifest(tuple((p, 0) for p in images))
        stats = dp.compute_stats(m, ArraySource(images), (5, 7))
        mean_ref, std_ref = stats_two_pass(list(images.values()))
        assert np.allclose(stats.mean, mean_ref, rtol=1e-6)
        assert np.allclose(stats.std, std_ref, rtol=1e-6)

    def test_standardize_zero_and_identity_cases(self):
        stats = dp.StandardizationStats((0.2, 0.4, 0.6), (1.0, 1.0, 1.0))
        img = np.stack([np.full((4, 4), m, np.float32) for m in stats.mean])
        assert np.allclose(dp.standardize(img, stats), 0.0, atol=1e-7)

        ident = dp.StandardizationStats((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        rng = np.random.default_rng(62)
        x = rng.random((3, 4, 4)).astype(np.float32)
        assert np.array_equal(dp.standardize(x, ident), x)

    def test_closure_on_training_set(self):
        rng = np.random.default_rng(63)
        images = random_images(rng, [f"i{k}.ppm" for k in range(30)], 8, 8)
        m = dp.Manifest(tuple((p, 0) for p in images))
        stats = dp.compute_stats(m, ArraySource(images), (8, 8))
        standardized = np.concatenate(
            [dp.standardize(img, stats).reshape(3, -1) for img in images.values()], axis=1
        ).astype(np.float64)
        assert np.abs(standardized.mean(axis=1)).max() < 1e-4
        assert np.abs(standardized.std(axis=1) - 1.0).max() < 1e-3

    def test_destandardize_round_trip(self):
        stats = dp.StandardizationStats((0.3, 0.5, 0.7), (0.2, 0.4, 0.6))
        rng = np.random.default_rng(64)
        x = rng.random((3, 5, 5)).astype(np.float32)
        back = dp.standardize(dp.destandardize(x, stats), stats)
        assert np.abs(back - x).max() < 1e-5

    def test_leakage_guard_stats_file_byte_identical(self, tmp_path):
        rng = np.random.default_rng(65)
        root = tmp_path / "img"
        root.mkdir()
        for k in range(8):
            dp.encode_ppm(root / f"t{k}.ppm", rng.random((3, 6, 6)).astype(np.float32))
        for k in range(4):
            dp.encode_ppm(root / f"v{k}.ppm", rng.random((3, 6, 6)).astype(np.float32))
        train = dp.Manifest(tuple((f"t{k}.ppm", 0) for k in range(8)))
        source = dp.FileImageSource(root)

        stats_a = dp.compute_stats(train, source, (6, 6))
        dp.save_stats(stats_a, tmp_path / "a.txt")
        for k in range(4):  # corrupt every val image
            dp.encode_ppm(root / f"v{k}.ppm", np.ones((3, 6, 6), np.float32))
        stats_b = dp.compute_stats(train, source, (6, 6))
        dp.save_stats(stats_b, tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_stats_file_round_trip(self, tmp_path):
        stats = dp.StandardizationStats((0.1, 0.22, 0.333), (0.5, 0.05, 0.005))
        dp.save_stats(stats, tmp_path / "s.txt")
        text = (tmp_path / "s.txt").read_text()
        assert text.startswith("mean_r=0.1\n")
        back = dp.load_stats(tmp_path / "s.txt")
        assert np.allclose(back.mean, stats.mean, rtol=1e-8)
        assert np.allclose(back.std, stats.std, rtol=1e-8)
        assert back.epsilon == stats.epsilon


class TestResize:
    def test_identity_dims(self):
        rng = np.random.default_rng(66)
        x = rng.random((3, 5, 7)).astype(np.float32)
        assert np.abs(dp.resize_bilinear(x, 5, 7) - x).max() < 1e-6

    def test_constant_stays_constant(self):
        x = np.full((3, 4, 6), 0.375, np.float32)
        y = dp.resize_bilinear(x, 9, 5)
        assert y.shape == (3, 9, 5)
        assert np.abs(y - 0.375).max() < 1e-6

    def test_checkerboard_to_single_pixel_averages(self):
        board = np.array([[0.0, 1.0], [1.0, 0.0]], np.float32)
        x = np.stack([board] * 3)
        y = dp.resize_bilinear(x, 1, 1)
        assert y.shape == (3, 1, 1)
        assert np.allclose(y, 0.5)


class TestDecode:
    def test_single_red_pixel(self, tmp_path):
        path = tmp_path / "red.ppm"
        path.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        img = dp.decode_ppm(path)
        assert img.shape == (3, 1, 1)
        assert np.allclose(img.reshape(3), [1.0, 0.0, 0.0])

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(dp.DecodeError, match="truncated"):
            dp.decode_ppm(path)

    def test_wrong_maxval_rejected(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(dp.DecodeError, match="maxval"):
            dp.decode_ppm(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(dp.DecodeError, match="magic"):
            dp.decode_ppm(path)

    def test_header_comments_allowed(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([0, 128, 255]))
        img = dp.decode_ppm(path)
        assert np.allclose(img.reshape(3), [0.0, 128 / 255, 1.0])

    def test_encode_decode_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(67)
        raw = rng.integers(0, 256, (3, 5, 4), dtype=np.uint8)
        path = tmp_path / "rt.ppm"
        dp.encode_ppm(path, raw)
        back = dp.decode_ppm(path)
        assert np.array_equal(np.rint(back * 255).astype(np.uint8), raw)


class TestBatchIter:
    @staticmethod
    def _setup(rng, n, h=4, w=4):
        images = random_images(rng, [f"i{k:03d}.ppm" for k in range(n)], h, w)
        manifest = dp.Manifest(tuple((p, int(k % 2)) for k, p in enumerate(sorted(images))))
        stats = dp.StandardizationStats((0.5, 0.5, 0.5), (0.25, 0.25, 0.25))
        return images, manifest, stats

    def test_batch_sizes(self):
        images, manifest, stats = self._setup(np.random.default_rng(68), 5)
        sizes = [
            len(labels)
            for _, labels in dp.batch_iter(manifest, ArraySource(images), stats, 2, (4, 4))
        ]
        assert sizes == [2, 2, 1]

    def test_same_seed_same_order(self):
        images, manifest, stats = self._setup(np.random.default_rng(69), 11)
        runs = []
        for _ in range(2):
            got = []
            for batch, labels in dp.batch_iter(
                manifest, ArraySource(images), stats, 3, (4, 4), shuffle_seed=42
            ):
                got.append((batch.copy(), labels.copy()))
            runs.append(got)
        for (b1, l1), (b2, l2) in zip(*runs):
            assert np.array_equal(b1, b2) and np.array_equal(l1, l2)

    def test_epoch_is_exact_multiset(self):
        rng = np.random.default_rng(70)
        images, manifest, stats = self._setup(rng, 100)
        counting = CountingSource(ArraySource(images))
        seen = 0
        for batch, labels in dp.batch_iter(manifest, counting, stats, 7, (4, 4), shuffle_seed=1):
            seen += len(labels)
        assert seen == 100
        assert counting.loads == 100  # each path decoded exactly once per epoch

    def test_decoded_residency_stays_within_one_batch(self):
        rng = np.random.default_rng(71)
        images, manifest, stats = self._setup(rng, 40)
        counting = CountingSource(ArraySource(images))
        for _ in dp.batch_iter(manifest, counting, stats, 8, (4, 4)):
            pass
        assert counting.peak <= 8 + 1

    def test_unshuffled_follows_manifest_order(self):
        images, manifest, stats = self._setup(np.random.default_rng(72), 6)
        labels_seen = []
        for _, labels in dp.batch_iter(manifest, ArraySource(images), stats, 4, (4, 4)):
            labels_seen.extend(labels.tolist())
        assert labels_seen == [y for _, y in manifest.entries]

    def test_mid_stream_decode_failure_names_path(self, tmp_path):
        root = tmp_path / "img"
        root.mkdir()
        rng = np.random.default_rng(73)
        dp.encode_ppm(root / "good.ppm", rng.random((3, 4, 4)).astype(np.float32))
        (root / "broken.ppm").write_bytes(b"P6\n4 4\n255\n\x01\x02")
        manifest = dp.Manifest((("good.ppm", 0), ("broken.ppm", 1)))
        stats = dp.StandardizationStats((0.5, 0.5, 0.5), (0.25, 0.25, 0.25))
        stream = dp.batch_iter(manifest, dp.FileImageSource(root), stats, 1, (4, 4))
        next(stream)  # first image decodes fine
        with pytest.raises(dp.DecodeError, match="broken.ppm"):
            next(stream)
