"""Tests for procedural dataset generation, image I/O, and stimulus bookkeeping."""

import numpy as np
import pytest

from advrsa import dataset as ds
from advrsa.network import LayerSpec, Network, NetworkConfig


class TestGeneration:
    def test_per_class_counts_exact(self):
        train, val = ds.generate_dataset(8, 5, 3, seed=0)
        assert len(train) == 40 and len(val) == 24
        for cls in range(8):
            assert np.sum(train.labels == cls) == 5
            assert np.sum(val.labels == cls) == 3

    def test_same_seed_identical(self):
        a_train, a_val = ds.generate_dataset(4, 3, 2, seed=9)
        b_train, b_val = ds.generate_dataset(4, 3, 2, seed=9)
        assert np.array_equal(a_train.images, b_train.images)
        assert np.array_equal(a_val.images, b_val.images)

    def test_different_seed_differs(self):
        a, _ = ds.generate_dataset(4, 3, 1, seed=9)
        b, _ = ds.generate_dataset(4, 3, 1, seed=10)
        assert not np.array_equal(a.images, b.images)

    def test_values_clamped_to_unit_interval(self):
        train, _ = ds.generate_dataset(8, 4, 1, seed=3)
        assert train.images.min() >= 0.0 and train.images.max() <= 1.0

    def test_images_are_counter_seeded(self):
        # any single image can be regenerated in isolation from its spawn key,
        # which is what makes generation independent of worker count/order
        train, _ = ds.generate_dataset(6, 4, 1, seed=17)
        for i in (0, 7, 23):
            rng = np.random.default_rng(list(train.seeds[i]))
            again = ds.render_shape(int(train.labels[i]), rng)
            assert np.array_equal(train.images[i], again)

    def test_too_many_classes_rejected(self):
        with pytest.raises(ValueError, match="num_classes"):
            ds.generate_dataset(len(ds.CLASS_NAMES) + 1, 2, 1, seed=0)

    def test_custom_size_and_channels(self):
        train, _ = ds.generate_dataset(4, 2, 1, seed=5, size=16, channels=2)
        assert train.images.shape == (8, 2, 16, 16)


class TestMeanImage:
    def test_single_image_mean_is_itself(self):
        train, _ = ds.generate_dataset(1, 1, 1, seed=2)
        assert np.array_equal(ds.mean_image(train), train.images[0])

    def test_two_image_mean_is_midpoint(self):
        split = ds.Split(np.stack([np.zeros((3, 4, 4)), np.ones((3, 4, 4))]),
                         np.array([0, 0]), [(0,), (1,)], ["a", "b"])
        assert np.allclose(ds.mean_image(split), 0.5, atol=0)

    def test_matches_streaming_sum_oracle(self):
        train, _ = ds.generate_dataset(5, 6, 1, seed=11)
        acc = np.zeros_like(train.images[0])
        for img in train.images:
            acc += img
        assert np.max(np.abs(ds.mean_image(train) - acc / len(train))) < 1e-12

    def test_permutation_invariant(self):
        train, _ = ds.generate_dataset(4, 4, 1, seed=13)
        perm = np.random.default_rng(0).permutation(len(train))
        shuffled = ds.Split(train.images[perm], train.labels[perm],
                            [train.seeds[i] for i in perm],
                            [train.ids[i] for i in perm])
        assert np.array_equal(ds.mean_image(train), ds.mean_image(shuffled))

    def test_empty_split_rejected(self):
        empty = ds.Split(np.empty((0, 3, 4, 4)), np.empty(0, dtype=np.int64), [], [])
        with pytest.raises(ValueError, match="empty"):
            ds.mean_image(empty)


class TestImageIO:
    def test_sidecar_round_trip_bitwise(self, tmp_path):
        img = np.random.default_rng(1).uniform(0, 1, (3, 8, 8))
        path = tmp_path / "img.ppm"
        ds.write_image(path, img)
        assert np.array_equal(ds.read_image(path), img)

    def test_ppm_round_trip_within_quantization(self, tmp_path):
        img = np.random.default_rng(2).uniform(0, 1, (3, 8, 8))
        path = tmp_path / "img.ppm"
        ds.write_image(path, img)
        assert np.max(np.abs(ds.read_ppm(path) - img)) <= 0.5 / 255 + 1e-12

    def test_black_image_ppm_payload_is_zero(self, tmp_path):
        path = tmp_path / "black.ppm"
        ds.write_image(path, np.zeros((3, 4, 4)))
        data = path.read_bytes()
        assert data.endswith(b"\x00" * (4 * 4 * 3))

    def test_read_prefers_sidecar(self, tmp_path):
        img = np.random.default_rng(3).uniform(0, 1, (3, 4, 4))
        path = tmp_path / "img.ppm"
        ds.write_image(path, img)
        path.write_bytes(b"P6\n4 4\n255\n" + b"\xff" * 48)  # stomp the PPM
        assert np.array_equal(ds.read_image(path), img)

    def test_ppm_comment_embedded_and_skipped_on_read(self, tmp_path):
        img = np.random.default_rng(4).uniform(0, 1, (3, 4, 4))
        path = tmp_path / "img.ppm"
        ds.write_image(path, img, comment="cfg=deadbeef")
        assert b"# cfg=deadbeef\n" in path.read_bytes()
        assert ds.read_ppm(path).shape == (3, 4, 4)

    def test_malformed_ppm_rejected(self, tmp_path):
        bad = tmp_path / "bad.ppm"
        bad.write_bytes(b"P5\n4 4\n255\n" + b"\x00" * 16)
        with pytest.raises(ValueError, match="not a binary PPM"):
            ds.read_ppm(bad)

    def test_truncated_ppm_rejected(self, tmp_path):
        bad = tmp_path / "bad.ppm"
        bad.write_bytes(b"P6\n4 4\n255\n" + b"\x00" * 10)
        with pytest.raises(ValueError, match="payload"):
            ds.read_ppm(bad)

    def test_bad_tensor_magic_rejected(self, tmp_path):
        bad = tmp_path / "bad.tensor"
        bad.write_bytes(b"WRONG!!!" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            ds.read_tensor(bad)

    def test_tensor_payload_length_checked(self, tmp_path):
        path = tmp_path / "t.tensor"
        ds.write_tensor(path, np.zeros((2, 3)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="payload"):
            ds.read_tensor(path)


class TestSplitPersistence:
    def test_round_trip_bitwise(self, tmp_path):
        train, _ = ds.generate_dataset(3, 2, 1, seed=21)
        ds.save_split(tmp_path / "train", train)
        again = ds.load_split(tmp_path / "train")
        assert np.array_equal(again.images, train.images)
        assert np.array_equal(again.labels, train.labels)
        assert again.ids == train.ids
        assert again.seeds == train.seeds
        assert again.name == "train"

    def test_manifest_columns(self, tmp_path):
        train, _ = ds.generate_dataset(2, 1, 1, seed=22)
        ds.save_split(tmp_path / "d", train)
        header = (tmp_path / "d" / "manifest.csv").read_text().splitlines()[0]
        assert header == "id,path,label,split,seed"


def _lookup_network(num_classes, prob_by_key):
    """Stub with the Network surface select_re_stimuli touches: predict + config."""

    class _Cfg:
        pass

    cfg = _Cfg()
    cfg.num_classes = num_classes

    class _Stub:
        config = cfg

        def predict(self, image):
            return prob_by_key[image.tobytes()]

    return _Stub()


class TestSelectReStimuli:
    def _make_val(self, num_classes=4, per_class=4):
        _, val = ds.generate_dataset(num_classes, 1, per_class, seed=31)
        return val

    def test_balanced_selection_at_threshold(self):
        val = self._make_val()
        probs = {}
        for i in range(len(val)):
            row = np.full(4, 0.001)
            row[val.labels[i]] = 0.997
            probs[val.images[i].tobytes()] = row
        net = _lookup_network(4, probs)
        picked, confs = ds.select_re_stimuli(net, val, 8, threshold=0.99)
        assert len(picked) == 8
        counts = np.bincount([p.label for p in picked], minlength=4)
        assert np.array_equal(counts, [2, 2, 2, 2])
        assert all(c >= 0.99 for c in confs.values())

    def test_uneven_k_gives_extras_to_low_classes(self):
        val = self._make_val()
        probs = {}
        for i in range(len(val)):
            row = np.full(4, 0.001)
            row[val.labels[i]] = 0.997
            probs[val.images[i].tobytes()] = row
        picked, _ = ds.select_re_stimuli(_lookup_network(4, probs), val, 10,
                                         threshold=0.99)
        counts = np.bincount([p.label for p in picked], minlength=4)
        assert np.array_equal(counts, [3, 3, 2, 2])

    def test_shortfall_reported_per_class(self):
        val = self._make_val()
        probs = {}
        for i in range(len(val)):
            row = np.full(4, 0.001)
            # class 2 never clears the threshold
            row[val.labels[i]] = 0.5 if val.labels[i] == 2 else 0.997
            probs[val.images[i].tobytes()] = row
        with pytest.raises(ValueError, match=r"class 2 .* short 2"):
            ds.select_re_stimuli(_lookup_network(4, probs), val, 8, threshold=0.99)

    def test_zero_threshold_takes_first_correct_images(self):
        val = self._make_val()
        probs = {}
        for i in range(len(val)):
            row = np.full(4, 0.1)
            row[val.labels[i]] = 0.4  # correct argmax, low confidence
            probs[val.images[i].tobytes()] = row
        picked, _ = ds.select_re_stimuli(_lookup_network(4, probs), val, 4,
                                         threshold=0.0)
        # one per class, each the first of its class in split order
        firsts = {}
        for i in range(len(val)):
            firsts.setdefault(int(val.labels[i]), val.ids[i])
        assert sorted(p.image_id for p in picked) == sorted(firsts.values())


class TestStimulusSet:
    def _one(self, with_meta=None):
        img = np.random.default_rng(5).uniform(0, 1, (3, 4, 4))
        return ds.Stimulus("s0", 1, img, an_image=img.copy(), ai_image=img.copy(),
                           ai_target=2, an_meta=with_meta or {}, ai_meta={})

    def test_low_recorded_confidence_rejected(self):
        with pytest.raises(ValueError, match="below the set threshold"):
            ds.StimulusSet([self._one({"confidence": 0.42})], threshold=0.99)

    def test_missing_images_reported(self):
        s = self._one()
        s.ai_image = None
        sset = ds.StimulusSet([s])
        with pytest.raises(ValueError, match="AI images missing"):
            sset.images("AI")
        assert sset.kinds_present() == ["RE", "AN"]

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        stim = ds.Stimulus("val-disk-0001", 0, rng.uniform(0, 1, (3, 4, 4)),
                           an_image=rng.uniform(0, 1, (3, 4, 4)),
                           ai_image=rng.uniform(0, 1, (3, 4, 4)), ai_target=3,
                           an_meta={"confidence": 0.995, "iterations": 12},
                           ai_meta={"confidence": 0.992, "l2": 1.5})
        sset = ds.StimulusSet([stim], threshold=0.99)
        sset.save(tmp_path / "stims")
        again = ds.StimulusSet.load(tmp_path / "stims")
        s = again.stimuli[0]
        assert np.array_equal(s.re_image, stim.re_image)
        assert np.array_equal(s.an_image, stim.an_image)
        assert np.array_equal(s.ai_image, stim.ai_image)
        assert s.ai_target == 3 and s.an_meta["iterations"] == 12
        assert again.threshold == 0.99


class TestTaskIsNontrivial:
    def test_linear_classifier_below_toy_cnn(self):
        # the shape task should reward spatial feature extraction: a linear
        # map on raw pixels must do measurably worse than a small conv net
        train, val = ds.generate_dataset(4, 24, 8, seed=77, size=16)
        linear_cfg = NetworkConfig(
            layers=(LayerSpec.flatten(), LayerSpec.affine(4), LayerSpec.softmax()),
            input_shape=(3, 16, 16), num_classes=4)
        conv_cfg = NetworkConfig(
            layers=(LayerSpec.conv(8, 5, stride=1, padding=2), LayerSpec.relu(),
                    LayerSpec.pool(2),
                    LayerSpec.conv(16, 3, stride=1, padding=1), LayerSpec.relu(),
                    LayerSpec.pool(2),
                    LayerSpec.flatten(), LayerSpec.affine(32), LayerSpec.relu(),
                    LayerSpec.affine(4), LayerSpec.softmax()),
            input_shape=(3, 16, 16), num_classes=4)
        linear = Network.init(linear_cfg, seed=0)
        conv = Network.init(conv_cfg, seed=0)
        linear.train(train, val, epochs=20, learning_rate=0.02, batch_size=16, seed=0)
        conv.train(train, val, epochs=20, learning_rate=0.02, batch_size=16, seed=0)
        _, linear_acc = linear.evaluate(val)
        _, conv_acc = conv.evaluate(val)
        assert conv_acc > linear_acc
