import numpy as np
import numpy.testing as npt
import pytest

from faceverify.linalg import make_rng
from faceverify.metric import init_model
from faceverify.micronet import build_face_net
from faceverify.storage import (
    read_checkpoint,
    read_features,
    read_metric_model,
    write_checkpoint,
    write_features,
    write_metric_model,
)


class TestCheckpoint:
    def test_roundtrip_preserves_everything(self, tmp_path):
        net = build_face_net(num_classes=6, input_size=16, width_divisor=8)
        net.initialize(make_rng(0), 0.1)
        net.input_mean = 0.4375
        path = tmp_path / "model.jvnt"
        write_checkpoint(path, net)
        back = read_checkpoint(path)

        assert back.spec == net.spec
        assert back.input_mean == net.input_mean
        for (l1, n1, v1, _, _), (l2, n2, v2, _, _) in zip(net.param_items(), back.param_items()):
            npt.assert_array_equal(v1, v2)

    def test_roundtrip_forward_identical(self, tmp_path):
        net = build_face_net(num_classes=4, input_size=16, width_divisor=8)
        net.initialize(make_rng(1), 0.1)
        path = tmp_path / "model.jvnt"
        write_checkpoint(path, net)
        back = read_checkpoint(path)
        x = make_rng(2).random((2, 16, 16, 1))
        npt.assert_array_equal(net.features(x), back.features(x))

    def test_float32_net_serializes_as_float64(self, tmp_path):
        net = build_face_net(num_classes=4, input_size=16, width_divisor=8, dtype=np.float32)
        net.initialize(make_rng(3), 0.1)
        path = tmp_path / "model.jvnt"
        write_checkpoint(path, net)
        back = read_checkpoint(path)
        for (_, _, v1, _, _), (_, _, v2, _, _) in zip(net.param_items(), back.param_items()):
            npt.assert_allclose(v1, v2, atol=0)  # exact: f32 embeds in f64

    def test_magic_enforced(self, tmp_path):
        path = tmp_path / "junk.jvnt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="checkpoint"):
            read_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        net = build_face_net(num_classes=4, input_size=16, width_divisor=8)
        path = tmp_path / "model.jvnt"
        write_checkpoint(path, net)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(ValueError, match="truncated"):
            read_checkpoint(path)


class TestFeatures:
    def test_roundtrip(self, tmp_path):
        rng = make_rng(4)
        feats = rng.standard_normal((5, 8)).astype(np.float32)
        ids = [f"media/{k}.pgm" for k in range(5)]
        path = tmp_path / "f.jvfe"
        write_features(path, feats, ids)
        back, back_ids = read_features(path)
        assert back.dtype == np.float64
        npt.assert_array_equal(back, feats.astype(np.float64))
        assert back_ids == ids

    def test_float64_input_narrowed_to_f32_on_disk(self, tmp_path):
        feats = np.array([[1 / 3, 2 / 3]])
        path = tmp_path / "f.jvfe"
        write_features(path, feats, ["a"])
        back, _ = read_features(path)
        npt.assert_array_equal(back, feats.astype(np.float32).astype(np.float64))

    def test_id_count_mismatch_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_features(tmp_path / "f.jvfe", np.zeros((2, 3)), ["only-one"])

    def test_sidecar_mismatch_detected(self, tmp_path):
        path = tmp_path / "f.jvfe"
        write_features(path, np.zeros((2, 3)), ["a", "b"])
        (tmp_path / "f.jvfe.ids").write_text("a\n")
        with pytest.raises(ValueError, match="sidecar"):
            read_features(path)

    def test_magic_enforced(self, tmp_path):
        path = tmp_path / "bad.jvfe"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(ValueError, match="feature"):
            read_features(path)


class TestMetricModel:
    def test_roundtrip_exact(self, tmp_path):
        model = init_model(6, make_rng(5))
        model.b = -0.125
        path = tmp_path / "m.jvjb"
        write_metric_model(path, model)
        back = read_metric_model(path)
        npt.assert_array_equal(back.M, model.M)
        npt.assert_array_equal(back.B, model.B)
        assert back.b == model.b

    def test_magic_enforced(self, tmp_path):
        path = tmp_path / "bad.jvjb"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(ValueError, match="model"):
            read_metric_model(path)

    def test_byte_identical_rewrite(self, tmp_path):
        model = init_model(4, make_rng(6))
        p1, p2 = tmp_path / "a.jvjb", tmp_path / "b.jvjb"
        write_metric_model(p1, model)
        write_metric_model(p2, model)
        assert p1.read_bytes() == p2.read_bytes()
