from pathlib import Path

import numpy as np
import pytest

from afbeat.interpret import cam_from_maps, compute_cam, read_cam_csv, render_cam, upsample
from afbeat.io_formats import load_weights
from afbeat.net1d import Net1dConfig, build_model, reduced_config
from afbeat.plots import saliency_colors

TINY = Path(__file__).parent / "data" / "tiny_cam.n1dw"


class TestTinyModelByHand:
    """Two-channel stem (k=1) straight into the pooled linear head, length 4.

    x = [1, -1, 2, 0]; stem w = [1, -0.5], b = [0, 0.5]
      v0 = [1, -1, 2, 0], v1 = [0, 1, -0.5, 0.5]; channel means 0.5, 0.25
    head W = [[0.5, -1], [-0.5, 1]], b = 0 -> logits [0, 0] -> p = [0.5, 0.5]
    target 1: dL/dlogits = p - e1 = [0.5, -0.5]
      dL/dmean = W^T [0.5, -0.5] = [0.5, -1]; dL/dv = that / 4 = [0.125, -0.25]
      sum_c v*w = [0.125, -0.375, 0.375, -0.125] -> relu [0.125, 0, 0.375, 0]
    """

    x = [1.0, -1.0, 2.0, 0.0]

    def test_fixture_values(self):
        w = load_weights(TINY)
        np.testing.assert_array_equal(w.tensors["stem.conv.weight"].ravel(), [1.0, -0.5])
        np.testing.assert_array_equal(w.tensors["head.fc.weight"], [[0.5, -1.0], [-0.5, 1.0]])

    def test_target_af(self):
        r = compute_cam(load_weights(TINY), self.x, target_class=1, layer="stem", keep_maps=True)
        np.testing.assert_allclose(r.probabilities, [0.5, 0.5], atol=1e-6)
        np.testing.assert_allclose(r.activations, [[1, -1, 2, 0], [0, 1, -0.5, 0.5]], atol=1e-6)
        np.testing.assert_allclose(r.gradients, [[0.125] * 4, [-0.25] * 4], atol=1e-6)
        np.testing.assert_allclose(r.raw_map, [0.125, 0.0, 0.375, 0.0], atol=1e-6)
        np.testing.assert_allclose(r.upsampled_map, [1 / 3, 0.0, 1.0, 0.0], atol=1e-6)

    def test_target_sinus(self):
        r = compute_cam(load_weights(TINY), self.x, target_class=0, layer="stem")
        np.testing.assert_allclose(r.raw_map, [0.0, 0.375, 0.0, 0.125], atol=1e-6)
        np.testing.assert_allclose(r.upsampled_map, [0.0, 1.0, 0.0, 1 / 3], atol=1e-6)

    def test_default_layer_is_stem_without_blocks(self):
        assert compute_cam(load_weights(TINY), self.x).source_layer == "stem"


class TestUpsample:
    def test_cell_centre_interpolation(self):
        np.testing.assert_allclose(upsample([0.0, 1.0], 4), [0.0, 0.25, 0.75, 1.0])

    def test_zero_map_stays_zero(self):
        assert not np.any(upsample(np.zeros(3), 200))

    def test_channel_permutation_invariant(self):
        rng = np.random.default_rng(0)
        v, w = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
        perm = rng.permutation(6)
        a, _ = cam_from_maps(v, w, 20)
        b, _ = cam_from_maps(v[perm], w[perm], 20)
        np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.fixture(scope="module")
def full32():
    return build_model(Net1dConfig(), seed=1, dtype=np.float32)


class TestContracts:
    def test_range_length_and_read_only(self, full32):
        rng = np.random.default_rng(0)
        before = {k: v.copy() for k, v in full32.tensors.items()}
        for _ in range(10):
            beat = rng.normal(size=200).astype(np.float32)
            r = compute_cam(full32, beat)
            assert r.upsampled_map.shape == (200,)
            assert r.upsampled_map.min() >= 0 and r.upsampled_map.max() <= 1
            assert np.all(r.raw_map >= 0)
        assert all(full32.tensors[k].tobytes() == before[k].tobytes() for k in before)

    def test_probabilities_match_forward(self, full32):
        from afbeat.net1d import predict_proba
        beat = np.random.default_rng(1).normal(size=200).astype(np.float32)
        r = compute_cam(full32, beat)
        assert r.probabilities[1] == pytest.approx(predict_proba(full32, beat[None])[0], abs=1e-6)

    def test_zero_gradient_path(self):
        w = build_model(reduced_config(beat_length=200), 0)
        w.tensors["head.fc.weight"][:] = 0.0
        r = compute_cam(w, np.random.default_rng(2).normal(size=200))
        assert not np.any(r.raw_map) and not np.any(r.upsampled_map)

    def test_unknown_layer(self, full32):
        with pytest.raises(KeyError, match="unknown layer"):
            compute_cam(full32, np.zeros(200), layer="s9.b9.conv2")

    def test_bad_target(self, full32):
        with pytest.raises(ValueError):
            compute_cam(full32, np.zeros(200), target_class=2)


class TestRendering:
    def test_zero_map_uniform_colour(self):
        assert len(set(saliency_colors(np.zeros(200)))) == 1

    def test_monotone_map_monotone_ramp(self):
        from matplotlib import colormaps
        from matplotlib.colors import to_hex
        lut = {to_hex(c): i for i, c in enumerate(colormaps["viridis"](np.arange(256)))}
        pos = [lut[c] for c in saliency_colors(np.linspace(0, 1, 200))]
        assert pos[0] == 0 and pos[-1] == 255
        assert all(b >= a for a, b in zip(pos, pos[1:]))

    def test_sidecar_round_trip_and_determinism(self, tmp_path, full32):
        beat = np.random.default_rng(3).normal(size=200).astype(np.float32)
        r = compute_cam(full32, beat)
        csv = render_cam(beat, r, tmp_path / "a.svg")
        vals, cols = read_cam_csv(csv)
        np.testing.assert_array_equal(vals, r.upsampled_map)
        assert cols == saliency_colors(r.upsampled_map)
        render_cam(beat, r, tmp_path / "b.svg")
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
        assert (tmp_path / "a.svg").read_text().lstrip().startswith("<?xml")
