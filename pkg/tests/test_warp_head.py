from __future__ import annotations

import math
import pathlib
import tempfile
import unittest

import numpy as np

from tests._support import tiny_model
from utils import autodiff as ad
from utils.autodiff import Tensor
from utils.encoder import FeatureField, PadInfo
from utils.errors import DimensionError, UsageError
from utils.gradcheck import check_gradients
from utils.warp_head import (
    HeadParams,
    HiddenState,
    TrackField,
    assemble_tokens,
    feature_tokens,
    init_model_params,
    init_state,
    read_tracks_json,
    readout,
    to_feature_coords,
    track,
    update,
    warp,
    write_tracks_json,
)


def _field(frames: int = 3, channels: int = 4, gh: int = 3, gw: int = 5, stride: int = 4) -> FeatureField:
    data = np.random.default_rng(0).normal(size=(frames, channels, gh, gw))
    pad = PadInfo(gh * stride, gw * stride, 0, 0)
    return FeatureField(Tensor(data, dtype=np.float64), stride, pad)


def _bilinear_at(fmap: np.ndarray, x: float, y: float) -> np.ndarray:
    """逐點雙線性內插 [C]，座標截斷到邊界。"""
    _, height, width = fmap.shape
    x = min(max(x, 0.0), width - 1.0)
    y = min(max(y, 0.0), height - 1.0)
    x0, y0 = math.floor(x), math.floor(y)
    x1, y1 = min(x0 + 1, width - 1), min(y0 + 1, height - 1)
    ax, ay = x - x0, y - y0
    return (
        (1 - ax) * (1 - ay) * fmap[:, y0, x0]
        + ax * (1 - ay) * fmap[:, y0, x1]
        + (1 - ax) * ay * fmap[:, y1, x0]
        + ax * ay * fmap[:, y1, x1]
    )


class WarpTests(unittest.TestCase):
    def test_zero_displacement_is_identity(self) -> None:
        features = _field()
        u = Tensor(np.zeros((3, 15, 2)), dtype=np.float64)
        np.testing.assert_array_equal(warp(features, u).data, feature_tokens(features).data)

    def test_integer_cell_shift(self) -> None:
        features = _field()
        shift = np.zeros((3, 15, 2))
        shift[..., 0] = features.stride
        out = warp(features, Tensor(shift, dtype=np.float64)).data
        grid = features.features.data
        for i in range(3):
            for j in range(5):
                expected = grid[:, :, i, min(j + 1, 4)]
                np.testing.assert_allclose(out[:, i * 5 + j], expected, atol=1e-12)

    def test_fractional_displacement_matches_pointwise_bilinear(self) -> None:
        features = _field()
        fmaps = features.features.data
        frames, _, gh, gw = fmaps.shape
        for seed in range(4):
            with self.subTest(seed=seed):
                u = np.random.default_rng(10 + seed).uniform(-9.0, 9.0, size=(frames, gh * gw, 2))
                out = warp(features, Tensor(u, dtype=np.float64)).data
                for t in range(frames):
                    for n in range(gh * gw):
                        i, j = divmod(n, gw)
                        x = j + u[t, n, 0] / features.stride
                        y = i + u[t, n, 1] / features.stride
                        np.testing.assert_allclose(out[t, n], _bilinear_at(fmaps[t], x, y), atol=1e-6)

    def test_feature_coordinates(self) -> None:
        np.testing.assert_allclose(to_feature_coords(np.array([[1.5, 5.5]]), 4), [[0.0, 1.0]])
        np.testing.assert_allclose(to_feature_coords(np.array([[0.0, 2.0]]), 1), [[0.0, 2.0]])

    def test_assemble_tokens_layout(self) -> None:
        g = Tensor(np.ones((2, 6, 4)))
        f0 = Tensor(np.full((6, 4), 2.0))
        u = Tensor(np.full((2, 6, 2), 3.0))
        h = Tensor(np.full((2, 6, 5), 4.0))
        z = assemble_tokens(g, f0, u, h)
        self.assertEqual(z.shape, (2, 6, 15))
        np.testing.assert_array_equal(z.data[1, 0], [1] * 4 + [2] * 4 + [3] * 2 + [4] * 5)
        with self.assertRaises(DimensionError):
            assemble_tokens(g, Tensor(np.ones((5, 4))), u, h)


class HeadStateTests(unittest.TestCase):
    def setUp(self) -> None:
        self.cfg = tiny_model()
        self.enterContext(ad.default_dtype(np.float64))
        self.store = init_model_params(self.cfg, 11)
        self.params = HeadParams.from_store(self.store, self.cfg)
        self.features = _field(frames=4, channels=self.cfg.feature_channels, gh=4, gw=4, stride=4)

    def _displacement(self, seed: int) -> np.ndarray:
        u = np.random.default_rng(seed).normal(size=(4, 16, 2))
        u[0] = 0.0
        return u

    def _tokens(self, u: np.ndarray, h: Tensor) -> Tensor:
        f_tokens = feature_tokens(self.features)
        return assemble_tokens(warp(self.features, Tensor(u)), f_tokens[0], Tensor(u), h)

    def test_init_state_is_symmetric_in_identical_frames(self) -> None:
        self.features.features.data[2] = self.features.features.data[0]
        field, hidden = init_state(self.features, self.params)
        np.testing.assert_array_equal(field.u.data, 0.0)
        self.assertEqual(hidden.h.shape, (4, 16, self.cfg.hidden_dim))
        np.testing.assert_allclose(hidden.h.data[2], hidden.h.data[0], atol=1e-12)
        self.assertFalse(np.allclose(hidden.h.data[1], hidden.h.data[0]))

    def test_zero_residual_keeps_displacement(self) -> None:
        self.store["head.w_u"].data[...] = 0.0
        _, hidden = init_state(self.features, self.params)
        u = self._displacement(12)
        field = TrackField(Tensor(u), (4, 4), 4)
        new_field, new_hidden = update(field, self._tokens(u, hidden.h), self.params, self.cfg)
        np.testing.assert_array_equal(new_field.u.data, u)
        self.assertEqual(new_hidden.h.shape, hidden.h.shape)

    def test_target_frame_order_without_temporal_embedding(self) -> None:
        order = [0, 3, 1, 2]
        u = self._displacement(13)
        h = Tensor(np.random.default_rng(14).normal(size=(4, 16, self.cfg.hidden_dim)))
        tokens = self._tokens(u, h).data
        for embedded in (False, True):
            cfg = tiny_model(temporal_embedding=embedded)
            with self.subTest(temporal_embedding=embedded):
                base_field, base_hidden = update(TrackField(Tensor(u), (4, 4), 4), Tensor(tokens), self.params, cfg)
                moved_field, moved_hidden = update(
                    TrackField(Tensor(u[order]), (4, 4), 4), Tensor(tokens[order]), self.params, cfg
                )
                same_u = np.allclose(moved_field.u.data, base_field.u.data[order], atol=1e-10)
                same_h = np.allclose(moved_hidden.h.data, base_hidden.h.data[order], atol=1e-10)
                self.assertEqual(same_u and same_h, not embedded)

    def test_readout_heads(self) -> None:
        hidden = HiddenState(Tensor(np.random.default_rng(15).normal(size=(4, 16, self.cfg.hidden_dim))))
        v_before, tau_before = readout(hidden, self.params)
        self.assertEqual(v_before.shape, (4, 16))
        self.assertTrue(((tau_before.data > 0) & (tau_before.data < 1)).all())

        self.store["head.w_tau"].data[...] += 1.0
        v_after, tau_after = readout(hidden, self.params)
        np.testing.assert_array_equal(v_after.data, v_before.data)
        self.assertFalse(np.allclose(tau_after.data, tau_before.data))

        self.store["head.w_v"].data[...] = 0.0
        self.store["head.b_v"].data[...] = 0.0
        v_zero, _ = readout(hidden, self.params)
        np.testing.assert_array_equal(v_zero.data, 0.5)


class TrackTests(unittest.TestCase):
    def setUp(self) -> None:
        self.frames = np.random.default_rng(4).random((3, 3, 16, 16)).astype(np.float32)

    def test_result_structure(self) -> None:
        cfg = tiny_model()
        result = track(init_model_params(cfg, 0), self.frames, cfg)
        self.assertEqual(result.iterations, 2)
        self.assertEqual(len(result.u_list), 2)
        self.assertEqual(result.track_field.grid_shape, (4, 4))
        self.assertEqual(result.track_field.u.shape, (3, 16, 2))
        for u in result.u_list:
            np.testing.assert_array_equal(u.data[0], 0.0)
        for probs in (result.visibility.data, result.confidence.data):
            self.assertEqual(probs.shape, (3, 16))
            self.assertTrue(((probs > 0) & (probs < 1)).all())

    def test_queries_on_grid_match_positions(self) -> None:
        cfg = tiny_model()
        result = track(init_model_params(cfg, 0), self.frames, cfg)
        grid = result.track_field.grid_points()
        tracks, vis, _ = result.at_queries(grid)
        np.testing.assert_allclose(tracks.data, result.track_field.positions(), atol=1e-5)
        np.testing.assert_allclose(vis.data, result.visibility.data, atol=1e-6)

    def test_dense_flow_shape(self) -> None:
        cfg = tiny_model()
        result = track(init_model_params(cfg, 0), self.frames[:2], cfg)
        flow = result.dense_flow(16, 16)
        self.assertEqual(flow.shape, (2, 16, 16))
        np.testing.assert_allclose(flow[:, 1, 1], result.track_field.u.data[1, 0], atol=1e-6)

    def test_zero_head_weights_leave_points_stationary(self) -> None:
        cfg = tiny_model()
        store = init_model_params(cfg, 0)
        for name in store.names():
            if name.startswith("head."):
                store[name].data[...] = 0.0
        result = track(store, self.frames, cfg, iterations=1)
        self.assertEqual(len(result.u_list), 1)
        np.testing.assert_array_equal(result.track_field.u.data, 0.0)
        np.testing.assert_array_equal(result.visibility.data, 0.5)
        np.testing.assert_array_equal(result.confidence.data, 0.5)

    def test_single_pass_ablation(self) -> None:
        cfg = tiny_model(ablate="single-pass", iterations=4)
        result = track(init_model_params(cfg, 0), self.frames, cfg, iterations=3)
        self.assertEqual(result.iterations, 1)

    def test_no_warp_ablation_runs(self) -> None:
        cfg = tiny_model(ablate="no-warp")
        result = track(init_model_params(cfg, 0), self.frames, cfg)
        self.assertEqual(result.track_field.u.shape, (3, 16, 2))

    def test_frames_interact_only_through_temporal_blocks(self) -> None:
        perturbed = self.frames.copy()
        perturbed[2] = 1.0 - perturbed[2]
        for ablate, coupled in ((None, True), ("no-temporal", False)):
            cfg = tiny_model(ablate=ablate)
            store = init_model_params(cfg, 3)
            with ad.default_dtype(np.float64):
                store = store.astype(np.float64)
                base = track(store, self.frames.astype(np.float64), cfg).track_field.u.data
                moved = track(store, perturbed.astype(np.float64), cfg).track_field.u.data
            with self.subTest(ablate=ablate):
                self.assertEqual(not np.allclose(base[1], moved[1], atol=1e-12), coupled)

    def test_rejects_bad_inputs(self) -> None:
        cfg = tiny_model()
        store = init_model_params(cfg, 0)
        with self.assertRaises(UsageError):
            track(store, self.frames[:1], cfg)
        with self.assertRaises(UsageError):
            track(store, self.frames, cfg, iterations=0)

    def test_head_gradients(self) -> None:
        cfg = tiny_model(iterations=2)
        with ad.default_dtype(np.float64):
            store = init_model_params(cfg, 2)
            frames = self.frames.astype(np.float64)
            weights = np.random.default_rng(8).normal(size=(3, 16, 2))
            vis_weights = np.random.default_rng(9).normal(size=(3, 16))

            def loss() -> Tensor:
                result = track(store, frames, cfg)
                return ad.tsum(result.track_field.u * weights) + ad.tsum(result.visibility * vis_weights)

            inputs = [store["head.w_u"], store["head.patch.w"], store["head.block1.attn.q.w"], store["head.phi.w"]]
            result = check_gradients(loss, inputs, eps=1e-6, max_entries=4)
        self.assertTrue(result.passed(1e-4), result)


class TracksJsonTests(unittest.TestCase):
    def test_write_and_read(self) -> None:
        rng = np.random.default_rng(0)
        tracks = rng.normal(size=(3, 4, 2))
        vis = rng.random((3, 4))
        conf = rng.random((3, 4))
        with tempfile.TemporaryDirectory() as tmp:
            path = write_tracks_json(pathlib.Path(tmp) / "tracks.json", tracks, vis, conf, 2)
            got_tracks, got_vis, got_conf, stride = read_tracks_json(path)
        np.testing.assert_array_equal(got_tracks, tracks)
        np.testing.assert_array_equal(got_vis, vis)
        np.testing.assert_array_equal(got_conf, conf)
        self.assertEqual(stride, 2)

    def test_malformed_file(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / "tracks.json"
            path.write_text('{"T": 1, "N": 3, "stride": 2, "tracks": [[0, 0]], "visibility": [], "confidence": []}', encoding="utf-8")
            with self.assertRaises(UsageError):
                read_tracks_json(path)


if __name__ == "__main__":
    unittest.main()
