from __future__ import annotations

import json
import os
import pathlib
import tempfile
import threading
import unittest
from unittest import mock

from utils.errors import ConfigError
from utils.misc import atomic_write_text
from utils.run_config import ModelConfig, RunConfig
from utils.startup import THREADS_ENV_VAR, parallel_map, resolve_thread_count


class RunConfigSourceTests(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.root = pathlib.Path(self._tmp.name)

    def _write(self, payload: object) -> pathlib.Path:
        path = self.root / "config.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    def test_defaults(self) -> None:
        config = RunConfig.from_sources()
        self.assertEqual(config.model, ModelConfig())
        self.assertEqual((config.scene.height, config.scene.width), (64, 96))

    def test_flags_override_file(self) -> None:
        path = self._write({"seed": 3, "model": {"iterations": 6, "heads": 2}, "train": {"steps": 10}})
        config = RunConfig.from_sources(path, {"model.iterations": 2, "train.steps": None})
        self.assertEqual(config.model.iterations, 2)
        self.assertEqual(config.model.heads, 2)
        self.assertEqual(config.train.steps, 10)
        self.assertEqual(config.scene.seed, 3)

    def test_echo_round_trip(self) -> None:
        config = RunConfig.from_sources(overrides={"scene.textures": ["checker"], "model.ablate": "no-warp"})
        again = RunConfig.from_dict(json.loads(config.to_json()))
        again.validate()
        self.assertEqual(again.to_json(), config.to_json())
        self.assertEqual(again.scene.textures, ("checker",))

    def test_unknown_keys(self) -> None:
        with self.assertRaises(ConfigError):
            RunConfig.from_sources(self._write({"modle": {}}))
        with self.assertRaises(ConfigError):
            RunConfig.from_sources(overrides={"model.depth": 3})

    def test_invalid_values(self) -> None:
        bad = (
            {"model.stride_ratio": 3},
            {"model.blocks": "SXT"},
            {"model.token_width": 10, "model.heads": 4},
            {"loss.gamma": 0.0},
            {"optim.lr": -1.0},
            {"train.batch_size": 0},
            {"scene.frames_min": 1},
        )
        for overrides in bad:
            with self.subTest(overrides=overrides), self.assertRaises(ConfigError):
                RunConfig.from_sources(overrides=overrides)

    def test_unreadable_file(self) -> None:
        with self.assertRaises(ConfigError):
            RunConfig.from_sources(self.root / "missing.json")
        with self.assertRaises(ConfigError):
            RunConfig.from_sources(self._write([1, 2]))
        broken = self.root / "broken.json"
        broken.write_text("{", encoding="utf-8")
        with self.assertRaises(ConfigError):
            RunConfig.from_sources(broken)


class ConfigHashTests(unittest.TestCase):
    def test_hash_ignores_run_details(self) -> None:
        base = RunConfig.from_sources()
        other = RunConfig.from_sources(
            overrides={"train.stop_after": 5, "out": "elsewhere", "threads": 4, "command": "train"}
        )
        self.assertEqual(base.config_hash(), other.config_hash())

    def test_hash_tracks_semantics(self) -> None:
        base = RunConfig.from_sources().config_hash()
        for overrides in ({"seed": 1}, {"optim.lr": 1e-3}, {"model.blocks": "ST"}, {"scene.height": 32}):
            with self.subTest(overrides=overrides):
                self.assertNotEqual(RunConfig.from_sources(overrides=overrides).config_hash(), base)

    def test_effective_values(self) -> None:
        model = ModelConfig(stride_ratio=8, ablate="single-pass", feature_channels=16, hidden_dim=20)
        self.assertEqual(model.effective_patch, 1)
        self.assertEqual(model.effective_iterations, 1)
        self.assertEqual(model.token_channels, 54)
        self.assertEqual(ModelConfig(patch=3).effective_patch, 3)


class ThreadCountTests(unittest.TestCase):
    def test_precedence(self) -> None:
        with mock.patch.dict(os.environ, {THREADS_ENV_VAR: "3"}):
            self.assertEqual(resolve_thread_count(2), 2)
            self.assertEqual(resolve_thread_count(None), 3)
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertGreaterEqual(resolve_thread_count(None), 1)

    def test_rejects_bad_values(self) -> None:
        with self.assertRaises(ConfigError):
            resolve_thread_count(0)
        with mock.patch.dict(os.environ, {THREADS_ENV_VAR: "many"}), self.assertRaises(ConfigError):
            resolve_thread_count(None)


class ParallelMapTests(unittest.TestCase):
    def test_results_keep_input_order(self) -> None:
        seen: list[int] = []
        lock = threading.Lock()

        def record(index: int, _result: int) -> None:
            with lock:
                seen.append(index)

        for threads in (1, 4):
            seen.clear()
            with self.subTest(threads=threads):
                self.assertEqual(parallel_map(lambda x: x * x, range(10), threads, on_complete=record), [x * x for x in range(10)])
                self.assertEqual(sorted(seen), list(range(10)))

    def test_errors_propagate(self) -> None:
        def explode(x: int) -> int:
            if x == 2:
                msg = "boom"
                raise ValueError(msg)
            return x

        for threads in (1, 3):
            with self.subTest(threads=threads), self.assertRaises(ValueError):
                parallel_map(explode, range(4), threads)


class AtomicWriteTests(unittest.TestCase):
    def test_replaces_target_without_leftovers(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            target = pathlib.Path(tmp) / "nested" / "out.txt"
            atomic_write_text(target, "first")
            atomic_write_text(target, "second")
            self.assertEqual(target.read_text(encoding="utf-8"), "second")
            self.assertEqual(sorted(p.name for p in target.parent.iterdir()), ["out.txt"])


if __name__ == "__main__":
    unittest.main()
