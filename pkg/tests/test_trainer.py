"""Training-loop tests: hand-replicated update wiring, determinism,
checkpoint round-trips, and split-run (interrupt/resume) equivalence."""

import json
from dataclasses import replace

import numpy as np
import pytest

from latent_loom import nn_core as nn
from latent_loom.data_ingest import Dataset
from latent_loom.dgm_model import LossWeights, Model, ModelConfig
from latent_loom.trainer import (
    CorruptManifest,
    EmptyDataset,
    EpochSnapshot,
    TrainConfig,
    VersionMismatch,
    fit,
    load_checkpoint,
    pretrain_unsupervised,
    save_checkpoint,
)

TINY = ModelConfig(
    latent_dim=2,
    classifier_hidden_layers=1,
    classifier_units=4,
    image_size=8,
    conv_channels=(2, 3),
    dense_units=5,
)


def toy_dataset(n=11, seed=0, labeled_frac=0.6) -> Dataset:
    rng = np.random.default_rng(seed)
    mask = rng.uniform(size=n) < labeled_frac
    return Dataset(
        images=rng.uniform(0, 1, size=(n, 8, 8)).astype(np.float32),
        labels=rng.integers(0, 10, size=n).astype(np.int16),
        label_mask=mask,
        sample_ids=np.arange(100, 100 + n, dtype=np.int64),
    )


def tiny_config(**kw) -> TrainConfig:
    base = dict(epochs=2, batch_size=4, learning_rate=1e-3, weights=LossWeights(1.0, 2.0), seed=5)
    base.update(kw)
    return TrainConfig(**base)


def params_snapshot(model: Model) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in model.params.items()}


def assert_params_equal(a: dict, b: dict):
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name], err_msg=name)


# ---------------------------------------------------------------- wiring oracle


def replay_fit_by_hand(model: Model, ds: Dataset, cfg: TrainConfig, cycle=0):
    """Re-drive the exact update sequence fit() promises: per-epoch stream
    permutation, per-batch stream noise, one Adam step per batch."""
    state = nn.init_adam(model.params, lr=cfg.learning_rate)
    onehot = ds.one_hot()
    d = model.config.latent_dim
    for epoch in range(1, cfg.epochs + 1):
        perm = nn.stream_rng(cfg.seed, cycle, epoch).permutation(ds.n)
        for b_idx, lo in enumerate(range(0, ds.n, cfg.batch_size)):
            idx = perm[lo : lo + cfg.batch_size]
            eps = nn.stream_rng(cfg.seed, cycle, epoch, b_idx).standard_normal((idx.size, d), dtype=np.float32)
            total, _ = model.total_loss(ds.images[idx], onehot[idx], ds.label_mask[idx], cfg.weights, eps)
            nn.adam_step(model.params, nn.backward(total, model.params), state)
    return model


class TestFitWiring:
    def test_matches_hand_replayed_updates_bitwise(self):
        ds = toy_dataset()
        cfg = tiny_config()
        trained = Model(TINY, seed=3)
        fit(trained, ds, cfg)
        replayed = replay_fit_by_hand(Model(TINY, seed=3), ds, cfg)
        assert_params_equal(params_snapshot(trained), params_snapshot(replayed))

    def test_zero_epochs_is_a_noop(self):
        ds = toy_dataset()
        m = Model(TINY, seed=1)
        before = params_snapshot(m)
        _, snaps = fit(m, ds, tiny_config(epochs=0))
        assert snaps == []
        assert_params_equal(before, params_snapshot(m))

    def test_same_inputs_reproduce_bitwise(self):
        ds = toy_dataset()
        cfg = tiny_config(epochs=3)
        runs = []
        for _ in range(2):
            m = Model(TINY, seed=9)
            _, snaps = fit(m, ds, cfg)
            runs.append((params_snapshot(m), snaps))
        assert_params_equal(runs[0][0], runs[1][0])
        for a, b in zip(runs[0][1], runs[1][1]):
            assert a.loss == b.loss
            np.testing.assert_array_equal(a.points.mu, b.points.mu)

    def test_different_cycles_take_different_paths(self):
        ds = toy_dataset()
        cfg = tiny_config(epochs=1)
        m0, m1 = Model(TINY, seed=2), Model(TINY, seed=2)
        fit(m0, ds, cfg, cycle=0)
        fit(m1, ds, cfg, cycle=1)
        assert any(
            not np.array_equal(m0.params[n].data, m1.params[n].data) for n in m0.params.names()
        )

    def test_empty_dataset_rejected(self):
        empty = Dataset(
            images=np.zeros((0, 8, 8), dtype=np.float32),
            labels=np.zeros(0, dtype=np.int16),
            label_mask=np.zeros(0, dtype=bool),
            sample_ids=np.zeros(0, dtype=np.int64),
        )
        with pytest.raises(EmptyDataset):
            fit(Model(TINY), empty, tiny_config())

    def test_nonfinite_abort_reports_epoch_and_batch(self):
        ds = toy_dataset()
        m = Model(TINY, seed=0)
        m.params.set_data("encoder.mu.b", np.full(2, 1e25, dtype=np.float32))
        with np.errstate(over="ignore"), pytest.raises(nn.NonFiniteLoss, match=r"epoch 1, batch 0"):
            fit(m, ds, tiny_config())


# ---------------------------------------------------------------- snapshots


class TestSnapshots:
    @pytest.mark.parametrize(
        "epochs,every,expected_epochs",
        [
            (5, 1, [1, 2, 3, 4, 5]),
            (5, 2, [2, 4, 5]),
            (4, 2, [2, 4]),
            (1, 3, [1]),
            (6, 3, [3, 6]),
        ],
    )
    def test_snapshot_cadence_always_includes_final_epoch(self, epochs, every, expected_epochs):
        ds = toy_dataset(n=6)
        m = Model(TINY, seed=4)
        _, snaps = fit(m, ds, tiny_config(epochs=epochs, snapshot_every=every))
        assert [s.epoch for s in snaps] == expected_epochs

    def test_points_cover_every_sample_exactly_once(self):
        ds = toy_dataset(n=9)
        _, snaps = fit(Model(TINY, seed=4), ds, tiny_config(epochs=1))
        assert sorted(snaps[0].points.sample_ids.tolist()) == sorted(ds.sample_ids.tolist())

    def test_loss_components_recombine(self):
        ds = toy_dataset()
        cfg = tiny_config(epochs=3)
        _, snaps = fit(Model(TINY, seed=6), ds, cfg)
        for s in snaps:
            assert s.loss.total == pytest.approx(s.loss.recombined(cfg.weights), rel=1e-6)
            assert np.isfinite(s.loss.total)

    def test_snapshot_arrays_are_read_only(self):
        ds = toy_dataset()
        _, snaps = fit(Model(TINY, seed=4), ds, tiny_config(epochs=1))
        with pytest.raises(ValueError):
            snaps[0].points.mu[0, 0] = 1.0

    def test_callback_sees_snapshots_in_order(self):
        ds = toy_dataset()
        seen: list[EpochSnapshot] = []
        _, snaps = fit(Model(TINY, seed=4), ds, tiny_config(epochs=3), on_epoch=seen.append)
        assert [s.epoch for s in seen] == [1, 2, 3]
        assert seen == snaps

    def test_labeled_count_matches_dataset(self):
        ds = toy_dataset(n=10, labeled_frac=0.5)
        _, snaps = fit(Model(TINY, seed=4), ds, tiny_config(epochs=1))
        assert snaps[0].loss.labeled_count == int(ds.label_mask.sum())


# ---------------------------------------------------------------- pretraining


class TestPretraining:
    def test_classifier_params_bitwise_untouched(self):
        ds = toy_dataset()
        m = Model(TINY, seed=7)
        before = params_snapshot(m)
        pretrain_unsupervised(m, ds, tiny_config(epochs=2))
        after = params_snapshot(m)
        for name in TINY.classifier_param_names():
            np.testing.assert_array_equal(before[name], after[name], err_msg=name)
        assert any(not np.array_equal(before[n], after[n]) for n in before if n.startswith("encoder."))

    def test_snapshots_report_zero_labeled(self):
        ds = toy_dataset(labeled_frac=1.0)
        _, snaps = pretrain_unsupervised(Model(TINY, seed=7), ds, tiny_config(epochs=1))
        assert snaps[0].loss.labeled_count == 0
        assert snaps[0].loss.classifier == 0.0

    def test_smoke_run_loss_decreases(self, mnist_train):
        ds = mnist_train.take(np.arange(100))
        cfg = TrainConfig(epochs=5, batch_size=128, learning_rate=5e-3, weights=LossWeights(1.0, 0.0), seed=7)
        _, snaps = pretrain_unsupervised(Model(ModelConfig(), seed=7), ds, cfg)
        assert snaps[-1].loss.total < snaps[0].loss.total


# ---------------------------------------------------------------- checkpoints


class TestCheckpoints:
    def make_trained(self, tmp_path):
        ds = toy_dataset()
        m = Model(TINY, seed=8)
        cfg = tiny_config(epochs=2)
        state, _ = fit(m, ds, cfg)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, m, state, cfg, extra={"epochs_done": 2, "cycle": 0})
        return ds, m, state, cfg, path

    def test_roundtrip_is_bitwise(self, tmp_path):
        _, m, state, cfg, path = self.make_trained(tmp_path)
        loaded = load_checkpoint(path)
        assert_params_equal(params_snapshot(m), params_snapshot(loaded.model))
        assert loaded.state.t == state.t
        assert (loaded.state.lr, loaded.state.b1, loaded.state.b2, loaded.state.eps) == (
            state.lr,
            state.b1,
            state.b2,
            state.eps,
        )
        for name in state.m:
            np.testing.assert_array_equal(state.m[name], loaded.state.m[name])
            np.testing.assert_array_equal(state.v[name], loaded.state.v[name])
        assert loaded.train_config == cfg
        assert loaded.model.config == TINY
        assert loaded.extra == {"epochs_done": 2, "cycle": 0}

    def test_loaded_model_embeds_identically(self, tmp_path):
        ds, m, _, _, path = self.make_trained(tmp_path)
        loaded = load_checkpoint(path)
        a = m.embed_means(ds.images, ds.sample_ids)
        b = loaded.model.embed_means(ds.images, ds.sample_ids)
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.pred_class, b.pred_class)

    def test_truncated_file_is_corrupt(self, tmp_path):
        _, _, _, _, path = self.make_trained(tmp_path)
        raw = path.read_bytes()
        for cut in (2, 10, len(raw) - 7):
            bad = tmp_path / f"cut{cut}.ckpt"
            bad.write_bytes(raw[:cut])
            with pytest.raises(CorruptManifest):
                load_checkpoint(bad)

    def test_garbage_manifest_is_corrupt(self, tmp_path):
        bad = tmp_path / "garbage.ckpt"
        head = b"this is not json"
        bad.write_bytes(len(head).to_bytes(4, "little") + head)
        with pytest.raises(CorruptManifest):
            load_checkpoint(bad)

    def _rewrite_manifest(self, path, out_path, mutate):
        raw = path.read_bytes()
        head_len = int.from_bytes(raw[:4], "little")
        manifest = json.loads(raw[4 : 4 + head_len])
        mutate(manifest)
        head = json.dumps(manifest).encode()
        out_path.write_bytes(len(head).to_bytes(4, "little") + head + raw[4 + head_len :])

    def test_unknown_version_rejected(self, tmp_path):
        _, _, _, _, path = self.make_trained(tmp_path)
        bad = tmp_path / "future.ckpt"
        self._rewrite_manifest(path, bad, lambda man: man.update(version=99))
        with pytest.raises(VersionMismatch):
            load_checkpoint(bad)

    def test_overlapping_offsets_rejected(self, tmp_path):
        _, _, _, _, path = self.make_trained(tmp_path)
        bad = tmp_path / "overlap.ckpt"

        def overlap(man):
            man["params"][1]["offset"] = man["params"][0]["offset"]

        self._rewrite_manifest(path, bad, overlap)
        with pytest.raises(CorruptManifest, match="overlap"):
            load_checkpoint(bad)

    def test_missing_parameter_rejected(self, tmp_path):
        _, _, _, _, path = self.make_trained(tmp_path)
        bad = tmp_path / "missing.ckpt"
        self._rewrite_manifest(path, bad, lambda man: man["params"].pop())
        with pytest.raises(CorruptManifest, match="missing|overlap|blob"):
            load_checkpoint(bad)

    def test_out_of_bounds_offset_rejected(self, tmp_path):
        _, _, _, _, path = self.make_trained(tmp_path)
        bad = tmp_path / "oob.ckpt"

        def oob(man):
            man["params"][0]["offset"] = man["blob_nbytes"]

        self._rewrite_manifest(path, bad, oob)
        with pytest.raises(CorruptManifest, match="outside"):
            load_checkpoint(bad)


# ---------------------------------------------------------------- resume


class TestSplitRunEquivalence:
    def test_interrupted_run_resumes_bitwise(self, tmp_path):
        ds = toy_dataset(n=13)
        full_cfg = tiny_config(epochs=4, seed=11)

        straight = Model(TINY, seed=12)
        _, straight_snaps = fit(straight, ds, full_cfg)

        part = Model(TINY, seed=12)
        state, _ = fit(part, ds, replace(full_cfg, epochs=2))
        path = tmp_path / "mid.ckpt"
        save_checkpoint(path, part, state, full_cfg, extra={"epochs_done": 2})

        loaded = load_checkpoint(path)
        _, resumed_snaps = fit(
            loaded.model,
            ds,
            loaded.train_config,
            state=loaded.state,
            start_epoch=loaded.extra["epochs_done"],
        )
        assert_params_equal(params_snapshot(straight), params_snapshot(loaded.model))
        assert [s.epoch for s in resumed_snaps] == [3, 4]
        tail = {s.epoch: s for s in straight_snaps}
        for s in resumed_snaps:
            assert s.loss == tail[s.epoch].loss
            np.testing.assert_array_equal(s.points.mu, tail[s.epoch].points.mu)
