import numpy as np
import pytest

import hiermix.trainer as trainer_mod
from hiermix.evaluation import MetricsReport
from hiermix.mixup import MixupConfig
from hiermix.trainer import (
    CheckpointError,
    DivergenceError,
    EncoderConfig,
    TrainConfig,
    adam_step,
    batch_loss,
    evaluate_model,
    fit,
    init_adam,
    init_model,
    load_checkpoint,
    prepare_instances,
    save_checkpoint,
)

ENC = EncoderConfig(d_model=12, n_layers=2, max_len=48)


def _report(macro):
    return MetricsReport(
        micro_f1=macro, macro_f1=macro, per_depth=(), per_bucket=(), n_instances=1
    )


@pytest.fixture(scope="module")
def prepared_env(small_synth):
    tax, train, dev, test, vocab = small_synth
    p_train = prepare_instances(train, tax, vocab, ENC.max_len)
    p_dev = prepare_instances(dev, tax, vocab, ENC.max_len)
    return tax, vocab, p_train, p_dev


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = init_adam(params)
        adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert state.step == 1

    def test_single_step_hand_oracle(self):
        params = {"x": np.array([1.0])}
        state = init_adam(params)
        adam_step(params, {"x": np.array([1.0])}, state, lr=0.1)
        # m_hat = v_hat = 1 at step 1, so the update is lr / (1 + eps)
        expected = 1.0 - 0.1 * 1.0 / (np.sqrt(1.0) + 1e-8)
        assert params["x"][0] == pytest.approx(expected, abs=1e-16)

    def test_two_runs_bitwise_identical(self):
        rng = np.random.default_rng(0)
        grads = [{"w": rng.normal(size=(3, 3))} for _ in range(10)]

        def run():
            params = {"w": np.ones((3, 3))}
            state = init_adam(params)
            for g in grads:
                adam_step(params, g, state, lr=0.01)
            return params["w"]

        np.testing.assert_array_equal(run(), run())

    def test_non_finite_gradient(self):
        params = {"w": np.array([1.0])}
        state = init_adam(params)
        with pytest.raises(ValueError, match="non-finite"):
            adam_step(params, {"w": np.array([np.nan])}, state, lr=0.1)


class TestBatchLoss:
    def test_mix_inactive_has_no_mixed_term(self, prepared_env):
        tax, vocab, p_train, _ = prepared_env
        model = init_model(tax, vocab, ENC, seed=1)
        cfg = TrainConfig(seed=1, mixup=MixupConfig(mode="lh"))
        res = batch_loss(model, p_train[:6], mix_active=False, config=cfg)
        assert res.mixed_loss == 0.0
        assert res.pairs == []

    def test_mode_off_ignores_mix_active(self, prepared_env):
        tax, vocab, p_train, _ = prepared_env
        model = init_model(tax, vocab, ENC, seed=1)
        off = TrainConfig(seed=1, mixup=MixupConfig(mode="off"))
        a = batch_loss(model, p_train[:6], False, off)
        lh = TrainConfig(seed=1, mixup=MixupConfig(mode="lh"))
        b = batch_loss(model, p_train[:6], False, lh)
        assert a.loss == b.loss

    def test_zero_weight_matches_off_loss(self, prepared_env):
        tax, vocab, p_train, _ = prepared_env
        model = init_model(tax, vocab, ENC, seed=2)
        off = TrainConfig(seed=3, mixup=MixupConfig(mode="off"))
        base = batch_loss(model, p_train[:6], False, off)
        lh = TrainConfig(seed=3, mix_loss_weight=0.0, mixup=MixupConfig(mode="lh"))
        mixed = batch_loss(
            model, p_train[:6], True, lh, pair_rng=np.random.default_rng(4)
        )
        assert mixed.loss == base.loss
        assert mixed.mixed_loss > 0.0  # term computed, weighted to zero

    def test_stop_gradient_injection_identical(self, prepared_env):
        tax, vocab, p_train, _ = prepared_env
        model = init_model(tax, vocab, ENC, seed=5)
        cfg = TrainConfig(seed=5, mixup=MixupConfig(mode="lh", alpha=2.0, beta_cap=0.8))
        live = batch_loss(
            model, p_train[:8], True, cfg, pair_rng=np.random.default_rng(6)
        )
        injected = batch_loss(
            model, p_train[:8], True, cfg, pair_override=live.pairs
        )
        assert injected.loss == live.loss
        for name, g in live.grads.items():
            np.testing.assert_array_equal(injected.grads[name], g, err_msg=name)

    def test_single_instance_batch_skips_pairing(self, prepared_env):
        tax, vocab, p_train, _ = prepared_env
        model = init_model(tax, vocab, ENC, seed=7)
        cfg = TrainConfig(seed=7, mixup=MixupConfig(mode="vanilla"))
        res = batch_loss(
            model, p_train[:1], True, cfg, pair_rng=np.random.default_rng(8)
        )
        assert res.pairs == []
        assert res.mixed_loss == 0.0

    def test_divergence_detected(self, prepared_env):
        tax, vocab, p_train, _ = prepared_env
        model = init_model(tax, vocab, ENC, seed=9)
        model.encoder.token_embeddings[:] = np.nan
        cfg = TrainConfig(seed=9)
        with pytest.raises(DivergenceError):
            batch_loss(model, p_train[:4], False, cfg)

    def test_empty_batch(self, prepared_env):
        tax, vocab, _, _ = prepared_env
        model = init_model(tax, vocab, ENC, seed=10)
        with pytest.raises(ValueError, match="non-empty"):
            batch_loss(model, [], False, TrainConfig())


class TestFitSchedule:
    """Schedule bookkeeping, isolated from real learning via a scripted dev metric."""

    def _run(self, monkeypatch, prepared_env, dev_scores, **cfg_kwargs):
        tax, vocab, p_train, p_dev = prepared_env
        scores = iter(dev_scores)
        monkeypatch.setattr(
            trainer_mod, "evaluate_model", lambda *a, **k: _report(next(scores))
        )
        cfg = TrainConfig(
            seed=0,
            batch_size=16,
            learning_rate=1e-3,
            mixup=MixupConfig(mode="off"),
            **cfg_kwargs,
        )
        return fit(p_train[:32], p_dev[:4], tax, vocab, cfg, ENC, log_pairs=False)

    def test_decreasing_metric_stops_at_warmup_plus_two(self, monkeypatch, prepared_env):
        res = self._run(
            monkeypatch,
            prepared_env,
            dev_scores=[0.9, 0.8, 0.7, 0.6],
            warmup_epochs=5,
            max_epochs=20,
            patience=1,
        )
        assert res.epochs_run == 7  # warmup + 2
        assert res.stopped == "early"
        assert res.best_epoch == 6

    def test_patience_counts_consecutive_non_improvements(self, monkeypatch, prepared_env):
        res = self._run(
            monkeypatch,
            prepared_env,
            dev_scores=[0.5, 0.4, 0.6, 0.3, 0.3, 0.3],
            warmup_epochs=2,
            max_epochs=20,
            patience=3,
        )
        # improvement at epoch 5 resets the counter; stops three bad epochs later
        assert res.best_epoch == 5
        assert res.epochs_run == 8
        assert res.stopped == "early"

    def test_tie_does_not_reset_patience(self, monkeypatch, prepared_env):
        res = self._run(
            monkeypatch,
            prepared_env,
            dev_scores=[0.5, 0.5, 0.5],
            warmup_epochs=1,
            max_epochs=20,
            patience=2,
        )
        assert res.best_epoch == 2
        assert res.epochs_run == 4

    def test_best_checkpoint_is_log_maximum(self, monkeypatch, prepared_env):
        scores = [0.3, 0.7, 0.5, 0.9, 0.6, 0.5, 0.4]
        res = self._run(
            monkeypatch,
            prepared_env,
            dev_scores=scores,
            warmup_epochs=0,
            max_epochs=7,
            patience=5,
        )
        logged = [r.dev_macro_f1 for r in res.log if r.dev_macro_f1 is not None]
        assert res.best_dev.macro_f1 == max(logged)
        assert res.best_epoch == 4

    def test_warmup_equals_max_epochs_never_evaluates(self, monkeypatch, prepared_env):
        called = []
        monkeypatch.setattr(
            trainer_mod,
            "evaluate_model",
            lambda *a, **k: called.append(1) or _report(0.5),
        )
        tax, vocab, p_train, p_dev = prepared_env
        cfg = TrainConfig(
            seed=0,
            warmup_epochs=3,
            max_epochs=3,
            mixup=MixupConfig(mode="lh"),
            learning_rate=1e-3,
        )
        res = fit(p_train[:16], p_dev[:4], tax, vocab, cfg, ENC, log_pairs=True)
        assert not called
        assert res.best_epoch is None
        assert res.pair_log == []  # no mixing epoch ever ran
        assert all(r.mixed_loss == 0.0 for r in res.log)


class TestFitReal:
    def test_warmup_gate_and_mixing_phase(self, prepared_env):
        tax, vocab, p_train, p_dev = prepared_env
        cfg = TrainConfig(
            seed=1,
            warmup_epochs=2,
            max_epochs=4,
            patience=5,
            learning_rate=5e-3,
            mixup=MixupConfig(mode="lh", alpha=1.0, beta_cap=0.9),
        )
        res = fit(p_train, p_dev, tax, vocab, cfg, ENC)
        by_epoch = {r.epoch: r for r in res.log}
        assert by_epoch[1].mixed_loss == 0.0 and by_epoch[2].mixed_loss == 0.0
        assert by_epoch[3].mixed_loss > 0.0
        assert by_epoch[1].dev_macro_f1 is None
        assert by_epoch[3].dev_macro_f1 is not None
        epochs_with_pairs = {p.epoch for p in res.pair_log}
        assert epochs_with_pairs == {3, 4}
        for p in res.pair_log:
            assert 0.5 <= p.lam <= 0.9
            assert p.s is not None

    def test_full_determinism(self, prepared_env):
        tax, vocab, p_train, p_dev = prepared_env
        cfg = TrainConfig(
            seed=3,
            warmup_epochs=1,
            max_epochs=3,
            learning_rate=5e-3,
            mixup=MixupConfig(mode="vanilla"),
        )
        a = fit(p_train, p_dev, tax, vocab, cfg, ENC)
        b = fit(p_train, p_dev, tax, vocab, cfg, ENC)
        assert [(r.epoch, r.train_loss, r.mixed_loss, r.dev_macro_f1) for r in a.log] == [
            (r.epoch, r.train_loss, r.mixed_loss, r.dev_macro_f1) for r in b.log
        ]
        assert [(p.index_i, p.index_j, p.lam) for p in a.pair_log] == [
            (p.index_i, p.index_j, p.lam) for p in b.pair_log
        ]
        for name, arr in a.final_model.named_parameters().items():
            np.testing.assert_array_equal(
                arr, b.final_model.named_parameters()[name], err_msg=name
            )

    def test_resume_matches_straight_run(self, prepared_env):
        tax, vocab, p_train, p_dev = prepared_env
        base = dict(
            seed=4,
            warmup_epochs=1,
            patience=10,
            learning_rate=5e-3,
            mixup=MixupConfig(mode="lh", beta_cap=0.8),
        )
        straight = fit(
            p_train, p_dev, tax, vocab, TrainConfig(max_epochs=6, **base), ENC
        )
        first = fit(
            p_train, p_dev, tax, vocab, TrainConfig(max_epochs=3, **base), ENC
        )
        resumed = fit(
            p_train,
            p_dev,
            tax,
            vocab,
            TrainConfig(max_epochs=6, **base),
            ENC,
            resume_from=first.resume_state(),
        )
        straight_tail = [
            (r.epoch, r.train_loss, r.mixed_loss, r.dev_macro_f1)
            for r in straight.log
            if r.epoch > 3
        ]
        resumed_log = [
            (r.epoch, r.train_loss, r.mixed_loss, r.dev_macro_f1) for r in resumed.log
        ]
        assert resumed_log == straight_tail
        for name, arr in straight.final_model.named_parameters().items():
            np.testing.assert_array_equal(
                arr, resumed.final_model.named_parameters()[name], err_msg=name
            )
        assert resumed.best_epoch == straight.best_epoch

    def test_resume_through_serialized_checkpoint(self, prepared_env, tmp_path):
        tax, vocab, p_train, p_dev = prepared_env
        from hiermix.cli import taxonomy_to_entries

        base = dict(
            seed=8,
            warmup_epochs=1,
            patience=10,
            learning_rate=5e-3,
            mixup=MixupConfig(mode="vanilla"),
        )
        straight = fit(
            p_train, p_dev, tax, vocab, TrainConfig(max_epochs=5, **base), ENC
        )
        first = fit(
            p_train, p_dev, tax, vocab, TrainConfig(max_epochs=2, **base), ENC
        )
        path = tmp_path / "mid.json"
        save_checkpoint(
            path,
            first.final_model,
            vocab,
            taxonomy_to_entries(tax),
            TrainConfig(max_epochs=5, **base),
            ENC,
            resume=first.resume_state(),
        )
        loaded = load_checkpoint(path)
        assert loaded.resume is not None
        resumed = fit(
            p_train,
            p_dev,
            tax,
            vocab,
            loaded.train_config,
            loaded.enc,
            resume_from=loaded.resume,
        )
        straight_tail = [
            (r.epoch, r.train_loss, r.mixed_loss, r.dev_macro_f1)
            for r in straight.log
            if r.epoch > 2
        ]
        assert [
            (r.epoch, r.train_loss, r.mixed_loss, r.dev_macro_f1) for r in resumed.log
        ] == straight_tail
        for name, arr in straight.final_model.named_parameters().items():
            np.testing.assert_array_equal(
                arr, resumed.final_model.named_parameters()[name], err_msg=name
            )

    def test_empty_train_error(self, prepared_env):
        tax, vocab, _, p_dev = prepared_env
        with pytest.raises(ValueError, match="empty"):
            fit([], p_dev, tax, vocab, TrainConfig(), ENC)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, prepared_env, tmp_path):
        tax, vocab, p_train, p_dev = prepared_env
        from hiermix.cli import taxonomy_to_entries

        cfg = TrainConfig(seed=6, warmup_epochs=1, max_epochs=2, learning_rate=5e-3)
        res = fit(p_train[:32], p_dev, tax, vocab, cfg, ENC)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, res.best_model, vocab, taxonomy_to_entries(tax), cfg, ENC)
        loaded = load_checkpoint(path)
        for name, arr in res.best_model.named_parameters().items():
            np.testing.assert_array_equal(
                arr, loaded.model.named_parameters()[name], err_msg=name
            )
        before = evaluate_model(res.best_model, p_dev, tax)
        after = evaluate_model(loaded.model, p_dev, tax)
        assert before.macro_f1 == after.macro_f1
        assert loaded.vocab.token_to_id == vocab.token_to_id
        assert loaded.train_config == cfg

    def test_wrong_vocab_size_rejected(self, prepared_env, tmp_path):
        import json

        tax, vocab, p_train, _ = prepared_env
        from hiermix.cli import taxonomy_to_entries

        model = init_model(tax, vocab, ENC, seed=0)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, model, vocab, taxonomy_to_entries(tax), TrainConfig(), ENC)
        obj = json.loads(path.read_text())
        obj["vocab"]["token_to_id"]["extra_token"] = vocab.size
        path.write_text(json.dumps(obj))
        with pytest.raises(CheckpointError, match="vocabulary size"):
            load_checkpoint(path)

    def test_version_mismatch(self, prepared_env, tmp_path):
        import json

        tax, vocab, _, _ = prepared_env
        from hiermix.cli import taxonomy_to_entries

        model = init_model(tax, vocab, ENC, seed=0)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, model, vocab, taxonomy_to_entries(tax), TrainConfig(), ENC)
        obj = json.loads(path.read_text())
        obj["format_version"] = 99
        path.write_text(json.dumps(obj))
        with pytest.raises(CheckpointError, match="format"):
            load_checkpoint(path)

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(CheckpointError, match="cannot read"):
            load_checkpoint(path)
