import numpy as np
import pytest

from cvsqa.model import ModelConfig, forward_batch, init_params
from cvsqa.traces import DataError, NormStats
from cvsqa.training import (
    Checkpoint,
    CheckpointIntegrityError,
    CheckpointVersionError,
    TrainConfig,
    adamw_init,
    adamw_step,
    checkpoint_bytes,
    default_train_config,
    grad,
    gradient_check,
    load_checkpoint,
    one_cycle_lr,
    save_checkpoint,
    train,
)


def tiny_config(mode="point", **overrides):
    base = dict(
        mode=mode,
        data_dim=1 if mode == "point" else 6,
        n_input=4 if mode == "point" else 2,
        n_future=2 if mode == "point" else 1,
        hidden_dim=3,
        latent_dim=3,
        batch_size=4,
        epochs=2,
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_batch(cfg, b=6, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(b, cfg.n_input, cfg.data_dim))
    f = rng.normal(size=(b, cfg.n_future, cfg.data_dim)) if cfg.n_future else None
    eps = rng.normal(size=(b, cfg.latent_dim))
    return x, f, eps


class TestConfigs:
    def test_defaults(self):
        cy = default_train_config("cycle")
        assert (cy.data_dim, cy.n_input, cy.n_future) == (150, 2, 2)
        assert cy.batch_size == 128 and cy.lr_max == 0.001
        pt = default_train_config("point")
        assert (pt.data_dim, pt.n_input, pt.n_future) == (1, 200, 200)
        assert pt.batch_size == 1024 and pt.lr_max == 0.01

    def test_overrides(self):
        cfg = default_train_config("point", epochs=3, n_input=50, n_future=0)
        assert cfg.epochs == 3 and cfg.n_input == 50 and cfg.n_future == 0

    def test_validation(self):
        with pytest.raises(DataError):
            tiny_config(norm="l3")
        with pytest.raises(DataError):
            tiny_config(batch_size=0)
        with pytest.raises(DataError):
            tiny_config(lr_max=0.0)
        with pytest.raises(DataError):
            tiny_config(train_filter="everything")


class TestGrad:
    @pytest.mark.parametrize("variant", ["cell", "standard"])
    @pytest.mark.parametrize("mode", ["point", "cycle"])
    def test_matches_finite_differences(self, variant, mode):
        cfg = tiny_config(mode=mode, variant=variant)
        params = init_params(cfg.model_config(), seed=3)
        x, f, eps = tiny_batch(cfg, b=3, seed=4)
        report = gradient_check(params, x, f, eps)
        assert report.passed(1e-4), f"{report.worst_name}: {report.max_rel_err:.2e}"

    def test_grad_independent_of_worker_count(self):
        cfg = tiny_config()
        params = init_params(cfg.model_config(), seed=1)
        x, f, eps = tiny_batch(cfg, b=300, seed=2)
        loss1, g1 = grad(params, x, f, eps, n_workers=1)
        loss4, g4 = grad(params, x, f, eps, n_workers=4)
        assert loss1.total == loss4.total
        for name in g1:
            np.testing.assert_array_equal(g1[name], g4[name], err_msg=name)

    def test_mean_loss_matches_forward(self):
        cfg = tiny_config()
        params = init_params(cfg.model_config(), seed=1)
        x, f, eps = tiny_batch(cfg, b=10)
        mean, _ = grad(params, x, f, eps)
        loss, _ = forward_batch(params, x, f, eps)
        assert mean.total == pytest.approx(float(loss.total.mean()), rel=1e-12)
        assert mean.kl == pytest.approx(float(loss.kl.mean()), rel=1e-12)

    def test_zero_future_geometry(self):
        cfg = tiny_config(n_future=0)
        params = init_params(cfg.model_config(), seed=1)
        x, _, eps = tiny_batch(cfg, b=5)
        report = gradient_check(params, x, None, eps)
        assert report.passed(1e-4)

    def test_cell_variant_latent_head_grads_vanish(self):
        """Recon decoder ignores its initial hidden in the cell variant, so
        nothing pulls on w_z/b_z and KL is free to collapse."""
        cfg = tiny_config(variant="cell")
        params = init_params(cfg.model_config(), seed=7)
        x, f, eps = tiny_batch(cfg, b=4)
        _, grads = grad(params, x, f, eps)
        np.testing.assert_array_equal(grads["heads.w_z"], 0.0)
        np.testing.assert_array_equal(grads["heads.b_z"], 0.0)

    def test_standard_variant_latent_head_grads_nonzero(self):
        cfg = tiny_config(variant="standard")
        params = init_params(cfg.model_config(), seed=7)
        x, f, eps = tiny_batch(cfg, b=4)
        _, grads = grad(params, x, f, eps)
        assert np.any(grads["heads.w_z"] != 0.0)


class TestAdamW:
    def test_pure_decay_when_gradient_is_zero(self):
        cfg = tiny_config()
        params = init_params(cfg.model_config(), seed=0)
        grads = {n: np.zeros_like(a) for n, a in params.named_arrays()}
        state = adamw_init(params)
        stepped = adamw_step(state, params, grads, lr=0.1, weight_decay=0.01)
        for (name, before), (_, after) in zip(params.named_arrays(), stepped.named_arrays()):
            np.testing.assert_allclose(after, before * (1.0 - 0.1 * 0.01),
                                       atol=1e-15, err_msg=name)

    def test_first_step_oracle(self):
        """At t=1 the bias-corrected update is exactly lr*g/(|g|+eps)."""
        cfg = tiny_config()
        params = init_params(cfg.model_config(), seed=0)
        rng = np.random.default_rng(5)
        grads = {n: rng.normal(size=a.shape) for n, a in params.named_arrays()}
        state = adamw_init(params)
        lr, wd = 0.05, 0.0
        stepped = adamw_step(state, params, grads, lr=lr, weight_decay=wd)
        for (name, before), (_, after) in zip(params.named_arrays(), stepped.named_arrays()):
            g = grads[name]
            expected = before - lr * g / (np.abs(g) + 1e-8)
            np.testing.assert_allclose(after, expected, atol=1e-12, err_msg=name)

    def test_state_counts_steps(self):
        cfg = tiny_config()
        params = init_params(cfg.model_config(), seed=0)
        grads = {n: np.ones_like(a) for n, a in params.named_arrays()}
        state = adamw_init(params)
        params = adamw_step(state, params, grads, 0.01, 0.0)
        params = adamw_step(state, params, grads, 0.01, 0.0)
        assert state.step == 2


class TestOneCycle:
    def test_endpoints_and_peak(self):
        lr_max = 0.01
        total = 1000
        assert one_cycle_lr(0, total, lr_max) == pytest.approx(lr_max / 25.0)
        assert one_cycle_lr(300, total, lr_max) == pytest.approx(lr_max)
        assert one_cycle_lr(total, total, lr_max) == pytest.approx(lr_max / 1e4)

    def test_monotone_up_then_down(self):
        total = 200
        lrs = [one_cycle_lr(s, total, 0.01) for s in range(total + 1)]
        peak = int(np.argmax(lrs))
        assert peak == pytest.approx(0.3 * total, abs=1)
        assert all(a <= b + 1e-15 for a, b in zip(lrs[:peak], lrs[1:peak + 1]))
        assert all(a >= b - 1e-15 for a, b in zip(lrs[peak:], lrs[peak + 1:]))

    def test_bounds_checked(self):
        with pytest.raises(DataError):
            one_cycle_lr(-1, 10, 0.01)
        with pytest.raises(DataError):
            one_cycle_lr(11, 10, 0.01)


class TestCheckpoint:
    def roundtrip_ckpt(self):
        cfg = tiny_config()
        params = init_params(cfg.model_config(), seed=2)
        return Checkpoint(
            train_config=cfg,
            params=params,
            norm_stats=NormStats(mean=1.5, std=2.0),
            tau=3.25,
            loss_history=[5.0, 4.0, 3.0],
        )

    def test_round_trip(self, tmp_path):
        ckpt = self.roundtrip_ckpt()
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        back = load_checkpoint(path)
        assert back.train_config == ckpt.train_config
        assert back.tau == ckpt.tau
        assert back.norm_stats == ckpt.norm_stats
        assert back.loss_history == ckpt.loss_history
        for (name, a), (_, b) in zip(ckpt.params.named_arrays(), back.params.named_arrays()):
            np.testing.assert_array_equal(a, b, err_msg=name)

    def test_bytes_deterministic(self):
        ckpt = self.roundtrip_ckpt()
        assert checkpoint_bytes(ckpt) == checkpoint_bytes(ckpt)

    def test_none_norm_stats_round_trip(self, tmp_path):
        ckpt = self.roundtrip_ckpt()
        ckpt = Checkpoint(ckpt.train_config, ckpt.params, None, ckpt.tau, [])
        save_checkpoint(ckpt, tmp_path / "m.ckpt")
        assert load_checkpoint(tmp_path / "m.ckpt").norm_stats is None

    def test_corruption_detected(self, tmp_path):
        ckpt = self.roundtrip_ckpt()
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        ckpt = self.roundtrip_ckpt()
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 16])
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(path)

    def test_version_mismatch_detected(self, tmp_path):
        ckpt = self.roundtrip_ckpt()
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        import json

        blob = path.read_bytes()
        # header is the first line of the payload; bump its version field
        head_end = blob.index(b"\n")
        header = json.loads(blob[:head_end])
        header["version"] = 999
        path.write_bytes(json.dumps(header).encode() + blob[head_end:])
        with pytest.raises((CheckpointVersionError, CheckpointIntegrityError)):
            load_checkpoint(path)


class TestTrain:
    def test_loss_decreases_and_tau_fitted(self):
        cfg = tiny_config(epochs=10, batch_size=8)
        x, f, _ = tiny_batch(cfg, b=16, seed=1)
        labels = np.ones(16, dtype=np.int8)
        ckpt = train(x, f, labels, cfg)
        assert ckpt.loss_history[-1] < ckpt.loss_history[0]
        assert ckpt.tau > 0
        assert len(ckpt.loss_history) == 10

    def test_deterministic_given_seed(self):
        cfg = tiny_config(epochs=3)
        x, f, _ = tiny_batch(cfg, b=12, seed=2)
        a = train(x, f, None, cfg)
        b = train(x, f, None, cfg)
        assert checkpoint_bytes(a) == checkpoint_bytes(b)

    def test_labels_ignored_with_train_filter_all(self):
        cfg = tiny_config(epochs=2)
        x, f, _ = tiny_batch(cfg, b=12, seed=3)
        ones = np.ones(12, dtype=np.int8)
        a = train(x, f, ones, cfg)
        b = train(x, f, 1 - ones, cfg)
        assert checkpoint_bytes(a) == checkpoint_bytes(b)

    def test_positive_only_filter_drops_windows(self):
        cfg = tiny_config(epochs=2, train_filter="positive_only")
        x, f, _ = tiny_batch(cfg, b=12, seed=4)
        labels = np.ones(12, dtype=np.int8)
        labels[6:] = 0
        filtered = train(x, f, labels, cfg)
        direct = train(x[:6], f[:6], None, tiny_config(epochs=2))
        for (n, a), (_, b) in zip(
            filtered.params.named_arrays(), direct.params.named_arrays()
        ):
            np.testing.assert_array_equal(a, b, err_msg=n)
        with pytest.raises(DataError):
            train(x, f, None, cfg)
        with pytest.raises(DataError):
            train(x, f, np.zeros(12, dtype=np.int8), cfg)

    def test_worker_count_does_not_change_result(self):
        cfg = tiny_config(epochs=2)
        x, f, _ = tiny_batch(cfg, b=12, seed=5)
        a = train(x, f, None, cfg, n_workers=1)
        b = train(x, f, None, cfg, n_workers=4)
        assert checkpoint_bytes(a) == checkpoint_bytes(b)

    def test_progress_callback(self):
        cfg = tiny_config(epochs=3)
        x, f, _ = tiny_batch(cfg, b=8, seed=6)
        seen = []
        train(x, f, None, cfg, progress=lambda e, loss: seen.append((e, loss)))
        assert [e for e, _ in seen] == [0, 1, 2]
