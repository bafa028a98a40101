"""Optimizer arithmetic, schedules, metrics, and the train/resume loops."""

import csv
import math

import numpy as np
import pytest

from conftest import micro_config
from spiketim.errors import ConfigurationError, ContractError, NanLossError
from spiketim.model import SpikingTransformer, load_checkpoint, save_checkpoint
from spiketim.tensor import Tensor
from spiketim.training import (
    AdamW,
    adamw_step,
    clip_gradients,
    confusion_matrix,
    cosine_lr,
    evaluate,
    fit,
    train_epoch,
)


def scalar_param(value):
    p = Tensor(np.array([value], dtype=np.float64), requires_grad=True)
    return p


class TestAdamW:
    def test_single_step_hand_value(self):
        p = scalar_param(1.0)
        opt = AdamW([("p", p)], weight_decay=0.01)
        p.grad = np.array([1.0])
        opt.step(lr=0.1)
        expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8)) - 0.1 * 0.01 * 1.0
        assert abs(p.data[0] - expected) <= 1e-12
        assert abs(p.data[0] - 0.899) <= 1e-6

    def test_zero_grad_is_pure_decay(self):
        p = scalar_param(2.0)
        opt = AdamW([("p", p)], weight_decay=0.01)
        p.grad = np.array([0.0])
        opt.step(lr=0.1)
        assert abs(p.data[0] - 2.0 * (1 - 0.1 * 0.01)) <= 1e-15

    def test_two_steps_match_scalar_oracle(self):
        p = scalar_param(1.0)
        opt = AdamW([("p", p)], weight_decay=0.01)
        for _ in range(2):
            p.grad = np.array([1.0])
            adamw_step([("p", p)], opt, lr=0.1)

        # hand-rolled reference with the same constants
        b1, b2, eps, wd, lr = 0.9, 0.999, 1e-8, 0.01, 0.1
        ref, m, v = 1.0, 0.0, 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * 1.0
            v = b2 * v + (1 - b2) * 1.0
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            ref = ref - lr * mhat / (math.sqrt(vhat) + eps) - lr * wd * ref
        assert abs(p.data[0] - ref) <= 1e-12

    def test_zero_lr_leaves_parameters_bit_identical(self):
        rng = np.random.default_rng(0)
        p = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        before = p.data.copy()
        opt = AdamW([("p", p)])
        p.grad = rng.normal(size=(4, 3))
        opt.step(lr=0.0)
        assert np.array_equal(p.data, before)

    def test_negative_lr_rejected(self):
        opt = AdamW([("p", scalar_param(1.0))])
        with pytest.raises(ConfigurationError, match="learning rate"):
            opt.step(lr=-0.1)

    def test_missing_grad_treated_as_zero(self):
        p = scalar_param(1.0)
        opt = AdamW([("p", p)], weight_decay=0.0)
        opt.step(lr=0.1)
        assert p.data[0] == 1.0


class TestCosineLR:
    def test_epoch_zero_is_lr0(self):
        assert cosine_lr(0, 50, 0.005) == pytest.approx(0.005)

    def test_midpoint_is_half(self):
        assert cosine_lr(25, 50, 0.005) == pytest.approx(0.0025)

    def test_approaches_lr_min(self):
        assert cosine_lr(49, 50, 0.005) < 0.005 * 0.01

    def test_respects_lr_min_floor(self):
        assert cosine_lr(49, 50, 0.005, lr_min=1e-4) >= 1e-4

    def test_out_of_range_epoch_rejected(self):
        with pytest.raises(ContractError, match="out of range"):
            cosine_lr(50, 50, 0.005)


class TestClip:
    def test_large_gradient_scaled_to_max_norm(self):
        p = Tensor(np.zeros(4), requires_grad=True)
        p.grad = np.full(4, 10.0)
        total = clip_gradients([("p", p)], max_norm=1.0)
        assert total == pytest.approx(20.0)
        assert np.linalg.norm(p.grad) == pytest.approx(1.0, rel=1e-6)

    def test_small_gradient_untouched(self):
        p = Tensor(np.zeros(4), requires_grad=True)
        p.grad = np.full(4, 0.1)
        clip_gradients([("p", p)], max_norm=1.0)
        assert np.array_equal(p.grad, np.full(4, 0.1))


class _StubModel:
    """Fixed-logit model for exercising evaluate() against hand answers."""

    class _Cfg:
        num_classes = 2

    cfg = _Cfg()

    def __init__(self, logits):
        self.logits = np.asarray(logits, dtype=np.float32)
        self.cursor = 0

    def reset(self):
        pass

    def train(self, flag=True):
        pass

    def __call__(self, batch):
        out = self.logits[self.cursor : self.cursor + len(batch)]
        self.cursor += len(batch)
        return Tensor(out)


class TestEvaluate:
    def test_hand_logits_perfect(self):
        model = _StubModel([[2.0, 1.0], [0.0, 3.0]])
        acc, confusion = evaluate(model, np.zeros((2, 1)), np.array([0, 1]), 2)
        assert acc == 1.0
        np.testing.assert_array_equal(confusion, [[1, 0], [0, 1]])

    def test_constant_predictor_on_balanced_set(self):
        model = _StubModel([[1.0, 0.0]] * 10)
        acc, confusion = evaluate(model, np.zeros((10, 1)), np.array([0, 1] * 5), 2)
        assert acc == 0.5
        np.testing.assert_array_equal(confusion, [[5, 0], [5, 0]])

    def test_confusion_total_and_trace(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(23, 2))
        labels = rng.integers(0, 2, 23)
        model = _StubModel(logits)
        acc, confusion = evaluate(model, np.zeros((23, 1)), labels, 2)
        assert confusion.sum() == 23
        assert acc == confusion.trace() / 23

    def test_tie_resolves_to_lower_index(self):
        model = _StubModel([[1.0, 1.0]])
        _, confusion = evaluate(model, np.zeros((1, 1)), np.array([1]), 2)
        np.testing.assert_array_equal(confusion, [[0, 0], [1, 0]])

    def test_empty_dataset_rejected(self):
        with pytest.raises(ContractError):
            evaluate(_StubModel([]), np.zeros((0, 1)), np.array([], dtype=int), 2)

    def test_confusion_matrix_helper(self):
        out = confusion_matrix([0, 1, 1, 0], [0, 1, 0, 1], 2)
        np.testing.assert_array_equal(out, [[1, 1], [1, 1]])


@pytest.fixture
def tiny_task(small_synth):
    frames, labels = small_synth
    frames = frames[:, :3]  # micro model runs 3 steps
    return (frames[:32], labels[:32]), (frames[32:], labels[32:])


def _fresh(seed=0):
    model = SpikingTransformer(micro_config(), seed=seed)
    return model, AdamW(model.named_parameters())


class TestLoop:
    def test_two_runs_bit_identical(self, tiny_task):
        train, val = tiny_task

        def run():
            model, opt = _fresh()
            report = fit(model, opt, train, val, epochs=2, lr0=0.005, seed=0)
            return report, model

        ra, ma = run()
        rb, mb = run()
        assert [e["train_loss"] for e in ra.epochs] == [e["train_loss"] for e in rb.epochs]
        assert [e["val_acc"] for e in ra.epochs] == [e["val_acc"] for e in rb.epochs]
        for (_, a), (_, b) in zip(ma.named_parameters(), mb.named_parameters()):
            assert np.array_equal(a.data, b.data)

    def test_resume_matches_unbroken_run(self, tiny_task, tmp_path):
        train, val = tiny_task
        ckpt = tmp_path / "mid.ckpt"

        model_a, opt_a = _fresh()

        def snapshot(epoch, report):
            if epoch == 1:
                save_checkpoint(ckpt, model_a, opt_a, epoch, seed=0)

        report_a = fit(model_a, opt_a, train, val, epochs=4, lr0=0.005, seed=0,
                       on_epoch=snapshot)

        model_b, opt_b = _fresh(seed=9)
        epoch, seed = load_checkpoint(ckpt, model_b, opt_b)
        report_b = fit(model_b, opt_b, train, val, epochs=4, lr0=0.005, seed=seed,
                       start_epoch=epoch + 1)

        tail_a = [e["train_loss"] for e in report_a.epochs[2:]]
        tail_b = [e["train_loss"] for e in report_b.epochs]
        assert tail_a == tail_b
        for (_, a), (_, b) in zip(model_a.named_parameters(), model_b.named_parameters()):
            assert np.array_equal(a.data, b.data)

    def test_parameters_stay_float32(self, tiny_task):
        # schedule scalars must not promote the parameters to 64-bit
        train, val = tiny_task
        model, opt = _fresh()
        fit(model, opt, train, val, epochs=1, lr0=0.005, seed=0)
        assert all(p.dtype == np.float32 for _, p in model.named_parameters())

    def test_loss_decreases_early(self, tiny_task):
        train, val = tiny_task
        model, opt = _fresh()
        report = fit(model, opt, train, val, epochs=5, lr0=0.005, seed=0)
        losses = [e["train_loss"] for e in report.epochs]
        assert losses[-1] < losses[0]

    def test_target_acc_stops_early(self, tiny_task):
        train, val = tiny_task
        model, opt = _fresh()
        report = fit(model, opt, train, val, epochs=50, lr0=0.005, seed=0,
                     target_acc=0.0)
        assert len(report.epochs) == 1

    def test_nan_loss_aborts_with_diagnostics(self, tiny_task):
        train, val = tiny_task
        model, opt = _fresh()
        model.head.w.data[:] = np.nan
        with pytest.raises(NanLossError) as exc:
            train_epoch(model, train[0], train[1], opt, epoch=0, seed=0, lr=0.005)
        assert exc.value.lr == 0.005
        assert isinstance(exc.value.grad_norms, dict)

    def test_metrics_csv_layout(self, tiny_task, tmp_path):
        train, val = tiny_task
        model, opt = _fresh()
        report = fit(model, opt, train, val, epochs=2, lr0=0.005, seed=0)
        path = tmp_path / "metrics.csv"
        report.write_metrics_csv(path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "train_loss", "val_acc", "lr", "seconds"]
        assert len(rows) == 3
        assert float(rows[1][3]) == pytest.approx(0.005)
