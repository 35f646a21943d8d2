"""Acceptance gate: the nine release criteria at their stated tolerances.

Criteria 1-6 and 9 are property/oracle checks; 7 and 8 consume the
session-trained toy pipeline (20 training phantoms, 5 validation phantoms,
loss LC, optimizer A+LH, fixed seed).
"""

import time

import numpy as np
import pytest

from gliomaseg.augment import ALL_TTA_VARIANTS, tta_apply, tta_invert
from gliomaseg.autodiff import Tensor
from gliomaseg.gradcheck import gradient_suite
from gliomaseg.losses import cross_entropy, dice_loss, log_cosh_dice, one_hot
from gliomaseg.models import (
    BinaryUNet,
    BinaryUNetConfig,
    save_checkpoint,
    model_from_checkpoint,
)
from gliomaseg.nifti import read_nifti, write_nifti
from gliomaseg.optim import SGD, Adam, Lookahead, RAdam
from gliomaseg.pipeline import evaluate, predict_to_dir, train_multiclass
from gliomaseg.rawio import read_raw, write_raw
from gliomaseg.roi import BBox3, crop_case, expand_bbox, mask_bbox
from gliomaseg.uncertainty import energy, softmax_energy_identity_check
from gliomaseg.volume import MODALITIES, MultiModalCase, Volume


def test_criterion_1_gradient_suite():
    """Every differentiable op and composite block at <= 1e-4, <= 2 min."""
    t0 = time.monotonic()
    results = gradient_suite(seed=0, step=1e-3)
    elapsed = time.monotonic() - t0
    required = {"conv3d_s1_same", "conv_transpose3d", "instance_norm",
                "elu", "relu", "sigmoid", "softmax", "channel_attention",
                "attention_gate", "conv_block1", "conv_block2",
                "dice_loss", "cross_entropy", "log_cosh_dice", "dice_ce"}
    assert required <= set(results)
    worst = max(results.values())
    assert worst <= 1e-4, results
    assert elapsed <= 120.0


class TestCriterion2Identities:
    def test_energy_softmax_identity(self, rng):
        logits = rng.normal(scale=4.0, size=(10_000, 4))
        assert softmax_energy_identity_check(logits) <= 1e-6

    def test_energy_shift_covariance(self, rng):
        logits = rng.normal(size=(2000, 4))
        c = 1.5
        assert np.allclose(energy(logits + c), energy(logits) - c,
                           rtol=0.0, atol=1e-12)

    def test_instance_norm_statistics(self, rng):
        from gliomaseg.layers import instance_norm

        x = Tensor(rng.normal(2.0, 3.0, size=(3, 5, 5, 5, 4)))
        y = instance_norm(x).data
        assert np.max(np.abs(y.mean(axis=(1, 2, 3)))) <= 1e-5
        assert np.max(np.abs(y.var(axis=(1, 2, 3)) - 1.0)) <= 1e-4

    def test_softmax_channel_sums(self, rng):
        from gliomaseg.layers import softmax_channels

        x = Tensor(rng.normal(scale=6.0, size=(2, 4, 4, 4, 4)))
        y = softmax_channels(x).data
        assert np.max(np.abs(y.sum(axis=-1) - 1.0)) <= 1e-6


class TestCriterion3Optimizers:
    def test_lookahead_alpha1_bit_identical_100_steps(self, rng):
        grads = [rng.normal(size=24) for _ in range(100)]
        a = np.ones(24)
        b = np.ones(24)
        inner = RAdam(lr=0.01)
        wrapped = Lookahead(RAdam(lr=0.01), k=5, alpha=1.0)
        for g in grads:
            a = inner.step(a, g)
            b = wrapped.step(b, g)
            assert np.array_equal(a, b)

    def test_lookahead_alpha0_k1_freezes(self, rng):
        opt = Lookahead(Adam(lr=1.0), k=1, alpha=0.0)
        theta = np.full(6, 2.0)
        for _ in range(20):
            theta = opt.step(theta, rng.normal(size=6))
        assert np.array_equal(theta, np.full(6, 2.0))

    def test_hand_simulated_alpha_half_k2(self):
        # [DERIVED] SGD lr=0.1, unit gradients, theta0=0:
        # steps -> -0.1, sync(-0.2)->-0.1, -0.2, sync(-0.3)->-0.2
        opt = Lookahead(SGD(lr=0.1), k=2, alpha=0.5)
        theta = np.array([0.0])
        expected = [-0.1, -0.1, -0.2, -0.2]
        for want in expected:
            theta = opt.step(theta, np.array([1.0]))
            assert theta[0] == pytest.approx(want, abs=1e-15)

    def test_radam_momentum_branch_at_t1(self):
        opt = RAdam(lr=0.2, beta2=0.999)
        assert opt.rectification(1) <= 4
        out = opt.step(np.array([0.0]), np.array([5.0]))
        # Momentum-only branch: update is -lr * mhat = -lr * g.
        assert out[0] == pytest.approx(-1.0, abs=1e-12)


class TestCriterion4RoiAlgebra:
    def test_bbox_matches_brute_force_on_200_sparse_masks(self, rng):
        from test_roi import brute_force_bbox

        for _ in range(200):
            mask = np.zeros((13, 11, 17), dtype=np.float32)
            for _ in range(int(rng.integers(0, 7))):
                mask[rng.integers(13), rng.integers(11), rng.integers(17)] = 1.0
            want = brute_force_bbox(mask > 0.5)
            got = mask_bbox(mask)
            if want is None:
                assert got is None
            else:
                assert (got.lo, got.hi) == want
                expanded = expand_bbox(got, 12, mask.shape)
                assert expanded.lo == tuple(max(l - 12, 0) for l in want[0])
                assert expanded.hi == tuple(
                    min(h + 12, d - 1) for h, d in zip(want[1], mask.shape))

    def test_crop_restore_round_trip_bit_exact(self, rng):
        from gliomaseg.roi import make_crop_record, restore_to_original

        dims = (60, 60, 140)
        label = np.zeros(dims, dtype=np.uint8)
        label[20:30, 25:40, 50:90] = rng.integers(
            1, 4, size=(10, 15, 40)).astype(np.uint8)
        modalities = {m: Volume(dims=dims, spacing=(1, 1, 1),
                                data=rng.normal(size=dims).astype(np.float32))
                      for m in MODALITIES}
        case = MultiModalCase(case_id="c", modalities=modalities, label=label)
        box = expand_bbox(mask_bbox((label > 0).astype(np.float32)), 12, dims)
        cropped, rec = crop_case(case, box)
        assert cropped.dims == (48, 48, 128)
        assert np.array_equal(restore_to_original(cropped.label, rec), label)

    def test_min_dims_padding_always_reaches_target(self, rng):
        from gliomaseg.roi import make_crop_record

        for _ in range(50):
            dims = (int(rng.integers(50, 120)), int(rng.integers(50, 120)),
                    int(rng.integers(129, 180)))
            lo = tuple(int(rng.integers(0, d - 4)) for d in dims)
            hi = tuple(l + int(rng.integers(1, 4)) for l in lo)
            rec = make_crop_record(dims, BBox3(lo, hi))
            assert rec.cropped_dims() == (48, 48, 128)


class TestCriterion5TtaAlgebra:
    def test_involutions_bit_exact(self, rng):
        vol = rng.normal(size=(6, 7, 8, 4)).astype(np.float32)
        for v in ALL_TTA_VARIANTS:
            assert np.array_equal(tta_invert(tta_apply(vol, v), v), vol)

    def test_variant_order_invariance(self, rng):
        from gliomaseg.augment import TtaVariant
        from gliomaseg.models import MulticlassUNet, MulticlassUNetConfig, PatchSpec
        from gliomaseg.uncertainty import tta_aggregate

        model = MulticlassUNet(
            MulticlassUNetConfig(widths=(4, 8), bridge=12), seed=9)
        vol = rng.normal(size=(8, 8, 12, 4)).astype(np.float32)
        spec = PatchSpec(patch_dims=(8, 8, 12), overlap=(0, 0, 0))
        a_p, a_l = tta_aggregate(model, vol, spec)
        shuffled = tuple(TtaVariant(i) for i in (3, 1, 4, 7, 0, 6, 2, 5))
        b_p, b_l = tta_aggregate(model, vol, spec, variants=shuffled)
        assert np.max(np.abs(a_p - b_p)) <= 1e-6
        assert np.max(np.abs(a_l - b_l)) <= 1e-6

    def test_constant_model_aggregate_exact(self, rng):
        from gliomaseg.models import PatchSpec, sliding_window_predict
        from gliomaseg.uncertainty import tta_aggregate
        from test_uncertainty import _ConstantModel

        model = _ConstantModel([0.4, 0.3, 0.2, 0.1], [2.0, 1.0, 0.0, -1.0])
        vol = rng.normal(size=(8, 8, 8, 4)).astype(np.float32)
        spec = PatchSpec(patch_dims=(8, 8, 8), overlap=(0, 0, 0))
        agg_p, agg_l = tta_aggregate(model, vol, spec)
        one_p, one_l = sliding_window_predict(model, vol, spec)
        assert np.array_equal(agg_p, one_p)
        assert np.array_equal(agg_l, one_l)


class TestCriterion6LossValues:
    def test_perfect_prediction_dice(self, rng):
        target = one_hot(rng.integers(0, 4, size=(1, 4, 4, 4)), 4)
        loss = dice_loss(Tensor(target.astype(np.float64)), target)
        assert float(loss.data) <= 1e-5

    def test_disjoint_mask_dice(self):
        p = np.array([1.0, 1.0, 0.0, 0.0]).reshape(1, 4, 1, 1, 1)
        y = np.array([0.0, 0.0, 1.0, 1.0]).reshape(1, 4, 1, 1, 1)
        assert float(dice_loss(Tensor(p), y).data) >= 1.0 - 1e-5

    def test_uniform_ce_is_ln4(self, rng):
        target = one_hot(rng.integers(0, 4, size=(2, 3, 3, 3)), 4)
        probs = Tensor(np.full(target.shape, 0.25, dtype=np.float64))
        assert float(cross_entropy(probs, target).data) == pytest.approx(
            np.log(4.0), abs=1e-6)

    def test_log_cosh_of_one(self):
        p = np.array([1.0, 1.0, 0.0, 0.0]).reshape(1, 4, 1, 1, 1)
        y = np.array([0.0, 0.0, 1.0, 1.0]).reshape(1, 4, 1, 1, 1)
        assert float(log_cosh_dice(Tensor(p), y).data) == pytest.approx(
            0.433781, abs=1e-5)


class TestCriterion7EndToEnd:
    def test_two_stage_training_time_and_dice(self, trained_pipeline, tmp_path):
        assert trained_pipeline["train_seconds"] <= 20 * 60
        pred_dir = tmp_path / "preds"
        predict_to_dir(trained_pipeline["manifest"],
                       trained_pipeline["val_ids"],
                       trained_pipeline["binary_ckpt"],
                       trained_pipeline["multiclass_ckpt"],
                       trained_pipeline["config"], pred_dir)
        report = evaluate(trained_pipeline["manifest"], pred_dir,
                          case_ids=trained_pipeline["val_ids"])
        agg = report["aggregate"]
        assert agg["mean"] >= 0.80, agg
        assert agg["whole"] >= 0.85, agg

    def test_training_loss_halves_within_30_epochs(self, trained_pipeline):
        history = trained_pipeline["multiclass_result"]["history"]
        losses = [h["train_loss"] for h in history[:30]]
        assert losses[-1] <= 0.5 * losses[0]


class TestCriterion8Ablation:
    def test_roi_does_not_regress_enhancing_dice(self, trained_pipeline,
                                                 tmp_path):
        cfg = trained_pipeline["config"]
        manifest = trained_pipeline["manifest"]
        val_ids = trained_pipeline["val_ids"]

        # ROI pipeline predictions (reuses the session-trained stages).
        roi_dir = tmp_path / "roi_preds"
        predict_to_dir(manifest, val_ids, trained_pipeline["binary_ckpt"],
                       trained_pipeline["multiclass_ckpt"], cfg, roi_dir)
        roi_enh = evaluate(manifest, roi_dir,
                           case_ids=val_ids)["aggregate"]["enh"]

        # Whole-volume variant: same multiclass recipe, no ROI stage.
        flat_ckpt = tmp_path / "flat.ckpt"
        train_multiclass(cfg, manifest, flat_ckpt, use_roi=False)
        flat_dir = tmp_path / "flat_preds"
        flat_model, _ = model_from_checkpoint(flat_ckpt)
        from gliomaseg.models import PatchSpec, sliding_window_predict
        from gliomaseg.volume import load_case

        spec = PatchSpec(patch_dims=tuple(cfg.multiclass.patch_dims),
                         overlap=tuple(cfg.multiclass.overlap))
        flat_dir.mkdir()
        from gliomaseg.uncertainty import tta_aggregate

        for cid in val_ids:
            case = load_case(manifest, cid)
            probs, _logits = tta_aggregate(flat_model, case.stacked(), spec)
            pred = np.argmax(probs, axis=-1).astype(np.float32)
            case_dir = flat_dir / cid
            case_dir.mkdir()
            write_raw(Volume(dims=case.dims, spacing=(1, 1, 1), data=pred),
                      case_dir / "pred_seg.raw")
        flat_enh = evaluate(manifest, flat_dir,
                            case_ids=val_ids)["aggregate"]["enh"]

        # Tie allowed; a regression beyond 0.02 fails the build.
        assert roi_enh >= flat_enh - 0.02, (roi_enh, flat_enh)


class TestCriterion9Formats:
    def test_raw_round_trip_bit_exact(self, rng, tmp_path):
        vol = Volume(dims=(7, 8, 9), spacing=(1.0, 1.0, 1.5),
                     data=rng.normal(size=(7, 8, 9)).astype(np.float32))
        write_raw(vol, tmp_path / "v.raw")
        assert np.array_equal(read_raw(tmp_path / "v.raw").data, vol.data)

    def test_nifti_round_trip_bit_exact(self, rng, tmp_path):
        vol = Volume(dims=(7, 8, 9), spacing=(1.0, 1.0, 1.5),
                     data=rng.normal(size=(7, 8, 9)).astype(np.float32))
        write_nifti(vol, tmp_path / "v.nii")
        assert np.array_equal(read_nifti(tmp_path / "v.nii").data, vol.data)

    def test_checkpoint_reproduces_forward_bit_exact(self, rng, tmp_path):
        cfg = BinaryUNetConfig(widths=(4, 8), bridge=12,
                               input_size=(16, 16, 16))
        model = BinaryUNet(cfg, seed=2)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, cfg.to_dict(), model.params)
        clone, _ = model_from_checkpoint(path)
        x = rng.normal(size=(1, 16, 16, 16, 4)).astype(np.float32)
        from gliomaseg.autodiff import no_grad

        with no_grad():
            a, al = model.forward(x)
            b, bl = clone.forward(x)
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(al.data, bl.data)
