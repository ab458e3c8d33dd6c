import inspect

import numpy as np
import pytest
from hypothesis import given, strategies as st

from greyraman.dataset import LaunchProfile, SampleRecord
from greyraman.errors import DimensionMismatch, RankDeficient, SchemaError, UnpairedRecord
from greyraman.greybox import (
    GreyboxModel,
    TransferCoeffs,
    apply_transfer,
    fit_transfer_coeffs,
    predict,
    train_greybox,
    transfer_labels,
)
from greyraman.mlp import Mlp, TrainConfig
from greyraman.physics import ChannelGrid

N = 200
IDX = np.arange(1, N + 1, dtype=float)


def random_base(rng):
    """Smooth, clearly non-affine gain-like profile in dB."""
    x = np.linspace(0, 1, N)
    return -8 + 3 * np.sin(2.5 * x + rng.uniform(0, 3)) + rng.normal(0, 0.05, N)


def rss(c, g, g_base):
    r = g - apply_transfer(c, g_base)
    return float(r @ r)


class TestFit:
    def test_identity(self):
        g = random_base(np.random.default_rng(0))
        c = fit_transfer_coeffs(g, g)
        assert (c.b1, c.b2, c.b3) == pytest.approx((0.0, 0.0, 1.0), abs=1e-10)
        assert c.residual_rmse == pytest.approx(0.0, abs=1e-12)

    def test_pure_offset(self):
        g = random_base(np.random.default_rng(1))
        c = fit_transfer_coeffs(g + 2.5, g)
        assert (c.b1, c.b2, c.b3) == pytest.approx((2.5, 0.0, 1.0), abs=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_plant_and_recover(self, seed):
        rng = np.random.default_rng(seed)
        base = random_base(rng)
        planted = (rng.uniform(-3, 3), rng.uniform(-0.01, 0.01), rng.uniform(0.5, 1.5))
        g = planted[0] + planted[1] * IDX + planted[2] * base
        c = fit_transfer_coeffs(g, base, ChannelGrid())
        np.testing.assert_allclose(c.as_array(), planted, rtol=0, atol=1e-9)

    def test_agrees_with_svd_least_squares(self):
        rng = np.random.default_rng(11)
        base = random_base(rng)
        g = 0.3 + 0.002 * IDX + 1.1 * base + rng.normal(0, 0.1, N)
        c = fit_transfer_coeffs(g, base)
        ref, *_ = np.linalg.lstsq(np.column_stack([np.ones(N), IDX, base]), g, rcond=None)
        np.testing.assert_allclose(c.as_array(), ref, rtol=1e-10, atol=1e-12)
        assert c.residual_rmse == pytest.approx(np.sqrt(np.mean((g - apply_transfer(c, base)) ** 2)))

    def test_rss_is_local_minimum(self):
        rng = np.random.default_rng(12)
        base = random_base(rng)
        g = -0.7 + 0.004 * IDX + 0.8 * base + rng.normal(0, 0.2, N)
        c = fit_transfer_coeffs(g, base)
        best = rss(c, g, base)
        for k in range(3):
            for step in (1e-3, -1e-3):
                bumped = c.as_array().copy()
                bumped[k] += step
                assert rss(bumped, g, base) >= best

    def test_constant_base_is_rank_deficient(self):
        with pytest.raises(RankDeficient):
            fit_transfer_coeffs(np.linspace(0, 1, N), np.full(N, -5.0))

    def test_affine_base_is_rank_deficient(self):
        with pytest.raises(RankDeficient):
            fit_transfer_coeffs(np.zeros(N), 1.0 + 0.1 * IDX)

    def test_fallback_pins_scale(self):
        g = 3.0 + 0.01 * IDX
        c = fit_transfer_coeffs(g, np.full(N, -5.0), fallback=True)
        assert c.rank_deficient and c.b3 == 1.0
        np.testing.assert_allclose(apply_transfer(c, np.full(N, -5.0)), g, atol=1e-10)

    def test_length_checks(self):
        with pytest.raises(DimensionMismatch):
            fit_transfer_coeffs(np.zeros(5), np.zeros(6))
        with pytest.raises(DimensionMismatch):
            fit_transfer_coeffs(np.zeros(2), np.zeros(2))
        with pytest.raises(DimensionMismatch):
            fit_transfer_coeffs(np.zeros(5), np.zeros(5), ChannelGrid())


class TestApply:
    def test_identity_coeffs(self):
        base = random_base(np.random.default_rng(2))
        np.testing.assert_array_equal(apply_transfer(TransferCoeffs(0, 0, 1), base), base)

    def test_offset_only(self):
        base = random_base(np.random.default_rng(3))
        np.testing.assert_array_equal(apply_transfer((1.0, 0.0, 0.0), base), np.ones(N))

    def test_round_trip_with_fit(self):
        rng = np.random.default_rng(4)
        base = random_base(rng)
        g = 0.5 - 0.003 * IDX + 1.2 * base + rng.normal(0, 0.05, N)
        c = fit_transfer_coeffs(g, base)
        resid = g - apply_transfer(c, base)
        assert np.sqrt(np.mean(resid**2)) == pytest.approx(c.residual_rmse, rel=1e-12)

    def test_batched(self):
        rng = np.random.default_rng(5)
        bases = np.array([random_base(rng) for _ in range(4)])
        coeffs = rng.normal(size=(4, 3))
        batch = apply_transfer(coeffs, bases)
        for i in range(4):
            np.testing.assert_allclose(batch[i], apply_transfer(coeffs[i], bases[i]), rtol=1e-15)

    @given(a=st.floats(-2, 2), b=st.lists(st.floats(-5, 5), min_size=3, max_size=3))
    def test_affine_in_base(self, a, b):
        rng = np.random.default_rng(6)
        g, h = random_base(rng), random_base(rng)
        lhs = apply_transfer(b, a * g + (1 - a) * h)
        rhs = a * apply_transfer(b, g) + (1 - a) * apply_transfer(b, h)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)

    def test_wrong_coeff_count(self):
        with pytest.raises(DimensionMismatch):
            apply_transfer((1.0, 2.0), np.zeros(5))


def identity_nn2():
    """Coefficient network that always outputs (0, 0, 1)."""
    nn2 = Mlp([6, 50, 30, 3])
    for w in nn2.weights:
        w[:] = 0
    nn2.out_scaler.mean = np.array([0.0, 0.0, 1.0])
    return nn2


class TestModel:
    def test_default_parameter_total(self):
        model = GreyboxModel(Mlp([5, 200, 200]), Mlp([6, 50, 30, 3]))
        assert model.param_count() == 43373

    def test_reference_point_consistency(self):
        rng = np.random.default_rng(0)
        model = GreyboxModel(Mlp([5, 200, 200], seed=1), identity_nn2())
        pumps = rng.uniform(0, 0.2, 5)
        np.testing.assert_allclose(predict(model, pumps, 14.0), model.nn1.forward(pumps), atol=1e-12)

    def test_deterministic(self):
        model = GreyboxModel(Mlp([5, 200, 200], seed=1), Mlp([6, 50, 30, 3], seed=2))
        p = [0.01, 0.16, 0.12, 0.19, 0.13]
        np.testing.assert_array_equal(predict(model, p, 23.0), predict(model, p, 23.0))

    def test_batch_matches_single(self):
        model = GreyboxModel(Mlp([5, 200, 200], seed=1), Mlp([6, 50, 30, 3], seed=2))
        rng = np.random.default_rng(1)
        pumps = rng.uniform(0, 0.2, (3, 5))
        totals = np.array([15.0, 19.0, 23.0])
        batch = predict(model, pumps, totals)
        for i in range(3):
            np.testing.assert_allclose(batch[i], predict(model, pumps[i], totals[i]), rtol=0, atol=1e-12)

    def test_predict_takes_total_power_only(self):
        params = list(inspect.signature(predict).parameters)
        assert params == ["model", "pump_powers_w", "total_launch_dbm"]

    def test_shape_validation(self):
        with pytest.raises(DimensionMismatch):
            GreyboxModel(Mlp([5, 200, 100]), Mlp([6, 50, 30, 3]))
        with pytest.raises(DimensionMismatch):
            GreyboxModel(Mlp([5, 200, 200]), Mlp([5, 50, 30, 3]))
        model = GreyboxModel(Mlp([5, 200, 200]), Mlp([6, 50, 30, 3]))
        with pytest.raises(DimensionMismatch):
            predict(model, [0.1, 0.1], 14.0)

    def test_extrapolation_flag(self):
        model = GreyboxModel(Mlp([5, 200, 200]), Mlp([6, 50, 30, 3]))
        assert not model.extrapolates([0.1] * 5)
        assert model.extrapolates([0.3, 0.1, 0.1, 0.1, 0.1])

    def test_bundle_round_trip(self, tmp_path):
        model = GreyboxModel(Mlp([5, 200, 200], seed=3), Mlp([6, 50, 30, 3], seed=4),
                             metrics={"nn1_heldout_rmse_db": 0.1}, provenance={"seed": 3})
        path = tmp_path / "gb.json"
        model.save(path)
        back = GreyboxModel.load(path)
        p = [0.05, 0.1, 0.15, 0.2, 0.0]
        np.testing.assert_array_equal(predict(back, p, 20.0), predict(model, p, 20.0))
        assert back.metrics == model.metrics and back.provenance == model.provenance
        back.save(tmp_path / "again.json")
        assert (tmp_path / "again.json").read_bytes() == path.read_bytes()

    def test_bundle_kind_checked(self):
        obj = GreyboxModel(Mlp([5, 200, 200]), Mlp([6, 50, 30, 3])).to_dict()
        obj["kind"] = "conventional"
        with pytest.raises(SchemaError):
            GreyboxModel.from_dict(obj)


def synthetic_records(n, rng):
    """Fake ds1/ds2 pairs obeying the transfer model exactly (no oracle needed)."""
    ds1, ds2 = [], []
    for i in range(n):
        pumps = rng.uniform(0, 0.2, 5)
        base = -10 + 20 * pumps.mean() * np.sin(np.linspace(0, 2, N) + pumps[0] * 10)
        total = float(rng.integers(15, 24))
        d = total - 14.0
        g = -0.05 * d - 0.0004 * d * IDX + (1 - 0.01 * d) * base
        flat1 = LaunchProfile(np.full(N, 14 - 10 * np.log10(N)))
        flat2 = LaunchProfile(np.full(N, total - 10 * np.log10(N)))
        ds1.append(SampleRecord(i, "ds1", i, pumps, flat1, base))
        ds2.append(SampleRecord(i, "ds2", i, pumps.copy(), flat2, g, partner_id=i))
    return ds1, ds2


def test_transfer_labels_self_transfer():
    rng = np.random.default_rng(0)
    ds1, _ = synthetic_records(3, rng)
    same = [SampleRecord(r.sample_id, "ds2", 0, r.pump_powers_w.copy(), r.launch, r.gain.copy(),
                         partner_id=r.sample_id) for r in ds1]
    x, y, resid, kept, dropped = transfer_labels(same, ds1)
    np.testing.assert_allclose(y, np.tile([0.0, 0.0, 1.0], (3, 1)), atol=1e-10)
    np.testing.assert_allclose(x[:, -1], 0.0, atol=1e-9)
    assert dropped == 0 and kept == [0, 1, 2]


def test_transfer_labels_unpaired():
    rng = np.random.default_rng(1)
    ds1, ds2 = synthetic_records(2, rng)
    ds2[1].partner_id = 99
    with pytest.raises(UnpairedRecord):
        transfer_labels(ds2, ds1)
    ds2[1].partner_id = 1
    ds2[1].pump_powers_w = ds2[1].pump_powers_w + 1e-3
    with pytest.raises(UnpairedRecord):
        transfer_labels(ds2, ds1)


def test_train_greybox_on_exact_transfer_data():
    rng = np.random.default_rng(2)
    ds1, ds2 = synthetic_records(120, rng)
    ids = list(range(120))
    cfg = TrainConfig(max_epochs=300, early_stop_patience=50)
    model = train_greybox(ds1, ds2, ids[:96], ids[96:], cfg, cfg)
    assert model.param_count() == 43373
    assert model.metrics["transfer_residual_rmse_max_db"] < 1e-9
    assert model.metrics["n_train"] == 96 and model.metrics["n_test"] == 24
    # two trainings with the same seeds agree bit for bit
    again = train_greybox(ds1, ds2, ids[:96], ids[96:], cfg, cfg)
    assert again.to_dict() == model.to_dict()


def test_train_greybox_rejects_overlapping_split():
    rng = np.random.default_rng(3)
    ds1, ds2 = synthetic_records(4, rng)
    with pytest.raises(ValueError):
        train_greybox(ds1, ds2, [0, 1, 2], [2, 3])
