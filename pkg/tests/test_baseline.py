import numpy as np
import pytest

from greyraman.baseline import BaselineModel, features, predict_conventional, train_conventional
from greyraman.dataset import LaunchProfile, SampleRecord
from greyraman.errors import DimensionMismatch, SchemaError
from greyraman.mlp import Mlp, TrainConfig
from greyraman.physics import ChannelGrid

N_CH = 12
GRID = ChannelGrid(n_ch=N_CH)


def synthetic(n, seed):
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(n):
        pumps = rng.uniform(0, 0.2, 5)
        launch = rng.uniform(-2, 2, N_CH)
        gain = 10 * pumps.sum() * np.linspace(1, 0.5, N_CH) - 0.1 * launch
        recs.append(SampleRecord(i, "ds1", i, pumps, LaunchProfile(launch), gain))
    return recs


CFG = TrainConfig(max_epochs=30, early_stop_patience=10, seed=3)


def test_full_size_parameter_count():
    model = BaselineModel(Mlp([205, 200, 200]))
    assert model.param_count() == 81400


def test_feature_order():
    np.testing.assert_array_equal(features([1, 2], [3, 4, 5]), [[1, 2, 3, 4, 5]])


def test_training_is_deterministic():
    recs = synthetic(40, 0)
    a = train_conventional(recs[:32], recs[32:], CFG, GRID)
    b = train_conventional(recs[:32], recs[32:], CFG, GRID)
    assert a.to_dict() == b.to_dict()
    assert "heldout_rmse_db" in a.metrics


def test_prediction_shape_and_profile_sensitivity():
    recs = synthetic(40, 1)
    model = train_conventional(recs[:32], recs[32:], CFG, GRID)
    r = recs[0]
    g = predict_conventional(model, r.pump_powers_w, r.launch)
    assert g.shape == (N_CH,)
    # same total, channels permuted: the profile matters to this model
    shuffled = r.launch.per_channel_dbm[::-1].copy()
    assert not np.allclose(predict_conventional(model, r.pump_powers_w, shuffled), g)
    batch = predict_conventional(model, [r.pump_powers_w] * 2, [r.launch.per_channel_dbm] * 2)
    np.testing.assert_allclose(batch[0], g, rtol=0, atol=1e-12)


def test_wrong_profile_length():
    model = BaselineModel(Mlp([5 + N_CH, 4, N_CH]), grid=GRID)
    with pytest.raises(DimensionMismatch):
        predict_conventional(model, np.zeros(5), np.zeros(N_CH + 1))


def test_bundle_round_trip(tmp_path):
    recs = synthetic(20, 2)
    model = train_conventional(recs[:16], recs[16:], CFG, GRID)
    model.save(tmp_path / "m.json")
    back = BaselineModel.load(tmp_path / "m.json")
    back.save(tmp_path / "m2.json")
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    r = recs[0]
    np.testing.assert_array_equal(predict_conventional(back, r.pump_powers_w, r.launch),
                                  predict_conventional(model, r.pump_powers_w, r.launch))


def test_rejects_greybox_bundle():
    obj = BaselineModel(Mlp([5 + N_CH, 4, N_CH]), grid=GRID).to_dict()
    obj["kind"] = "greybox"
    with pytest.raises(SchemaError):
        BaselineModel.from_dict(obj)
