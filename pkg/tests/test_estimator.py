import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from attencopt.estimator import (
    AttentionScheduler,
    ExactScheduler,
    MaintenanceFeaturizer,
    check_instances,
    feasibility_rate,
)
from attencopt.instance import GeneratorConfig, generate, generate_many, write_instance

from conftest import make_instance

TINY = dict(epochs=1, instances_per_epoch=32, n_validation=2, hidden_dim=8, n_heads=2, n_layers=1)


@pytest.fixture(scope="module")
def desk_a():
    return generate_many(GeneratorConfig.preset("desk-a", seed=31), 6)


def test_check_instances_accepts_forms(tmp_path, desk_a):
    write_instance(desk_a[0], tmp_path / "i.json")
    out = check_instances([desk_a[0], desk_a[1].to_dict(), tmp_path / "i.json", str(tmp_path / "i.json")])
    assert out[0] == out[2] == out[3] and out[1] == desk_a[1]
    assert len(check_instances(desk_a[0])) == 1


def test_check_instances_rejects(desk_a):
    with pytest.raises(ValueError):
        check_instances([])
    with pytest.raises(TypeError):
        check_instances([np.zeros(3)])
    with pytest.raises(TypeError):
        check_instances(desk_a[0], allow_single=False)
    with pytest.raises(TypeError):
        check_instances(5)
    with pytest.raises(ValueError, match="capacity-horizon"):
        check_instances([make_instance(I=5, T=2, M=2)])


def test_featurizer(desk_a):
    feat = MaintenanceFeaturizer().fit(desk_a)
    X = feat.transform(desk_a)
    assert X.shape == (6, 8, 8, 6)
    assert feat.n_features_out_ == 6
    mixed = desk_a[:1] + [generate(GeneratorConfig.preset("desk-b"))]
    assert isinstance(feat.transform(mixed), list)
    padded = MaintenanceFeaturizer(pad_to=12).fit_transform(mixed)
    assert isinstance(padded, list) and padded[0].shape == (8, 12, 6)
    with pytest.raises(NotFittedError):
        MaintenanceFeaturizer().transform(desk_a)


def test_params_and_clone():
    est = AttentionScheduler(preset="desk-b", hidden_dim=16)
    params = est.get_params()
    assert params["preset"] == "desk-b" and params["hidden_dim"] == 16
    other = clone(est).set_params(epochs=3)
    assert other.epochs == 3 and est.epochs == 20
    assert est.train_config().preset == "desk-b"


def test_attention_scheduler_fit_predict(desk_a, tmp_path):
    est = AttentionScheduler(**TINY, out_dir=tmp_path).fit(desk_a)
    preds = est.predict(desk_a)
    assert len(preds) == 6 and preds[0].shape == (5, 4)
    assert feasibility_rate(desk_a, preds) == 1.0
    assert est.score(desk_a) < 0
    again = AttentionScheduler.from_checkpoint(tmp_path / "model.ckpt")
    assert all(np.array_equal(a, b) for a, b in zip(again.predict(desk_a), preds))
    assert again.hidden_dim == 8


def test_fit_without_data_uses_generator():
    est = AttentionScheduler(**TINY).fit()
    assert len(est.log_.batches) == 1


def test_unfitted_predict_raises(desk_a):
    with pytest.raises(NotFittedError):
        AttentionScheduler().predict(desk_a)


def test_location_mismatch_rejected(desk_a):
    est = AttentionScheduler(**TINY).fit()
    inst = generate(GeneratorConfig.preset("desk-a", n_locations=3))
    with pytest.raises(ValueError):
        est.predict([inst])


def test_exact_scheduler_beats_or_ties_policy(desk_a):
    exact = ExactScheduler().fit(desk_a)
    policy = AttentionScheduler(**TINY).fit()
    assert exact.score(desk_a) >= policy.score(desk_a) - 1e-9
    assert feasibility_rate(desk_a, exact.predict(desk_a)) == 1.0
