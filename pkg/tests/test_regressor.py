import numpy as np
import pytest

from latentrecourse.data import (
    SYNTH_TARGET,
    Dataset,
    encode,
    fit_schema,
    make_synthetic,
    split,
)
from latentrecourse.errors import TrainingDivergedError
from latentrecourse.nets import Mlp
from latentrecourse.regressor import (
    RegressorConfig,
    TrainedRegressor,
    train_regressor,
)


@pytest.fixture(scope="module")
def noise_free():
    rows, _ = make_synthetic(800, seed=1, noise=0.0)
    tr, te = split(rows, 0.75, seed=2)
    schema = fit_schema(tr, target=SYNTH_TARGET)
    return schema, encode(schema, tr), encode(schema, te)


@pytest.fixture(scope="module")
def trained(noise_free):
    _, ds_tr, ds_te = noise_free
    return train_regressor(ds_tr, RegressorConfig(epochs=100, seed=0),
                           test=ds_te)


def test_zero_epochs_returns_untrained_net(noise_free):
    _, ds_tr, ds_te = noise_free
    reg = train_regressor(ds_tr, RegressorConfig(epochs=0, seed=0),
                          test=ds_te)
    # far from fit: an untrained net can do no better than variance scale
    assert reg.meta["test_mse"] > 0.01
    assert reg.meta["epochs"] == 0


def test_linear_target_fit_under_1e3(trained):
    assert trained.meta["test_mse"] < 1e-3


def test_r2_above_099_at_zero_noise(trained, noise_free):
    _, _, ds_te = noise_free
    pred = trained.predict(ds_te.X)
    ss_res = np.sum((pred - ds_te.y) ** 2)
    ss_tot = np.sum((ds_te.y - ds_te.y.mean()) ** 2)
    assert 1.0 - ss_res / ss_tot > 0.99


def test_same_seed_identical_weights(noise_free):
    _, ds_tr, _ = noise_free
    a = train_regressor(ds_tr, RegressorConfig(epochs=3, seed=5))
    b = train_regressor(ds_tr, RegressorConfig(epochs=3, seed=5))
    for pa, pb in zip(a.mlp.params(), b.mlp.params()):
        assert np.array_equal(pa, pb)


def test_different_seed_differs(noise_free):
    _, ds_tr, _ = noise_free
    a = train_regressor(ds_tr, RegressorConfig(epochs=1, seed=5))
    b = train_regressor(ds_tr, RegressorConfig(epochs=1, seed=6))
    assert any(not np.array_equal(pa, pb)
               for pa, pb in zip(a.mlp.params(), b.mlp.params()))


def test_predict_single_row_matches_batch(trained, noise_free):
    # single-row and batched matmuls take different BLAS kernels, so allow
    # last-ulp drift while pinning the values to each other
    _, _, ds_te = noise_free
    full = trained.predict(ds_te.X)
    one = trained.predict(ds_te.X[7:8])
    assert np.allclose(one, full[7:8], rtol=0.0, atol=1e-12)


def test_predict_permutation_equivariant(trained, noise_free):
    _, _, ds_te = noise_free
    perm = np.random.default_rng(0).permutation(ds_te.n)
    assert np.array_equal(trained.predict(ds_te.X)[perm],
                          trained.predict(ds_te.X[perm]))


def test_predict_bit_stable(trained, noise_free):
    _, _, ds_te = noise_free
    assert np.array_equal(trained.predict(ds_te.X), trained.predict(ds_te.X))


def test_params_frozen_after_training(trained):
    with pytest.raises(ValueError):
        trained.mlp.weights[0][0, 0] = 1.0


def test_divergence_guard_carries_last_good():
    huge = Dataset(X=np.full((8, 3), 1e160), y=np.zeros((8, 1)),
                   fingerprint="x")
    with np.errstate(over="ignore"), pytest.raises(TrainingDivergedError) as exc:
        train_regressor(huge, RegressorConfig(epochs=1, batch_size=8, seed=0))
    assert isinstance(exc.value.last_good, Mlp)


def test_config_validation():
    with pytest.raises(ValueError):
        RegressorConfig(epochs=-1).validate()
    with pytest.raises(ValueError):
        RegressorConfig(batch_size=0).validate()
