"""Shared trained fixtures. The small stack keeps module suites fast; the
full-scale stack drives the acceptance gate and pipeline examples. Each
trains at most once per session, and only when some collected test asks
for it."""

import time
from dataclasses import dataclass
from types import SimpleNamespace

import pytest

from latentrecourse.cli_service import (
    load_ce_model,
    load_gdl,
    load_regressor,
    load_schema_for,
    main,
)
from latentrecourse.data import (
    Dataset,
    FeatureSchema,
    SYNTH_TARGET,
    encode,
    fit_schema,
    load_csv,
    make_synthetic,
    relabel_with_model,
    split,
    trim_outliers,
)
from latentrecourse.disentangle import DisentangledModel, TrainConfig, train
from latentrecourse.nets import load_params
from latentrecourse.regressor import (
    RegressorConfig,
    TrainedRegressor,
    train_regressor,
)


@dataclass
class TrainedStack:
    schema: FeatureSchema
    rows_train: list
    rows_test: list
    dt: Dataset                 # encoded + relabeled train split
    ds_test: Dataset
    reg: TrainedRegressor
    model: DisentangledModel


@pytest.fixture(scope="session")
def small_stack() -> TrainedStack:
    rows, _ = make_synthetic(700, seed=3, noise=0.05)
    rows_train, rows_test = split(rows, 0.8, seed=3)
    schema = fit_schema(rows_train, target=SYNTH_TARGET)
    ds_train = encode(schema, rows_train)
    reg = train_regressor(ds_train, RegressorConfig(epochs=30, seed=3))
    dt = relabel_with_model(ds_train, reg)
    model = train(dt, TrainConfig(epochs=120, seed=3))
    return TrainedStack(schema=schema, rows_train=rows_train,
                        rows_test=rows_test, dt=dt,
                        ds_test=encode(schema, rows_test), reg=reg,
                        model=model)


FIXTURE_N = 5000
FIXTURE_SEED = 7


@pytest.fixture(scope="session")
def accept_stack(tmp_path_factory) -> SimpleNamespace:
    """Synthetic data -> regressor -> counterfactual model (timed) ->
    ablation, all through the CLI with default hyperparameters. Takes a
    couple of minutes; only the acceptance gate and the pipeline examples
    request it."""
    root = tmp_path_factory.mktemp("accept")
    data = root / "synth.csv"
    reg_file = root / "reg.lrm"
    model_file = root / "model.lrm"
    ablation_file = root / "ablation.lrm"

    assert main(["synthetic", "--n", str(FIXTURE_N),
                 "--seed", str(FIXTURE_SEED), "--out", str(data)]) == 0
    assert main(["train-regressor", "--data", str(data),
                 "--out", str(reg_file), "--seed", str(FIXTURE_SEED)]) == 0
    t0 = time.perf_counter()
    assert main(["train-ce", "--data", str(data), "--model", str(reg_file),
                 "--out", str(model_file)]) == 0
    train_ce_seconds = time.perf_counter() - t0
    assert main(["train-ce", "--data", str(data), "--model", str(reg_file),
                 "--out", str(ablation_file), "--lambda-adv", "0",
                 "--no-baseline"]) == 0

    lrm = load_params(model_file)
    schema = load_schema_for(model_file)
    reg = load_regressor(lrm)
    model = load_ce_model(lrm)
    gdl = load_gdl(lrm)
    ablation = load_ce_model(load_params(ablation_file))

    # reproduce the training/test partition the pipeline used
    run_cfg = lrm.meta["run_config"]
    trimmed = trim_outliers(load_csv(data), run_cfg["target"],
                            run_cfg["trim"])
    rows_train, rows_test = split(trimmed, run_cfg["train_fraction"],
                                  run_cfg["seed"])
    dt = relabel_with_model(encode(schema, rows_train), reg)
    ds_test = encode(schema, rows_test)

    return SimpleNamespace(root=root, data=data, model_file=model_file,
                           schema=schema, reg=reg, model=model, gdl=gdl,
                           ablation=ablation, dt=dt, ds_test=ds_test,
                           rows_test=rows_test,
                           train_ce_seconds=train_ce_seconds)
