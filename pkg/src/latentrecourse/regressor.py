"""Training and serving of the frozen model under explanation.

The regressor is trained once, then everything downstream treats it as a
black box: parameters are physically frozen (read-only arrays) and only the
predict function is exposed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .diff_engine import Graph, Tensor, backward
from .errors import TrainingDivergedError
from .nets import (
    BoundMlp,
    Mlp,
    MlpSpec,
    adam_init,
    adam_step,
    init_mlp,
    mlp_forward,
)

DEFAULT_HIDDEN = (64, 64, 64)


@dataclass
class RegressorConfig:
    epochs: int = 100
    batch_size: int = 100
    lr: float = 1e-3
    seed: int = 0
    hidden: tuple = DEFAULT_HIDDEN

    def validate(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


@dataclass
class TrainedRegressor:
    mlp: Mlp
    schema_fingerprint: str
    meta: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Pure function of the input; one prediction column per row."""
        return mlp_forward(self.mlp, np.asarray(X, dtype=np.float64))

    def freeze(self) -> "TrainedRegressor":
        for p in self.mlp.params():
            p.setflags(write=False)
        return self


def mse(pred: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((pred - y) ** 2))


def minibatches(n: int, batch_size: int, rng) -> list:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_regressor(train: Dataset, config: RegressorConfig,
                    test: Dataset = None) -> TrainedRegressor:
    """Minimize MSE(y, f(x)) with Adam. Deterministic per seed; aborts if
    the loss goes non-finite, carrying the last finite state."""
    config.validate()
    spec = MlpSpec((train.X.shape[1],) + tuple(config.hidden) + (1,))
    mlp = init_mlp(spec, seed=[config.seed, 0])
    state = adam_init(mlp, lr=config.lr)
    last_good = mlp.clone()
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch + 1])
        for batch in minibatches(train.n, config.batch_size, rng):
            g = Graph()
            bound = BoundMlp(g, mlp, trainable=True)
            pred = bound.forward(g.constant(Tensor(train.X[batch])))
            loss = g.mean_sq_err(pred, g.constant(Tensor(train.y[batch])))
            if not np.isfinite(loss.value[0, 0]):
                raise TrainingDivergedError(
                    f"loss became non-finite in epoch {epoch}",
                    last_good=last_good)
            adam_step(state, mlp, bound.grads_list(backward(g, loss)))
        last_good = mlp.clone()
    meta = {
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "lr": config.lr,
        "seed": config.seed,
        "train_mse": mse(mlp_forward(mlp, train.X), train.y),
    }
    if test is not None:
        meta["test_mse"] = mse(mlp_forward(mlp, test.X), test.y)
    return TrainedRegressor(mlp, train.fingerprint, meta).freeze()
