"""Label-disentangled autoencoder trained against an adversarial regressor
and a vicinal discriminator.

Four networks around a frozen regressor's labels ŷ:
  - encoder  z_u = ψ(x): label-irrelevant code
  - decoder  x'  = φ([z_u | ŷ]): label-conditioned reconstruction
  - adversary ŷ' = ω(z_u): tries to read the label back out of z_u
  - discriminator D([x | y]): real-vs-reconstruction at a given label

Per training iteration three branches run in order, each on a freshly
sampled batch: the adversary minimizes L_Adv, the discriminator minimizes
L_D, and the autoencoder minimizes L = L_Rec - λ_Adv L_Adv - λ_D L_D.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .diff_engine import Graph, Node, Tensor, backward
from .errors import (
    TrainingDivergedError,
    VicinityExhaustedError,
)
from .nets import (
    AdamState,
    BoundMlp,
    Mlp,
    MlpSpec,
    adam_init,
    adam_step,
    init_mlp,
    mlp_forward,
)

log = logging.getLogger(__name__)

NET_NAMES = ("encoder", "decoder", "adversary", "discriminator")


@dataclass
class TrainConfig:
    lambda_adv: float = 0.5
    lambda_d: float = 0.5
    sigma: float = 0.035        # label perturbation bandwidth
    k: float = 0.004            # hard vicinity radius
    latent_dim: int = 2
    epochs: int = 300
    batch_size: int = 100
    iters_per_epoch: Optional[int] = None   # None: ceil(n / batch_size)
    seed: int = 0
    lr: float = 1e-3
    lr_adversary: Optional[float] = None    # None: same as lr
    lr_discriminator: Optional[float] = None
    vicinity_retry_limit: int = 20
    hidden: tuple = (64, 64, 64)
    non_saturating_generator: bool = False
    decode_fakes_at_target: bool = False

    def validate(self):
        if self.lambda_adv < 0 or self.lambda_d < 0:
            raise ValueError("loss weights must be >= 0")
        if self.sigma <= 0 or self.k <= 0:
            raise ValueError("sigma and k must be > 0")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.vicinity_retry_limit < 1:
            raise ValueError("vicinity_retry_limit must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    @property
    def adv_lr(self) -> float:
        return self.lr if self.lr_adversary is None else self.lr_adversary

    @property
    def disc_lr(self) -> float:
        return self.lr if self.lr_discriminator is None else self.lr_discriminator

    def to_json(self) -> dict:
        obj = dataclasses.asdict(self)
        obj["hidden"] = list(self.hidden)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        obj = dict(obj)
        if "hidden" in obj:
            obj["hidden"] = tuple(obj["hidden"])
        return cls(**obj)


@dataclass
class DisentangledModel:
    encoder: Mlp
    decoder: Mlp
    adversary: Mlp
    discriminator: Mlp
    schema_fingerprint: str
    config: TrainConfig
    history: dict = field(default_factory=dict)

    def encode(self, X: np.ndarray) -> np.ndarray:
        """Label-irrelevant codes, one row per input row."""
        return mlp_forward(self.encoder, np.asarray(X, dtype=np.float64))

    def decode(self, Z: np.ndarray, y) -> np.ndarray:
        """Decode codes at label(s) y; y may be a scalar or an (n,1) column."""
        Z = np.asarray(Z, dtype=np.float64)
        y_col = np.broadcast_to(np.asarray(y, dtype=np.float64).reshape(-1, 1),
                                (Z.shape[0], 1))
        if np.any((y_col < 0.0) | (y_col > 1.0)):
            log.warning("decode called with labels outside [0,1]")
        return mlp_forward(self.decoder, np.concatenate([Z, y_col], axis=1))

    def sections(self) -> dict:
        return {name: getattr(self, name) for name in NET_NAMES}

    def freeze(self) -> "DisentangledModel":
        for name in NET_NAMES:
            for p in getattr(self, name).params():
                p.setflags(write=False)
        return self


def build_nets(encoded_width: int, config: TrainConfig) -> dict:
    h = tuple(config.hidden)
    ld = config.latent_dim
    specs = {
        "encoder": MlpSpec((encoded_width,) + h + (ld,)),
        "decoder": MlpSpec((ld + 1,) + h + (encoded_width,)),
        "adversary": MlpSpec((ld,) + h + (1,)),
        "discriminator": MlpSpec((encoded_width + 1,) + h + (1,),
                                 out_activation="sigmoid"),
    }
    return {name: init_mlp(spec, seed=[config.seed, i + 1])
            for i, (name, spec) in enumerate(specs.items())}


# -- vicinity --------------------------------------------------------------

class VicinityIndex:
    """Sorted label index answering |u - y_i| <= k membership exactly."""

    def __init__(self, labels: np.ndarray):
        labels = np.asarray(labels, dtype=np.float64).reshape(-1)
        if labels.size == 0:
            raise ValueError("empty label set")
        self.labels = labels
        self.order = np.argsort(labels, kind="stable")
        self.sorted = labels[self.order]
        self.n = labels.size

    def window(self, u, k: float):
        """Half-open positions [lo, hi) in sorted order; both |u-y|=k
        boundaries are inclusive."""
        lo = np.searchsorted(self.sorted, np.asarray(u) - k, side="left")
        hi = np.searchsorted(self.sorted, np.asarray(u) + k, side="right")
        return lo, hi

    def count(self, u: float, k: float) -> int:
        lo, hi = self.window(u, k)
        return int(hi - lo)

    def members(self, u: float, k: float) -> np.ndarray:
        """Original row indices inside the vicinity."""
        lo, hi = self.window(u, k)
        return self.order[int(lo):int(hi)]


def sample_vicinal(vic: VicinityIndex, count: int, sigma: float, k: float,
                   retry_limit: int, rng) -> tuple:
    """Draw `count` (target label u, member row) pairs: anchor j uniform,
    u = y_j + N(0, sigma^2), member uniform among {i : |u - y_i| <= k}.
    Empty vicinities get a fresh perturbation of the same anchor, up to
    retry_limit rounds."""
    anchors = vic.labels[rng.integers(0, vic.n, count)]
    u = np.empty(count)
    chosen = np.empty(count, dtype=np.int64)
    pending = np.arange(count)
    for _ in range(retry_limit):
        u_try = anchors[pending] + rng.normal(0.0, sigma, pending.size)
        lo, hi = vic.window(u_try, k)
        ok = hi > lo
        if np.any(ok):
            picks = rng.integers(lo[ok], hi[ok])
            hits = pending[ok]
            chosen[hits] = vic.order[picks]
            u[hits] = u_try[ok]
        pending = pending[~ok]
        if pending.size == 0:
            return u, chosen
    raise VicinityExhaustedError(
        f"{pending.size} of {count} vicinal draws found no labels within "
        f"k={k} after {retry_limit} rounds (sigma={sigma}); widen k or "
        f"raise the retry limit")


# -- loss graphs -----------------------------------------------------------

def _recon_graph(g: Graph, enc_b: BoundMlp, dec_b: BoundMlp,
                 X: np.ndarray, y_hat: np.ndarray) -> Node:
    x = g.constant(Tensor(X))
    z = enc_b.forward(x)
    x_rec = dec_b.forward(g.concat_cols(z, g.constant(Tensor(y_hat))))
    return g.mean_sq_err(x_rec, x)


def _adversary_graph(g: Graph, enc_b: BoundMlp, adv_b: BoundMlp,
                     X: np.ndarray, y_hat: np.ndarray) -> Node:
    pred = adv_b.forward(enc_b.forward(g.constant(Tensor(X))))
    return g.mean_sq_err(g.constant(Tensor(y_hat)), pred)


def _neg_mean_log(g: Graph, node: Node) -> Node:
    return g.scalar_mul(-1.0, g.reduce_mean(g.log(node)))


def _hvdl_graph(g: Graph, enc_b: BoundMlp, dec_b: BoundMlp,
                disc_b: BoundMlp, dt: Dataset, vic: VicinityIndex,
                config: TrainConfig, seed) -> tuple:
    """Vicinal discriminator loss over one batch of real and fake terms.
    Returns (L_D node, clamped fake-score node for the non-saturating
    generator variant)."""
    rng = np.random.default_rng(seed)
    B = min(config.batch_size, dt.n)
    draw = lambda: sample_vicinal(vic, B, config.sigma, config.k,
                                  config.vicinity_retry_limit, rng)
    u_real, idx_real = draw()
    u_fake, idx_fake = draw()

    d_real = disc_b.forward(g.concat_cols(
        g.constant(Tensor(dt.X[idx_real])),
        g.constant(Tensor(u_real.reshape(-1, 1)))))
    real_term = _neg_mean_log(g, g.clamp_unit(d_real))

    # fakes are reconstructions; the label fed to the decoder is the row's
    # own label unless configured to decode at the sampled target
    dec_labels = u_fake.reshape(-1, 1) if config.decode_fakes_at_target \
        else dt.y_hat[idx_fake]
    z = enc_b.forward(g.constant(Tensor(dt.X[idx_fake])))
    x_fake = dec_b.forward(g.concat_cols(z, g.constant(Tensor(dec_labels))))
    d_fake = g.clamp_unit(disc_b.forward(g.concat_cols(
        x_fake, g.constant(Tensor(u_fake.reshape(-1, 1))))))
    one_minus = g.add(g.constant(Tensor(np.ones((B, 1)))),
                      g.scalar_mul(-1.0, d_fake))
    fake_term = _neg_mean_log(g, one_minus)
    return g.add(real_term, fake_term), d_fake


def _total_graph(g: Graph, bounds: dict, dt: Dataset, idx: np.ndarray,
                 vic: VicinityIndex, config: TrainConfig,
                 hvdl_seed) -> tuple:
    """L = L_Rec - λ_Adv L_Adv - λ_D L_D on one batch. Returns (L node,
    parts as floats). Zero-weight terms are left out of L entirely so the
    λ=0 cases are bit-identical to the remaining terms."""
    X, y_hat = dt.X[idx], dt.y_hat[idx]
    l_rec = _recon_graph(g, bounds["encoder"], bounds["decoder"], X, y_hat)
    l_adv = _adversary_graph(g, bounds["encoder"], bounds["adversary"],
                             X, y_hat)
    parts = {"l_rec": float(l_rec.value[0, 0]),
             "l_adv": float(l_adv.value[0, 0]),
             "l_d": math.nan}
    total = l_rec
    if config.lambda_adv > 0.0:
        total = g.add(total, g.scalar_mul(-config.lambda_adv, l_adv))
    if config.lambda_d > 0.0:
        l_d, d_fake = _hvdl_graph(g, bounds["encoder"], bounds["decoder"],
                                  bounds["discriminator"], dt, vic, config,
                                  hvdl_seed)
        parts["l_d"] = float(l_d.value[0, 0])
        if config.non_saturating_generator:
            # push D(fake) up instead of L_D down; same critic, flipped target
            gen_term = _neg_mean_log(g, d_fake)
            parts["l_gen"] = float(gen_term.value[0, 0])
            total = g.add(total, g.scalar_mul(config.lambda_d, gen_term))
        else:
            total = g.add(total, g.scalar_mul(-config.lambda_d, l_d))
    return total, parts


# -- public loss wrappers --------------------------------------------------

def _frozen_bounds(g: Graph, model: DisentangledModel, *names) -> dict:
    return {n: BoundMlp(g, getattr(model, n), trainable=False) for n in names}


def reconstruction_loss(model: DisentangledModel, X: np.ndarray,
                        y_hat: np.ndarray) -> float:
    g = Graph()
    b = _frozen_bounds(g, model, "encoder", "decoder")
    return float(_recon_graph(g, b["encoder"], b["decoder"],
                              X, y_hat).value[0, 0])


def adversary_loss(model: DisentangledModel, X: np.ndarray,
                   y_hat: np.ndarray) -> float:
    g = Graph()
    b = _frozen_bounds(g, model, "encoder", "adversary")
    return float(_adversary_graph(g, b["encoder"], b["adversary"],
                                  X, y_hat).value[0, 0])


def hvdl_batch(model: DisentangledModel, dt: Dataset, config: TrainConfig,
               seed) -> float:
    g = Graph()
    b = _frozen_bounds(g, model, "encoder", "decoder", "discriminator")
    vic = VicinityIndex(dt.y_hat[:, 0])
    node, _ = _hvdl_graph(g, b["encoder"], b["decoder"], b["discriminator"],
                          dt, vic, config, seed)
    return float(node.value[0, 0])


def total_loss(model: DisentangledModel, dt: Dataset, idx: np.ndarray,
               config: TrainConfig, hvdl_seed) -> tuple:
    g = Graph()
    b = _frozen_bounds(g, model, *NET_NAMES)
    vic = VicinityIndex(dt.y_hat[:, 0])
    node, parts = _total_graph(g, b, dt, idx, vic, config, hvdl_seed)
    return float(node.value[0, 0]), parts


# -- training --------------------------------------------------------------

def _assert_finite(value: float, branch: str, epoch: int, last_good):
    if not np.isfinite(value):
        raise TrainingDivergedError(
            f"{branch} loss became non-finite in epoch {epoch}",
            last_good=last_good)


def _batch_indices(n: int, batch_size: int, rng) -> np.ndarray:
    return rng.choice(n, size=min(batch_size, n), replace=False)


def _adversary_step(model, state: AdamState, dt, config, seed_path,
                    epoch, last_good) -> float:
    idx = _batch_indices(dt.n, config.batch_size,
                         np.random.default_rng(seed_path + [0]))
    g = Graph()
    enc_b = BoundMlp(g, model.encoder, trainable=False)
    adv_b = BoundMlp(g, model.adversary, trainable=True)
    loss = _adversary_graph(g, enc_b, adv_b, dt.X[idx], dt.y_hat[idx])
    value = float(loss.value[0, 0])
    _assert_finite(value, "adversary", epoch, last_good)
    adam_step(state, model.adversary, adv_b.grads_list(backward(g, loss)))
    return value


def _discriminator_step(model, state: AdamState, dt, vic, config, seed_path,
                        epoch, last_good) -> float:
    g = Graph()
    enc_b = BoundMlp(g, model.encoder, trainable=False)
    dec_b = BoundMlp(g, model.decoder, trainable=False)
    disc_b = BoundMlp(g, model.discriminator, trainable=True)
    loss, _ = _hvdl_graph(g, enc_b, dec_b, disc_b, dt, vic, config,
                          seed_path + [1])
    value = float(loss.value[0, 0])
    _assert_finite(value, "discriminator", epoch, last_good)
    adam_step(state, model.discriminator,
              disc_b.grads_list(backward(g, loss)))
    return value


def _autoencoder_step(model, enc_state, dec_state, dt, vic, config,
                      seed_path, epoch, last_good) -> dict:
    idx = _batch_indices(dt.n, config.batch_size,
                         np.random.default_rng(seed_path + [0]))
    g = Graph()
    bounds = {
        "encoder": BoundMlp(g, model.encoder, trainable=True),
        "decoder": BoundMlp(g, model.decoder, trainable=True),
        "adversary": BoundMlp(g, model.adversary, trainable=False),
        "discriminator": BoundMlp(g, model.discriminator, trainable=False),
    }
    loss, parts = _total_graph(g, bounds, dt, idx, vic, config,
                               seed_path + [1])
    parts["l_total"] = float(loss.value[0, 0])
    _assert_finite(parts["l_total"], "autoencoder", epoch, last_good)
    grads = backward(g, loss)
    adam_step(enc_state, model.encoder, bounds["encoder"].grads_list(grads))
    adam_step(dec_state, model.decoder, bounds["decoder"].grads_list(grads))
    return parts


def train(dt: Dataset, config: TrainConfig) -> DisentangledModel:
    """Three-branch adversarial training; deterministic per config.seed."""
    config.validate()
    if dt.y_hat is None:
        raise ValueError("training data must carry model labels "
                         "(relabel it with the frozen regressor first)")
    nets = build_nets(dt.X.shape[1], config)
    model = DisentangledModel(schema_fingerprint=dt.fingerprint,
                              config=config, history={}, **nets)
    vic = VicinityIndex(dt.y_hat[:, 0])
    enc_state = adam_init(model.encoder, config.lr)
    dec_state = adam_init(model.decoder, config.lr)
    adv_state = adam_init(model.adversary, config.adv_lr)
    disc_state = adam_init(model.discriminator, config.disc_lr)
    iters = config.iters_per_epoch or max(1, math.ceil(dt.n / config.batch_size))
    history = {key: [] for key in ("l_rec", "l_adv", "l_d", "l_total")}
    last_good = None
    for epoch in range(1, config.epochs + 1):
        sums = {key: 0.0 for key in history}
        if config.lambda_d == 0.0:
            sums["l_d"] = math.nan  # branch disabled, keep the column honest
        for it in range(iters):
            base = [config.seed, epoch, it]
            sums["l_adv"] += _adversary_step(
                model, adv_state, dt, config, base + [0], epoch, last_good)
            if config.lambda_d > 0.0:
                sums["l_d"] += _discriminator_step(
                    model, disc_state, dt, vic, config, base + [1], epoch,
                    last_good)
            parts = _autoencoder_step(
                model, enc_state, dec_state, dt, vic, config, base + [2],
                epoch, last_good)
            sums["l_rec"] += parts["l_rec"]
            sums["l_total"] += parts["l_total"]
        for key in history:
            history[key].append(sums[key] / iters)
        last_good = DisentangledModel(
            encoder=model.encoder.clone(), decoder=model.decoder.clone(),
            adversary=model.adversary.clone(),
            discriminator=model.discriminator.clone(),
            schema_fingerprint=model.schema_fingerprint, config=config,
            history={k: list(v) for k, v in history.items()})
    model.history = history
    return model.freeze()
