"""Benchmark metrics and the latent gradient-descent baseline.

The baseline trains a plain autoencoder on the same relabeled split and
searches its latent space by gradient descent for a point whose decoding the
frozen regressor scores at the target. Both methods report through the same
CEResult container, so one metric pass covers them.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .data import CONTINUOUS, Dataset, FeatureSchema, decode, snap_onehot
from .diff_engine import Graph, Tensor, backward
from .errors import GenerationError, LatentRecourseError, TrainingDivergedError
from .generate import CEResult, GenerateRequest, PathStep, _encode_query, generate_ce
from .nets import BoundMlp, Mlp, MlpSpec, adam_init, adam_step, init_mlp, mlp_forward


def least_squares_r2(Z: np.ndarray, y: np.ndarray) -> float:
    """R-squared of an intercepted linear fit Z -> y."""
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 0.0
    A = np.column_stack([Z, np.ones(Z.shape[0])])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - A @ coef) ** 2))
    return 1.0 - ss_res / ss_tot


# -- metric aggregation ----------------------------------------------------

@dataclass
class Stat:
    mean: float
    sd: float
    n: int

    def to_json(self) -> dict:
        return {"mean": self.mean, "sd": self.sd, "n": self.n}


def stat_of(values) -> Optional[Stat]:
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        return None
    sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return Stat(mean=float(values.mean()), sd=sd, n=int(values.size))


def proximity(x_ce: np.ndarray, x_q: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(x_ce) - np.asarray(x_q)))


def sparsity(x_ce: np.ndarray, x_q: np.ndarray) -> float:
    return float(np.sum(np.abs(np.asarray(x_ce) - np.asarray(x_q))))


def reconstruction_gap(model, X_ce: np.ndarray, y_ce: np.ndarray) -> np.ndarray:
    """Per-row MSE between counterfactuals and their re-encoding through the
    disentangled model at their own predicted label; low values mean the CE
    sits where the model can represent it."""
    X_ce = np.asarray(X_ce, dtype=np.float64)
    rec = model.decode(model.encode(X_ce), np.asarray(y_ce).reshape(-1, 1))
    return np.mean((X_ce - rec) ** 2, axis=1)


@dataclass
class MethodRow:
    method: str
    attempted: int
    accepted: int
    errors: int
    validity: float
    gen_time: Optional[Stat]
    proximity: Optional[Stat]
    sparsity: Optional[Stat]
    reconstruction: Optional[Stat]

    def to_json(self) -> dict:
        obj = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            obj[f.name] = v.to_json() if isinstance(v, Stat) else v
        return obj


@dataclass
class MetricsReport:
    rows: List[MethodRow]
    n_queries: int
    config: dict

    def row(self, method: str) -> MethodRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_json(self) -> dict:
        return {"rows": [r.to_json() for r in self.rows],
                "n_queries": self.n_queries, "config": self.config}


def metric_suite(queries: np.ndarray, results: List[CEResult], model,
                 method: str = "ours", errors: int = 0) -> MethodRow:
    """Aggregate one method's results. ``queries`` are the encoded query
    rows aligned with ``results``; errored attempts carry no result but
    count toward the validity denominator."""
    if len(results) != len(queries):
        raise ValueError("one query row per result required")
    attempted = len(results) + errors
    if attempted == 0:
        raise ValueError("no attempts to aggregate")
    acc = [(np.asarray(q), r) for q, r in zip(queries, results) if r.accepted]
    recon = None
    if acc:
        X_ce = np.stack([r.x for _, r in acc])
        y_ce = np.array([r.y_model for _, r in acc])
        recon = stat_of(reconstruction_gap(model, X_ce, y_ce))
    return MethodRow(
        method=method, attempted=attempted, accepted=len(acc), errors=errors,
        validity=len(acc) / attempted,
        gen_time=stat_of(r.gen_time for r in results),
        proximity=stat_of(proximity(r.x, q) for q, r in acc),
        sparsity=stat_of(sparsity(r.x, q) for q, r in acc),
        reconstruction=recon)


# -- latent gradient-descent baseline --------------------------------------

@dataclass
class GdlConfig:
    latent_dim: int = 2
    hidden: tuple = (64, 64, 64)
    epochs: int = 300
    batch_size: int = 100
    lr: float = 1e-3
    seed: int = 0
    search_lr: float = 0.05
    max_iter: int = 300
    lambda_prox: float = 0.1

    def validate(self):
        if self.latent_dim < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad autoencoder settings")
        if self.lr <= 0 or self.search_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.max_iter < 0 or self.lambda_prox < 0:
            raise ValueError("bad search settings")

    def to_json(self) -> dict:
        obj = dataclasses.asdict(self)
        obj["hidden"] = list(self.hidden)
        return obj


@dataclass
class GdlBaseline:
    encoder: Mlp
    decoder: Mlp
    schema_fingerprint: str
    config: GdlConfig
    history: list = field(default_factory=list)

    def encode(self, X: np.ndarray) -> np.ndarray:
        return mlp_forward(self.encoder, np.asarray(X, dtype=np.float64))

    def decode(self, Z: np.ndarray) -> np.ndarray:
        return mlp_forward(self.decoder, np.asarray(Z, dtype=np.float64))

    def freeze(self) -> "GdlBaseline":
        for mlp in (self.encoder, self.decoder):
            for p in mlp.params():
                p.setflags(write=False)
        return self


def train_gdl(dt: Dataset, config: GdlConfig) -> GdlBaseline:
    """Plain reconstruction autoencoder on the relabeled training split,
    seeded the same way as the main model's loop."""
    config.validate()
    d = dt.X.shape[1]
    h = tuple(config.hidden)
    encoder = init_mlp(MlpSpec((d,) + h + (config.latent_dim,)),
                       seed=[config.seed, 1])
    decoder = init_mlp(MlpSpec((config.latent_dim,) + h + (d,)),
                       seed=[config.seed, 2])
    baseline = GdlBaseline(encoder=encoder, decoder=decoder,
                           schema_fingerprint=dt.fingerprint, config=config)
    enc_state = adam_init(encoder, config.lr)
    dec_state = adam_init(decoder, config.lr)
    iters = max(1, math.ceil(dt.n / config.batch_size))
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for it in range(iters):
            rng = np.random.default_rng([config.seed, epoch, it, 0])
            idx = rng.choice(dt.n, size=min(config.batch_size, dt.n),
                             replace=False)
            g = Graph()
            enc_b = BoundMlp(g, encoder, trainable=True)
            dec_b = BoundMlp(g, decoder, trainable=True)
            x = g.constant(Tensor(dt.X[idx]))
            loss = g.mean_sq_err(dec_b.forward(enc_b.forward(x)), x)
            value = float(loss.value[0, 0])
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"autoencoder loss became non-finite in epoch {epoch}")
            grads = backward(g, loss)
            adam_step(enc_state, encoder, enc_b.grads_list(grads))
            adam_step(dec_state, decoder, dec_b.grads_list(grads))
            total += value
        baseline.history.append(total / iters)
    return baseline.freeze()


def gdl_generate(baseline: GdlBaseline, regressor,
                 request: GenerateRequest) -> CEResult:
    """Descend (f(dec(z)) - target)^2 + lambda_prox * MSE(dec(z), x_q) over
    the latent code, starting from the encoded query. Evaluates acceptance
    on the snapped decoding before every step, so max_iter=0 still judges
    the plain reconstruction."""
    request.validate()
    cfg = baseline.config
    fp = request.schema.fingerprint()
    for name, other in (("baseline", baseline.schema_fingerprint),
                        ("regressor", regressor.schema_fingerprint)):
        if other != fp:
            raise GenerationError(
                f"{name} fingerprint {other[:12]} does not match schema")
    x_q = _encode_query(request)

    t0 = time.perf_counter()
    y_q = float(np.clip(regressor.predict(x_q)[0, 0], 0.0, 1.0))
    z = baseline.encode(x_q).copy()
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    target = np.array([[request.y_target]])

    path: List[PathStep] = []
    accepted = False
    denom = max(cfg.max_iter, 1)
    for i in range(cfg.max_iter + 1):
        x_dec = baseline.decode(z)
        if not np.all(np.isfinite(x_dec)):
            raise GenerationError(
                f"baseline decoder produced non-finite values at "
                f"iteration {i}")
        x_s = snap_onehot(request.schema, x_dec)
        y_m = float(regressor.predict(x_s)[0, 0])
        path.append(PathStep(alpha=i / denom, y_interp=request.y_target,
                             x=x_s[0], y_model=y_m))
        if abs(y_m - request.y_target) < request.tol:
            accepted = True
            break
        if i == cfg.max_iter:
            break
        g = Graph()
        z_leaf = g.leaf(Tensor(z))
        dec_b = BoundMlp(g, baseline.decoder, trainable=False)
        f_b = BoundMlp(g, regressor.mlp, trainable=False)
        x_node = dec_b.forward(z_leaf)
        loss = g.mean_sq_err(f_b.forward(x_node), g.constant(Tensor(target)))
        if cfg.lambda_prox > 0.0:
            prox = g.mean_sq_err(x_node, g.constant(Tensor(x_q)))
            loss = g.add(loss, g.scalar_mul(cfg.lambda_prox, prox))
        if not np.isfinite(loss.value[0, 0]):
            raise GenerationError(f"search loss non-finite at iteration {i}")
        grad = backward(g, loss).get(z_leaf.id)
        if grad is None:
            break  # constant loss, nothing to descend
        # Adam on the single latent row
        t = i + 1
        m = 0.9 * m + 0.1 * grad.data
        v = 0.999 * v + 0.001 * grad.data ** 2
        m_hat = m / (1.0 - 0.9 ** t)
        v_hat = v / (1.0 - 0.999 ** t)
        z = z - cfg.search_lr * m_hat / (np.sqrt(v_hat) + 1e-8)
    gen_time = time.perf_counter() - t0

    best = path[-1] if accepted else \
        min(path, key=lambda p: abs(p.y_model - request.y_target))
    return CEResult(accepted=accepted, x=best.x,
                    row=decode(request.schema, best.x),
                    alpha=best.alpha, y_interp=best.y_interp,
                    y_model=best.y_model, y_query=y_q,
                    y_target=request.y_target, tol=request.tol,
                    path=path, gen_time=gen_time)


# -- benchmark harness -----------------------------------------------------

def _raw_vector(schema: FeatureSchema, x: np.ndarray) -> np.ndarray:
    """Encoded row mapped back to raw units; one-hot blocks pass through."""
    out = np.array(x, dtype=np.float64)
    col = 0
    for f in schema.features:
        if f.kind == CONTINUOUS:
            out[col] = out[col] * f.std + f.mean
            col += 1
        else:
            col += len(f.categories)
    return out


def benchmark(model, baseline: GdlBaseline, regressor,
              schema: FeatureSchema, X_queries: np.ndarray,
              delta: float = 0.2, tol: float = 0.05, steps: int = 50,
              out_dir=None) -> MetricsReport:
    """Run both methods over the same queries with targets shifted by
    ``delta`` (clamped to 1.0) and aggregate the metric rows. Per-query
    failures count as errored attempts. Artifacts land in ``out_dir`` when
    given: report.json, report.csv, details.csv."""
    X_queries = np.asarray(X_queries, dtype=np.float64)
    if X_queries.ndim != 2 or X_queries.shape[0] == 0:
        raise ValueError("need a nonempty 2-d query matrix")

    methods = {
        "ours": lambda req: generate_ce(model, regressor, req),
        "gdl": lambda req: gdl_generate(baseline, regressor, req),
    }
    collected = {name: {"queries": [], "results": [], "errors": 0,
                        "details": []} for name in methods}
    for qi, x in enumerate(X_queries):
        y_q = float(np.clip(regressor.predict(x.reshape(1, -1))[0, 0],
                            0.0, 1.0))
        y_t = min(y_q + delta, 1.0)
        for name, run in methods.items():
            bucket = collected[name]
            req = GenerateRequest(query=x, y_target=y_t, schema=schema,
                                  tol=tol, steps=steps)
            try:
                res = run(req)
            except LatentRecourseError as exc:
                bucket["errors"] += 1
                bucket["details"].append(
                    {"method": name, "query": qi, "error": str(exc)})
                continue
            bucket["queries"].append(x)
            bucket["results"].append(res)
            raw_q = _raw_vector(schema, x)
            raw_ce = _raw_vector(schema, res.x)
            bucket["details"].append({
                "method": name, "query": qi, "error": "",
                "accepted": int(res.accepted), "alpha": res.alpha,
                "y_query": res.y_query, "y_target": res.y_target,
                "y_model": res.y_model, "gen_time": res.gen_time,
                "proximity": proximity(res.x, x),
                "sparsity": sparsity(res.x, x),
                "reconstruction": float(reconstruction_gap(
                    model, res.x.reshape(1, -1),
                    np.array([res.y_model]))[0]),
                "proximity_raw": proximity(raw_ce, raw_q),
                "sparsity_raw": sparsity(raw_ce, raw_q),
            })

    rows = [metric_suite(np.array(collected[n]["queries"]),
                         collected[n]["results"], model, method=n,
                         errors=collected[n]["errors"]) for n in methods]
    report = MetricsReport(
        rows=rows, n_queries=X_queries.shape[0],
        config={"delta": delta, "tol": tol, "steps": steps,
                "gdl": baseline.config.to_json(),
                "schema_fingerprint": schema.fingerprint()})
    if out_dir is not None:
        _write_artifacts(Path(out_dir), report, collected)
    return report


def _write_artifacts(out_dir: Path, report: MetricsReport, collected: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_json(), indent=2) + "\n")
    with open(out_dir / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "metric", "mean", "sd", "n"])
        for row in report.rows:
            w.writerow([row.method, "validity", row.validity, "",
                        row.attempted])
            for metric in ("gen_time", "proximity", "sparsity",
                           "reconstruction"):
                st = getattr(row, metric)
                if st is not None:
                    w.writerow([row.method, metric, st.mean, st.sd, st.n])
    detail_rows = [d for b in collected.values() for d in b["details"]]
    fields = ["method", "query", "error", "accepted", "alpha", "y_query",
              "y_target", "y_model", "gen_time", "proximity", "sparsity",
              "reconstruction", "proximity_raw", "sparsity_raw"]
    with open(out_dir / "details.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, restval="")
        w.writeheader()
        for d in sorted(detail_rows, key=lambda d: (d["query"], d["method"])):
            w.writerow(d)
