"""Counterfactual generation by label interpolation at a fixed code.

A query x_q gets encoded once to its label-irrelevant code z_u. Walking an
ascending grid of mixing weights alpha, the label input to the decoder moves
from the query's own prediction toward the requested target; each decoded
candidate is checked against the frozen regressor and the first one whose
prediction lands inside the tolerance is the counterfactual.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .data import FeatureSchema, SYNTH_MIX, decode, encode_features, snap_onehot
from .errors import GenerationError, SchemaFingerprintError

ACCEPT_MODES = ("target", "step")


@dataclass
class GenerateRequest:
    """One counterfactual request.

    ``query`` is either a raw row (dict of feature values) or an already
    encoded feature vector. ``accept_mode`` picks what a candidate must be
    close to: the final target ("target", default) or the step's own
    interpolated label ("step").
    """

    query: Union[dict, np.ndarray]
    y_target: float
    schema: FeatureSchema
    tol: float = 0.05
    steps: int = 50
    accept_mode: str = "target"

    def validate(self):
        if not 0.0 <= self.y_target <= 1.0:
            raise ValueError(f"target {self.y_target} outside [0,1]")
        if self.tol <= 0.0:
            raise ValueError("tol must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.accept_mode not in ACCEPT_MODES:
            raise ValueError(f"accept_mode must be one of {ACCEPT_MODES}")


@dataclass
class PathStep:
    alpha: float
    y_interp: float     # label fed to the decoder at this step
    x: np.ndarray       # encoded candidate, categorical blocks snapped
    y_model: float      # frozen regressor's prediction on x


@dataclass
class CEResult:
    accepted: bool
    x: np.ndarray               # encoded counterfactual (accepted or best)
    row: dict                   # the same, decoded to raw units
    alpha: float
    y_interp: float
    y_model: float
    y_query: float
    y_target: float
    tol: float
    path: List[PathStep]
    gen_time: float             # seconds inside the search loop
    metrics: dict = field(default_factory=dict)


def interpolate_label(y_query: float, y_target: float, alpha: float) -> float:
    return (1.0 - alpha) * y_query + alpha * y_target


def _encode_query(request: GenerateRequest) -> np.ndarray:
    if isinstance(request.query, dict):
        return encode_features(request.schema, [request.query])
    x = np.asarray(request.query, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != request.schema.encoded_width:
        raise SchemaFingerprintError(
            f"encoded query has {x.shape[1]} columns, schema expects "
            f"{request.schema.encoded_width}")
    return x


def _check_fingerprints(model, regressor, schema: FeatureSchema):
    fp = schema.fingerprint()
    for name, other in (("disentangled model", model.schema_fingerprint),
                        ("regressor", regressor.schema_fingerprint)):
        if other != fp:
            raise SchemaFingerprintError(
                f"{name} fingerprint {other[:12]} does not match schema "
                f"fingerprint {fp[:12]}")


def generate_ce(model, regressor, request: GenerateRequest) -> CEResult:
    """Interpolation search for one counterfactual.

    The query's code is computed exactly once; every step decodes that same
    code at a new label, snaps categorical blocks to valid one-hots, and
    evaluates the frozen regressor. The walk stops at the first candidate
    within ``tol`` of the acceptance reference; if none qualifies the result
    carries ``accepted=False`` and the step closest to the target.
    """
    request.validate()
    _check_fingerprints(model, regressor, request.schema)
    x_q = _encode_query(request)

    t0 = time.perf_counter()
    y_q = float(np.clip(regressor.predict(x_q)[0, 0], 0.0, 1.0))
    z_u = model.encode(x_q)

    path: List[PathStep] = []
    accepted = False
    for s in range(1, request.steps + 1):
        alpha = s / request.steps
        y_i = interpolate_label(y_q, request.y_target, alpha)
        x_dec = model.decode(z_u, y_i)
        if not np.all(np.isfinite(x_dec)):
            raise GenerationError(
                f"decoder produced non-finite values at alpha={alpha}")
        x_s = snap_onehot(request.schema, x_dec)
        y_m = float(regressor.predict(x_s)[0, 0])
        path.append(PathStep(alpha=alpha, y_interp=y_i, x=x_s[0], y_model=y_m))
        ref = request.y_target if request.accept_mode == "target" else y_i
        if abs(y_m - ref) < request.tol:
            accepted = True
            break
    gen_time = time.perf_counter() - t0

    best = path[-1] if accepted else \
        min(path, key=lambda p: abs(p.y_model - request.y_target))
    return CEResult(accepted=accepted, x=best.x,
                    row=decode(request.schema, best.x),
                    alpha=best.alpha, y_interp=best.y_interp,
                    y_model=best.y_model, y_query=y_q,
                    y_target=request.y_target, tol=request.tol,
                    path=path, gen_time=gen_time)


# -- synthetic style-factor oracle ----------------------------------------

def recover_style(schema: FeatureSchema, rows: List[dict]) -> np.ndarray:
    """Invert the synthetic mixing map on raw feature rows and return the
    two style-factor columns. Only meaningful on the synthetic fixture."""
    names = [f.name for f in schema.features]
    X = np.array([[float(r[name]) for name in names] for r in rows])
    factors = X @ np.linalg.pinv(SYNTH_MIX).T
    return factors[:, 1:]


def characteristic_preservation(schema: FeatureSchema, query_rows: List[dict],
                                results: List[CEResult]) -> float:
    """Mean Pearson correlation between query style factors and the style
    factors of the returned counterfactuals (best-effort steps included, so
    an untrained model is measurable despite accepting nothing).

    Styles on both sides come from the closed-form inverse of the synthetic
    mixing map, so this is only valid on the synthetic fixture.
    """
    if len(query_rows) != len(results):
        raise ValueError("one query row per result required")
    if len(results) < 3:
        raise ValueError("need at least 3 pairs to correlate")
    s_query = recover_style(schema, query_rows)
    s_ce = recover_style(schema, [r.row for r in results])
    rs = []
    for j in range(s_query.shape[1]):
        a, b = s_query[:, j], s_ce[:, j]
        sd = a.std() * b.std()
        rs.append(0.0 if sd == 0.0 else
                  float(np.mean((a - a.mean()) * (b - b.mean())) / sd))
    return float(np.mean(rs))
