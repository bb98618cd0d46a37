"""Command-line workflow and read-only HTTP service.

Subcommands cover the full pipeline: train the regressor, train the
counterfactual model (appending its networks to the same container), generate
single counterfactuals, run the two-method benchmark, emit synthetic fixture
data, and serve the generation API over HTTP.

Configuration for each subcommand merges, in increasing precedence: built-in
defaults, a JSON config file (--config), explicit CLI flags, then the
environment overrides LR_SEED and LR_PORT.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import posixpath
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

import numpy as np

from . import __version__
from .data import (
    CONTINUOUS,
    FeatureSchema,
    decode,
    encode,
    fit_schema,
    load_csv,
    load_sidecar,
    make_synthetic,
    relabel_with_model,
    save_sidecar,
    split,
    trim_outliers,
    write_csv,
)
from .disentangle import NET_NAMES, DisentangledModel, TrainConfig, train
from .errors import LatentRecourseError, SchemaError
from .evaluate import GdlBaseline, GdlConfig, benchmark, train_gdl
from .generate import CEResult, GenerateRequest, generate_ce
from .nets import load_params, save_params
from .regressor import RegressorConfig, TrainedRegressor, train_regressor

log = logging.getLogger(__name__)

MAX_BODY_BYTES = 1_000_000


# -- configuration merging -------------------------------------------------

def merge_config(defaults: dict, config_path, flags: dict) -> dict:
    """defaults < config file < explicit flags < environment."""
    cfg = dict(defaults)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValueError(
                f"unknown config file keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update({k: v for k, v in flags.items() if v is not None})
    if "seed" in defaults and os.environ.get("LR_SEED"):
        cfg["seed"] = int(os.environ["LR_SEED"])
    if "port" in defaults and os.environ.get("LR_PORT"):
        cfg["port"] = int(os.environ["LR_PORT"])
    if "hidden" in cfg and cfg["hidden"] is not None:
        cfg["hidden"] = parse_hidden(cfg["hidden"])
    return cfg


def parse_hidden(value) -> tuple:
    if isinstance(value, str):
        value = [int(v) for v in value.split(",") if v.strip()]
    return tuple(int(v) for v in value)


def require(cfg: dict, *names):
    for name in names:
        if cfg.get(name) is None:
            raise ValueError(f"missing required setting: --{name}")


def sidecar_path(model_path) -> Path:
    return Path(model_path).with_suffix(".schema.json")


# -- model container glue --------------------------------------------------

def load_regressor(lrm) -> TrainedRegressor:
    if "regressor" not in lrm.sections:
        raise LatentRecourseError("model file has no regressor section")
    return TrainedRegressor(mlp=lrm.sections["regressor"],
                            schema_fingerprint=lrm.schema_fingerprint,
                            meta=lrm.meta).freeze()


def load_ce_model(lrm) -> DisentangledModel:
    missing = [n for n in NET_NAMES if n not in lrm.sections]
    if missing:
        raise LatentRecourseError(
            f"model file lacks sections {missing}; run train-ce first")
    cfg = TrainConfig.from_json(lrm.meta["ce_config"]) \
        if "ce_config" in lrm.meta else TrainConfig()
    nets = {name: lrm.sections[name] for name in NET_NAMES}
    return DisentangledModel(schema_fingerprint=lrm.schema_fingerprint,
                             config=cfg,
                             history=lrm.meta.get("ce_history", {}),
                             **nets).freeze()


def load_gdl(lrm) -> GdlBaseline:
    if "gdl_encoder" not in lrm.sections or "gdl_decoder" not in lrm.sections:
        raise LatentRecourseError(
            "model file has no baseline sections; rerun train-ce without "
            "--no-baseline")
    raw = dict(lrm.meta.get("gdl_config", {}))
    if "hidden" in raw:
        raw["hidden"] = tuple(raw["hidden"])
    cfg = GdlConfig(**raw)
    return GdlBaseline(encoder=lrm.sections["gdl_encoder"],
                       decoder=lrm.sections["gdl_decoder"],
                       schema_fingerprint=lrm.schema_fingerprint,
                       config=cfg).freeze()


def load_schema_for(model_path, schema_path=None) -> FeatureSchema:
    path = Path(schema_path) if schema_path else sidecar_path(model_path)
    if not path.exists():
        raise LatentRecourseError(f"schema sidecar {path} not found")
    return load_sidecar(path)


def prepare_rows(cfg: dict) -> tuple:
    """Load, trim, and split raw rows the same way for every command."""
    rows = load_csv(cfg["data"])
    trimmed = trim_outliers(rows, cfg["target"], cfg["trim"])
    return split(trimmed, cfg["train_fraction"], cfg["seed"])


def ce_result_json(res: CEResult, schema: FeatureSchema,
                   include_timing: bool = False) -> dict:
    obj = {
        "accepted": res.accepted,
        "alpha": res.alpha,
        "y_query": res.y_query,
        "y_target": res.y_target,
        "y_interp": res.y_interp,
        "y_model": res.y_model,
        "tol": res.tol,
        "x": res.x.tolist(),
        "row": res.row,
        "path": [{"alpha": p.alpha, "y_interp": p.y_interp,
                  "y_model": p.y_model, "x": p.x.tolist(),
                  "row": decode(schema, p.x)} for p in res.path],
    }
    if include_timing:
        obj["gen_time"] = res.gen_time
    return obj


# -- subcommands -----------------------------------------------------------

TRAIN_REG_DEFAULTS = {
    "data": None, "out": None, "schema": None, "target": "y",
    "train_fraction": 0.8, "trim": 0.10, "seed": 0, "epochs": 100,
    "batch_size": 100, "lr": 1e-3, "hidden": (64, 64, 64),
}


def cmd_train_regressor(cfg: dict) -> int:
    require(cfg, "data", "out")
    rows_train, rows_test = prepare_rows(cfg)
    schema = fit_schema(rows_train, target=cfg["target"])
    ds_train = encode(schema, rows_train)
    ds_test = encode(schema, rows_test)
    reg = train_regressor(
        ds_train,
        RegressorConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                        lr=cfg["lr"], seed=cfg["seed"],
                        hidden=cfg["hidden"]),
        test=ds_test)
    meta = {**reg.meta, "run_config": _echo(cfg)}
    save_params(cfg["out"], {"regressor": reg.mlp}, schema.fingerprint(),
                meta)
    schema_out = cfg["schema"] or sidecar_path(cfg["out"])
    save_sidecar(schema, schema_out)
    print(f"trained regressor on {ds_train.n} rows: "
          f"train_mse={reg.meta['train_mse']:.6f} "
          f"test_mse={reg.meta.get('test_mse', float('nan')):.6f} "
          f"-> {cfg['out']}")
    return 0


TRAIN_CE_DEFAULTS = {
    "data": None, "model": None, "out": None, "schema": None,
    "lambda_adv": 0.5, "lambda_d": 0.5, "sigma": 0.035, "k": 0.004,
    "latent_dim": 2, "epochs": 300, "batch_size": 100, "seed": 0,
    "lr": 1e-3, "hidden": (64, 64, 64), "no_baseline": False,
}


def cmd_train_ce(cfg: dict) -> int:
    require(cfg, "data", "model", "out")
    lrm = load_params(cfg["model"])
    schema = load_schema_for(cfg["model"], cfg["schema"])
    reg = load_regressor(lrm)
    run_cfg = lrm.meta.get("run_config", {})
    rows_train, _ = prepare_rows({
        "data": cfg["data"],
        "target": run_cfg.get("target", "y"),
        "trim": run_cfg.get("trim", 0.10),
        "train_fraction": run_cfg.get("train_fraction", 0.8),
        "seed": run_cfg.get("seed", 0),
    })
    ds_train = encode(schema, rows_train)
    dt = relabel_with_model(ds_train, reg)
    tc = TrainConfig(lambda_adv=cfg["lambda_adv"], lambda_d=cfg["lambda_d"],
                     sigma=cfg["sigma"], k=cfg["k"],
                     latent_dim=cfg["latent_dim"], epochs=cfg["epochs"],
                     batch_size=cfg["batch_size"], seed=cfg["seed"],
                     lr=cfg["lr"], hidden=cfg["hidden"])
    model = train(dt, tc)
    sections = {"regressor": reg.mlp, **model.sections()}
    # retraining from an already-augmented container must not carry stale
    # counterfactual metadata forward
    meta = {k: v for k, v in lrm.meta.items()
            if k not in ("ce_config", "ce_history", "ce_run_config",
                         "gdl_config")}
    meta.update({"ce_config": tc.to_json(), "ce_history": model.history,
                 "ce_run_config": _echo(cfg)})
    if not cfg["no_baseline"]:
        gdl = train_gdl(dt, GdlConfig(latent_dim=tc.latent_dim,
                                      hidden=tc.hidden, epochs=tc.epochs,
                                      batch_size=tc.batch_size, lr=tc.lr,
                                      seed=tc.seed))
        sections["gdl_encoder"] = gdl.encoder
        sections["gdl_decoder"] = gdl.decoder
        meta["gdl_config"] = gdl.config.to_json()
    save_params(cfg["out"], sections, lrm.schema_fingerprint, meta)
    save_sidecar(schema, sidecar_path(cfg["out"]))
    print(f"trained counterfactual model on {dt.n} rows over {tc.epochs} "
          f"epochs -> {cfg['out']}")
    return 0


GENERATE_DEFAULTS = {
    "model": None, "query": None, "out": None, "schema": None,
    "target": None, "tol": 0.05, "steps": 50, "accept_mode": "target",
    "seed": 0,
}


def cmd_generate(cfg: dict) -> int:
    require(cfg, "model", "query", "target", "out")
    lrm = load_params(cfg["model"])
    schema = load_schema_for(cfg["model"], cfg["schema"])
    reg = load_regressor(lrm)
    model = load_ce_model(lrm)
    with open(cfg["query"], encoding="utf-8") as fh:
        query = json.load(fh)
    req = GenerateRequest(query=query, y_target=float(cfg["target"]),
                          schema=schema, tol=cfg["tol"], steps=cfg["steps"],
                          accept_mode=cfg["accept_mode"])
    res = generate_ce(model, reg, req)
    payload = {**ce_result_json(res, schema), "config": _echo(cfg)}
    with open(cfg["out"], "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"accepted={res.accepted} alpha={res.alpha} "
          f"y_model={res.y_model:.4f} steps={len(res.path)} "
          f"-> {cfg['out']}")
    return 0


BENCHMARK_DEFAULTS = {
    "model": None, "data": None, "out": None, "schema": None,
    "delta": 0.2, "tol": 0.05, "steps": 50, "limit": None, "seed": 0,
}


def cmd_benchmark(cfg: dict) -> int:
    require(cfg, "model", "data", "out")
    lrm = load_params(cfg["model"])
    schema = load_schema_for(cfg["model"], cfg["schema"])
    reg = load_regressor(lrm)
    model = load_ce_model(lrm)
    gdl = load_gdl(lrm)
    rows = load_csv(cfg["data"])
    ds = encode(schema, rows)
    X = ds.X if cfg["limit"] is None else ds.X[:cfg["limit"]]
    report = benchmark(model, gdl, reg, schema, X, delta=cfg["delta"],
                       tol=cfg["tol"], steps=cfg["steps"],
                       out_dir=cfg["out"])
    for row in report.rows:
        t = row.gen_time.mean if row.gen_time else float("nan")
        print(f"{row.method}: validity={row.validity:.3f} "
              f"mean_time={t:.4f}s errors={row.errors}")
    return 0


SYNTHETIC_DEFAULTS = {"n": 5000, "seed": 7, "noise": 0.05, "out": None}


def cmd_synthetic(cfg: dict) -> int:
    require(cfg, "out")
    rows, factors = make_synthetic(cfg["n"], cfg["seed"], cfg["noise"])
    write_csv(cfg["out"], rows)
    sidecar = Path(cfg["out"]).with_suffix(".factors.json")
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump({"seed": factors.seed, "noise": factors.noise,
                   "t": factors.t.tolist(), "s": factors.s.tolist()}, fh)
        fh.write("\n")
    print(f"wrote {cfg['n']} rows -> {cfg['out']} (+ {sidecar})")
    return 0


SERVE_DEFAULTS = {"model": None, "data": None, "schema": None, "ui": None,
                  "port": 8080, "host": "127.0.0.1", "seed": 0}


def cmd_serve(cfg: dict) -> int:
    require(cfg, "model", "data")
    state = build_state(cfg["model"], cfg["data"], cfg["schema"],
                        ui_dir=cfg["ui"])
    server = build_server(state, cfg["host"], cfg["port"])
    print(f"serving on http://{cfg['host']}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


# -- HTTP service ----------------------------------------------------------

class ServiceState:
    """Read-only bundle the request handlers work against."""

    def __init__(self, schema, regressor, model, rows, predictions,
                 ready=True, ui_dir=None):
        self.schema = schema
        self.regressor = regressor
        self.model = model
        self.rows = rows
        self.predictions = predictions
        self.ready = ready
        self.ui_dir = Path(ui_dir) if ui_dir else None


def build_state(model_path, data_path, schema_path=None,
                ui_dir=None) -> ServiceState:
    lrm = load_params(model_path)
    schema = load_schema_for(model_path, schema_path)
    reg = load_regressor(lrm)
    model = load_ce_model(lrm)
    rows = load_csv(data_path)
    ds = encode(schema, rows)
    preds = np.clip(reg.predict(ds.X), 0.0, 1.0)[:, 0]
    return ServiceState(schema=schema, regressor=reg, model=model,
                        rows=rows, predictions=preds, ui_dir=ui_dir)


def _display_row(schema: FeatureSchema, row: dict) -> dict:
    out = {}
    for f in schema.features:
        out[f.name] = float(row[f.name]) if f.kind == CONTINUOUS \
            else str(row[f.name])
    out[schema.target] = float(row[schema.target])
    return out


class _ApiError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


_STATIC_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".map": "application/json",
}


class _Handler(BaseHTTPRequestHandler):
    state: ServiceState = None

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)

    def _send(self, code: int, obj):
        body = json.dumps(obj).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _guard_ready(self):
        if not self.state.ready:
            raise _ApiError(503, "model not ready")

    def do_GET(self):
        url = urlsplit(self.path)
        try:
            if url.path == "/api/health":
                self._send(200, {"version": __version__,
                                 "fingerprint":
                                     self.state.schema.fingerprint(),
                                 "ready": self.state.ready})
            elif url.path == "/api/schema":
                self._guard_ready()
                self._send(200, self.state.schema.to_json())
            elif url.path == "/api/rows":
                self._guard_ready()
                self._send(200, self._rows_payload(parse_qs(url.query)))
            elif url.path.startswith("/api/"):
                raise _ApiError(404, f"no such endpoint: {url.path}")
            else:
                self._serve_static(url.path)
        except _ApiError as exc:
            self._send(exc.code, {"error": str(exc)})

    def _serve_static(self, raw_path: str):
        if self.state.ui_dir is None:
            raise _ApiError(404, f"no such endpoint: {raw_path}")
        clean = posixpath.normpath(raw_path.lstrip("/")) or "."
        if clean == ".":
            clean = "index.html"
        # normpath leaves any escape attempt as a leading component
        if clean.startswith("..") or clean.startswith("/"):
            raise _ApiError(404, f"not found: {raw_path}")
        target = self.state.ui_dir / clean
        if not target.is_file():
            raise _ApiError(404, f"not found: {raw_path}")
        ctype = _STATIC_TYPES.get(target.suffix,
                                  "application/octet-stream")
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _rows_payload(self, qs: dict) -> dict:
        split_name = qs.get("split", ["test"])[0]
        if split_name != "test":
            raise _ApiError(400, f"unknown split {split_name!r}; the "
                                 f"service exposes the test split only")
        try:
            limit = int(qs.get("limit", ["10"])[0])
        except ValueError:
            raise _ApiError(400, "limit must be an integer")
        if limit < 1:
            raise _ApiError(400, "limit must be >= 1")
        schema = self.state.schema
        out = []
        for i, row in enumerate(self.state.rows[:limit]):
            out.append({"index": i, "row": _display_row(schema, row),
                        "prediction": float(self.state.predictions[i])})
        return {"rows": out, "total": len(self.state.rows)}

    def do_POST(self):
        url = urlsplit(self.path)
        try:
            if url.path != "/api/generate":
                raise _ApiError(404, f"no such endpoint: {url.path}")
            self._guard_ready()
            self._send(200, self._generate_payload(self._read_body()))
        except _ApiError as exc:
            self._send(exc.code, {"error": str(exc)})

    def _read_body(self) -> dict:
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            raise _ApiError(400, "bad Content-Length")
        if length <= 0 or length > MAX_BODY_BYTES:
            raise _ApiError(400, "body required and capped at 1 MB")
        try:
            body = json.loads(self.rfile.read(length).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise _ApiError(400, f"body is not valid JSON: {exc}")
        if not isinstance(body, dict):
            raise _ApiError(400, "body must be a JSON object")
        return body

    def _generate_payload(self, body: dict) -> dict:
        allowed = {"query", "target", "tol", "steps", "accept_mode"}
        unknown = set(body) - allowed
        if unknown:
            raise _ApiError(400, f"unknown fields: {sorted(unknown)}")
        if "query" not in body or "target" not in body:
            raise _ApiError(400, "query and target are required")
        if not isinstance(body["query"], dict):
            raise _ApiError(400, "query must be an object of feature values")
        try:
            req = GenerateRequest(
                query=body["query"], y_target=float(body["target"]),
                schema=self.state.schema, tol=float(body.get("tol", 0.05)),
                steps=int(body.get("steps", 50)),
                accept_mode=str(body.get("accept_mode", "target")))
            req.validate()
        except (TypeError, ValueError) as exc:
            raise _ApiError(400, str(exc))
        try:
            res = generate_ce(self.state.model, self.state.regressor, req)
        except SchemaError as exc:
            raise _ApiError(422, f"query not encodable: {exc}")
        except LatentRecourseError as exc:
            raise _ApiError(500, str(exc))
        return ce_result_json(res, self.state.schema, include_timing=True)


class _Server(ThreadingHTTPServer):
    # the stock backlog of 5 resets connections under concurrent load
    request_queue_size = 128
    daemon_threads = True


def build_server(state: ServiceState, host: str = "127.0.0.1",
                 port: int = 0) -> ThreadingHTTPServer:
    """Port 0 binds an ephemeral port; the chosen one is in
    server.server_address."""
    handler = type("BoundHandler", (_Handler,), {"state": state})
    return _Server((host, port), handler)


# -- entry point -----------------------------------------------------------

def _echo(cfg: dict) -> dict:
    out = {}
    for k, v in sorted(cfg.items()):
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with defaults for any flag")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentrecourse",
        description="counterfactual explanations for tabular regressors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-regressor",
                       help="fit the frozen prediction model")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--schema", help="where to write the schema sidecar")
    p.add_argument("--target")
    p.add_argument("--train-fraction", type=float, dest="train_fraction")
    p.add_argument("--trim", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden")

    p = sub.add_parser("train-ce",
                       help="train the counterfactual model and baseline")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--schema")
    p.add_argument("--lambda-adv", type=float, dest="lambda_adv")
    p.add_argument("--lambda-d", type=float, dest="lambda_d")
    p.add_argument("--sigma", type=float)
    p.add_argument("--k", type=float)
    p.add_argument("--latent-dim", type=int, dest="latent_dim")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden")
    p.add_argument("--no-baseline", action="store_const", const=True,
                   dest="no_baseline")

    p = sub.add_parser("generate", help="produce one counterfactual")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--query", help="JSON file with one raw feature row")
    p.add_argument("--target", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--accept-mode", dest="accept_mode",
                   choices=["target", "step"])
    p.add_argument("--schema")
    p.add_argument("--out")

    p = sub.add_parser("benchmark", help="compare methods over a query set")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--delta", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--schema")
    p.add_argument("--out")

    p = sub.add_parser("synthetic", help="emit fixture rows and factors")
    _add_common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--out")

    p = sub.add_parser("serve", help="read-only HTTP generation API")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--data", help="CSV of rows to expose as the test split")
    p.add_argument("--schema")
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.add_argument("--ui", help="directory with a built explorer UI to "
                                "serve on non-API paths")
    return parser


COMMANDS = {
    "train-regressor": (TRAIN_REG_DEFAULTS, cmd_train_regressor),
    "train-ce": (TRAIN_CE_DEFAULTS, cmd_train_ce),
    "generate": (GENERATE_DEFAULTS, cmd_generate),
    "benchmark": (BENCHMARK_DEFAULTS, cmd_benchmark),
    "synthetic": (SYNTHETIC_DEFAULTS, cmd_synthetic),
    "serve": (SERVE_DEFAULTS, cmd_serve),
}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LR_LOG", "WARNING"))
    args = build_parser().parse_args(argv)
    defaults, run = COMMANDS[args.command]
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "config")}
    try:
        cfg = merge_config(defaults, args.config, flags)
        return run(cfg)
    except (LatentRecourseError, ValueError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
