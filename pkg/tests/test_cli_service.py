"""End-to-end tests for the CLI pipeline and the HTTP service.

The pipeline fixture runs the real subcommands in-process on a tiny dataset;
tolerances on model quality are deliberately absent because only the plumbing
is under test here.
"""

import http.client
import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from latentrecourse.cli_service import (
    build_server,
    build_state,
    ce_result_json,
    main,
    merge_config,
    parse_hidden,
)
from latentrecourse.generate import GenerateRequest, generate_ce
from latentrecourse.nets import load_params

# small enough to train in about a second, wide enough vicinity to
# never exhaust on ~200 labels
TRAIN_CE_ARGS = ["--epochs", "8", "--seed", "5", "--k", "0.05"]


# -- config merging --------------------------------------------------------

def test_merge_precedence(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"epochs": 7, "lr": 0.5}))
    defaults = {"epochs": 1, "lr": 0.1, "tol": 0.05}
    merged = merge_config(defaults, cfg_file, {"lr": 0.9, "tol": None})
    assert merged == {"epochs": 7, "lr": 0.9, "tol": 0.05}


def test_env_seed_beats_flag(monkeypatch):
    monkeypatch.setenv("LR_SEED", "42")
    merged = merge_config({"seed": 0}, None, {"seed": 3})
    assert merged["seed"] == 42


def test_env_port_override(monkeypatch):
    monkeypatch.setenv("LR_PORT", "9100")
    assert merge_config({"port": 8080}, None, {})["port"] == 9100


def test_unknown_config_file_key_rejected(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"epochz": 7}))
    with pytest.raises(ValueError, match="epochz"):
        merge_config({"epochs": 1}, cfg_file, {})


def test_parse_hidden_forms():
    assert parse_hidden("64,32,16") == (64, 32, 16)
    assert parse_hidden([8, 8]) == (8, 8)
    assert parse_hidden((4,)) == (4,)


# -- pipeline fixture ------------------------------------------------------

@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synthetic -> train-regressor -> train-ce, all through main()."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "synth.csv"
    model = root / "model.lrm"
    assert main(["synthetic", "--n", "300", "--seed", "5",
                 "--out", str(data)]) == 0
    assert main(["train-regressor", "--data", str(data),
                 "--out", str(model), "--epochs", "10", "--seed", "5"]) == 0
    assert main(["train-ce", "--data", str(data), "--model", str(model),
                 "--out", str(model)] + TRAIN_CE_ARGS) == 0
    rows = list(__import__("csv").DictReader(open(data)))
    query = {k: v for k, v in rows[0].items() if k != "y"}
    qfile = root / "query.json"
    qfile.write_text(json.dumps(query))
    return {"root": root, "data": data, "model": model, "query": query,
            "qfile": qfile}


def test_synthetic_outputs(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["synthetic", "--n", "40", "--seed", "2",
                 "--out", str(out)]) == 0
    rows = out.read_text().strip().split("\n")
    assert len(rows) == 41
    assert rows[0].split(",") == ["x0", "x1", "x2", "x3", "x4", "x5", "y"]
    factors = json.loads((tmp_path / "s.factors.json").read_text())
    assert len(factors["t"]) == 40
    assert np.asarray(factors["s"]).shape == (40, 2)
    assert factors["seed"] == 2


def test_trained_container_sections(pipeline):
    lrm = load_params(pipeline["model"])
    assert list(lrm.sections) == ["regressor", "encoder", "decoder",
                                  "adversary", "discriminator",
                                  "gdl_encoder", "gdl_decoder"]
    assert lrm.meta["run_config"]["epochs"] == 10
    assert lrm.meta["ce_config"]["epochs"] == 8
    assert lrm.meta["gdl_config"]["epochs"] == 8
    assert "train_mse" in lrm.meta
    sidecar = pipeline["model"].with_suffix(".schema.json")
    assert sidecar.exists()


def test_no_baseline_flag(pipeline, tmp_path):
    out = tmp_path / "nb.lrm"
    assert main(["train-ce", "--data", str(pipeline["data"]),
                 "--model", str(pipeline["model"]), "--out", str(out),
                 "--no-baseline"] + TRAIN_CE_ARGS) == 0
    lrm = load_params(out)
    assert "gdl_encoder" not in lrm.sections
    assert "gdl_config" not in lrm.meta
    # benchmark needs the baseline and must refuse this container
    code = main(["benchmark", "--model", str(out),
                 "--data", str(pipeline["data"]), "--limit", "2",
                 "--out", str(tmp_path / "rep")])
    assert code == 2


def test_train_ce_missing_sidecar(pipeline, tmp_path, capsys):
    bare = tmp_path / "bare.lrm"
    bare.write_bytes(pipeline["model"].read_bytes())
    code = main(["train-ce", "--data", str(pipeline["data"]),
                 "--model", str(bare), "--out", str(tmp_path / "o.lrm")]
                + TRAIN_CE_ARGS)
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and err.count("\n") == 1


def test_train_ce_bit_identical_rerun(pipeline, tmp_path):
    out = tmp_path / "re.lrm"
    args = ["train-ce", "--data", str(pipeline["data"]),
            "--model", str(pipeline["model"]), "--out", str(out)] \
        + TRAIN_CE_ARGS
    assert main(args) == 0
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


def test_config_file_then_flag_precedence(pipeline, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 2, "k": 0.05, "seed": 5}))
    out = tmp_path / "cfgd.lrm"
    assert main(["train-ce", "--data", str(pipeline["data"]),
                 "--model", str(pipeline["model"]), "--out", str(out),
                 "--config", str(cfg), "--epochs", "3"]) == 0
    meta = load_params(out).meta
    assert meta["ce_config"]["epochs"] == 3      # flag beats file
    assert meta["ce_config"]["k"] == 0.05        # file beats default


# -- generate subcommand ---------------------------------------------------

def test_generate_artifact_shape(pipeline, tmp_path):
    out = tmp_path / "ce.json"
    assert main(["generate", "--model", str(pipeline["model"]),
                 "--query", str(pipeline["qfile"]), "--target", "0.8",
                 "--out", str(out)]) == 0
    ce = json.loads(out.read_text())
    assert isinstance(ce["accepted"], bool)
    assert "gen_time" not in ce
    assert 0 < len(ce["path"]) <= 50
    assert len(ce["x"]) == 6
    assert set(ce["row"]) == {"x0", "x1", "x2", "x3", "x4", "x5"}
    assert ce["config"]["target"] == 0.8
    step = ce["path"][0]
    assert set(step) == {"alpha", "y_interp", "y_model", "x", "row"}


def test_generate_bit_identical_rerun(pipeline, tmp_path):
    out = tmp_path / "ce.json"
    args = ["generate", "--model", str(pipeline["model"]),
            "--query", str(pipeline["qfile"]), "--target", "0.8",
            "--out", str(out)]
    assert main(args) == 0
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


def test_generate_bad_target_exits_nonzero(pipeline, tmp_path, capsys):
    code = main(["generate", "--model", str(pipeline["model"]),
                 "--query", str(pipeline["qfile"]), "--target", "1.5",
                 "--out", str(tmp_path / "x.json")])
    assert code != 0
    err = capsys.readouterr().err
    assert err.startswith("error:") and err.count("\n") == 1
    assert not (tmp_path / "x.json").exists()


def test_generate_matches_library_call(pipeline, tmp_path):
    out = tmp_path / "ce.json"
    main(["generate", "--model", str(pipeline["model"]),
          "--query", str(pipeline["qfile"]), "--target", "0.7",
          "--out", str(out)])
    ce = json.loads(out.read_text())

    lrm = load_params(pipeline["model"])
    from latentrecourse.cli_service import (load_ce_model, load_regressor,
                                            load_schema_for)
    schema = load_schema_for(pipeline["model"])
    res = generate_ce(load_ce_model(lrm), load_regressor(lrm),
                      GenerateRequest(query=pipeline["query"],
                                      y_target=0.7, schema=schema))
    assert ce["accepted"] == res.accepted
    assert ce["alpha"] == res.alpha
    np.testing.assert_array_equal(np.asarray(ce["x"]), res.x)


# -- benchmark subcommand --------------------------------------------------

def test_benchmark_artifacts(pipeline, tmp_path):
    rep = tmp_path / "rep"
    assert main(["benchmark", "--model", str(pipeline["model"]),
                 "--data", str(pipeline["data"]), "--limit", "4",
                 "--out", str(rep)]) == 0
    report = json.loads((rep / "report.json").read_text())
    assert [r["method"] for r in report["rows"]] == ["ours", "gdl"]
    assert report["n_queries"] == 4
    details = (rep / "details.csv").read_text().strip().split("\n")
    assert len(details) == 1 + 2 * 4
    assert (rep / "report.csv").exists()


# -- HTTP service ----------------------------------------------------------

@pytest.fixture(scope="module")
def service(pipeline):
    state = build_state(pipeline["model"], pipeline["data"])
    server = build_server(state, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield {"state": state, "base":
           f"http://127.0.0.1:{server.server_address[1]}"}
    server.shutdown()


def http_get(base, path):
    try:
        with urllib.request.urlopen(base + path) as r:
            return r.status, json.load(r)
    except urllib.error.HTTPError as exc:
        return exc.code, json.load(exc)


def http_post(base, path, obj):
    req = urllib.request.Request(
        base + path, data=json.dumps(obj).encode(),
        headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as r:
            return r.status, json.load(r)
    except urllib.error.HTTPError as exc:
        return exc.code, json.load(exc)


def test_health(service):
    code, body = http_get(service["base"], "/api/health")
    assert code == 200
    assert body["ready"] is True
    assert len(body["fingerprint"]) == 64
    assert body["version"]


def test_schema_endpoint_matches_sidecar(service, pipeline):
    code, body = http_get(service["base"], "/api/schema")
    assert code == 200
    sidecar = json.loads(
        pipeline["model"].with_suffix(".schema.json").read_text())
    assert body == sidecar


def test_rows_endpoint(service):
    code, body = http_get(service["base"], "/api/rows?split=test&limit=3")
    assert code == 200
    assert len(body["rows"]) == 3
    assert body["total"] == 300
    first = body["rows"][0]
    assert first["index"] == 0
    assert 0.0 <= first["prediction"] <= 1.0
    assert isinstance(first["row"]["x0"], float)
    assert "y" in first["row"]


def test_rows_default_limit(service):
    code, body = http_get(service["base"], "/api/rows")
    assert code == 200
    assert len(body["rows"]) == 10


def test_rows_bad_params(service):
    assert http_get(service["base"], "/api/rows?split=train")[0] == 400
    assert http_get(service["base"], "/api/rows?limit=abc")[0] == 400
    assert http_get(service["base"], "/api/rows?limit=0")[0] == 400


def test_unknown_endpoint_404(service):
    assert http_get(service["base"], "/api/nope")[0] == 404
    assert http_post(service["base"], "/api/nope", {})[0] == 404


def test_generate_endpoint(service, pipeline):
    code, body = http_post(service["base"], "/api/generate",
                           {"query": pipeline["query"], "target": 0.8})
    assert code == 200
    assert isinstance(body["accepted"], bool)
    assert body["gen_time"] >= 0.0
    assert len(body["path"]) <= 50
    assert body["path"][-1]["x"] == body["x"]


def test_generate_endpoint_matches_library(service, pipeline):
    code, body = http_post(service["base"], "/api/generate",
                           {"query": pipeline["query"], "target": 0.8,
                            "tol": 0.01, "steps": 20})
    assert code == 200
    state = service["state"]
    res = generate_ce(state.model, state.regressor,
                      GenerateRequest(query=pipeline["query"], y_target=0.8,
                                      schema=state.schema, tol=0.01,
                                      steps=20))
    expect = ce_result_json(res, state.schema)
    got = dict(body)
    got.pop("gen_time")
    assert got == json.loads(json.dumps(expect))


def test_generate_endpoint_rejects_bad_requests(service, pipeline):
    base = service["base"]
    q = pipeline["query"]
    assert http_post(base, "/api/generate", {"query": q})[0] == 400
    assert http_post(base, "/api/generate",
                     {"query": q, "target": 1.5})[0] == 400
    assert http_post(base, "/api/generate",
                     {"query": q, "target": 0.8, "zz": 1})[0] == 400
    assert http_post(base, "/api/generate",
                     {"query": "notadict", "target": 0.8})[0] == 400
    assert http_post(base, "/api/generate",
                     {"query": q, "target": 0.8, "steps": 0})[0] == 400


def test_generate_endpoint_unencodable_query(service, pipeline):
    partial = dict(pipeline["query"])
    partial.pop("x0")
    code, body = http_post(service["base"], "/api/generate",
                           {"query": partial, "target": 0.8})
    assert code == 422
    assert "x0" in body["error"]


def test_generate_endpoint_bad_body(service):
    req = urllib.request.Request(
        service["base"] + "/api/generate", data=b"not json{",
        headers={"Content-Type": "application/json"})
    with pytest.raises(urllib.error.HTTPError) as exc_info:
        urllib.request.urlopen(req)
    assert exc_info.value.code == 400


def test_not_ready_returns_503(pipeline):
    state = build_state(pipeline["model"], pipeline["data"])
    state.ready = False
    server = build_server(state, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        assert http_get(base, "/api/rows")[0] == 503
        assert http_get(base, "/api/schema")[0] == 503
        assert http_post(base, "/api/generate",
                         {"query": {}, "target": 0.5})[0] == 503
        code, body = http_get(base, "/api/health")
        assert code == 200 and body["ready"] is False
    finally:
        server.shutdown()


def http_get_raw(base, path):
    try:
        with urllib.request.urlopen(base + path) as r:
            return r.status, r.headers.get("Content-Type", ""), r.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.headers.get("Content-Type", ""), exc.read()


@pytest.fixture(scope="module")
def ui_service(pipeline, tmp_path_factory):
    ui = tmp_path_factory.mktemp("ui")
    (ui / "index.html").write_text("<!doctype html><title>explorer</title>\n")
    (ui / "app.js").write_text("export const ok = 1;\n")
    (ui / "style.css").write_text("body { margin: 0 }\n")
    (ui.parent / "secret.txt").write_text("outside\n")
    state = build_state(pipeline["model"], pipeline["data"], ui_dir=ui)
    server = build_server(state, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_static_ui_serves_index_and_assets(ui_service):
    code, ctype, body = http_get_raw(ui_service, "/")
    assert code == 200
    assert ctype.startswith("text/html")
    assert b"explorer" in body
    code, ctype, body = http_get_raw(ui_service, "/index.html")
    assert code == 200 and b"explorer" in body
    code, ctype, _ = http_get_raw(ui_service, "/app.js")
    assert code == 200
    assert ctype.startswith("text/javascript")
    code, ctype, _ = http_get_raw(ui_service, "/style.css")
    assert code == 200
    assert ctype.startswith("text/css")


def test_static_ui_keeps_api_routes(ui_service):
    code, body = http_get(ui_service, "/api/health")
    assert code == 200
    assert body["ready"] is True
    assert http_get(ui_service, "/api/nope")[0] == 404


def test_static_ui_missing_file_404(ui_service):
    assert http_get_raw(ui_service, "/nope.css")[0] == 404


def test_static_ui_rejects_traversal(ui_service):
    # a file exists one level above the ui dir; the raw request path must
    # not be able to reach it
    host = ui_service.removeprefix("http://")
    conn = http.client.HTTPConnection(host)
    try:
        conn.request("GET", "/../secret.txt")
        res = conn.getresponse()
        assert res.status == 404
        assert b"outside" not in res.read()
    finally:
        conn.close()


def test_without_ui_dir_root_is_404(service):
    assert http_get_raw(service["base"], "/")[0] == 404
    assert http_get_raw(service["base"], "/index.html")[0] == 404


def test_concurrent_generate_matches_serial(service, pipeline):
    """50 concurrent posts with varied targets agree with serial replies."""
    base = service["base"]
    targets = np.linspace(0.1, 0.95, 50)
    serial = [http_post(base, "/api/generate",
                        {"query": pipeline["query"], "target": float(t)})
              for t in targets]
    results = [None] * len(targets)

    def worker(i: int):
        results[i] = http_post(base, "/api/generate",
                               {"query": pipeline["query"],
                                "target": float(targets[i])})

    threads = [threading.Thread(target=worker, args=(i,))
               for i in range(len(targets))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    for (code_s, body_s), (code_c, body_c) in zip(serial, results):
        assert code_s == code_c == 200
        body_s.pop("gen_time")
        body_c.pop("gen_time")
        assert body_s == body_c
