import json
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ttcrank.encoder import (Adapter, CostMeter, EncodeRequest, Encoder, FileCache, Phase, ProviderConfig,
                             SyntheticBackend, cost_ratio, synthetic_encode)
from ttcrank.errors import EncodeUnavailable, NoBaseline

words = st.text(alphabet="abcdefghij", min_size=1, max_size=6)


def test_meter_counts_logical_calls():
    enc = Encoder(ProviderConfig(native_dim=32))
    enc.encode_texts(["a b", "c", "d e f"])
    assert enc.meter.program_texts == 3
    enc.encode_texts(["x"], phase=Phase.INDEX_TIME)
    enc.encode_texts(["y", "z"], phase=Phase.BASELINE)
    assert enc.meter.snapshot() == {"baseline": 2, "query-time": 3, "index-time": 1}


def test_meter_is_monotone():
    with pytest.raises(ValueError):
        CostMeter().add(Phase.QUERY_TIME, -1)


def test_cost_ratio_examples():
    m = CostMeter(19112)
    assert cost_ratio(m) == 1.0
    m.add(Phase.QUERY_TIME, 3196)
    assert round(cost_ratio(m), 3) == 1.167
    m2 = CostMeter(19112)
    m2.add(Phase.QUERY_TIME, 2 * 19112)
    assert cost_ratio(m2) == 3.0
    with pytest.raises(NoBaseline):
        cost_ratio(CostMeter())


def test_amortized_ratio_excludes_index_time():
    m = CostMeter(100)
    m.add(Phase.INDEX_TIME, 50)
    m.add(Phase.QUERY_TIME, 10)
    assert cost_ratio(m) == 1.6
    assert cost_ratio(m, amortized=True) == 1.1


@given(st.lists(st.lists(words, min_size=1, max_size=4), min_size=1, max_size=5))
def test_meter_linearity(batches):
    enc = Encoder(ProviderConfig(native_dim=16))
    for b in batches:
        enc.encode_texts(b)
    assert enc.meter.program_texts == sum(len(b) for b in batches)


def test_request_validation():
    with pytest.raises(ValueError):
        EncodeRequest(())
    with pytest.raises(ValueError):
        EncodeRequest(("a",), target_dim=0)
    with pytest.raises(ValueError):
        Encoder(ProviderConfig(native_dim=8)).encode(EncodeRequest(("a",), target_dim=9))
    with pytest.raises(ValueError):
        ProviderConfig(backend="http")
    with pytest.raises(ValueError):
        ProviderConfig(backend="file-cache")


def test_determinism_bitwise():
    a = Encoder(ProviderConfig(native_dim=64, seed=5)).encode_texts(["the quick fox"] * 2)
    b = Encoder(ProviderConfig(native_dim=64, seed=5)).encode_texts(["the quick fox"])
    assert np.array_equal(a[0], a[1]) and np.array_equal(a[0], b[0])


def test_determinism_across_threads():
    enc = Encoder(ProviderConfig(native_dim=64, seed=1))
    texts = [f"alpha beta {i} gamma {i * 7}" for i in range(40)]
    serial = enc.encode_texts(texts)
    with ThreadPoolExecutor(4) as pool:
        rows = list(pool.map(lambda t: Encoder(ProviderConfig(native_dim=64, seed=1)).encode_texts([t]), texts))
    assert np.array_equal(np.vstack(rows), serial)


def test_rows_unit_and_empty_sentinel():
    M = Encoder(ProviderConfig(native_dim=32)).encode_texts(["one two", "", "..."])
    assert np.linalg.norm(M[0]) == pytest.approx(1.0)
    assert np.array_equal(M[1], np.zeros(32)) and np.array_equal(M[2], np.zeros(32))


def test_shared_tokens_cosine_one():
    a = synthetic_encode("red blue green", dim=128)
    b = synthetic_encode("green red blue", dim=128)
    assert float(a @ b) == pytest.approx(1.0, abs=1e-12)


def _disjoint_cosines(dim, n=1000):
    rng = np.random.default_rng(0)
    be = SyntheticBackend(dim=dim, seed=0)
    out = []
    for _ in range(n):
        a, b = (f"tok{v}" for v in rng.choice(10**6, size=2, replace=False))
        out.append(abs(float(be.embed_one(a, Adapter.PASSAGE) @ be.embed_one(b, Adapter.PASSAGE))))
    return np.array(out)


@pytest.mark.parametrize("dim", [
    pytest.param(256, marks=pytest.mark.xfail(
        strict=True, reason="|cos| has sd 1/16 at dim 256; the max over 1000 pairs lands near 0.21")),
    384, 768])
def test_disjoint_tokens_near_orthogonal(dim):
    assert _disjoint_cosines(dim).max() < 0.2


def test_disjoint_cosine_spread_is_one_over_sqrt_dim():
    c = _disjoint_cosines(256)
    assert np.sqrt(np.mean(c**2)) == pytest.approx(1 / 16, rel=0.1)


def test_adapters_differ_and_collapse():
    on, off = SyntheticBackend(128, 0, True), SyntheticBackend(128, 0, False)
    t = "a nice long sentence about retrieval"
    q, p = on.embed_one(t, Adapter.QUERY), on.embed_one(t, Adapter.PASSAGE)
    assert float(q @ p) < 0.999
    views = [off.embed_one(t, a) for a in Adapter]
    assert all(np.array_equal(v, views[0]) for v in views)


def test_rotation_is_orthogonal():
    be = SyntheticBackend(64, 2)
    x = np.random.default_rng(1).normal(size=(5, 64))
    for a in Adapter:
        y = be.rotate(x, a)
        assert np.allclose(x @ x.T, y @ y.T)


def test_truncation_matches_prefix_oracle():
    rng = np.random.default_rng(7)
    enc = Encoder(ProviderConfig(native_dim=64, seed=4))
    texts = [" ".join(f"w{j}" for j in rng.integers(0, 300, size=rng.integers(1, 9))) for _ in range(2000)]
    full = enc.encode_texts(texts)
    half = enc.encode_texts(texts, target_dim=32)
    for i in range(0, 2000, 2):
        a, b = full[i, :32], full[i + 1, :32]
        oracle = float(a @ b) / (np.sqrt(a @ a) * np.sqrt(b @ b))
        assert float(half[i] @ half[i + 1]) == pytest.approx(oracle, abs=1e-12)


def test_max_input_tokens_truncates():
    enc = Encoder(ProviderConfig(native_dim=32))
    a = enc.encode_texts(["one two three four"], max_input_tokens=2)
    b = enc.encode_texts(["one two"])
    assert np.allclose(a, b)


def test_hard_limit_truncates_not_errors():
    be = SyntheticBackend(16, 0, hard_token_limit=3)
    assert np.array_equal(be.embed_one("a b c d e", Adapter.PASSAGE), be.embed_one("a b c", Adapter.PASSAGE))


# -- file cache ------------------------------------------------------------------

def _cached(tmp_path, amortized=False):
    return Encoder(ProviderConfig(backend="file-cache", cache_path=str(tmp_path / "c"),
                                  native_dim=32, amortized=amortized))


def test_cache_cold_warm_identical(tmp_path):
    texts = ["alpha beta", "gamma", "alpha beta"]
    cold = _cached(tmp_path).encode_texts(texts)
    warm_enc = _cached(tmp_path)
    warm = warm_enc.encode_texts(texts)
    assert np.array_equal(cold, warm)
    assert warm_enc.meter.program_texts == 3


def test_cache_logical_counts_match_uncached(tmp_path):
    plain = Encoder(ProviderConfig(native_dim=32))
    cached = _cached(tmp_path)
    for enc in (plain, cached):
        enc.encode_texts(["a", "b"])
        enc.encode_texts(["a", "c"])
    assert plain.meter.snapshot() == cached.meter.snapshot()


def test_cache_amortized_charges_misses_only(tmp_path):
    enc = _cached(tmp_path, amortized=True)
    enc.encode_texts(["a", "b"])
    enc.encode_texts(["a", "b", "c"])
    assert enc.meter.program_texts == 3


def test_cache_key_includes_length_control():
    k = FileCache.key
    assert k("t", Adapter.QUERY, None, None) != k("t", Adapter.QUERY, None, 4)
    assert k("t", Adapter.QUERY, None, None) != k("t", Adapter.QUERY, 8, None)
    assert k("t", Adapter.QUERY, None, None) != k("t", Adapter.PASSAGE, None, None)


def test_cache_corruption_rebuilds(tmp_path):
    first = _cached(tmp_path).encode_texts(["alpha beta"])
    data = tmp_path / "c" / "vectors.bin"
    raw = bytearray(data.read_bytes())
    raw[:4] = b"\xff\xff\xff\xff"
    data.write_bytes(bytes(raw))
    enc = _cached(tmp_path)
    again = enc.encode_texts(["alpha beta"])
    assert np.array_equal(first, again)
    assert _cached(tmp_path).cache.lookup(FileCache.key("alpha beta", Adapter.PASSAGE, None, None)) is not None


def test_cache_layout(tmp_path):
    _cached(tmp_path).encode_texts(["x y"])
    raw = (tmp_path / "c" / "vectors.bin").read_bytes()
    assert len(raw) == 16 + 4 + 4 * 32
    assert int.from_bytes(raw[16:20], "little") == 32
    line = (tmp_path / "c" / "index.tsv").read_text().strip()
    assert line.split("\t")[1] == "0" and len(line.split("\t")[0]) == 32


# -- http -------------------------------------------------------------------------

class _Server:
    def __init__(self, script):
        self.script = list(script)
        self.bodies = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *a):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                outer.bodies.append((self.path, body))
                status, payload = outer.script.pop(0) if outer.script else (200, None)
                if payload is None:
                    be = SyntheticBackend(8, 0)
                    payload = {"embeddings": be.embed(body["texts"], Adapter(body["adapter"])).tolist()}
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_port}"
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()

    def close(self):
        self.httpd.shutdown()


def _http(url, retries=3):
    return Encoder(ProviderConfig(backend="http", endpoint=url, native_dim=8, retries=retries, backoff=0.001))


def test_http_round_trip():
    srv = _Server([])
    try:
        M = _http(srv.url).encode_texts(["a b", "c"], adapter=Adapter.QUERY, max_input_tokens=5)
        path, body = srv.bodies[0]
        assert path == "/encode"
        assert body == {"texts": ["a b", "c"], "adapter": "retrieval.query", "dim": None, "max_tokens": 5}
        assert np.allclose(M, SyntheticBackend(8, 0).embed(["a b", "c"], Adapter.QUERY))
    finally:
        srv.close()


def test_http_retries_then_succeeds():
    srv = _Server([(503, {}), (500, {})])
    try:
        enc = _http(srv.url)
        assert enc.encode_texts(["a"]).shape == (1, 8)
        assert len(srv.bodies) == 3
    finally:
        srv.close()


def test_http_gives_up_after_retries():
    srv = _Server([(503, {})] * 10)
    try:
        with pytest.raises(EncodeUnavailable):
            _http(srv.url, retries=2).encode_texts(["a"])
        assert len(srv.bodies) == 3
    finally:
        srv.close()


@pytest.mark.parametrize("payload", [b"not json", {"vectors": []}, {"embeddings": [[1.0, 2.0]] * 3},
                                     {"embeddings": "x"}])
def test_http_malformed(payload):
    srv = _Server([(200, payload)])
    try:
        with pytest.raises(EncodeUnavailable):
            _http(srv.url, retries=0).encode_texts(["a"])
    finally:
        srv.close()


def test_http_unreachable():
    with pytest.raises(EncodeUnavailable):
        _http("http://127.0.0.1:9", retries=1).encode_texts(["a"])


def test_endpoint_env_override(monkeypatch):
    monkeypatch.setenv("TTC_ENCODER_ENDPOINT", "http://example.invalid")
    assert ProviderConfig.from_env(backend="http").endpoint == "http://example.invalid"
