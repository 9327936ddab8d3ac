import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from veraser import backends as be
from veraser import synthetic as syn
from veraser import wire
from veraser.backends import BackendEndpoint, HttpHandle, InProcessHandle, resolve_endpoint
from veraser.errors import BackendMalformed, BackendTimeout, BackendUnavailable
from veraser.wire import ImagePayload, RelationshipLabel


class WireStub:
    """Threaded HTTP server delegating /v1/<role> to supplied functions."""

    def __init__(self, functions, fail_first=0, delay=0.0):
        self.functions = functions
        self.fail_first = fail_first
        self.delay = delay
        self.requests_seen = 0
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                stub.requests_seen += 1
                if stub.delay:
                    time.sleep(stub.delay)
                if stub.requests_seen <= stub.fail_first:
                    self.send_response(500)
                    self.end_headers()
                    return
                role = self.path.rsplit("/", 1)[-1]
                length = int(self.headers["Content-Length"])
                body = json.loads(self.rfile.read(length))
                try:
                    payload = stub.functions[role](body)
                    code = 200
                except KeyError:
                    payload, code = {"error": "no such role"}, 404
                data = json.dumps(payload).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        class QuietServer(ThreadingHTTPServer):
            def handle_error(self, request, client_address):
                pass  # client-side timeouts sever connections mid-write

        self.server = QuietServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def base_url(self):
        return f"http://127.0.0.1:{self.server.server_port}"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def no_backoff(monkeypatch):
    sleeps = []
    monkeypatch.setattr(be, "_sleep", sleeps.append)
    return sleeps


def scene_image(seed=1, n=3):
    return syn.render(syn.gen_scene(seed, n))


class TestSchemas:
    def test_bad_label_is_malformed(self):
        handle = InProcessHandle("predict", lambda body: {"label": "maybe"})
        with pytest.raises(BackendMalformed):
            be.call_predict(handle, scene_image(), "a red square is present")

    def test_extra_fields_are_malformed(self):
        handle = InProcessHandle("extract", lambda body: {"response": "[]", "junk": 1})
        with pytest.raises(BackendMalformed):
            be.call_extract(handle, "prompt")

    def test_box_fields_required(self):
        handle = InProcessHandle("detect", lambda body: {"boxes": [{"x1": 0, "y1": 0}]})
        with pytest.raises(BackendMalformed):
            be.call_detect(handle, scene_image())

    def test_image_payload_dims_checked(self):
        img = scene_image()
        lying = img.to_wire()
        lying["width"] = img.width + 1
        with pytest.raises(BackendMalformed):
            ImagePayload.from_wire(lying)

    def test_png_path_mode_round_trip(self, tmp_path):
        img = scene_image()
        path = tmp_path / "premise.png"
        path.write_bytes(img.png)
        loaded = ImagePayload.from_file(path)
        over_wire = ImagePayload.from_wire(loaded.to_wire(wire.PNG_PATH))
        assert over_wire.png == img.png

    def test_garbled_base64_is_malformed(self):
        img = scene_image()
        body = img.to_wire()
        body["data"] = "!!not-base64!!"
        with pytest.raises(BackendMalformed):
            ImagePayload.from_wire(body)


class TestHttpClient:
    def test_retries_then_succeeds(self, no_backoff):
        stub = WireStub({"synonym": be.identity_synonym_fn}, fail_first=2)
        try:
            endpoint = BackendEndpoint("synonym", stub.base_url, retries=2)
            text, subs = be.call_synonym(HttpHandle(endpoint), "a boy sits")
            assert text == "a boy sits"
            assert stub.requests_seen == 3
            assert no_backoff == [0.1, 0.2]
        finally:
            stub.close()

    def test_gives_up_after_retries(self, no_backoff):
        stub = WireStub({"synonym": be.identity_synonym_fn}, fail_first=99)
        try:
            endpoint = BackendEndpoint("synonym", stub.base_url, retries=1)
            with pytest.raises(BackendUnavailable):
                be.call_synonym(HttpHandle(endpoint), "a boy sits")
            assert stub.requests_seen == 2
        finally:
            stub.close()

    def test_unreachable_host(self, no_backoff):
        endpoint = BackendEndpoint("synonym", "http://127.0.0.1:9", retries=1)
        with pytest.raises(BackendUnavailable):
            be.call_synonym(HttpHandle(endpoint), "a boy sits")

    def test_timeout(self, no_backoff):
        stub = WireStub({"synonym": be.identity_synonym_fn}, delay=0.5)
        try:
            endpoint = BackendEndpoint("synonym", stub.base_url, timeout_ms=100, retries=0)
            with pytest.raises(BackendTimeout):
                be.call_synonym(HttpHandle(endpoint), "a boy sits")
        finally:
            stub.close()

    def test_http_matches_inprocess(self):
        functions = syn._synthetic_factory({})
        stub = WireStub(functions)
        try:
            image = scene_image()
            http_handle = HttpHandle(BackendEndpoint("detect", stub.base_url))
            local_handle = InProcessHandle("detect", functions["detect"])
            assert be.call_detect(http_handle, image) == be.call_detect(local_handle, image)
            http_pred = be.call_predict(
                HttpHandle(BackendEndpoint("predict", stub.base_url)),
                image,
                "a red square is present",
            )
            local_pred = be.call_predict(
                InProcessHandle("predict", functions["predict"]),
                image,
                "a red square is present",
            )
            assert http_pred == local_pred
        finally:
            stub.close()


class TestGoldenFixtures:
    def test_every_endpoint_has_a_fixture(self):
        fixtures = wire.load_golden_fixtures()
        assert {f["role"] for f in fixtures} == set(wire.ROLES)

    def test_fixtures_replay_byte_level(self):
        functions = syn._synthetic_factory({})
        functions["synonym"] = be.make_lexicon_synonym_fn()
        for fixture in wire.load_golden_fixtures():
            wire.validate_request(fixture["role"], fixture["request"])
            wire.validate_response(fixture["role"], fixture["response"])
            got = functions[fixture["role"]](fixture["request"])
            assert wire.canonical_json(got) == wire.canonical_json(fixture["response"]), fixture["name"]


class TestResolution:
    def test_inprocess_with_options(self):
        endpoint = BackendEndpoint("predict", "inprocess:synthetic-flip?p=0.0&seed=3")
        handle = resolve_endpoint(endpoint)
        pred = be.call_predict(handle, scene_image(seed=2, n=2), "a zebra is present")
        assert pred.label is RelationshipLabel.ENTAILMENT

    def test_unknown_name(self):
        with pytest.raises(BackendUnavailable):
            resolve_endpoint(BackendEndpoint("predict", "inprocess:nope"))

    def test_role_not_served(self):
        with pytest.raises(BackendUnavailable):
            resolve_endpoint(BackendEndpoint("detect", "inprocess:identity-synonym"))

    def test_endpoint_validation(self):
        with pytest.raises(ValueError):
            BackendEndpoint("noodle", "inprocess:synthetic")
        with pytest.raises(ValueError):
            BackendEndpoint("detect", "inprocess:synthetic", timeout_ms=0)
        with pytest.raises(ValueError):
            BackendEndpoint("detect", "inprocess:synthetic", retries=-1)
