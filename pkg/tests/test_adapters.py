"""Wire-format tests for the HTTP mask-oracle and inpainter adapters against a
local stub server."""

import io
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from PIL import Image

from splatedit.oracles import HttpInpainter, HttpMaskOracle
from splatedit.segmentation import PromptPoint


def _parse_multipart(handler):
    import cgi

    ctype = handler.headers.get("Content-Type")
    environ = {"REQUEST_METHOD": "POST", "CONTENT_TYPE": ctype}
    fs = cgi.FieldStorage(fp=handler.rfile, headers=handler.headers, environ=environ)
    return {key: fs[key] for key in fs.keys()}


class _StubHandler(BaseHTTPRequestHandler):
    seen = []

    def do_POST(self):
        fields = _parse_multipart(self)
        record = {"path": self.path, "fields": {}}
        image = Image.open(io.BytesIO(fields["image"].value))
        record["fields"]["image_size"] = image.size
        if "prompts" in fields:
            record["fields"]["prompts"] = json.loads(fields["prompts"].value)
        if "mask" in fields:
            mask_img = Image.open(io.BytesIO(fields["mask"].value)).convert("L")
            record["fields"]["mask_px"] = int((np.asarray(mask_img) >= 128).sum())
        _StubHandler.seen.append(record)

        if self.path == "/segment":
            # answer with a left-half mask
            out = np.zeros((image.size[1], image.size[0]), dtype=np.uint8)
            out[:, : image.size[0] // 2] = 255
            reply = Image.fromarray(out, mode="L")
        else:
            # answer with a constant mid-gray inpainting
            reply = Image.new("RGB", image.size, (128, 128, 128))
        buf = io.BytesIO()
        reply.save(buf, format="PNG")
        payload = buf.getvalue()
        self.send_response(200)
        self.send_header("Content-Type", "image/png")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture(scope="module")
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestHttpMaskOracle:
    def test_round_trip(self, stub_server, rng):
        _StubHandler.seen.clear()
        oracle = HttpMaskOracle(f"{stub_server}/segment")
        image = rng.random((20, 30, 3))
        prompts = [PromptPoint(3.0, 4.0, True), PromptPoint(9.0, 2.0, False)]
        mask = oracle.request(image, prompts)
        assert mask.shape == (20, 30)
        assert mask[:, :15].all() and not mask[:, 15:].any()
        sent = _StubHandler.seen[-1]
        assert sent["fields"]["image_size"] == (30, 20)
        assert sent["fields"]["prompts"] == [
            {"x": 3.0, "y": 4.0, "positive": True},
            {"x": 9.0, "y": 2.0, "positive": False},
        ]


class TestHttpInpainter:
    def test_rgb_unmasked_pixels_preserved(self, stub_server, rng):
        inpainter = HttpInpainter(f"{stub_server}/inpaint")
        image = rng.random((16, 16, 3))
        mask = np.zeros((16, 16), dtype=bool)
        mask[4:8, 4:8] = True
        out = inpainter.inpaint_rgb(image, mask)
        np.testing.assert_array_equal(out[~mask], image[~mask])
        assert np.abs(out[mask] - 128 / 255.0).max() < 1e-6

    def test_depth_normalization_round_trip(self, stub_server):
        inpainter = HttpInpainter(f"{stub_server}/inpaint")
        depth = np.linspace(2.0, 6.0, 64).reshape(8, 8)
        mask = np.zeros((8, 8), dtype=bool)
        mask[3, 3] = True
        out = inpainter.inpaint_depth(depth, mask)
        np.testing.assert_array_equal(out[~mask], depth[~mask])
        # server replied mid-gray: expect ~middle of the [2, 6] range
        assert out[3, 3] == pytest.approx(2.0 + 4.0 * (128 / 255.0), abs=0.05)
