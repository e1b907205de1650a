import json

import httpx
import numpy as np
import pytest

from synthcut import protocol
from synthcut.errors import BadResponse, GatewayUnavailable
from synthcut.gateway import GatewayClient, GatewayConfig, generate_batch
from synthcut.mock_backend import (
    MockBackend,
    decode_png,
    encode_png,
    png_prompt,
    token_jaccard,
)
from synthcut.protocol import GenerationRequest


class TestProtocolRoundTrip:
    def test_generate_request(self):
        req = GenerationRequest(prompt="A photo of dog", n=4, seed=99, width=128, height=256)
        assert protocol.decode_generate_request(protocol.encode_generate_request(req)) == req

    def test_generate_response(self):
        images = [b"png-bytes-1", b"png-bytes-2"]
        body = protocol.encode_generate_response(images)
        assert protocol.decode_generate_response(body, expected_n=2) == images

    def test_score_request(self):
        body = protocol.encode_score_request(b"img", ["a", "b"])
        assert protocol.decode_score_request(body) == (b"img", ["a", "b"])

    def test_score_response(self):
        body = protocol.encode_score_response([0.5, -1.0, 1.0])
        assert protocol.decode_score_response(body, expected_n=3) == [0.5, -1.0, 1.0]

    def test_caption_request(self):
        body = protocol.encode_caption_request(b"img", 3)
        assert protocol.decode_caption_request(body) == (b"img", 3)

    def test_caption_response(self):
        body = protocol.encode_caption_response(["x", "y"])
        assert protocol.decode_caption_response(body, expected_n=2) == ["x", "y"]

    def test_request_validation(self):
        with pytest.raises(ValueError):
            GenerationRequest(prompt="x", n=0, seed=1)
        with pytest.raises(ValueError):
            GenerationRequest(prompt="x", n=65, seed=1)
        with pytest.raises(ValueError):
            GenerationRequest(prompt="x", n=1, seed=-1)
        with pytest.raises(ValueError):
            GenerationRequest(prompt="x", n=1, seed=2**64)
        with pytest.raises(ValueError):
            GenerationRequest(prompt="x", n=1, seed=1, width=100)  # not multiple of 8
        with pytest.raises(ValueError):
            GenerationRequest(prompt="x", n=1, seed=1, height=56)  # < 64
        with pytest.raises(ValueError):
            GenerationRequest(prompt="", n=1, seed=1)

    def test_response_schema_violations(self):
        with pytest.raises(BadResponse):
            protocol.decode_generate_response({"wrong": []})
        with pytest.raises(BadResponse):
            protocol.decode_generate_response({"images": ["@@not-base64@@"]})
        with pytest.raises(BadResponse):
            protocol.decode_score_response({"scores": [2.0]})
        with pytest.raises(BadResponse):
            protocol.decode_score_response({"scores": [float("nan")]})
        with pytest.raises(BadResponse):
            protocol.decode_caption_response({"captions": [""]}, expected_n=1)


class TestMockGenerate:
    def test_byte_determinism(self, mock_client):
        req = GenerationRequest(prompt="A photo of dog", n=3, seed=5, width=128, height=128)
        assert mock_client.generate_images(req) == mock_client.generate_images(req)

    def test_requested_count_and_size(self, mock_client):
        req = GenerationRequest(prompt="stuff", n=2, seed=5, width=128, height=64)
        images = mock_client.generate_images(req)
        assert len(images) == 2
        assert all(decode_png(img).shape == (64, 128, 3) for img in images)

    def test_foreground_style_border_ring_oracle(self, mock_client):
        req = GenerationRequest(
            prompt="A photo of dog in pure background", n=4, seed=8, width=256, height=256
        )
        for png in mock_client.generate_images(req):
            img = decode_png(png).astype(float)
            r = 8
            ring = np.concatenate(
                [
                    img[:r].reshape(-1, 3),
                    img[-r:].reshape(-1, 3),
                    img[r:-r, :r].reshape(-1, 3),
                    img[r:-r, -r:].reshape(-1, 3),
                ]
            )
            assert ring.var(axis=0).max() < 5.0  # near-uniform border (8-bit units)
            # one centered colored shape: interior must contain pixels far
            # from the border color
            center_crop = img[64:192, 64:192]
            assert np.abs(center_crop - ring.mean(axis=0)).max() > 60

    def test_background_style_has_no_uniform_field(self, mock_client):
        req = GenerationRequest(
            prompt="A real photo of blue sky", n=1, seed=8, width=256, height=256
        )
        img = decode_png(mock_client.generate_images(req)[0]).astype(float)
        assert img.std() > 10  # smooth gradient, not a flat field

    def test_metadata_prompt_round_trip(self, mock_client):
        req = GenerationRequest(prompt="A real photo of forest", n=1, seed=1, width=64, height=64)
        assert png_prompt(mock_client.generate_images(req)[0]) == "A real photo of forest"

    def test_zero_batch_rejected(self):
        with pytest.raises(ValueError):
            GenerationRequest(prompt="x", n=0, seed=0)


class TestMockScore:
    def test_identical_token_sets(self, mock_client):
        png = encode_png(np.zeros((64, 64, 3), np.uint8), "blue sky")
        assert mock_client.score_image_text(png, ["blue sky"]) == [1.0]

    def test_disjoint_token_sets(self, mock_client):
        png = encode_png(np.zeros((64, 64, 3), np.uint8), "blue sky")
        assert mock_client.score_image_text(png, ["a photo of dog"]) == [0.0]

    def test_jaccard_half(self, mock_client):
        # |{empty, city}| / |{empty, city, street, road}| = 2/4
        png = encode_png(np.zeros((64, 64, 3), np.uint8), "empty city street")
        assert mock_client.score_image_text(png, ["empty city road"]) == [0.5]

    def test_order_aligned_scores(self, mock_client):
        png = encode_png(np.zeros((64, 64, 3), np.uint8), "blue sky")
        scores = mock_client.score_image_text(png, ["blue sky", "a photo of dog", "sky"])
        assert scores[0] == 1.0 and scores[1] == 0.0 and 0 < scores[2] < 1

    def test_empty_texts_rejected(self, mock_client):
        with pytest.raises(ValueError):
            mock_client.score_image_text(b"x", [])

    def test_jaccard_empty_union(self):
        assert token_jaccard("of the", "a an") == 0.0


class TestMockCaption:
    def test_round_trip_contains_content_tokens(self, mock_client):
        req = GenerationRequest(
            prompt="a dog lying on grass field", n=1, seed=2, width=64, height=64
        )
        png = mock_client.generate_images(req)[0]
        for caption in mock_client.caption_image(png, 3):
            assert "grass field" in caption

    def test_n_distinct(self, mock_client):
        png = encode_png(np.zeros((64, 64, 3), np.uint8), "empty sea")
        caps = mock_client.caption_image(png, 6)
        assert len(caps) == 6
        assert len(set(caps)) == 6

    def test_n_validation(self, mock_client):
        with pytest.raises(ValueError):
            mock_client.caption_image(b"x", 0)


class TestGenerateBatch:
    def test_chunking_above_protocol_max(self, mock_client):
        out = generate_batch(mock_client, "A real photo of trees", 70, seed=3, width=64, height=64)
        assert len(out) == 70
        assert len({(g.seed, g.index) for g in out}) == 70  # unique provenance

    def test_chunking_is_invisible_to_determinism(self, mock_client):
        a = generate_batch(mock_client, "A real photo of trees", 10, seed=3, width=64, height=64)
        b = generate_batch(mock_client, "A real photo of trees", 10, seed=3, width=64, height=64)
        assert [g.png for g in a] == [g.png for g in b]


def _remote_client(handler, max_retries=2):
    config = GatewayConfig(
        backend="remote",
        endpoint="http://sidecar.test",
        max_retries=max_retries,
        backoff_base=0.0,
    )
    return GatewayClient(config, transport=httpx.MockTransport(handler))


class TestRemoteTransport:
    def test_remote_round_trip_against_reference_backend(self):
        backend = MockBackend()

        def handler(request: httpx.Request) -> httpx.Response:
            body = json.loads(request.content)
            if request.url.path == protocol.GENERATE_PATH:
                images = backend.generate(protocol.decode_generate_request(body))
                return httpx.Response(200, json=protocol.encode_generate_response(images))
            if request.url.path == protocol.SCORE_PATH:
                image, texts = protocol.decode_score_request(body)
                return httpx.Response(200, json=protocol.encode_score_response(backend.score(image, texts)))
            image, n = protocol.decode_caption_request(body)
            return httpx.Response(200, json=protocol.encode_caption_response(backend.caption(image, n)))

        client = _remote_client(handler)
        req = GenerationRequest(prompt="A photo of cat", n=2, seed=4, width=64, height=64)
        images = client.generate_images(req)
        local = GatewayClient(GatewayConfig(backend="mock")).generate_images(req)
        assert images == local
        assert client.score_image_text(images[0], ["A photo of cat"]) == [1.0]
        assert len(client.caption_image(images[0], 2)) == 2

    def test_connection_failures_retried_then_give_up(self):
        attempts = []

        def handler(request):
            attempts.append(1)
            raise httpx.ConnectError("refused")

        client = _remote_client(handler, max_retries=2)
        with pytest.raises(GatewayUnavailable):
            client.generate_images(GenerationRequest(prompt="x", n=1, seed=0, width=64, height=64))
        assert len(attempts) == 3  # 1 + max_retries

    def test_transient_failure_then_success(self):
        backend = MockBackend()
        attempts = []

        def handler(request):
            attempts.append(1)
            if len(attempts) < 3:
                return httpx.Response(503)
            body = json.loads(request.content)
            images = backend.generate(protocol.decode_generate_request(body))
            return httpx.Response(200, json=protocol.encode_generate_response(images))

        client = _remote_client(handler, max_retries=3)
        images = client.generate_images(
            GenerationRequest(prompt="x y", n=1, seed=0, width=64, height=64)
        )
        assert len(images) == 1
        assert len(attempts) == 3

    def test_schema_violation_never_retried(self):
        attempts = []

        def handler(request):
            attempts.append(1)
            return httpx.Response(200, json={"images": "not-a-list"})

        client = _remote_client(handler, max_retries=5)
        with pytest.raises(BadResponse):
            client.generate_images(GenerationRequest(prompt="x", n=1, seed=0, width=64, height=64))
        assert len(attempts) == 1

    def test_http_400_never_retried(self):
        attempts = []

        def handler(request):
            attempts.append(1)
            return httpx.Response(400, text="bad request")

        client = _remote_client(handler, max_retries=5)
        with pytest.raises(BadResponse):
            client.generate_images(GenerationRequest(prompt="x", n=1, seed=0, width=64, height=64))
        assert len(attempts) == 1

    def test_wrong_image_count_is_schema_violation(self):
        def handler(request):
            return httpx.Response(200, json={"images": []})

        client = _remote_client(handler)
        with pytest.raises(BadResponse):
            client.generate_images(GenerationRequest(prompt="x", n=1, seed=0, width=64, height=64))
