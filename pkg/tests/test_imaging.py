import base64
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from adpt.exceptions import ConfigError, InvalidImage, UnsupportedFormat
from adpt.imaging import (
    ImagePayload,
    ImagePreprocessor,
    PreprocessConfig,
    RawImage,
    decode_payload,
    encode_payload,
    load_image,
    minmax_stretch,
    preprocess,
)

images = arrays(
    np.uint8,
    st.tuples(st.integers(1, 20), st.integers(1, 20), st.just(3)),
)


def raw(px, name="x.png"):
    return RawImage(np.asarray(px, dtype=np.uint8), name)


def test_preprocess_resizes_to_target():
    img = raw(np.zeros((768, 1024, 3)))
    out = preprocess(img, PreprocessConfig(target_size=512))
    assert out.pixels.shape == (512, 512, 3)


def test_constant_image_passes_through():
    img = raw(np.full((16, 16, 3), 50))
    out = preprocess(img, PreprocessConfig(target_size=16))
    assert np.array_equal(out.pixels, img.pixels)


def test_minmax_two_pixel_channel():
    # map v -> (v - 10) * 255 / 200: 10 -> 0, 210 -> 255
    px = np.array([[[10, 10, 10]], [[210, 210, 210]]], dtype=np.uint8)
    out = minmax_stretch(px)
    assert out[:, 0, 0].tolist() == [0, 255]


def test_minmax_mid_value_hand_evaluated():
    px = np.array([[[10, 0, 0]], [[110, 0, 0]], [[210, 0, 0]]], dtype=np.uint8)
    # (110 - 10) * 255 / 200 = 127.5, rounds half to even -> 128
    assert minmax_stretch(px)[:, 0, 0].tolist() == [0, 128, 255]


@pytest.mark.parametrize("shape", [(0, 4, 3), (4, 0, 3)])
def test_zero_area_rejected(shape):
    with pytest.raises(InvalidImage):
        raw(np.zeros(shape))


def test_wrong_channel_count_rejected():
    with pytest.raises(InvalidImage):
        raw(np.zeros((4, 4, 4)))


def test_small_target_size_rejected():
    with pytest.raises(ConfigError):
        PreprocessConfig(target_size=8)


def test_one_pixel_black_png_payload():
    payload = encode_payload(raw(np.zeros((1, 1, 3))))
    with Image.open(io.BytesIO(base64.b64decode(payload.base64_data))) as im:
        assert im.format == "PNG"
        assert im.size == (1, 1)
        assert im.convert("RGB").getpixel((0, 0)) == (0, 0, 0)


def test_payload_schema_fields():
    img = preprocess(raw(np.random.default_rng(0).integers(0, 255, (40, 30, 3))), PreprocessConfig(512))
    payload = encode_payload(img)
    d = json.loads(payload.to_json())
    assert list(d) == ["schema_version", "media_type", "width", "height", "data"]
    assert d["schema_version"] == "adpt/1"
    assert (d["width"], d["height"]) == (512, 512)
    assert d["media_type"] == "image/png"
    assert ImagePayload.from_json(payload.to_json()) == payload


def test_unsupported_media_type():
    with pytest.raises(UnsupportedFormat):
        encode_payload(raw(np.zeros((2, 2, 3))), "image/jpeg")


def test_bmp_round_trip():
    px = np.random.default_rng(3).integers(0, 256, (5, 7, 3)).astype(np.uint8)
    assert np.array_equal(decode_payload(encode_payload(raw(px), "image/bmp")), px)


def test_load_image_converts_to_rgb(tmp_path):
    p = tmp_path / "g.png"
    Image.fromarray(np.full((3, 4), 77, dtype=np.uint8)).save(p)
    img = load_image(p)
    assert img.pixels.shape == (3, 4, 3)
    assert img.source_path == str(p)


def test_load_image_garbage(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"not an image")
    with pytest.raises(InvalidImage):
        load_image(p)


@given(images)
@settings(max_examples=60, deadline=None)
def test_payload_round_trip(px):
    img = raw(px)
    payload = encode_payload(img)
    assert np.array_equal(decode_payload(payload), px)
    # the base64 text itself round-trips
    assert base64.b64encode(base64.b64decode(payload.base64_data)).decode() == payload.base64_data


@given(images, st.sampled_from(["nearest", "bilinear"]), st.sampled_from(["none", "minmax_per_channel"]))
@settings(max_examples=60, deadline=None)
def test_preprocess_idempotent(px, interp, norm):
    cfg = PreprocessConfig(target_size=16, interpolation=interp, normalization=norm)
    once = preprocess(raw(px), cfg)
    twice = preprocess(once, cfg)
    assert np.array_equal(once.pixels, twice.pixels)


@given(images)
@settings(max_examples=60, deadline=None)
def test_minmax_spans_full_range(px):
    out = minmax_stretch(px)
    for ch in range(3):
        if px[:, :, ch].min() == px[:, :, ch].max():
            assert np.array_equal(out[:, :, ch], px[:, :, ch])
        else:
            assert out[:, :, ch].min() == 0 and out[:, :, ch].max() == 255


def test_preprocessor_estimator_api():
    est = ImagePreprocessor(target_size=16)
    assert est.get_params()["target_size"] == 16
    est.set_params(target_size=20)
    payloads = est.fit_transform([np.zeros((5, 5, 3), dtype=np.uint8)])
    assert payloads[0].width == 20 and payloads[0].height == 20
