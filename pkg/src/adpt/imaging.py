"""Image preprocessing and Base64 payload encoding.

Images are resized first and then contrast-stretched per channel. The
payload wire format is a small JSON object::

    {"schema_version": "adpt/1", "media_type": "image/png",
     "width": 512, "height": 512, "data": "<base64>"}
"""

from __future__ import annotations

import base64
import binascii
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError, InvalidImage, UnsupportedFormat

SCHEMA_VERSION = "adpt/1"

# lossless formats only: the payload must round-trip pixel-identically
_PIL_FORMATS = {"image/png": "PNG", "image/bmp": "BMP"}

_RESAMPLE = {"nearest": Image.Resampling.NEAREST, "bilinear": Image.Resampling.BILINEAR}


@dataclass(frozen=True)
class RawImage:
    pixels: np.ndarray
    source_path: str

    def __post_init__(self):
        px = self.pixels
        if not isinstance(px, np.ndarray) or px.ndim != 3 or px.shape[2] != 3:
            raise InvalidImage(f"expected an HxWx3 array, got shape {getattr(px, 'shape', None)}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidImage(f"zero-area image: {px.shape[0]}x{px.shape[1]}")
        if px.dtype != np.uint8:
            raise InvalidImage(f"expected uint8 pixels, got {px.dtype}")
        if not self.source_path:
            raise InvalidImage("source_path must be non-empty")

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: int = 512
    interpolation: str = "bilinear"
    normalization: str = "minmax_per_channel"

    def __post_init__(self):
        if self.target_size < 16:
            raise ConfigError(f"target_size must be >= 16, got {self.target_size}")
        if self.interpolation not in _RESAMPLE:
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")
        if self.normalization not in ("none", "minmax_per_channel"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")


@dataclass(frozen=True)
class ImagePayload:
    base64_data: str
    width: int
    height: int
    media_type: str = "image/png"
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "media_type": self.media_type,
            "width": self.width,
            "height": self.height,
            "data": self.base64_data,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> ImagePayload:
        return cls(
            base64_data=d["data"],
            width=int(d["width"]),
            height=int(d["height"]),
            media_type=d["media_type"],
            schema_version=d["schema_version"],
        )

    @classmethod
    def from_json(cls, text: str) -> ImagePayload:
        return cls.from_dict(json.loads(text))

    def data_url(self) -> str:
        return f"data:{self.media_type};base64,{self.base64_data}"


def load_image(path: str | Path) -> RawImage:
    """Read an image file from disk as 8-bit RGB."""
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise InvalidImage(f"cannot read image {path}: {exc}") from exc
    return RawImage(rgb.copy(), str(path))


def minmax_stretch(pixels: np.ndarray) -> np.ndarray:
    """Stretch each channel to span 0-255. Constant channels are left as-is."""
    out = pixels.copy()
    levels = np.arange(256, dtype=np.float64)
    for ch in range(pixels.shape[2]):
        channel = pixels[:, :, ch]
        lo, hi = int(channel.min()), int(channel.max())
        if hi == lo:
            continue
        # a 256-entry lookup table is much cheaper than float math per pixel
        lut = np.clip(np.rint((levels - lo) * 255.0 / (hi - lo)), 0, 255).astype(np.uint8)
        out[:, :, ch] = lut[channel]
    return out


def preprocess(img: RawImage, cfg: PreprocessConfig | None = None) -> RawImage:
    cfg = cfg or PreprocessConfig()
    px = img.pixels
    if px.shape[0] < 1 or px.shape[1] < 1:
        raise InvalidImage("zero-area image")
    size = cfg.target_size
    if px.shape[:2] != (size, size):
        resized = Image.fromarray(px).resize((size, size), _RESAMPLE[cfg.interpolation])
        px = np.asarray(resized, dtype=np.uint8)
    if cfg.normalization == "minmax_per_channel":
        px = minmax_stretch(px)
    return RawImage(np.ascontiguousarray(px), img.source_path)


def encode_payload(img: RawImage, media_type: str = "image/png") -> ImagePayload:
    fmt = _PIL_FORMATS.get(media_type)
    if fmt is None:
        raise UnsupportedFormat(f"unsupported media type {media_type!r}; use one of {sorted(_PIL_FORMATS)}")
    buf = io.BytesIO()
    # zlib level 1: still lossless, several times faster than the default 6
    Image.fromarray(img.pixels).save(buf, format=fmt, **({"compress_level": 1} if fmt == "PNG" else {}))
    data = base64.b64encode(buf.getvalue()).decode("ascii")
    return ImagePayload(base64_data=data, width=img.width, height=img.height, media_type=media_type)


def decode_payload(payload: ImagePayload) -> np.ndarray:
    """Return the HxWx3 pixel array carried by ``payload``."""
    try:
        raw = base64.b64decode(payload.base64_data, validate=True)
    except binascii.Error as exc:
        raise InvalidImage(f"payload is not valid base64: {exc}") from exc
    with Image.open(io.BytesIO(raw)) as im:
        if _PIL_FORMATS.get(payload.media_type) != im.format:
            raise UnsupportedFormat(f"payload declares {payload.media_type} but holds {im.format}")
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


class ImagePreprocessor(BaseEstimator, TransformerMixin):
    """Stateless transformer: list of RawImage (or arrays) -> ImagePayloads.

    ``fit`` learns nothing; it exists so the preprocessor can sit in a
    scikit-learn ``Pipeline`` and be tuned with ``set_params``.
    """

    def __init__(self, target_size=512, interpolation="bilinear",
                 normalization="minmax_per_channel", media_type="image/png"):
        self.target_size = target_size
        self.interpolation = interpolation
        self.normalization = normalization
        self.media_type = media_type

    def fit(self, X=None, y=None):
        self.config_ = PreprocessConfig(self.target_size, self.interpolation, self.normalization)
        return self

    def transform(self, X):
        cfg = getattr(self, "config_", None) or PreprocessConfig(
            self.target_size, self.interpolation, self.normalization
        )
        out = []
        for i, item in enumerate(X):
            img = item if isinstance(item, RawImage) else RawImage(np.asarray(item, dtype=np.uint8), f"<array {i}>")
            out.append(encode_payload(preprocess(img, cfg), self.media_type))
        return out
