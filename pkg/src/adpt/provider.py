"""Vision-language model clients.

``HttpProvider`` speaks the OpenAI chat-completions shape (one text part,
one Base64 image part) and has a thin adapter for Gemini's
``generateContent`` body. ``MockProvider`` is a seeded stand-in that
answers from a confusion matrix so whole runs can be reproduced offline.

All providers share one ``AdmissionController`` per client, which caps
in-flight requests and the per-minute request budget across threads.
"""

from __future__ import annotations

import hashlib
import logging
import os
import random
import threading
import time
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import httpx

from .exceptions import (
    AuthMissing,
    ConfigError,
    MalformedResponse,
    ProviderError,
    ProviderTimeout,
    ProviderUnavailable,
    RateLimited,
)
from .imaging import ImagePayload
from .labels import CATEGORIES, DefectLabel

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 256
BACKOFF_INITIAL = 1.0
BACKOFF_CAP = 30.0


@dataclass(frozen=True)
class ProviderConfig:
    name: str
    endpoint: str
    api_key_env: str
    model_id: str
    max_concurrent: int = 4
    requests_per_minute: int = 60
    max_retries: int = 3
    timeout: float = 60.0
    api_style: str = "openai"
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise ConfigError("max_concurrent must be >= 1")
        if self.requests_per_minute < 1:
            raise ConfigError("requests_per_minute must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ConfigError("timeout must be > 0")
        if self.api_style not in ("openai", "gemini"):
            raise ConfigError(f"unknown api_style {self.api_style!r}")
        if not self.api_key_env or not self.api_key_env.replace("_", "").isalnum():
            raise ConfigError("api_key_env must be the NAME of an environment variable")

    def __repr__(self):
        return f"ProviderConfig(name={self.name!r}, model_id={self.model_id!r}, endpoint={self.endpoint!r})"


# The four evaluated backends. Grok and Qwen expose OpenAI-compatible APIs.
PRESETS = {
    "gemini": dict(name="gemini", endpoint="https://generativelanguage.googleapis.com/v1beta",
                   api_key_env="GEMINI_API_KEY", model_id="gemini-2.0-flash", api_style="gemini"),
    "gpt": dict(name="gpt", endpoint="https://api.openai.com/v1",
                api_key_env="OPENAI_API_KEY", model_id="gpt-4o-mini"),
    "grok": dict(name="grok", endpoint="https://api.x.ai/v1",
                 api_key_env="XAI_API_KEY", model_id="grok-4"),
    "qwen": dict(name="qwen", endpoint="https://dashscope-intl.aliyuncs.com/compatible-mode/v1",
                 api_key_env="DASHSCOPE_API_KEY", model_id="qwen2.5-vl-32b-instruct"),
}


def preset(name: str, **overrides) -> ProviderConfig:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown provider preset {name!r}; known: {sorted(PRESETS)}") from None
    base.update(overrides)
    return ProviderConfig(**base)


@dataclass(frozen=True)
class GenerationRequest:
    payload: ImagePayload
    prompt: str
    request_id: str
    # "binary" | "describe" | "sqr"; real backends ignore it
    task: str = "describe"
    # routing metadata for the mock (sample id, path, label under review);
    # never serialised into anything sent over the wire
    context: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.prompt or not self.prompt.strip():
            raise ValueError("prompt must be non-empty")
        if not self.request_id:
            raise ValueError("request_id must be non-empty")


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    request_id: str
    latency: float
    attempt_count: int


class AdmissionController:
    """Concurrency cap plus a sliding 60 s request budget, shared by threads."""

    def __init__(self, max_concurrent: int, requests_per_minute: int | None = None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        self._slots = threading.BoundedSemaphore(max_concurrent)
        self._rpm = requests_per_minute
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._admitted: deque[float] = deque()
        self.max_concurrent = max_concurrent
        self.in_flight = 0
        self.peak_in_flight = 0

    def _wait_for_budget(self):
        if not self._rpm:
            return
        while True:
            with self._lock:
                now = self._clock()
                while self._admitted and now - self._admitted[0] >= 60.0:
                    self._admitted.popleft()
                if len(self._admitted) < self._rpm:
                    self._admitted.append(now)
                    return
                wait = 60.0 - (now - self._admitted[0])
            self._sleep(max(wait, 0.001))

    @contextmanager
    def slot(self):
        self._slots.acquire()
        try:
            self._wait_for_budget()
            with self._lock:
                self.in_flight += 1
                self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
            try:
                yield
            finally:
                with self._lock:
                    self.in_flight -= 1
        finally:
            self._slots.release()


def backoff_delay(attempt: int, rng: random.Random, initial: float = BACKOFF_INITIAL,
                  cap: float = BACKOFF_CAP) -> float:
    """Full jitter: uniform in [0, min(cap, initial * 2**attempt)]."""
    return rng.uniform(0.0, min(cap, initial * (2 ** attempt)))


class HttpCaller:
    """POST JSON with retries on 429, 5xx, timeouts and connection errors."""

    def __init__(self, *, timeout: float, max_retries: int, admission: AdmissionController | None = None,
                 transport: httpx.BaseTransport | None = None, sleep: Callable[[float], None] | None = None,
                 rng: random.Random | None = None):
        self.timeout = timeout
        self.max_retries = max_retries
        self.admission = admission or AdmissionController(max_concurrent=1_000_000)
        self._client = httpx.Client(transport=transport, timeout=timeout)
        self._sleep = sleep or time.sleep
        self._rng = rng or random.Random()
        self.attempts = 0

    def close(self):
        self._client.close()

    def post_json(self, url: str, body: dict, headers: dict) -> tuple[dict, int]:
        last_error: ProviderError | None = None
        for attempt in range(self.max_retries + 1):
            retry_after = None
            self.attempts += 1
            try:
                with self.admission.slot():
                    resp = self._client.post(url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last_error = ProviderTimeout(f"request timed out after {self.timeout}s: {exc}")
            except httpx.TransportError as exc:
                last_error = ProviderUnavailable(f"cannot reach {url}: {exc}")
            else:
                status = resp.status_code
                if status == 429:
                    last_error = RateLimited(f"rate limited by {url}")
                    retry_after = _retry_after(resp.headers.get("Retry-After"))
                elif status >= 500:
                    last_error = ProviderUnavailable(f"{url} returned HTTP {status}")
                elif status >= 400:
                    raise ProviderError(f"{url} rejected the request with HTTP {status}: {resp.text[:200]}")
                else:
                    try:
                        return resp.json(), attempt + 1
                    except ValueError as exc:
                        raise MalformedResponse(f"response is not JSON: {exc}") from exc
            if attempt < self.max_retries:
                delay = backoff_delay(attempt, self._rng)
                if retry_after is not None:
                    delay = max(delay, retry_after)
                logger.warning("attempt %d/%d failed (%s); retrying in %.2fs",
                               attempt + 1, self.max_retries + 1, last_error, delay)
                self._sleep(delay)
        last_error.attempts = self.max_retries + 1
        raise last_error


def _retry_after(value):
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


def _openai_body(cfg: ProviderConfig, req: GenerationRequest) -> dict:
    return {
        "model": cfg.model_id,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": req.prompt},
                {"type": "image_url", "image_url": {"url": req.payload.data_url()}},
            ],
        }],
    }


def _openai_text(body: dict) -> str:
    content = body["choices"][0]["message"]["content"]
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    return content


def _gemini_body(cfg: ProviderConfig, req: GenerationRequest) -> dict:
    return {
        "contents": [{
            "role": "user",
            "parts": [
                {"text": req.prompt},
                {"inline_data": {"mime_type": req.payload.media_type, "data": req.payload.base64_data}},
            ],
        }],
        "generationConfig": {"temperature": cfg.temperature, "maxOutputTokens": cfg.max_tokens},
    }


def _gemini_text(body: dict) -> str:
    parts = body["candidates"][0]["content"]["parts"]
    return "".join(p.get("text", "") for p in parts)


class HttpProvider:
    def __init__(self, cfg: ProviderConfig, *, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] | None = None, rng: random.Random | None = None,
                 clock: Callable[[], float] = time.monotonic):
        self.cfg = cfg
        self.admission = AdmissionController(cfg.max_concurrent, cfg.requests_per_minute, clock=clock,
                                             sleep=sleep or time.sleep)
        self._caller = HttpCaller(timeout=cfg.timeout, max_retries=cfg.max_retries, admission=self.admission,
                                  transport=transport, sleep=sleep, rng=rng)

    @property
    def name(self) -> str:
        return self.cfg.name

    def _api_key(self) -> str:
        key = os.environ.get(self.cfg.api_key_env)
        if not key:
            raise AuthMissing(f"environment variable {self.cfg.api_key_env} is not set")
        return key

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        key = self._api_key()
        cfg = self.cfg
        base = cfg.endpoint.rstrip("/")
        if cfg.api_style == "gemini":
            url = f"{base}/models/{cfg.model_id}:generateContent"
            headers = {"x-goog-api-key": key}
            body, extract = _gemini_body(cfg, req), _gemini_text
        else:
            url = f"{base}/chat/completions"
            headers = {"Authorization": f"Bearer {key}"}
            body, extract = _openai_body(cfg, req), _openai_text
        start = time.monotonic()
        data, attempts = self._caller.post_json(url, body, headers)
        try:
            text = extract(data)
        except (KeyError, IndexError, TypeError, AttributeError) as exc:
            raise MalformedResponse(f"{cfg.name}: unexpected response shape ({exc!r})") from exc
        if not isinstance(text, str) or not text.strip():
            raise MalformedResponse(f"{cfg.name}: empty response text")
        return GenerationResponse(text.strip(), req.request_id, time.monotonic() - start, attempts)

    def close(self):
        self._caller.close()


def generate(req: GenerationRequest, cfg: ProviderConfig, **kwargs) -> GenerationResponse:
    """One-shot call; long runs should keep a single ``HttpProvider``."""
    provider = HttpProvider(cfg, **kwargs)
    try:
        return provider.generate(req)
    finally:
        provider.close()


# --- mock ---------------------------------------------------------------

class MockMode(str, Enum):
    BINARY = "binary"
    DESCRIBE = "describe"
    SQR = "sqr"


@dataclass(frozen=True)
class MockProviderConfig:
    confusion: dict
    sqr_detect_prob: float = 0.8
    sqr_false_flag_prob: float = 0.05
    sqr_correct_suggestion_prob: float = 1.0
    seed: int = 0
    max_concurrent: int = 8

    def __post_init__(self):
        table = {}
        for truth, row in self.confusion.items():
            truth = DefectLabel.parse(truth)
            parsed = {DefectLabel.parse(k): float(v) for k, v in row.items()}
            if any(not (0.0 <= p <= 1.0) for p in parsed.values()):
                raise ConfigError(f"confusion[{truth}] has a probability outside [0, 1]")
            if abs(sum(parsed.values()) - 1.0) > 1e-9:
                raise ConfigError(f"confusion[{truth}] sums to {sum(parsed.values())!r}, not 1")
            table[truth] = parsed
        object.__setattr__(self, "confusion", table)
        for name in ("sqr_detect_prob", "sqr_false_flag_prob", "sqr_correct_suggestion_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_rates(cls, correct_rate: dict, **kw) -> MockProviderConfig:
        """Confusion where each class keeps ``correct_rate[c]`` and leaks the rest
        to non_defective (defect classes) or crack (non_defective)."""
        confusion = {}
        for label, rate in correct_rate.items():
            label = DefectLabel.parse(label)
            other = DefectLabel.CRACK if label is DefectLabel.NON_DEFECTIVE else DefectLabel.NON_DEFECTIVE
            row = {label: rate}
            if rate < 1.0:
                row[other] = 1.0 - rate
            confusion[label] = row
        return cls(confusion=confusion, **kw)

    def to_dict(self) -> dict:
        return {
            "kind": "mock",
            "confusion": {t.value: {p.value: v for p, v in row.items()} for t, row in self.confusion.items()},
            "sqr_detect_prob": self.sqr_detect_prob,
            "sqr_false_flag_prob": self.sqr_false_flag_prob,
            "sqr_correct_suggestion_prob": self.sqr_correct_suggestion_prob,
            "seed": self.seed,
            "max_concurrent": self.max_concurrent,
        }


MOCK_DESCRIPTIONS = {
    DefectLabel.CRACK: (
        "The concrete surface shows a thin crack running diagonally across the panel.",
        "A continuous dark crack line cuts through the masonry joint.",
    ),
    DefectLabel.EFFLORESCENCE: (
        "White powdery efflorescence deposits cover the lower part of the wall.",
        "The masonry shows patchy efflorescence with crystalline white residue.",
    ),
    DefectLabel.SCALING: (
        "The top layer of the slab shows scaling, with mortar lost in shallow patches.",
        "Surface scaling has exposed rough aggregate across part of the deck.",
    ),
    DefectLabel.CORROSION: (
        "Exposed reinforcement shows corrosion with orange-brown staining around it.",
        "The steel bracket is covered in corrosion and pitting.",
    ),
    DefectLabel.NON_DEFECTIVE: (
        "The concrete surface looks sound and uniform with no visible damage.",
        "A clean, intact wall surface with even texture.",
    ),
    DefectLabel.UNCERTAIN: (
        "The image is blurry and the surface condition is hard to judge.",
        "Only a dark, low-contrast surface is visible; the condition cannot be determined.",
    ),
}

MOCK_REASONABLE = "The classification is reasonable: the description matches the visible surface."
MOCK_INCORRECT = ("The classification is incorrect: the visible pattern does not match the assigned label. "
                  "Suggested change to '{suggestion}'.")
MOCK_INCORRECT_NO_DEFECT = "The classification is incorrect: no structural defect is visible on this surface."


def mock_rng(seed: int, *parts) -> random.Random:
    """Independent stream per (seed, parts): draws never depend on call order."""
    key = "|".join([str(seed), *map(str, parts)]).encode("utf-8")
    return random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "big"))


def sample_row(row: dict, u: float) -> DefectLabel:
    """Inverse-CDF sample over ``row`` walked in DefectLabel declaration order."""
    acc = 0.0
    last = None
    for label in DefectLabel:
        p = row.get(label, 0.0)
        if p <= 0.0:
            continue
        acc += p
        last = label
        if u < acc:
            return label
    return last


def mock_perceived(true_label: DefectLabel, state: MockProviderConfig, sample_id: str = "", path: str = "") -> tuple[DefectLabel, random.Random]:
    row = state.confusion.get(DefectLabel.parse(true_label))
    if row is None:
        raise ConfigError(f"mock confusion has no row for {true_label}")
    rng = mock_rng(state.seed, sample_id, "describe", path)
    return sample_row(row, rng.random()), rng


def mock_generate(true_label: DefectLabel, mode, state: MockProviderConfig, *, sample_id: str = "",
                  path: str = "", reviewed_label: DefectLabel | None = None, round_index: int = 0) -> str:
    """Canned model output for one call, a pure function of its arguments."""
    true_label = DefectLabel.parse(true_label)
    mode = MockMode(mode)
    row = state.confusion.get(true_label)
    if row is None:
        raise ConfigError(f"mock confusion has no row for {true_label}")

    if mode is MockMode.BINARY:
        rng = mock_rng(state.seed, sample_id, "binary")
        p_defective = 1.0 - row.get(DefectLabel.NON_DEFECTIVE, 0.0)
        if rng.random() < p_defective:
            return "defective\nThe surface shows visible structural damage."
        return "non-defective\nThe surface appears intact."

    if mode is MockMode.DESCRIBE:
        perceived, rng = mock_perceived(true_label, state, sample_id, path)
        return rng.choice(MOCK_DESCRIPTIONS[perceived])

    if reviewed_label is None:
        reviewed_label, _ = mock_perceived(true_label, state, sample_id, path)
    reviewed_label = DefectLabel.parse(reviewed_label)
    rng = mock_rng(state.seed, sample_id, "sqr", path, round_index)
    others = [c for c in CATEGORIES if c not in (reviewed_label, true_label)]
    if reviewed_label != true_label:
        if rng.random() >= state.sqr_detect_prob:
            return MOCK_REASONABLE
        if true_label not in CATEGORIES:
            return MOCK_INCORRECT_NO_DEFECT
        if rng.random() < state.sqr_correct_suggestion_prob or not others:
            return MOCK_INCORRECT.format(suggestion=true_label.value)
        return MOCK_INCORRECT.format(suggestion=rng.choice(others).value)
    if rng.random() < state.sqr_false_flag_prob:
        return MOCK_INCORRECT.format(suggestion=rng.choice(others).value)
    return MOCK_REASONABLE


class MockProvider:
    """Offline provider. ``truth_of`` maps a request's sample id to its true label."""

    name = "mock"

    def __init__(self, cfg: MockProviderConfig, truth_of: Callable[[str], DefectLabel]):
        self.cfg = cfg
        self.truth_of = truth_of
        self.admission = AdmissionController(cfg.max_concurrent)

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        ctx = req.context
        sample_id = ctx.get("sample_id", "")
        with self.admission.slot():
            text = mock_generate(
                self.truth_of(sample_id), req.task, self.cfg,
                sample_id=sample_id, path=ctx.get("path", ""),
                reviewed_label=ctx.get("label"), round_index=ctx.get("round", 0),
            )
        return GenerationResponse(text, req.request_id, 0.0, 1)

    def close(self):
        pass
