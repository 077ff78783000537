"""Progressive prompts: one high-level description, N low-level regional
prompts and one global negative prompt.

``generate_prompts`` asks a chat-completions endpoint for strict JSON;
``offline_template`` is the deterministic stand-in used by tests and offline
runs.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable

import httpx

from .errors import SchemaError, TransportError

logger = logging.getLogger(__name__)

PROGRESSIVE_PROMPT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ProgressivePrompt",
    "type": "object",
    "required": ["high_level", "regions", "negative"],
    "additionalProperties": False,
    "properties": {
        "high_level": {"type": "string", "minLength": 1},
        "regions": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["index", "text"],
                "additionalProperties": False,
                "properties": {
                    "index": {"type": "integer", "minimum": 0},
                    "text": {"type": "string", "minLength": 1},
                },
            },
        },
        "negative": {"type": "string", "minLength": 1},
    },
}

INSTRUCTION = """You write prompts for a regional text-to-image model.
The image is split into {n} adjacent regions, numbered 0 to {last}.
Given the user's intent, respond ONLY with a JSON object of the form
{{"high_level": str, "regions": [{{"index": int, "text": str}}, ...], "negative": str}}
- high_level: overall content, topic, layout and style of the whole image.
- regions: exactly {n} entries, indices 0..{last} each used once; each text gives
  the low-level details for that region (objects, colour, texture, lighting).
- negative: a single prompt listing things to avoid anywhere in the image.
No prose, no markdown fences."""

REPAIR = "That response was not valid ({error}). Reply again with ONLY the corrected JSON object."

NEGATIVE_BOILERPLATE = "blurry, low quality, distorted, watermark, text, extra limbs"

_DETAILS = (
    "fine surface texture, natural colour",
    "soft lighting, rich detail",
    "sharp edges, vivid colour",
    "subtle gradients, balanced tones",
    "crisp highlights, deep shadows",
    "intricate patterns, warm palette",
    "clean lines, cool palette",
    "high contrast, saturated hues",
    "gentle haze, muted colours",
)


@dataclass(frozen=True, order=True)
class RegionPrompt:
    index: int
    text: str


@dataclass(frozen=True)
class ProgressivePrompt:
    high_level: str
    regions: tuple[RegionPrompt, ...]
    negative: str

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        validate(self)

    @property
    def n(self) -> int:
        return len(self.regions)

    def ordered(self) -> list[RegionPrompt]:
        return sorted(self.regions, key=lambda r: r.index)

    def to_dict(self) -> dict:
        return {
            "high_level": self.high_level,
            "regions": [asdict(r) for r in self.ordered()],
            "negative": self.negative,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, obj, n: int | None = None, raw: str | None = None) -> "ProgressivePrompt":
        if not isinstance(obj, dict):
            raise SchemaError("top-level JSON value must be an object", raw)
        missing = [k for k in ("high_level", "regions", "negative") if k not in obj]
        if missing:
            raise SchemaError(f"missing field(s): {', '.join(missing)}", raw)
        extra = sorted(set(obj) - {"high_level", "regions", "negative"})
        if extra:
            raise SchemaError(f"unexpected field(s): {', '.join(extra)}", raw)
        if not isinstance(obj["regions"], list):
            raise SchemaError("'regions' must be a list", raw)
        regions = []
        for i, r in enumerate(obj["regions"]):
            if not isinstance(r, dict) or set(r) != {"index", "text"}:
                raise SchemaError(f"regions[{i}] must have exactly 'index' and 'text'", raw)
            idx = r["index"]
            if not isinstance(idx, int) or isinstance(idx, bool):
                raise SchemaError(f"regions[{i}].index must be an integer", raw)
            regions.append(RegionPrompt(idx, r["text"]))
        try:
            pp = cls(obj["high_level"], tuple(regions), obj["negative"])
        except SchemaError as exc:
            raise SchemaError(str(exc), raw) from None
        if n is not None and pp.n != n:
            raise SchemaError(f"expected {n} regions, got {pp.n}", raw)
        return pp


def validate(p: ProgressivePrompt) -> None:
    for name in ("high_level", "negative"):
        v = getattr(p, name)
        if not isinstance(v, str) or not v.strip():
            raise SchemaError(f"'{name}' must be a non-empty string")
    if not p.regions:
        raise SchemaError("at least one region is required")
    indices = [r.index for r in p.regions]
    if len(set(indices)) != len(indices):
        dupes = sorted({i for i in indices if indices.count(i) > 1})
        raise SchemaError(f"duplicate region index {dupes}")
    if sorted(indices) != list(range(len(indices))):
        raise SchemaError(f"region indices must be exactly 0..{len(indices) - 1}, got {sorted(indices)}")
    for r in p.regions:
        if not isinstance(r.text, str) or not r.text.strip():
            raise SchemaError(f"region {r.index} text must be a non-empty string")


def offline_template(user_intent: str, n: int) -> ProgressivePrompt:
    if n < 1:
        raise ValueError("n must be >= 1")
    regions = []
    for i in range(n):
        detail = _DETAILS[i % len(_DETAILS)]
        regions.append(RegionPrompt(i, f"{user_intent}, region {i + 1} of {n}, {detail}"))
    return ProgressivePrompt(user_intent, tuple(regions), NEGATIVE_BOILERPLATE)


def merge_prompts(p: ProgressivePrompt) -> str:
    return ", ".join([p.high_level] + [r.text for r in p.ordered()])


# --------------------------------------------------------------------------
# LLM client
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LlmClientConfig:
    endpoint: str
    model: str
    api_key_env: str = "REGIONDIT_LLM_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5
    concurrency: int = 2

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")


_FENCE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.S | re.I)


def _extract_json(text: str):
    text = text.strip()
    m = _FENCE.match(text)
    if m:
        text = m.group(1)
    return json.loads(text)


def _is_transient(status: int) -> bool:
    return status == 429 or status >= 500


class _Chat:
    def __init__(self, cfg: LlmClientConfig, transport: httpx.BaseTransport | None, sleep):
        self.cfg = cfg
        self.sleep = sleep
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.client = httpx.Client(transport=transport, timeout=cfg.timeout, headers=headers)

    def close(self):
        self.client.close()

    def complete(self, messages: list[dict]) -> str:
        body = {"model": self.cfg.model, "messages": messages, "temperature": 0}
        attempts = self.cfg.max_retries + 1
        last: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                self.sleep(self.cfg.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(self.cfg.endpoint, json=body)
            except httpx.HTTPError as exc:
                last = exc
                logger.warning("LLM request failed (%d/%d): %s", attempt + 1, attempts, exc)
                continue
            if _is_transient(resp.status_code):
                last = TransportError(f"HTTP {resp.status_code}")
                logger.warning("LLM returned HTTP %d (%d/%d)", resp.status_code, attempt + 1, attempts)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"LLM endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise SchemaError(f"unexpected response envelope: {exc}", resp.text) from None
        raise TransportError(f"LLM request failed after {attempts} attempt(s): {last}")


def generate_prompts(user_intent: str, n: int, client: LlmClientConfig, *,
                     transport: httpx.BaseTransport | None = None,
                     sleep: Callable[[float], None] = time.sleep) -> ProgressivePrompt:
    """Query the LLM; one repair round-trip is allowed for malformed output."""
    if n < 1:
        raise ValueError("n must be >= 1")
    messages = [
        {"role": "system", "content": INSTRUCTION.format(n=n, last=n - 1)},
        {"role": "user", "content": user_intent},
    ]
    chat = _Chat(client, transport, sleep)
    try:
        raw = chat.complete(messages)
        try:
            return _parse(raw, n)
        except SchemaError as exc:
            logger.warning("LLM output rejected, requesting repair: %s", exc)
            messages += [
                {"role": "assistant", "content": raw},
                {"role": "user", "content": REPAIR.format(error=exc)},
            ]
            return _parse(chat.complete(messages), n)
    finally:
        chat.close()


def _parse(raw: str, n: int) -> ProgressivePrompt:
    try:
        obj = _extract_json(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"response is not JSON: {exc}", raw) from None
    return ProgressivePrompt.from_dict(obj, n=n, raw=raw)


def generate_many(intents: list[str], n: int, client: LlmClientConfig, **kw) -> list[ProgressivePrompt]:
    with ThreadPoolExecutor(max_workers=client.concurrency) as pool:
        return list(pool.map(lambda s: generate_prompts(s, n, client, **kw), intents))
