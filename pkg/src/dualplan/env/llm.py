"""Chat-completions client and the LLM-backed role backend.

The wire format is the OpenAI-compatible ``POST {base_url}/chat/completions``
schema. A cassette can record request/response pairs and replay them
offline, which is how the backend is tested without network access.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from dualplan.dialogue import DialogueState, Strategy, TaskSpec
from dualplan.env.prompts import Message, PromptPack
from dualplan.errors import ConfigError, DualPlanError, StepFailed

log = logging.getLogger(__name__)

RETRY_DELAYS = (1.0, 2.0, 4.0)
_RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


class AuthError(ConfigError):
    """The endpoint rejected the credential; retrying cannot help."""


class CassetteMiss(DualPlanError):
    """Replay mode found no recorded response for a request."""


@dataclass
class LLMConfig:
    api_key: str | None = None
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-3.5-turbo-0613"
    temperature: float = 0.0
    critic_temperature: float = 1.1
    max_tokens: int | None = None
    timeout: float = 60.0
    trace: bool = False

    @classmethod
    def from_env(cls, require_key: bool = True, **overrides) -> LLMConfig:
        env = os.environ
        cfg = cls(
            api_key=env.get("DUALPLAN_API_KEY") or env.get("OPENAI_API_KEY"),
            base_url=env.get("DUALPLAN_BASE_URL", cls.base_url),
            model=env.get("DUALPLAN_MODEL", cls.model),
        )
        for k, v in overrides.items():
            if v is not None:
                setattr(cfg, k, v)
        if require_key and not cfg.api_key:
            raise ConfigError("LLM backend selected but no API key is set "
                              "(DUALPLAN_API_KEY or OPENAI_API_KEY)")
        return cfg


def build_request(messages: Sequence[Message], config: LLMConfig,
                  temperature: float | None = None) -> dict:
    """Request body in the chat-completions wire schema."""
    body = {
        "model": config.model,
        "messages": [{"role": m["role"], "content": m["content"]} for m in messages],
        "temperature": config.temperature if temperature is None else temperature,
    }
    if config.max_tokens is not None:
        body["max_tokens"] = config.max_tokens
    return body


def parse_response(payload: dict) -> str:
    try:
        return payload["choices"][0]["message"]["content"].strip()
    except (KeyError, IndexError, TypeError, AttributeError) as exc:
        raise StepFailed(f"malformed chat completion response: {exc}") from exc


def llm_chat(messages: Sequence[Message], config: LLMConfig, *, temperature: float | None = None,
             client: httpx.Client | None = None, sleep: Callable[[float], None] = time.sleep) -> str:
    """One completion. Transient failures are retried after 1s, 2s and 4s; auth errors are not."""
    body = build_request(messages, config, temperature)
    url = config.base_url.rstrip("/") + "/chat/completions"
    headers = {"Authorization": f"Bearer {config.api_key}", "Content-Type": "application/json"}
    own = client is None
    client = client or httpx.Client(timeout=config.timeout)
    try:
        last: Exception | None = None
        for attempt in range(len(RETRY_DELAYS) + 1):
            if attempt:
                sleep(RETRY_DELAYS[attempt - 1])
            try:
                resp = client.post(url, json=body, headers=headers)
            except httpx.TransportError as exc:
                last = exc
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credentials ({resp.status_code})")
            if resp.status_code in _RETRY_STATUS:
                last = StepFailed(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise StepFailed(f"HTTP {resp.status_code}: {resp.text[:200]}")
            text = parse_response(resp.json())
            if config.trace:
                log.info("chat request=%s response=%r", json.dumps(body, ensure_ascii=False), text)
            return text
        raise StepFailed(f"chat completion failed after {len(RETRY_DELAYS) + 1} attempts: {last}")
    finally:
        if own:
            client.close()


def request_key(body: dict, tag: str = "") -> str:
    blob = json.dumps(body, sort_keys=True, ensure_ascii=False) + "\x00" + tag
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class Cassette:
    """Recorded (request, response) pairs keyed by a hash of the request body and a tag."""

    path: Path
    mode: str = "replay"  # or "record"
    entries: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("replay", "record"):
            raise ConfigError(f"unknown cassette mode {self.mode!r}")
        self.path = Path(self.path)
        self._lock = threading.Lock()
        if self.path.exists():
            data = json.loads(self.path.read_text(encoding="utf-8"))
            self.entries = {e["key"]: e for e in data.get("interactions", [])}
        elif self.mode == "replay":
            raise ConfigError(f"cassette {self.path} does not exist")

    def lookup(self, body: dict, tag: str = "") -> str:
        key = request_key(body, tag)
        if key not in self.entries:
            raise CassetteMiss(f"no recorded response for request {key[:12]}")
        return self.entries[key]["response"]

    def record(self, body: dict, tag: str, response: str) -> None:
        key = request_key(body, tag)
        with self._lock:
            self.entries[key] = {"key": key, "tag": tag, "request": body, "response": response}

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"interactions": list(self.entries.values())}
        self.path.write_text(json.dumps(payload, indent=1, ensure_ascii=False), encoding="utf-8")


class LLMBackend:
    """RoleBackend that prompts a chat model for the system, user and critic roles."""

    def __init__(self, task: TaskSpec, config: LLMConfig, pack: PromptPack | None = None,
                 cassette: Cassette | None = None, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        if cassette is None or cassette.mode == "record":
            if not config.api_key:
                raise ConfigError("LLM backend needs an API key unless replaying a cassette")
        self.task = task
        self.config = config
        self.pack = pack or PromptPack.load(task.name)
        self.cassette = cassette
        self.client = client
        self.sleep = sleep

    def _complete(self, messages: list[Message], tag: str, temperature: float | None = None) -> str:
        body = build_request(messages, self.config, temperature)
        if self.cassette is not None and self.cassette.mode == "replay":
            return self.cassette.lookup(body, tag)
        text = llm_chat(messages, self.config, temperature=temperature, client=self.client, sleep=self.sleep)
        if self.cassette is not None:
            self.cassette.record(body, tag, text)
        return text

    def system_respond(self, state: DialogueState, strategy: Strategy) -> str:
        return self._complete(self.pack.system_messages(state, strategy.instruction), "system")

    def user_respond(self, state: DialogueState) -> str:
        return self._complete(self.pack.user_messages(state), "user")

    def critic_judge(self, state: DialogueState, sample: int = 0) -> str:
        return self._complete(self.pack.critic_messages(state), f"critic:{sample}",
                              self.config.critic_temperature)
