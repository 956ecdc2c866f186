"""Minimal chat-completion HTTP client; the only network-touching module.

POSTs {base_url}/chat/completions with the de-facto request shape
({model, messages: [{role, content}]}) and reads
choices[0].message.content. Transport errors and HTTP 5xx/429 retry with
exponential backoff (base 1s, factor 2) up to max_retries; other 4xx never
retry. The API key is read from the environment and never echoed into logs
or exception messages.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from urllib.parse import urlparse

import requests

from .errors import ConfigError, ProtocolError, TransportError

RETRY_BASE_SECONDS = 1.0
RETRY_FACTOR = 2.0
_BODY_EXCERPT = 200


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key_env_var: str = ""
    timeout_seconds: float = 30.0
    max_retries: int = 2

    def __post_init__(self):
        parsed = urlparse(self.base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ConfigError(f"base_url {self.base_url!r} is not a valid http(s) URL")
        if self.timeout_seconds <= 0:
            raise ConfigError("timeout_seconds must be positive")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be nonnegative")

    @classmethod
    def from_dict(cls, doc: dict) -> "EndpointConfig":
        try:
            return cls(
                base_url=doc["base_url"],
                model_name=doc["model_name"],
                api_key_env_var=doc.get("api_key_env_var", ""),
                timeout_seconds=float(doc.get("timeout_seconds", 30.0)),
                max_retries=int(doc.get("max_retries", 2)),
            )
        except KeyError as exc:
            raise ConfigError(f"endpoint config missing required key {exc}") from exc


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown chat role {self.role!r}")


def _redact(text: str, secret: str) -> str:
    return text.replace(secret, "<redacted>") if secret else text


def chat_complete(
    config: EndpointConfig,
    messages: list[ChatMessage],
    sleeper=time.sleep,
) -> str:
    """Send messages, return the assistant text. `sleeper` is injectable so
    tests don't wait out real backoffs."""
    if not messages:
        raise ValueError("messages must be non-empty")
    api_key = ""
    if config.api_key_env_var:
        api_key = os.environ.get(config.api_key_env_var, "")
        if not api_key:
            raise ConfigError(
                f"API key environment variable {config.api_key_env_var!r} is not set"
            )

    url = config.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    payload = {
        "model": config.model_name,
        "messages": [{"role": m.role, "content": m.content} for m in messages],
    }

    attempts: list[str] = []
    max_attempts = config.max_retries + 1
    for attempt in range(max_attempts):
        if attempt:
            sleeper(RETRY_BASE_SECONDS * RETRY_FACTOR ** (attempt - 1))
        try:
            response = requests.post(
                url, json=payload, headers=headers, timeout=config.timeout_seconds
            )
        except requests.RequestException as exc:
            attempts.append(f"attempt {attempt + 1}: transport error: "
                            f"{_redact(str(exc), api_key)}")
            continue

        if response.status_code == 200:
            return _parse_completion(response)
        if response.status_code == 429 or response.status_code >= 500:
            attempts.append(f"attempt {attempt + 1}: HTTP {response.status_code}")
            continue
        raise ProtocolError(
            f"HTTP {response.status_code}: "
            f"{_redact(response.text[:_BODY_EXCERPT], api_key)}"
        )

    raise TransportError(
        f"all {max_attempts} attempts failed: {'; '.join(attempts)}", attempts=attempts
    )


def _parse_completion(response) -> str:
    try:
        body = response.json()
        content = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(
            f"unparseable completion response ({exc}): {response.text[:_BODY_EXCERPT]!r}"
        ) from exc
    if not isinstance(content, str):
        raise ProtocolError("completion content is not text")
    return content
