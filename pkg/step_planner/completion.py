"""Provide the chat completions client with record and replay cassettes."""
import hashlib
import json
import os
import socket
import tempfile
import threading
from dataclasses import dataclass, replace
from enum import Enum
from logging import Logger
from typing import Mapping, Optional
from urllib.error import HTTPError, URLError
from urllib.request import Request, urlopen

import arrow
import voluptuous as vol
from voluptuous.humanize import humanize_error

from .const import (
    DEFAULT_LLM_RETRIES,
    DEFAULT_LLM_TEMPERATURE,
    DEFAULT_LLM_TIMEOUT,
    ENV_LLM_API_KEY,
    ENV_LLM_BASE_URL,
    ENV_LLM_MODEL,
    ENV_LLM_RETRIES,
    ENV_LLM_TEMPERATURE,
    ENV_LLM_TIMEOUT,
)
from .decompose import DecomposerOutput, GrammarError

TIMEOUT = "Timeout"
HTTP_STATUS = "HttpStatus"
CASSETTE_MISS = "CassetteMiss"

FORMAT_REMINDER = (
    "Your previous answer did not follow the required format. "
    "Answer with exactly one line in the required format."
)

CONF_BASE_URL = "base_url"
CONF_MODEL = "model"
CONF_API_KEY = "api_key"
CONF_TIMEOUT = "timeout"
CONF_TEMPERATURE = "temperature"
CONF_RETRIES = "retries"

SETTINGS_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_BASE_URL, default=""): str,
        vol.Optional(CONF_MODEL, default=""): str,
        vol.Optional(CONF_API_KEY, default=""): str,
        vol.Optional(CONF_TIMEOUT, default=DEFAULT_LLM_TIMEOUT): vol.All(
            vol.Coerce(float), vol.Range(min=0, min_included=False)
        ),
        vol.Optional(
            CONF_TEMPERATURE, default=DEFAULT_LLM_TEMPERATURE
        ): vol.Coerce(float),
        vol.Optional(CONF_RETRIES, default=DEFAULT_LLM_RETRIES): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
    }
)

CASSETTE_SCHEMA = vol.Schema(
    {
        str: {
            vol.Required("request_digest"): str,
            vol.Required("response_text"): str,
            vol.Required("timestamp"): str,
        }
    }
)

_ENVIRONMENT = {
    CONF_BASE_URL: ENV_LLM_BASE_URL,
    CONF_MODEL: ENV_LLM_MODEL,
    CONF_API_KEY: ENV_LLM_API_KEY,
    CONF_TIMEOUT: ENV_LLM_TIMEOUT,
    CONF_TEMPERATURE: ENV_LLM_TEMPERATURE,
    CONF_RETRIES: ENV_LLM_RETRIES,
}


class TransportError(Exception):
    """Raised when a completion cannot be obtained."""

    def __init__(self, kind: str, detail: str = "", code: Optional[int] = None):
        """Construct TransportError.

        :param kind: Timeout, HttpStatus or CassetteMiss
        :type kind: str
        :param detail: Human readable cause
        :type detail: str
        :param code: The HTTP status for HttpStatus errors
        :type code: int
        """
        super().__init__(f"{kind}: {detail}" if detail else kind)
        self.kind = kind
        self.code = code


class TransportMode(str, Enum):
    """Where completions come from."""

    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


class ExpectedForm(str, Enum):
    """The single-line answer format a prompt asks for."""

    SUBGOAL_LINE = "SubgoalLine"
    VERDICT_TOKEN = "VerdictToken"
    ACTION_LINE = "ActionLine"


@dataclass(frozen=True)
class PromptBundle:
    """A rendered prompt."""

    system_text: str
    user_text: str
    expected_form: ExpectedForm

    def with_reminder(self) -> "PromptBundle":
        """Return the bundle with a format reminder appended."""
        return replace(self, user_text=f"{self.user_text}\n\n{FORMAT_REMINDER}")

    def digest(self, model: str = "", temperature: float = 0.0) -> str:
        """Return the content hash keying this bundle in a cassette."""
        payload = json.dumps(
            {
                "system": self.system_text,
                "user": self.user_text,
                "form": self.expected_form.value,
                "model": model,
                "temperature": temperature,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LLMSettings:
    """Endpoint configuration."""

    base_url: str = ""
    model: str = ""
    api_key: str = ""
    timeout: float = DEFAULT_LLM_TIMEOUT
    temperature: float = DEFAULT_LLM_TEMPERATURE
    retries: int = DEFAULT_LLM_RETRIES

    @classmethod
    def from_env(
        cls,
        environ: Mapping = os.environ,
        overrides: Optional[Mapping] = None,
    ) -> "LLMSettings":
        """Read settings from the environment, then apply overrides."""
        data = {
            key: environ[name]
            for key, name in _ENVIRONMENT.items()
            if name in environ
        }
        data.update(overrides or {})
        return cls(**SETTINGS_SCHEMA(data))

    @property
    def configured(self) -> bool:
        """Return True if an endpoint and model are set."""
        return bool(self.base_url and self.model)


class CassetteFileError(ValueError):
    """Raised when a cassette file cannot be read."""


class Cassette:
    """A JSON map from prompt hash to recorded response.

    Writes are serialized and replace the file atomically; reads do not
    lock.
    """

    def __init__(self, path: str):
        """Construct Cassette, loading path if it exists.

        :param path: The cassette file
        :type path: str
        :raises CassetteFileError: if the file is not a valid cassette
        """
        self.path = path
        self._lock = threading.Lock()
        self._entries = {}
        if os.path.exists(path):
            self._entries = self._load(path)

    @staticmethod
    def _load(path: str) -> dict:
        try:
            with open(path, encoding="utf-8") as file_handle:
                data = json.load(file_handle)
        except ValueError as error:
            raise CassetteFileError(f"{path}: {error}") from error
        try:
            return CASSETTE_SCHEMA(data)
        except vol.Invalid as error:
            raise CassetteFileError(
                f"{path}: {humanize_error(data, error)}"
            ) from error

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> Optional[str]:
        """Return the recorded response for key, if any."""
        entry = self._entries.get(key)
        return None if entry is None else entry["response_text"]

    def record(self, key: str, bundle: PromptBundle, response_text: str):
        """Store a response and persist the cassette."""
        with self._lock:
            self._entries[key] = {
                "request_digest": f"{bundle.expected_form.value}: "
                + bundle.user_text.splitlines()[0],
                "response_text": response_text,
                "timestamp": arrow.utcnow().isoformat(),
            }
            self._save()

    def _save(self):
        directory = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(directory, exist_ok=True)
        handle, temp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
        with os.fdopen(handle, "w", encoding="utf-8") as file_handle:
            json.dump(self._entries, file_handle, indent=2, sort_keys=True)
            file_handle.write("\n")
        os.replace(temp_path, self.path)


class CompletionClient:
    """CompletionClient class.

    The CompletionClient posts prompts to a chat completions endpoint. In
    record mode every answer is also written to the cassette; in replay
    mode answers come only from the cassette.
    """

    def __init__(
        self,
        logger: Logger,
        name: str,
        settings: LLMSettings,
        mode: TransportMode = TransportMode.LIVE,
        cassette: Optional[Cassette] = None,
    ):
        """Construct CompletionClient object.

        :param logger: The logger for reporting problems
        :type logger: Logger
        :param name: The name used when reporting problems
        :type name: str
        :param settings: The endpoint configuration
        :type settings: LLMSettings
        :param mode: live, record or replay
        :type mode: TransportMode
        :param cassette: Required for record and replay
        :type cassette: Cassette
        """
        if mode is not TransportMode.LIVE and cassette is None:
            raise ValueError(f"{mode.value} mode requires a cassette")
        self.logger = logger
        self.name = name
        self.settings = settings
        self.mode = mode
        self.cassette = cassette

    def complete(
        self, bundle: PromptBundle, mode: Optional[TransportMode] = None
    ) -> str:
        """Return the model's answer to bundle.

        :raises TransportError: Timeout, HttpStatus or CassetteMiss
        """
        mode = mode or self.mode
        key = bundle.digest(self.settings.model, self.settings.temperature)
        if mode is TransportMode.REPLAY:
            text = self.cassette.get(key)
            if text is None:
                self.logger.error(
                    "%s: No recorded answer for %s", self.name, key[:12]
                )
                raise TransportError(CASSETTE_MISS, key)
            return text
        text = self._post(bundle)
        if mode is TransportMode.RECORD:
            self.cassette.record(key, bundle, text)
        return text

    def _post(self, bundle: PromptBundle) -> str:
        if not self.settings.configured:
            raise TransportError(HTTP_STATUS, "no endpoint configured")
        body = {
            "model": self.settings.model,
            "temperature": self.settings.temperature,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
        }
        headers = {"Content-Type": "application/json"}
        if self.settings.api_key:
            headers["Authorization"] = f"Bearer {self.settings.api_key}"
        request = Request(
            self.settings.base_url.rstrip("/") + "/chat/completions",
            data=json.dumps(body).encode("utf-8"),
            headers=headers,
            method="POST",
        )
        self.logger.debug("%s: Requesting %s", self.name, bundle.expected_form)
        try:
            with urlopen(request, timeout=self.settings.timeout) as conn:
                raw = conn.read()
        except HTTPError as http_error:
            self.logger.error(
                "%s: Completion request failed: %s",
                self.name,
                http_error.reason,
            )
            raise TransportError(
                HTTP_STATUS, str(http_error.reason), http_error.code
            ) from http_error
        except URLError as url_error:
            self.logger.error(
                "%s: Failed to reach endpoint: %s", self.name, url_error.reason
            )
            raise TransportError(TIMEOUT, str(url_error.reason)) from url_error
        except socket.timeout as timeout_error:
            self.logger.error("%s: Completion request timed out", self.name)
            raise TransportError(TIMEOUT, str(timeout_error)) from timeout_error
        try:
            payload = json.loads(raw.decode("utf-8"))
        except ValueError as value_error:
            self.logger.error(
                "%s: Malformed completion payload: %s", self.name, value_error
            )
            raise TransportError(
                HTTP_STATUS, "malformed completion payload"
            ) from value_error
        try:
            return payload["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as error:
            raise TransportError(
                HTTP_STATUS, "malformed completion payload"
            ) from error


def _single_line(raw: str) -> Optional[str]:
    lines = [line.strip() for line in raw.strip().splitlines() if line.strip()]
    return lines[0] if len(lines) == 1 else None


def parse_subgoal(raw: str) -> DecomposerOutput:
    """Parse `SUBGOAL: <text>` or `DONE`.

    :raises GrammarError: for anything else
    """
    line = _single_line(raw)
    if line is not None:
        if line.upper() == "DONE":
            return DecomposerOutput.end()
        head, _, text = line.partition(":")
        if head.strip().upper() == "SUBGOAL" and text.strip():
            return DecomposerOutput.subgoal(text)
    raise GrammarError(raw)


def parse_action_line(raw: str) -> DecomposerOutput:
    """Parse `ACTION: <text>` or `DONE`.

    :raises GrammarError: for anything else
    """
    line = _single_line(raw)
    if line is not None:
        if line.upper() == "DONE":
            return DecomposerOutput.end()
        head, _, text = line.partition(":")
        if head.strip().upper() == "ACTION" and text.strip():
            return DecomposerOutput.subgoal(text)
    raise GrammarError(raw)


def parse_verdict(raw: str) -> bool:
    """Parse `YES` or `NO`, case-insensitively.

    :raises GrammarError: for anything else
    """
    token = raw.strip().upper()
    if token == "YES":
        return True
    if token == "NO":
        return False
    raise GrammarError(raw)
