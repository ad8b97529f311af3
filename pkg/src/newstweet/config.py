"""Pipeline configuration: an INI-style ``key = value`` file with sections.

Keys are addressed as ``section.key`` (``fetch.parallelism``); keys of the
``[general]`` section are addressed bare (``data_dir``, ``mode``,
``log_level``). Unknown keys are rejected. Relative paths in a file are
resolved against the file's directory.

Example::

    [general]
    data_dir = data
    mode = fixture

    [fetch]
    fixture_dir = fixtures/http
    per_host_delay_ms = 0

    [social]
    mock_file = fixtures/mock_users.json
"""

from __future__ import annotations

import configparser
import secrets
from pathlib import Path

from newstweet.errors import ConfigError
from newstweet.feeds import DEFAULT_BASE_URL, DEFAULT_PATH_ARCHETYPE
from newstweet.sections import Section
from newstweet.transport import DEFAULT_USER_AGENT

DEFAULTS = {
    "data_dir": "data",
    "mode": "fixture",
    "log_level": "INFO",
    "feeds.base_url": DEFAULT_BASE_URL,
    "feeds.path_archetype": DEFAULT_PATH_ARCHETYPE,
    "feeds.sections": "B,E,H,N,S,T,W,X",
    "feeds.poll_interval_secs": 300,
    "fetch.max_redirects": 10,
    "fetch.timeout_secs": 30.0,
    "fetch.per_host_delay_ms": 1000,
    "fetch.parallelism": 8,
    "fetch.user_agent": DEFAULT_USER_AGENT,
    "fetch.fixture_dir": "",
    "fetch.tracker_params": "utm_*,fbclid,gclid",
    "social.mock_file": "",
    "social.base_url": "",
    "social.requests_per_window": 900,
    "social.window_secs": 900,
    "social.batch_size": 100,
    "social.page_size": 200,
    "social.timeline_cap": 3200,
    "social.retries": 3,
    "social.backoff_secs": 2.0,
    "scheduler.policy": "epoch",
    "scheduler.window_secs": 900,
    "scheduler.seed": "",
    "scheduler.batch_size": 50,
    "scheduler.starvation_windows": "",
    "analytics.min_articles": 10,
    "analytics.top_k": 5,
}

PATH_KEYS = ("data_dir", "fetch.fixture_dir", "social.mock_file")
CHOICES = {
    "mode": ("fixture", "live"),
    "scheduler.policy": ("epoch", "priority"),
    "log_level": ("DEBUG", "INFO", "WARNING", "ERROR"),
}


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(value, str):
        value = value.strip()
    try:
        if isinstance(default, bool):
            return str(value).lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}") from None
    return str(value)


class PipelineConfig:
    """Validated configuration values; read with ``config["fetch.parallelism"]``."""

    def __init__(self, values=None, base_dir=None, validate=True):
        self.values = dict(DEFAULTS)
        self.base_dir = Path(base_dir) if base_dir else Path.cwd()
        for key in PATH_KEYS:
            if DEFAULTS[key]:
                self.set(key, DEFAULTS[key])
        for key, value in (values or {}).items():
            self.set(key, value)
        if validate:
            self.validate()

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        value = _coerce(key, value)
        if key in PATH_KEYS and value:
            path = Path(value).expanduser()
            value = str(path if path.is_absolute() else self.base_dir / path)
        self.values[key] = value

    def __getitem__(self, key):
        return self.values[key]

    def validate(self):
        for key, options in CHOICES.items():
            value = self.values[key]
            if key == "log_level":
                value = value.upper()
                self.values[key] = value
            if value not in options:
                raise ConfigError(f"{key} must be one of {', '.join(options)}, got {value!r}")
        for key in ("fetch.parallelism", "social.batch_size", "social.page_size",
                    "social.window_secs", "scheduler.window_secs", "social.retries"):
            if self.values[key] <= 0:
                raise ConfigError(f"{key} must be positive")
        for key in ("fetch.max_redirects", "fetch.per_host_delay_ms", "scheduler.batch_size",
                    "social.requests_per_window", "analytics.min_articles"):
            if self.values[key] < 0:
                raise ConfigError(f"{key} must be >= 0")
        if self.values["social.batch_size"] > 100 or self.values["social.page_size"] > 200:
            raise ConfigError("social.batch_size <= 100 and social.page_size <= 200")
        self.sections()
        if self.values["scheduler.seed"] and not self.values["scheduler.seed"].lstrip("-").isdigit():
            raise ConfigError("scheduler.seed must be an integer")
        if self.values["scheduler.starvation_windows"] and \
                not self.values["scheduler.starvation_windows"].isdigit():
            raise ConfigError("scheduler.starvation_windows must be a positive integer")
        if self.values["mode"] == "fixture":
            if not self.values["fetch.fixture_dir"]:
                raise ConfigError("fixture mode needs fetch.fixture_dir")
            if not (self.values["social.mock_file"] or self.values["social.base_url"]):
                raise ConfigError("fixture mode needs social.mock_file or social.base_url")

    def sections(self):
        """``(sections, tokens)`` from ``feeds.sections`` (``CODE`` or ``CODE:TOKEN``)."""
        sections, tokens = [], {}
        for entry in self.values["feeds.sections"].split(","):
            entry = entry.strip()
            if not entry:
                continue
            code, _, token = entry.partition(":")
            try:
                section = Section.from_code(code)
            except ValueError as exc:
                raise ConfigError(f"feeds.sections: {exc}") from None
            sections.append(section)
            if token:
                tokens[section] = token.strip()
        return sections, tokens

    def tracker_params(self):
        return tuple(p.strip() for p in self.values["fetch.tracker_params"].split(",") if p.strip())

    def seed(self) -> int | None:
        value = self.values["scheduler.seed"]
        return int(value) if value else None

    @staticmethod
    def new_seed() -> int:
        return secrets.randbits(63)

    @classmethod
    def load(cls, path=None, overrides=()):
        """Read ``path`` (optional) and apply ``key=value`` override strings."""
        values = {}
        base_dir = None
        if path is not None:
            path = Path(path)
            parser = configparser.ConfigParser(interpolation=None)
            try:
                with open(path, encoding="utf-8") as fh:
                    parser.read_file(fh)
            except (OSError, configparser.Error) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            base_dir = path.resolve().parent
            for section in parser.sections():
                for key, value in parser.items(section):
                    values[key if section == "general" else f"{section}.{key}"] = value
        config = cls(values, base_dir, validate=False)
        # override paths are relative to the working directory
        config.base_dir = Path.cwd()
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            config.set(key.strip(), value)
        config.validate()
        return config
