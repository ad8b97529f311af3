"""HTTP transports: live (urllib) and file-backed fixtures.

Transports never follow redirects themselves; the fetcher does, so that
every hop passes through the per-host politeness gate.

Fixture files live in one directory, named by the SHA-256 hex digest of the
exact request URL. Each file holds a raw HTTP/1.1 response: status line,
headers, blank line, body bytes. Files are read and written bit-exact.
"""

from __future__ import annotations

import hashlib
import logging
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

DEFAULT_USER_AGENT = "newstweet-crawler/0.1 (+research; embeds in news)"


class TransportError(Exception):
    """Network-level failure: no HTTP status was received."""


@dataclass
class Response:
    url: str
    status: int
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""

    def header(self, name: str, default=None):
        name = name.lower()
        for key, value in self.headers.items():
            if key.lower() == name:
                return value
        return default

    @property
    def is_redirect(self) -> bool:
        return self.status in (301, 302, 303, 307, 308) and self.header("location") is not None


def url_digest(url: str) -> str:
    return hashlib.sha256(url.encode("utf-8")).hexdigest()


def encode_response(status: int, reason: str, headers: dict[str, str], body: bytes) -> bytes:
    lines = [f"HTTP/1.1 {status} {reason}".encode("latin-1")]
    for key, value in headers.items():
        lines.append(f"{key}: {value}".encode("latin-1"))
    return b"\r\n".join(lines) + b"\r\n\r\n" + body


def decode_response(url: str, raw: bytes) -> Response:
    head, sep, body = raw.partition(b"\r\n\r\n")
    if not sep:
        head, sep, body = raw.partition(b"\n\n")
    lines = head.decode("latin-1").splitlines()
    if not lines or not lines[0].startswith("HTTP/"):
        raise TransportError(f"bad fixture response for {url}")
    status = int(lines[0].split()[1])
    headers = {}
    for line in lines[1:]:
        key, _, value = line.partition(":")
        headers[key.strip()] = value.strip()
    return Response(url=url, status=status, headers=headers, body=body)


class FixtureTransport:
    """Serve responses from a fixture directory; unknown URLs fail like a
    dead host."""

    def __init__(self, root):
        self.root = Path(root)
        self.requests: list[str] = []

    def path_for(self, url: str) -> Path:
        return self.root / url_digest(url)

    def get(self, url: str, headers=None, timeout=None) -> Response:
        self.requests.append(url)
        path = self.path_for(url)
        if not path.exists():
            raise TransportError(f"no fixture for {url}")
        return decode_response(url, path.read_bytes())

    def record(self, url: str, status: int, body: bytes = b"", headers=None,
               reason: str = "") -> Path:
        """Write a fixture response for ``url``; also appends to ``index.tsv``."""
        self.root.mkdir(parents=True, exist_ok=True)
        headers = dict(headers or {})
        if body and not any(k.lower() == "content-type" for k in headers):
            headers["Content-Type"] = "text/html; charset=utf-8"
        path = self.path_for(url)
        path.write_bytes(encode_response(status, reason or _REASONS.get(status, "Status"),
                                         headers, body))
        with open(self.root / "index.tsv", "a", encoding="utf-8") as fh:
            fh.write(f"{path.name}\t{status}\t{url}\n")
        return path


class _NoRedirect(urllib.request.HTTPRedirectHandler):
    def redirect_request(self, req, fp, code, msg, headers, newurl):
        return None


class LiveTransport:
    def __init__(self, user_agent: str = DEFAULT_USER_AGENT, timeout: float = 30.0):
        self.user_agent = user_agent
        self.timeout = timeout
        self._opener = urllib.request.build_opener(_NoRedirect)

    def get(self, url: str, headers=None, timeout=None) -> Response:
        req = urllib.request.Request(url, headers={"User-Agent": self.user_agent,
                                                   **(headers or {})})
        try:
            with self._opener.open(req, timeout=timeout or self.timeout) as resp:
                return Response(url, resp.status, dict(resp.headers.items()), resp.read())
        except urllib.error.HTTPError as exc:
            # redirects and error statuses arrive here with the opener above
            return Response(url, exc.code, dict(exc.headers.items()), exc.read() or b"")
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise TransportError(f"{url}: {exc}") from exc


_REASONS = {200: "OK", 301: "Moved Permanently", 302: "Found", 404: "Not Found",
            500: "Internal Server Error"}
