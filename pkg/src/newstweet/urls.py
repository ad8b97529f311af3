"""URL canonicalization and host helpers.

The canonical form is the deduplication key for articles, so it must be
idempotent: canonicalizing a canonical URL returns it unchanged. Query
parameters are filtered and reordered on their raw (still percent-encoded)
text so no re-encoding ever happens.
"""

from __future__ import annotations

import fnmatch
import hashlib
from urllib.parse import unquote_plus, urlsplit, urlunsplit

from newstweet.errors import InvalidUrl

DEFAULT_TRACKER_PARAMS = ("utm_*", "fbclid", "gclid")
DEFAULT_PORTS = {"http": 80, "https": 443}
YOUTUBE_HOSTS = frozenset({"youtube.com", "www.youtube.com", "youtu.be", "m.youtube.com"})

PUBLISHER_PAGE = "publisher_page"
YOUTUBE_PAGE = "youtube_page"
FETCH_FAILED = "fetch_failed"


def canonicalize_url(raw: str, tracker_params=DEFAULT_TRACKER_PARAMS) -> str:
    """Normalize an absolute URL.

    Lowercases scheme and host, drops default ports and the fragment,
    removes query keys matching ``tracker_params`` (shell-style patterns)
    and sorts the remaining query keys.

    >>> canonicalize_url("HTTP://Ex.com:80/a?utm_source=x&b=1#frag")
    'http://ex.com/a?b=1'
    """
    if not isinstance(raw, str):
        raise InvalidUrl(f"not a string: {raw!r}")
    raw = raw.strip()
    try:
        parts = urlsplit(raw)
        port = parts.port
    except ValueError as exc:
        raise InvalidUrl(f"{raw!r}: {exc}") from None
    scheme = parts.scheme.lower()
    host = (parts.hostname or "").lower()
    if not scheme or not host:
        raise InvalidUrl(f"not an absolute URL: {raw!r}")

    netloc = host
    if ":" in host:
        netloc = f"[{host}]"
    if port is not None and DEFAULT_PORTS.get(scheme) != port:
        netloc = f"{netloc}:{port}"
    userinfo = parts.netloc.rpartition("@")[0] if "@" in parts.netloc else ""
    if userinfo:
        netloc = f"{userinfo}@{netloc}"

    path = parts.path or "/"
    query = _clean_query(parts.query, tracker_params)
    return urlunsplit((scheme, netloc, path, query, ""))


def _clean_query(query: str, tracker_params) -> str:
    if not query:
        return ""
    kept = []
    for pair in query.split("&"):
        if not pair:
            continue
        key = pair.split("=", 1)[0]
        name = unquote_plus(key).lower()
        if any(fnmatch.fnmatchcase(name, pat.lower()) for pat in tracker_params):
            continue
        kept.append((key, pair))
    # stable: repeated keys keep their relative order
    kept.sort(key=lambda kv: kv[0])
    return "&".join(pair for _, pair in kept)


def host_of(url: str) -> str:
    return (urlsplit(url).hostname or "").lower()


def domain_of(url: str) -> str:
    """Host used for domain-level statistics: lowercase, no port, no ``www.``.

    Subdomains other than ``www`` are kept (``nba.nbcsports.com`` stays).
    """
    host = host_of(url)
    if host.startswith("www."):
        host = host[4:]
    return host


def classify_article(final_url: str) -> str:
    if host_of(final_url) in YOUTUBE_HOSTS:
        return YOUTUBE_PAGE
    return PUBLISHER_PAGE


def url_id(url: str) -> str:
    """Stable identifier for a canonical URL (hex SHA-256 prefix)."""
    return hashlib.sha256(url.encode("utf-8")).hexdigest()[:32]
