"""Resolve newly seen feed links to publisher pages and store their HTML."""

from __future__ import annotations

import datetime as dt
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from urllib.parse import urljoin

from newstweet.errors import InvalidUrl
from newstweet.feeds import FeedItem
from newstweet.sections import Section
from newstweet.timeutil import isoformat, parse_iso, utcnow
from newstweet.transport import TransportError
from newstweet.urls import (
    DEFAULT_TRACKER_PARAMS,
    FETCH_FAILED,
    canonicalize_url,
    classify_article,
    domain_of,
    host_of,
    url_id,
)

log = logging.getLogger(__name__)


@dataclass
class Article:
    id: str
    canonical_url: str
    domain: str
    section: Section
    fetched_at: dt.datetime
    http_status: int
    classification: str
    html_ref: str | None = None
    published_at: dt.datetime | None = None
    feed_link: str = ""

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "canonical_url": self.canonical_url,
            "domain": self.domain,
            "section": self.section.code,
            "fetched_at": isoformat(self.fetched_at),
            "http_status": self.http_status,
            "classification": self.classification,
            "html_ref": self.html_ref,
            "published_at": isoformat(self.published_at) if self.published_at else None,
            "feed_link": self.feed_link,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Article":
        return cls(
            id=rec["id"],
            canonical_url=rec["canonical_url"],
            domain=rec["domain"],
            section=Section.from_code(rec["section"]),
            fetched_at=parse_iso(rec["fetched_at"]),
            http_status=rec["http_status"],
            classification=rec["classification"],
            html_ref=rec.get("html_ref"),
            published_at=parse_iso(rec["published_at"]) if rec.get("published_at") else None,
            feed_link=rec.get("feed_link", ""),
        )


class HostGate:
    """Per-host politeness: one request in flight per host and a minimum
    delay between consecutive requests to the same host."""

    def __init__(self, delay_secs: float = 1.0, clock=time.monotonic, sleep=time.sleep):
        self.delay = delay_secs
        self.clock = clock
        self.sleep = sleep
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}
        self._last: dict[str, float] = {}

    def _lock_for(self, host):
        with self._guard:
            return self._locks.setdefault(host, threading.Lock())

    def request(self, host, fn):
        with self._lock_for(host):
            last = self._last.get(host)
            if last is not None:
                wait = last + self.delay - self.clock()
                if wait > 0:
                    self.sleep(wait)
            try:
                return fn()
            finally:
                self._last[host] = self.clock()


class ArticleFetcher:
    def __init__(self, archive, transport, max_redirects=10, timeout_secs=30.0,
                 per_host_delay_ms=1000, parallelism=8, tracker_params=DEFAULT_TRACKER_PARAMS,
                 clock=utcnow, gate: HostGate | None = None):
        self.archive = archive
        self.transport = transport
        self.max_redirects = max_redirects
        self.timeout = timeout_secs
        self.parallelism = max(1, parallelism)
        self.tracker_params = tracker_params
        self.clock = clock
        self.gate = gate or HostGate(per_host_delay_ms / 1000.0)

    def _get(self, url):
        return self.gate.request(host_of(url),
                                 lambda: self.transport.get(url, timeout=self.timeout))

    def fetch(self, item: FeedItem) -> Article:
        """Follow redirects and store the body; never raises for network
        or HTTP failures, which come back as ``fetch_failed`` articles."""
        url = item.link
        status = 0
        body = None
        try:
            for _ in range(self.max_redirects + 1):
                resp = self._get(url)
                status = resp.status
                if resp.is_redirect:
                    url = urljoin(url, resp.header("location"))
                    continue
                if 200 <= resp.status <= 299:
                    body = resp.body
                break
            else:
                log.warning("too many redirects for %s", item.link)
                status = 0
        except TransportError as exc:
            log.warning("fetch %s failed: %s", url, exc)
            status = 0

        try:
            canonical = canonicalize_url(url, self.tracker_params)
        except InvalidUrl:
            canonical = url
        html_ref = self.archive.put_blob(body) if body is not None else None
        classification = classify_article(canonical) if html_ref else FETCH_FAILED
        return Article(
            id=url_id(canonical),
            canonical_url=canonical,
            domain=domain_of(canonical),
            section=item.section,
            fetched_at=self.clock(),
            http_status=status,
            classification=classification,
            html_ref=html_ref,
            published_at=item.published_at,
            feed_link=item.link,
        )

    def record(self, item: FeedItem, article: Article) -> str:
        """Persist the article (first writer wins) and close the queue item."""
        outcome = self.archive.upsert("article", article.id, article.to_record(),
                                      overwrite=False)
        key = canonicalize_url(item.link, self.tracker_params)
        queued = self.archive.get("queue_item", key) or {
            **item.to_record(), "canonical_link": key}
        queued.update(status="done", article_id=article.id)
        self.archive.upsert("queue_item", key, queued)
        return outcome

    def resolve_and_fetch(self, item: FeedItem) -> Article:
        article = self.fetch(item)
        self.record(item, article)
        return article

    def fetch_all(self, items):
        """Fetch concurrently, then record in input order so that the
        outcome (which section claims a shared article) is deterministic.

        Returns a list of ``(article, outcome)`` pairs.
        """
        items = list(items)
        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            articles = list(pool.map(self.fetch, items))
        return [(a, self.record(i, a)) for i, a in zip(items, articles)]

    def pending(self) -> list[FeedItem]:
        return [FeedItem.from_record(r) for r in self.archive.scan("queue_item", status="pending")]
