"""Aggregator RSS polling: feed URLs, tolerant parsing, new-link detection."""

from __future__ import annotations

import datetime as dt
import email.utils
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from urllib.parse import urlsplit

from newstweet.errors import ArchiveError, ArchiveUnavailable, InvalidUrl, MalformedFeed
from newstweet.sections import DEFAULT_TOKENS, Section
from newstweet.timeutil import isoformat, parse_iso, utcnow
from newstweet.urls import DEFAULT_TRACKER_PARAMS, canonicalize_url

log = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://news.google.com"
DEFAULT_PATH_ARCHETYPE = "/news/rss/headlines/section/topic/{token}"


@dataclass(frozen=True)
class FeedItem:
    link: str
    title: str
    published_at: dt.datetime
    section: Section
    seen_at: dt.datetime

    def to_record(self) -> dict:
        return {
            "link": self.link,
            "title": self.title,
            "published_at": isoformat(self.published_at),
            "section": self.section.code,
            "seen_at": isoformat(self.seen_at),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FeedItem":
        return cls(
            link=rec["link"],
            title=rec.get("title", ""),
            published_at=parse_iso(rec["published_at"]),
            section=Section.from_code(rec["section"]),
            seen_at=parse_iso(rec["seen_at"]),
        )


class FeedItems(list):
    """Parsed items plus bookkeeping about what was dropped.

    ``skipped`` counts items without a usable link; ``recovered`` is true
    when the document was not well-formed and items were salvaged one by one.
    """

    def __init__(self, items=(), skipped=0, recovered=False):
        super().__init__(items)
        self.skipped = skipped
        self.recovered = recovered


def build_feed_url(section: Section, base_url: str = DEFAULT_BASE_URL,
                   path_archetype: str = DEFAULT_PATH_ARCHETYPE, tokens=None) -> str:
    token = (tokens or DEFAULT_TOKENS)[section]
    return base_url.rstrip("/") + path_archetype.format(token=token)


def _is_absolute(url: str) -> bool:
    parts = urlsplit(url)
    return parts.scheme in ("http", "https") and bool(parts.netloc)


def _parse_date(text, fallback):
    if not text:
        return fallback
    try:
        ts = email.utils.parsedate_to_datetime(text.strip())
    except (TypeError, ValueError, IndexError):
        try:
            return parse_iso(text.strip())
        except ValueError:
            return fallback
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=dt.timezone.utc)
    return ts.astimezone(dt.timezone.utc)


def _item_from_element(el, section, seen_at):
    link = (el.findtext("link") or "").strip()
    if not link or not _is_absolute(link):
        return None
    return FeedItem(
        link=link,
        title=(el.findtext("title") or "").strip(),
        published_at=_parse_date(el.findtext("pubDate"), seen_at),
        section=section,
        seen_at=seen_at,
    )


_ITEM_RE = re.compile(rb"<item[\s>].*?</item\s*>", re.S | re.I)


def _byte_offset(data: bytes, line: int, column: int) -> int:
    # expat reports 1-based lines and 0-based columns
    offset = 0
    for _ in range(line - 1):
        nl = data.find(b"\n", offset)
        if nl < 0:
            return len(data)
        offset = nl + 1
    return min(offset + column, len(data))


def parse_feed(xml_bytes: bytes, section: Section, seen_at: dt.datetime | None = None) -> FeedItems:
    """Parse an RSS 2.0 document into :class:`FeedItem` objects, in order.

    Documents that are not well-formed are salvaged item by item as long as
    a ``<channel>`` is present; otherwise :class:`MalformedFeed` is raised.
    """
    seen_at = seen_at or utcnow()
    items, skipped = [], 0
    try:
        root = ET.fromstring(xml_bytes)
    except ET.ParseError as exc:
        offset = _byte_offset(xml_bytes, *exc.position)
        if not re.search(rb"<channel[\s>]", xml_bytes):
            raise MalformedFeed("unparseable feed without a channel", offset) from None
        log.warning("feed for %s not well-formed at byte %d, salvaging items", section.token, offset)
        for match in _ITEM_RE.finditer(xml_bytes):
            try:
                el = ET.fromstring(match.group(0))
            except ET.ParseError:
                skipped += 1
                continue
            item = _item_from_element(el, section, seen_at)
            if item is None:
                skipped += 1
            else:
                items.append(item)
        return FeedItems(items, skipped, recovered=True)

    channel = root if root.tag == "channel" else root.find("channel")
    if channel is None:
        raise MalformedFeed(f"no <channel> in <{root.tag}> document", 0)
    for el in channel.iter("item"):
        item = _item_from_element(el, section, seen_at)
        if item is None:
            skipped += 1
        else:
            items.append(item)
    return FeedItems(items, skipped)


class FeedTracker:
    """Poll section feeds and queue the links never seen before.

    Seen links live in the archive as ``queue_item`` records keyed by their
    canonical URL, so detection survives restarts.
    """

    def __init__(self, archive, transport, base_url=DEFAULT_BASE_URL,
                 path_archetype=DEFAULT_PATH_ARCHETYPE, sections=None, tokens=None,
                 tracker_params=DEFAULT_TRACKER_PARAMS, clock=utcnow):
        self.archive = archive
        self.transport = transport
        self.base_url = base_url
        self.path_archetype = path_archetype
        self.sections = list(sections or Section)
        self.tokens = {**DEFAULT_TOKENS, **(tokens or {})}
        self.tracker_params = tracker_params
        self.clock = clock

    def feed_url(self, section: Section) -> str:
        return build_feed_url(section, self.base_url, self.path_archetype, self.tokens)

    def ingest_items(self, items) -> list[FeedItem]:
        """Record every item's canonical link; return the previously unseen ones."""
        fresh = []
        try:
            for item in items:
                try:
                    key = canonicalize_url(item.link, self.tracker_params)
                except InvalidUrl:
                    log.warning("dropping feed link %r", item.link)
                    continue
                rec = {**item.to_record(), "canonical_link": key, "status": "pending"}
                if self.archive.upsert("queue_item", key, rec, overwrite=False) == "inserted":
                    fresh.append(item)
        except ArchiveUnavailable:
            raise
        except (ArchiveError, OSError) as exc:
            raise ArchiveUnavailable(str(exc)) from exc
        return fresh

    def poll_section(self, section: Section):
        """Fetch and parse one section feed; returns ``(items, new_items)``."""
        url = self.feed_url(section)
        resp = self.transport.get(url)
        if not 200 <= resp.status <= 299:
            raise MalformedFeed(f"feed {url} answered HTTP {resp.status}", 0)
        items = parse_feed(resp.body, section, seen_at=self.clock())
        return items, self.ingest_items(items)

    def poll(self):
        """Poll every configured section; failures of one section don't stop the rest."""
        seen, fresh, failed = 0, [], []
        for section in self.sections:
            try:
                items, new = self.poll_section(section)
            except ArchiveUnavailable:
                raise
            except Exception as exc:  # one broken feed must not stop the poll
                log.error("poll %s failed: %s", section.token, exc)
                failed.append(section)
                continue
            log.info("poll %s: %d items, %d new", section.token, len(items), len(new))
            seen += len(items)
            fresh.extend(new)
        return seen, fresh, failed
