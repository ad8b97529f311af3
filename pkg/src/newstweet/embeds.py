"""Detect social-media embeds in article HTML.

Detection rules (``RULES_VERSION`` tracks changes to them):

========= ================================================================
platform  markup
========= ================================================================
twitter   ``blockquote`` whose class contains ``twitter-tweet``; or an
          ``iframe``/``a`` pointing at ``platform.twitter.com/embed``
youtube   ``iframe`` on youtube.com / youtube-nocookie.com with ``/embed/``
          in the path; or a ``youtu.be`` link inside an element whose class
          contains ``embed``
instagram ``blockquote`` whose class contains ``instagram-media``
facebook  ``div``/``iframe`` referencing ``facebook.com/plugins/post``, or
          class ``fb-post``
reddit    ``blockquote`` whose class contains ``reddit-embed``/``reddit-card``
tiktok    ``blockquote`` whose class contains ``tiktok-embed``
========= ================================================================

Markup found inside an embed container belongs to that embed: a quoted or
retweeted status shown inside a tweet blockquote does not count separately.

Tweet-id grammar accepted by :func:`parse_tweet_id`:

=================================================  ===========
URL                                                tweet id
=================================================  ===========
``https://twitter.com/a/status/1128012345?s=20``   1128012345
``https://mobile.twitter.com/a/statuses/99``       99
``https://twitter.com/i/web/status/42#frag``       42
``https://twitter.com/a``                          none
``https://nottwitter.com/a/status/1``              none
=================================================  ===========
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from html.parser import HTMLParser
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

RULES_VERSION = 1

PLATFORMS = ("twitter", "youtube", "instagram", "facebook", "reddit", "tiktok")

_YOUTUBE_EMBED_HOSTS = {"youtube.com", "www.youtube.com", "youtube-nocookie.com",
                        "www.youtube-nocookie.com"}
_BLOCKQUOTE_CLASSES = (
    ("twitter-tweet", "twitter"),
    ("instagram-media", "instagram"),
    ("reddit-embed", "reddit"),
    ("reddit-card", "reddit"),
    ("tiktok-embed", "tiktok"),
)


@dataclass(frozen=True)
class Embed:
    article_id: str
    platform: str
    source_url: str
    tweet_id: str | None
    position: int

    def to_record(self) -> dict:
        return {
            "article_id": self.article_id,
            "platform": self.platform,
            "source_url": self.source_url,
            "tweet_id": self.tweet_id,
            "position": self.position,
            "rules_version": RULES_VERSION,
        }


def _host(url: str) -> str:
    try:
        return (urlsplit(url.strip()).hostname or "").lower()
    except ValueError:
        return ""


def _is_twitter_host(host: str) -> bool:
    return host == "twitter.com" or host.endswith(".twitter.com")


def parse_tweet_id(url: str | None) -> str | None:
    if not url:
        return None
    try:
        parts = urlsplit(url.strip())
    except ValueError:
        return None
    if not _is_twitter_host((parts.hostname or "").lower()):
        return None
    segments = [s for s in parts.path.split("/") if s]
    for i, seg in enumerate(segments[:-1]):
        if seg in ("status", "statuses"):
            candidate = segments[i + 1]
            if candidate.isascii() and candidate.isdigit():
                return candidate
            return None
    return None


def _twitter_widget_id(url: str) -> str | None:
    """Tweet id from a ``platform.twitter.com/embed/...?id=N`` widget URL."""
    try:
        ids = parse_qs(urlsplit(url.strip()).query).get("id", [])
    except ValueError:
        return None
    for candidate in ids:
        if candidate.isascii() and candidate.isdigit():
            return candidate
    return None


def _is_twitter_widget(url: str) -> bool:
    try:
        parts = urlsplit(url.strip())
    except ValueError:
        return False
    return (parts.hostname or "").lower() == "platform.twitter.com" and parts.path.startswith("/embed")


def _is_youtube_iframe(src: str) -> bool:
    try:
        parts = urlsplit(src.strip())
    except ValueError:
        return False
    return (parts.hostname or "").lower() in _YOUTUBE_EMBED_HOSTS and "/embed/" in parts.path


def _is_facebook_post(url: str) -> bool:
    return "facebook.com/plugins/post" in url


class _Container:
    __slots__ = ("tag", "depth", "platform", "position", "attrs", "links")

    def __init__(self, tag, platform, position, attrs):
        self.tag = tag
        self.depth = 1
        self.platform = platform
        self.position = position
        self.attrs = attrs
        self.links = []


class _EmbedScanner(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.found: list[tuple[int, str, str, str | None]] = []
        self.container: _Container | None = None
        # open elements whose class mentions "embed": [tag, depth]
        self.wrappers: list[list] = []
        self.next_position = 0

    def _emit(self, platform, source_url, tweet_id=None, position=None):
        if position is None:
            position = self._claim()
        self.found.append((position, platform, source_url, tweet_id))

    def _claim(self):
        pos = self.next_position
        self.next_position += 1
        return pos

    def handle_starttag(self, tag, attrs):
        a = {k: (v or "") for k, v in attrs}
        if self.container is not None:
            if tag == self.container.tag:
                self.container.depth += 1
            if tag == "a" and a.get("href"):
                self.container.links.append(a["href"])
            return

        cls = a.get("class", "").lower()
        for wrapper in self.wrappers:
            if wrapper[0] == tag:
                wrapper[1] += 1

        if tag == "blockquote":
            for marker, platform in _BLOCKQUOTE_CLASSES:
                if marker in cls:
                    self.container = _Container(tag, platform, self._claim(), a)
                    return
        if tag == "div" and ("fb-post" in cls.split() or _is_facebook_post(a.get("data-href", ""))):
            self.container = _Container(tag, "facebook", self._claim(), a)
            return
        if tag == "iframe":
            src = a.get("src") or a.get("data-src", "")
            if _is_youtube_iframe(src):
                self._emit("youtube", src)
            elif _is_twitter_widget(src):
                self._emit("twitter", src, _twitter_widget_id(src))
            elif _is_facebook_post(src):
                self._emit("facebook", src)
            return
        if tag == "a":
            href = a.get("href", "")
            if _is_twitter_widget(href):
                self._emit("twitter", href, _twitter_widget_id(href))
            elif self.wrappers and _host(href) == "youtu.be":
                self._emit("youtube", href)
            return
        if "embed" in cls and tag not in _VOID:
            self.wrappers.append([tag, 1])

    def handle_startendtag(self, tag, attrs):
        # <iframe/> or <a/> written self-closing still count
        if self.container is None and tag in ("iframe", "a"):
            self.handle_starttag(tag, attrs)
            return
        if self.container is not None and tag == "a":
            self.handle_starttag(tag, attrs)

    def handle_endtag(self, tag):
        c = self.container
        if c is not None:
            if tag == c.tag:
                c.depth -= 1
                if c.depth == 0:
                    self._close_container()
            return
        if self.wrappers:
            for i in range(len(self.wrappers) - 1, -1, -1):
                if self.wrappers[i][0] == tag:
                    self.wrappers[i][1] -= 1
                    if self.wrappers[i][1] == 0:
                        del self.wrappers[i]
                    break

    def _close_container(self):
        c = self.container
        self.container = None
        if c.platform == "twitter":
            status_links = [h for h in c.links if parse_tweet_id(h)]
            source = status_links[0] if status_links else (c.links[0] if c.links else "")
            self._emit("twitter", source, parse_tweet_id(source), c.position)
        elif c.platform == "instagram":
            source = c.attrs.get("data-instgrm-permalink") or (c.links[0] if c.links else "")
            self._emit("instagram", source, position=c.position)
        elif c.platform == "facebook":
            source = c.attrs.get("data-href") or (c.links[0] if c.links else "")
            self._emit("facebook", source, position=c.position)
        elif c.platform == "tiktok":
            source = c.attrs.get("cite") or (c.links[0] if c.links else "")
            self._emit("tiktok", source, position=c.position)
        else:
            source = c.attrs.get("cite") or (c.links[0] if c.links else "")
            self._emit(c.platform, source, position=c.position)

    def finish(self):
        self.close()
        if self.container is not None:
            self._close_container()
        self.found.sort(key=lambda f: f[0])
        return self.found


_VOID = frozenset({"area", "base", "br", "col", "embed", "hr", "img", "input", "link",
                   "meta", "source", "track", "wbr"})


def _decode(html) -> str:
    if isinstance(html, str):
        return html
    try:
        return html.decode("utf-8")
    except UnicodeDecodeError:
        return html.decode("latin-1")


def extract_embeds(html, article_id: str) -> list[Embed]:
    """All embeds in ``html`` (bytes or str), in document order.

    Never raises on bad markup; a container left open at end of input is
    closed there.
    """
    scanner = _EmbedScanner()
    scanner.feed(_decode(html))
    return [Embed(article_id, platform, source.strip(), tweet_id, position)
            for position, platform, source, tweet_id in scanner.finish()]


# -- labeled corpus --------------------------------------------------------

@dataclass(frozen=True)
class Label:
    platform: str
    source_url: str
    tweet_id: str | None
    position: int


def read_labels(path) -> list[Label]:
    labels = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row or row[0].startswith("#"):
                continue
            platform, source_url, tweet_id, position = (row + ["", "", "", ""])[:4]
            labels.append(Label(platform, source_url, tweet_id or None, int(position)))
    return labels


def evaluate_corpus(root):
    """Score the extractor on ``<root>/<case>/page.html`` + ``labels.tsv``.

    Returns ``(precision, recall, per_case)`` where ``per_case`` maps a case
    name to ``(missed, spurious)`` label sets.
    """
    tp = fp = fn = 0
    per_case = {}
    for case in sorted(p for p in Path(root).iterdir() if (p / "page.html").exists()):
        expected = set(read_labels(case / "labels.tsv"))
        got = {Label(e.platform, e.source_url, e.tweet_id, e.position)
               for e in extract_embeds((case / "page.html").read_bytes(), case.name)}
        tp += len(expected & got)
        fp += len(got - expected)
        fn += len(expected - got)
        per_case[case.name] = (expected - got, got - expected)
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall, per_case
