"""Descriptive tables over the archive.

* platform volumes: articles containing, and total embeds from, each platform
* section statistics: articles, embedded articles, embeds, unique tweets and
  users per section plus the all-sections row ``A``
* user rankings: most embedded, lowest unique fraction, most effective
* domain rankings: by article count and by average tweet embeds per article

Only ``publisher_page`` articles are analyzed; YouTube pages and failed
fetches are left out. Percentages are rounded half away from zero on exact
rational values, so no float artefacts decide a rounding.
"""

from __future__ import annotations

import datetime as dt
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction

from newstweet.embeds import PLATFORMS
from newstweet.sections import Section
from newstweet.timeutil import parse_iso

ALL = "A"
DAY = dt.timedelta(hours=24)

PLATFORM_LABELS = {"twitter": "Twitter", "youtube": "YouTube", "instagram": "Instagram",
                   "facebook": "Facebook", "reddit": "Reddit", "tiktok": "TikTok"}


def round_half_away(value: Fraction, places: int = 0):
    """Round an exact value half away from zero; ``int`` when ``places == 0``."""
    scale = 10 ** places
    scaled = abs(Fraction(value)) * scale
    whole = int(scaled + Fraction(1, 2))
    if value < 0:
        whole = -whole
    return whole if places == 0 else whole / scale


def percent(part: int, whole: int, places: int = 0):
    """``100 * part / whole`` rounded; 0 when ``whole`` is 0."""
    if whole == 0:
        return 0 if places == 0 else 0.0
    return round_half_away(Fraction(100 * part, whole), places)


# -- row types ---------------------------------------------------------------

@dataclass
class SectionStats:
    section: str
    articles: int
    embedded_articles: int
    embedded_pct: int
    total_embeds: int
    unique_tweets: int
    unique_tweet_pct: int
    unique_users: int

    @classmethod
    def from_counts(cls, section, articles, embedded_articles, total_embeds, unique_tweets,
                    unique_users) -> "SectionStats":
        return cls(section, articles, embedded_articles, percent(embedded_articles, articles),
                   total_embeds, unique_tweets, percent(unique_tweets, total_embeds),
                   unique_users)


@dataclass
class PlatformStats:
    platform: str
    articles_with: int
    embeddings: int
    pct_articles: float
    pct_embeddings: float


def platform_table(counts) -> list[PlatformStats]:
    """Rows for ``counts = {platform: (articles_with, embeddings)}`` plus a
    ``total`` row holding the column sums.

    An article embedding several platforms is counted once per platform, so
    the articles total can exceed the number of distinct articles.
    """
    total_articles = sum(a for a, _ in counts.values())
    total_embeds = sum(e for _, e in counts.values())
    rows = [PlatformStats(p, a, e, percent(a, total_articles, 2), percent(e, total_embeds, 2))
            for p, (a, e) in counts.items()]
    rows.append(PlatformStats("total", total_articles, total_embeds,
                              100.0 if total_articles else 0.0,
                              100.0 if total_embeds else 0.0))
    return rows


@dataclass
class UserMetrics:
    user_id: str
    user_handle: str
    total_embeds: int
    unique_embedded_tweets: int
    tweets_produced_in_window: int
    window_start: dt.datetime | None = None
    window_end: dt.datetime | None = None

    @property
    def unique_fraction(self) -> float:
        return self.unique_embedded_tweets / self.total_embeds

    @property
    def effectiveness(self) -> float:
        return self.unique_embedded_tweets / max(1, self.tweets_produced_in_window)


@dataclass
class UserRankings:
    most_embedded: list[UserMetrics] = field(default_factory=list)
    least_unique: list[UserMetrics] = field(default_factory=list)
    most_effective: list[UserMetrics] = field(default_factory=list)


@dataclass
class DomainStats:
    domain: str
    article_count: int
    twitter_embeds: int

    @property
    def avg_embeds_per_article(self) -> float:
        return round_half_away(Fraction(self.twitter_embeds, self.article_count), 2)


def rank_domains(counts, min_articles: int = 10):
    """``counts = {domain: (articles, twitter_embeds)}`` →
    ``(by_count, by_avg)``; ``by_avg`` drops domains under ``min_articles``."""
    rows = [DomainStats(d, a, e) for d, (a, e) in counts.items() if a > 0]
    by_count = sorted(rows, key=lambda r: (-r.article_count, r.domain))
    by_avg = sorted((r for r in rows if r.article_count >= min_articles),
                    key=lambda r: (-Fraction(r.twitter_embeds, r.article_count), r.domain))
    return by_count, by_avg


def rank_users(metrics, k: int | None = None, min_embeds_for_fraction: int = 2) -> UserRankings:
    metrics = list(metrics)

    def tie(m):
        return (m.user_handle, m.user_id)

    most = sorted(metrics, key=lambda m: (-m.total_embeds, tie(m)))
    least = sorted((m for m in metrics if m.total_embeds >= min_embeds_for_fraction),
                   key=lambda m: (Fraction(m.unique_embedded_tweets, m.total_embeds), tie(m)))
    effective = sorted(metrics, key=lambda m: (
        -Fraction(m.unique_embedded_tweets, max(1, m.tweets_produced_in_window)), tie(m)))
    if k is not None:
        most, least, effective = most[:k], least[:k], effective[:k]
    return UserRankings(most, least, effective)


# -- archive snapshot ----------------------------------------------------------

class _Snapshot:
    def __init__(self, archive):
        self.articles = {a["id"]: a for a in archive.scan("article")
                         if a["classification"] == "publisher_page"}
        self.embeds = defaultdict(list)
        for e in archive.scan("embed"):
            if e["article_id"] in self.articles:
                self.embeds[e["article_id"]].append(e)
        self.tweet_user = {}
        self.tweet_times = defaultdict(list)
        for t in archive.scan("tweet"):
            self.tweet_user[t["id"]] = t["user_id"]
            self.tweet_times[t["user_id"]].append(parse_iso(t["created_at"]))
        self.handles = {u["user_id"]: u.get("handle") or u["user_id"] for u in archive.scan("user")}

    def articles_in(self, section):
        return [a for a in self.articles.values() if section == ALL or a["section"] == section]

    def twitter_embeds(self, article_id):
        return [e for e in self.embeds[article_id] if e["platform"] == "twitter"]


def _published(article):
    return parse_iso(article.get("published_at") or article["fetched_at"])


class Analytics:
    """Compute the tables from an :class:`~newstweet.archive.Archive`.

    The archive is read once, at construction.
    """

    def __init__(self, archive, min_embeds_for_fraction: int = 2):
        self.snap = _Snapshot(archive)
        self.min_embeds_for_fraction = min_embeds_for_fraction

    def section_stats(self) -> list[SectionStats]:
        rows = [self._section_row(s.code) for s in Section]
        rows.append(self._section_row(ALL))
        return rows

    def _section_row(self, section):
        articles = self.snap.articles_in(section)
        embedded = embeds = 0
        tweets, users = set(), set()
        for a in articles:
            tw = self.snap.twitter_embeds(a["id"])
            if tw:
                embedded += 1
            embeds += len(tw)
            for e in tw:
                if e.get("tweet_id"):
                    tweets.add(e["tweet_id"])
                    if e["tweet_id"] in self.snap.tweet_user:
                        users.add(self.snap.tweet_user[e["tweet_id"]])
        return SectionStats.from_counts(section, len(articles), embedded, embeds, len(tweets),
                                        len(users))

    def platform_stats(self) -> list[PlatformStats]:
        counts = {p: [0, 0] for p in PLATFORMS}
        for article_id in self.snap.articles:
            platforms = set()
            for e in self.snap.embeds[article_id]:
                counts[e["platform"]][1] += 1
                platforms.add(e["platform"])
            for p in platforms:
                counts[p][0] += 1
        return platform_table({p: tuple(c) for p, c in counts.items()})

    def user_metrics(self, section=ALL) -> list[UserMetrics]:
        total = defaultdict(int)
        unique = defaultdict(set)
        times = defaultdict(list)
        for a in self.snap.articles_in(section):
            for e in self.snap.twitter_embeds(a["id"]):
                user = self.snap.tweet_user.get(e.get("tweet_id"))
                if user is None:
                    continue
                total[user] += 1
                unique[user].add(e["tweet_id"])
                times[user].append(_published(a))
        out = []
        for user in total:
            start, end = min(times[user]), max(times[user])
            if start == end:
                start, end = start - DAY / 2, end + DAY / 2
            produced = sum(1 for t in self.snap.tweet_times[user] if start <= t <= end)
            out.append(UserMetrics(user, self.snap.handles.get(user, user), total[user],
                                   len(unique[user]), produced, start, end))
        return out

    def user_rankings(self, k: int = 5) -> dict[str, UserRankings]:
        """Rankings per section code and for ``"A"`` (all sections)."""
        return {code: rank_users(self.user_metrics(code), k, self.min_embeds_for_fraction)
                for code in [s.code for s in Section] + [ALL]}

    def domain_counts(self) -> dict[str, tuple[int, int]]:
        counts = defaultdict(lambda: [0, 0])
        for a in self.snap.articles.values():
            counts[a["domain"]][0] += 1
            counts[a["domain"]][1] += len(self.snap.twitter_embeds(a["id"]))
        return {d: tuple(c) for d, c in counts.items()}

    def domain_stats(self, min_articles: int = 10):
        return rank_domains(self.domain_counts(), min_articles)


# -- rendering -----------------------------------------------------------------

def _fmt2(x: float) -> str:
    return f"{x:.2f}"


def table_rows(analytics: Analytics, table: int, k: int = 5, min_articles: int = 10):
    """``(headers, rows)`` in long form, suitable for TSV and JSON."""
    if table == 1:
        headers = ["platform", "articles", "pct_articles", "embeddings", "pct_embeddings"]
        rows = [[r.platform, r.articles_with, _fmt2(r.pct_articles), r.embeddings,
                 _fmt2(r.pct_embeddings)] for r in analytics.platform_stats()]
    elif table == 2:
        headers = ["section", "articles", "embedded", "embedded_pct", "embeds", "tweets",
                   "tweets_pct", "users"]
        rows = [[r.section, r.articles, r.embedded_articles, r.embedded_pct, r.total_embeds,
                 r.unique_tweets, r.unique_tweet_pct, r.unique_users]
                for r in analytics.section_stats()]
    elif table == 3:
        headers = ["section", "ranking", "rank", "handle", "value"]
        rows = []
        for code, ranks in analytics.user_rankings(k).items():
            for name, items, value in (
                    ("most_embedded", ranks.most_embedded, lambda m: m.total_embeds),
                    ("least_unique", ranks.least_unique, lambda m: _fmt2(m.unique_fraction)),
                    ("most_effective", ranks.most_effective, lambda m: _fmt2(m.effectiveness))):
                rows += [[code, name, i + 1, m.user_handle, value(m)] for i, m in enumerate(items)]
    elif table == 4:
        headers = ["rank", "domain_by_count", "articles", "domain_by_avg", "avg_embeds"]
        by_count, by_avg = analytics.domain_stats(min_articles)
        rows = []
        for i in range(max(len(by_count[:10]), len(by_avg[:10]))):
            c = by_count[i] if i < len(by_count) else None
            a = by_avg[i] if i < len(by_avg) else None
            rows.append([i + 1, c.domain if c else "", c.article_count if c else "",
                         a.domain if a else "", _fmt2(a.avg_embeds_per_article) if a else ""])
    else:
        raise ValueError(f"no table {table}")
    return headers, rows


def render(analytics: Analytics, table: int, fmt: str = "tsv", k: int = 5,
           min_articles: int = 10) -> str:
    if fmt == "markdown":
        return _markdown(analytics, table, k, min_articles)
    headers, rows = table_rows(analytics, table, k, min_articles)
    if fmt == "json":
        return json.dumps([dict(zip(headers, r)) for r in rows], indent=1)
    if fmt == "tsv":
        return "\n".join("\t".join(str(c) for c in line) for line in [headers, *rows]) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def _md(headers, rows):
    lines = ["| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _markdown(analytics, table, k, min_articles=10):
    if table == 1:
        rows = [[PLATFORM_LABELS.get(r.platform, "**Total**"),
                 f"{r.articles_with:,} ({_fmt2(r.pct_articles)})",
                 f"{r.embeddings:,} ({_fmt2(r.pct_embeddings)})"]
                for r in analytics.platform_stats()]
        return _md(["Platform", "Articles", "Embeddings"], rows)
    if table == 2:
        rows = [[f"**{r.section}**", f"{r.articles:,}",
                 f"{r.embedded_articles:,} ({r.embedded_pct}%)", f"{r.total_embeds:,}",
                 f"{r.unique_tweets:,} ({r.unique_tweet_pct}%)", f"{r.unique_users:,}"]
                for r in analytics.section_stats()]
        return _md(["§", "Articles", "Embedded", "Embeds", "Tweets", "Users"], rows)
    if table == 3:
        order = ["W", "B", "X", "H", "T", "S", "N", "E", ALL]
        headers = [Section(c).name if c != ALL else "ALL" for c in order]
        ranks = analytics.user_rankings(k)
        rows = []
        for attr, value in (("most_embedded", lambda m: str(m.total_embeds)),
                            ("least_unique", lambda m: f"{m.unique_fraction:.2g}"),
                            ("most_effective", lambda m: f"{m.effectiveness:.3g}")):
            for i in range(k):
                row = []
                for code in order:
                    items = getattr(ranks[code], attr)
                    row.append(f"{items[i].user_handle}, {value(items[i])}" if i < len(items) else "")
                rows.append(row)
        return _md(headers, rows)
    if table == 4:
        headers, rows = table_rows(analytics, 4, min_articles=min_articles)
        rows = [[r[0], f"{r[1]}, {r[2]:,}" if r[1] else "", f"{r[3]}, {r[4]}" if r[3] else ""]
                for r in rows]
        return _md(["Rank", "Total Articles", "Average Embeds"], rows)
    raise ValueError(f"no table {table}")


def summary(analytics: Analytics) -> dict:
    a = analytics.section_stats()[-1]
    return asdict(a)
