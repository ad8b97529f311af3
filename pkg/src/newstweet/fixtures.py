"""Generate a self-contained fixture world for offline runs.

:func:`plant_corpus` writes, under one directory:

* ``http/``: fixture transport responses: eight section feeds, aggregator
  redirect links, publisher pages carrying planted embeds, YouTube pages, a
  dead link;
* ``mock_users.json``: the tweet backend's users and timelines;
* ``nt.ini``: a config running the pipeline in fixture mode.

The returned :class:`PlantedCorpus` lists everything that was planted, so
tests can compare a pipeline run against it.
"""

from __future__ import annotations

import datetime as dt
import email.utils
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

from newstweet.feeds import build_feed_url
from newstweet.sections import Section
from newstweet.timeutil import UTC, format_twitter_time
from newstweet.transport import FixtureTransport
from newstweet.urls import canonicalize_url

BASE_URL = "http://news.fixture"
DOMAINS = ["foxnews.com", "www.cnn.com", "reuters.com", "www.nytimes.com", "espn.com",
           "cnbc.com", "usatoday.com", "nypost.com", "nba.nbcsports.com", "blavity.com",
           "thehill.com"]
START = dt.datetime(2019, 5, 15, tzinfo=UTC)
N_ARTICLES = 44
YOUTUBE_AT = (5, 20, 37)
LATECOMER_PAGES = (2, 11, 26, 33)
LATECOMER_TIMES = [START + dt.timedelta(days=d, hours=h)
                   for d, h in ((1, 8), (2, 9), (3, 10), (4, 11))]


@dataclass
class PlantedEmbed:
    article_url: str
    platform: str
    source_url: str
    tweet_id: str | None
    position: int


@dataclass
class PlantedCorpus:
    root: Path
    config_path: Path
    fixture_dir: Path
    mock_file: Path
    data_dir: Path
    seed: int
    feed_links: list[str] = field(default_factory=list)
    articles: dict[str, dict] = field(default_factory=dict)
    dead_links: list[str] = field(default_factory=list)
    embeds: list[PlantedEmbed] = field(default_factory=list)
    users: dict[str, dict] = field(default_factory=dict)
    deleted_tweets: set[str] = field(default_factory=set)
    skipped_items: int = 0

    @property
    def youtube_pages(self) -> int:
        return sum(1 for a in self.articles.values() if a["youtube"])

    @property
    def fetched_pages(self) -> int:
        return len(self.articles)

    def platform_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.embeds:
            counts[e.platform] = counts.get(e.platform, 0) + 1
        return counts

    def embedded_tweet_ids(self) -> set[str]:
        return {e.tweet_id for e in self.embeds if e.tweet_id}

    def embedded_users(self) -> set[str]:
        """Users with at least one embedded tweet that still exists."""
        owner = {t["id_str"]: uid for uid, u in self.users.items() for t in u["tweets"]}
        return {owner[t] for t in self.embedded_tweet_ids() - self.deleted_tweets}

    def timeline_tweet_ids(self) -> set[str]:
        ids = set()
        for uid in self.embedded_users():
            visible = [t["id_str"] for t in self.users[uid]["tweets"] if not t.get("deleted")]
            visible.sort(key=int, reverse=True)
            ids.update(visible[:3200])
        return ids


def _tweet_id(ts: dt.datetime, user_idx: int) -> str:
    return str(int(ts.timestamp()) * 100 + user_idx)


def _rss(section, items):
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           '<rss version="2.0"><channel>',
           f"<title>{section.token.title()} - fixture news</title>",
           f"<link>{BASE_URL}</link>"]
    for title, link, published in items:
        out.append("<item>")
        out.append(f"<title>{title}</title>")
        if link:
            out.append(f"<link>{escape(link)}</link>")
        out.append(f"<pubDate>{email.utils.format_datetime(published)}</pubDate>")
        out.append("</item>")
    out.append("</channel></rss>")
    return "\n".join(out).encode("utf-8")


def _twitter_blockquote(handle, tid, text):
    return (f'<blockquote class="twitter-tweet" data-lang="en"><p lang="en" dir="ltr">{text} '
            f'<a href="https://t.co/x{tid[-4:]}">pic.twitter.com/x{tid[-4:]}</a></p>'
            f'&mdash; {handle} (@{handle}) <a href="https://twitter.com/{handle}/status/{tid}'
            f'?ref_src=twsrc%5Etfw">May 2019</a></blockquote>\n'
            '<script async src="https://platform.twitter.com/widgets.js" charset="utf-8"></script>')


def _embed_markup(platform, rng, n, handle=None, tid=None):
    """``(html, source_url)`` for one planted embed."""
    if platform == "twitter":
        if rng.random() < 0.15:
            src = f"https://platform.twitter.com/embed/Tweet.html?id={tid}"
            return f'<iframe class="twitter-frame" src="{escape(src)}" width="550"></iframe>', src
        src = f"https://twitter.com/{handle}/status/{tid}?ref_src=twsrc%5Etfw"
        return _twitter_blockquote(handle, tid, f"planted tweet {n}"), src
    if platform == "youtube":
        if rng.random() < 0.3:
            src = f"https://youtu.be/clip{n}"
            return f'<div class="video-embed"><p><a href="{src}">watch</a></p></div>', src
        src = f"https://www.youtube.com/embed/vid{n}"
        return f'<iframe width="560" height="315" src="{src}" frameborder="0" allowfullscreen></iframe>', src
    if platform == "instagram":
        src = f"https://www.instagram.com/p/Post{n}/"
        return (f'<blockquote class="instagram-media" data-instgrm-permalink="{src}" '
                f'data-instgrm-version="12"><div><a href="{src}" target="_blank">View this post</a>'
                f'</div></blockquote>'), src
    if platform == "facebook":
        src = f"https://www.facebook.com/page{n}/posts/{1000 + n}"
        return f'<div class="fb-post" data-href="{src}" data-width="500"><blockquote cite="{src}"></blockquote></div>', src
    if platform == "reddit":
        src = f"https://www.reddit.com/r/news/comments/abc{n}/a_title/"
        return (f'<blockquote class="reddit-card" data-card-created="1558000000">'
                f'<a href="{src}">A title</a> from <a href="http://www.reddit.com/r/news">r/news</a>'
                f'</blockquote>'), src
    if platform == "tiktok":
        src = f"https://www.tiktok.com/@creator{n}/video/{6700000000000000000 + n}"
        return (f'<blockquote class="tiktok-embed" cite="{src}" data-video-id="{n}">'
                f'<section><a target="_blank" href="https://www.tiktok.com/@creator{n}">@creator{n}</a>'
                f'</section></blockquote>'), src
    raise ValueError(platform)


def _page(title, blocks, rng):
    paras = [f"<p>Paragraph {i} of {escape(title)}.</p>" for i in range(3)]
    body = []
    for i, block in enumerate(blocks):
        body.append(paras[i % 3])
        body.append(block)
    body.extend(paras)
    # publisher markup is often sloppy: unclosed <p> and <li>, stray </div>
    sloppy = "<ul><li>related<li>more related</ul><p>unclosed paragraph</div>"
    return (f"<!DOCTYPE html><html><head><title>{escape(title)}</title>"
            f'<meta charset="utf-8"></head><body><article>{"".join(body)}</article>'
            f"{sloppy if rng.random() < 0.5 else ''}</body></html>").encode("utf-8")


def _make_users(rng):
    users = {}
    handles = ["wire_desk", "coach_b", "city_hall", "pop_star", "game_studio", "chef_rita",
               "space_agency", "ref_watch", "market_maven", "weather_now", "late_show",
               "policy_wonk", "trail_runner", "museum_x", "court_reporter", "quake_alerts",
               "fan_club", "band_one", "brand_chicken", "quiet_user", "latecomer",
               "night_owl", "indie_dev"]
    for idx, handle in enumerate(handles, start=1):
        uid = str(1000 + idx)
        tweets = []
        if handle == "latecomer":
            times = [START - dt.timedelta(days=40 - d) for d in range(14)]
            times.append(LATECOMER_TIMES[0] + dt.timedelta(days=1, hours=3))
        else:
            n = rng.randint(8, 40)
            times = sorted(START - dt.timedelta(minutes=rng.randint(0, 60 * 24 * 30))
                           + dt.timedelta(days=5) for _ in range(n))
        seen = set()
        for k, ts in enumerate(sorted(times)):
            ts = ts.replace(microsecond=0)
            while ts in seen:
                ts += dt.timedelta(seconds=1)
            seen.add(ts)
            tweet = {"id_str": _tweet_id(ts, idx), "created_at": format_twitter_time(ts),
                     "text": f"{handle} says #{k}"}
            if handle != "latecomer" and rng.random() < 0.1:
                tweet["retweeted_status"] = {"id_str": str(10 ** 17 + idx * 1000 + k)}
            if rng.random() < 0.1:
                tweet["coordinates"] = {"type": "Point",
                                        "coordinates": [round(rng.uniform(-120, -70), 4),
                                                        round(rng.uniform(25, 48), 4)]}
            tweets.append(tweet)
        users[uid] = {"screen_name": handle, "tweets": tweets}
    return users


def plant_corpus(root, seed: int = 7, scheduler_seed: int = 1234) -> PlantedCorpus:
    rng = random.Random(seed)
    root = Path(root)
    corpus = PlantedCorpus(root=root, config_path=root / "nt.ini", fixture_dir=root / "http",
                           mock_file=root / "mock_users.json", data_dir=root / "data", seed=seed)
    transport = FixtureTransport(corpus.fixture_dir)
    users = _make_users(rng)
    corpus.users = users
    by_handle = {u["screen_name"]: uid for uid, u in users.items()}

    # tweets available for embedding, excluding the special users
    ordinary = [uid for uid, u in users.items()
                if u["screen_name"] not in ("latecomer", "brand_chicken", "quiet_user")]
    pool = []
    for uid in ordinary:
        tweets = users[uid]["tweets"]
        pool.extend((uid, t["id_str"]) for t in rng.sample(tweets, k=min(3, len(tweets))))
    # quiet_user appears once; a deleted tweet of theirs is embedded too
    quiet = by_handle["quiet_user"]
    pool.append((quiet, users[quiet]["tweets"][-1]["id_str"]))
    deleted = [users[quiet]["tweets"][0], users[by_handle["wire_desk"]]["tweets"][0]]
    for t in deleted:
        t["deleted"] = True
        corpus.deleted_tweets.add(t["id_str"])
    brand = by_handle["brand_chicken"]
    brand_tweets = [t["id_str"] for t in users[brand]["tweets"][-2:]]
    late = by_handle["latecomer"]
    late_tweets = [t["id_str"] for t in users[late]["tweets"][:14]]

    feeds: dict[Section, list] = {s: [] for s in Section}
    embed_no = 0
    pages_with = {"youtube": [], "instagram": [], "facebook": [], "reddit": [], "tiktok": []}
    publisher_idx = [i for i in range(N_ARTICLES) if i not in YOUTUBE_AT]
    for platform, count in (("youtube", 4), ("instagram", 3), ("facebook", 2), ("reddit", 2),
                            ("tiktok", 2)):
        pages_with[platform] = rng.sample(publisher_idx, count)
    twitter_pages = [i for i in rng.sample(publisher_idx, 18) if i not in LATECOMER_PAGES]
    late_split = [late_tweets[0:4], late_tweets[4:8], late_tweets[8:11], late_tweets[11:14]]
    deleted_slots = [t["id_str"] for t in deleted]
    brand_slots = brand_tweets * 3

    for i in range(N_ARTICLES):
        section = list(Section)[i % 8]
        published = START + dt.timedelta(hours=2.5 * i)
        if i in LATECOMER_PAGES:
            published = LATECOMER_TIMES[LATECOMER_PAGES.index(i)]
        title = f"{section.token.title()} story {i}"
        if i in YOUTUBE_AT:
            final = f"https://www.youtube.com/watch?v=vid{i}"
            transport.record(final, 200, f"<html><body>video {i}</body></html>".encode())
        else:
            domain = DOMAINS[i % len(DOMAINS)]
            final = f"https://{domain}/{section.token.lower()}/story-{i}.html"
            blocks = []
            planned = []
            if i in LATECOMER_PAGES:
                planned += [("twitter", late, tid) for tid in late_split[LATECOMER_PAGES.index(i)]]
            if i in twitter_pages:
                for _ in range(rng.randint(1, 3)):
                    uid, tid = pool[rng.randrange(len(pool))]
                    planned.append(("twitter", uid, tid))
                if deleted_slots:
                    tid = deleted_slots.pop()
                    owner = next(u for u, d in users.items()
                                 if any(t["id_str"] == tid for t in d["tweets"]))
                    planned.append(("twitter", owner, tid))
                elif brand_slots:
                    planned.append(("twitter", brand, brand_slots.pop()))
            for platform, pages in pages_with.items():
                if i in pages:
                    planned.append((platform, None, None))
            rng.shuffle(planned)
            for position, (platform, uid, tid) in enumerate(planned):
                embed_no += 1
                handle = users[uid]["screen_name"] if uid else None
                html, src = _embed_markup(platform, rng, embed_no, handle, tid)
                blocks.append(html)
                corpus.embeds.append(PlantedEmbed(final, platform, src, tid, position))
            transport.record(final, 200, _page(title, blocks, rng))
        corpus.articles[final] = {"section": section.code, "youtube": i in YOUTUBE_AT,
                                  "published": published, "index": i}

        # aggregator link, sometimes via an extra http→https hop
        link = f"{BASE_URL}/articles/{i}"
        target = final + ("?utm_source=gnews&utm_medium=rss" if i % 2 else "")
        if i % 7 == 0 and i not in YOUTUBE_AT:
            hop = target.replace("https://", "http://", 1)
            transport.record(link, 302, headers={"Location": hop})
            transport.record(hop, 301, headers={"Location": target})
        else:
            transport.record(link, 301, headers={"Location": target})
        if target != final:
            # the tracking-parameter variant canonicalizes onto the page itself
            transport.record(target, 200, transport.path_for(final).read_bytes().split(b"\r\n\r\n", 1)[1])
        feeds[section].append((escape(title), link, published))
        corpus.feed_links.append(link)

    # the same article surfaced again in another section under a second link
    again = f"{BASE_URL}/articles/3b"
    final3 = next(u for u, a in corpus.articles.items() if a["index"] == 3)
    transport.record(again, 301, headers={"Location": final3})
    feeds[Section.WORLD].append(("Story 3 again", again, START + dt.timedelta(hours=9)))
    corpus.feed_links.append(again)
    # a duplicate of an aggregator link that differs only by a tracker parameter
    feeds[Section.HEADLINES].append(("Dup", f"{BASE_URL}/articles/7?utm_campaign=x",
                                     START + dt.timedelta(hours=20)))
    # a dead link
    dead = f"{BASE_URL}/articles/dead"
    transport.record(dead, 404, b"not found")
    feeds[Section.NATION].append(("Gone", dead, START + dt.timedelta(hours=30)))
    corpus.feed_links.append(dead)
    corpus.dead_links.append(dead)
    # an item without a link
    feeds[Section.ENTERTAINMENT].append(("No link here", None, START))
    corpus.skipped_items += 1

    for section, items in feeds.items():
        body = _rss(section, items)
        if section is Section.HEALTH:
            # an unescaped ampersand makes this feed not well-formed; the broken
            # item is dropped and the rest salvaged
            body = body.replace(b"</channel>", b"<item><title>Q&A</title><link>"
                                + f"{BASE_URL}/articles/broken".encode()
                                + b"</link></item></channel>")
            corpus.skipped_items += 1
        transport.record(build_feed_url(section, BASE_URL), 200, body,
                         headers={"Content-Type": "application/rss+xml"})

    corpus.mock_file.write_text(json.dumps({"users": users}, indent=1, sort_keys=True),
                                encoding="utf-8")
    corpus.config_path.write_text(
        "[general]\n"
        "data_dir = data\n"
        "mode = fixture\n"
        "log_level = WARNING\n\n"
        "[feeds]\n"
        f"base_url = {BASE_URL}\n\n"
        "[fetch]\n"
        "fixture_dir = http\n"
        "per_host_delay_ms = 0\n\n"
        "[social]\n"
        "mock_file = mock_users.json\n\n"
        "[scheduler]\n"
        f"seed = {scheduler_seed}\n"
        "batch_size = 10\n",
        encoding="utf-8")
    return corpus


def canonical_article_urls(corpus: PlantedCorpus) -> set[str]:
    return {canonicalize_url(u) for u in corpus.articles}
