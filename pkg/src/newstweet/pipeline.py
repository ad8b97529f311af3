"""Pipeline stages wired together: poll → fetch → extract → hydrate →
register → top-off → stats.

Each stage commits its output to the archive before the next one reads it,
so any stage can be rerun on its own and a crash loses at most the record
being written.
"""

from __future__ import annotations

import datetime as dt
import fcntl
import logging
import os
import signal
import threading
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

from newstweet.analytics import Analytics
from newstweet.archive import KINDS, Archive, embed_key
from newstweet.embeds import extract_embeds
from newstweet.errors import (
    ArchiveUnavailable,
    BackendError,
    BudgetExhausted,
    ConfigError,
    NewsTweetError,
)
from newstweet.feeds import FeedTracker
from newstweet.fetcher import ArticleFetcher
from newstweet.mockapi import MockTimelineStore
from newstweet.scheduler import PRIORITY, TopoffScheduler
from newstweet.social import (
    HttpBackend,
    MockBackend,
    RateBudget,
    SocialClient,
    TimelineCursor,
    UserRecord,
)
from newstweet.timeutil import isoformat, parse_iso, utcnow
from newstweet.transport import FixtureTransport, LiveTransport

log = logging.getLogger(__name__)

STAGES = ("poll", "fetch", "extract", "hydrate", "register", "topoff", "stats")
RATE_LOOKBACK = dt.timedelta(days=7)


class StartupError(ConfigError):
    pass


class StageFailed(NewsTweetError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunReport:
    items_seen: int = 0
    new_items: int = 0
    feeds_failed: int = 0
    fetched: int = 0
    new_articles: int = 0
    youtube_pages: int = 0
    fetch_failed: int = 0
    embeds_found: int = 0
    new_embeds: int = 0
    new_tweets_hydrated: int = 0
    new_tweets_missing: int = 0
    new_users: int = 0
    users_registered: int = 0
    timeline_tweets: int = 0
    users_topped_off: int = 0
    topoff_tweets: int = 0
    budget_exhausted: bool = False
    stats: dict = field(default_factory=dict)
    records_added: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def check_data_dir(path) -> Path:
    """Fail fast, before any network activity, if ``path`` is unusable."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StartupError(f"cannot create data_dir {path}: {exc}") from exc
    if not os.access(path, os.W_OK | os.X_OK):
        raise StartupError(f"data_dir {path} is not writable")
    return path


class Pipeline:
    def __init__(self, config, clock=utcnow, sleep=time.sleep, backend=None, transport=None,
                 read_only=False):
        self.config = config
        self.clock = clock
        self.sleep = sleep
        data_dir = Path(config["data_dir"])
        if read_only:
            self.archive = Archive(data_dir, read_only=True)
            return
        check_data_dir(data_dir)
        self.archive = Archive(data_dir)
        try:
            self._setup(backend, transport)
        except Exception:
            self.archive.close()
            raise

    def _setup(self, backend, transport):
        cfg = self.config
        if transport is None:
            if cfg["mode"] == "fixture":
                transport = FixtureTransport(cfg["fetch.fixture_dir"])
            else:
                transport = LiveTransport(cfg["fetch.user_agent"], cfg["fetch.timeout_secs"])
        self.transport = transport
        if backend is None:
            if cfg["social.base_url"]:
                backend = HttpBackend(cfg["social.base_url"], timeout=cfg["fetch.timeout_secs"])
            elif cfg["mode"] == "fixture":
                try:
                    store = MockTimelineStore.load(cfg["social.mock_file"])
                except (OSError, ValueError) as exc:
                    raise StartupError(f"cannot load {cfg['social.mock_file']}: {exc}") from exc
                backend = MockBackend(store)
            else:
                try:
                    backend = HttpBackend.from_env(timeout=cfg["fetch.timeout_secs"])
                except BackendError as exc:
                    raise StartupError(str(exc)) from exc
        self.backend = backend
        sections, tokens = cfg.sections()
        tracker_params = cfg.tracker_params()
        self.tracker = FeedTracker(self.archive, transport, cfg["feeds.base_url"],
                                   cfg["feeds.path_archetype"], sections, tokens,
                                   tracker_params, clock=self.clock)
        self.fetcher = ArticleFetcher(self.archive, transport, cfg["fetch.max_redirects"],
                                      cfg["fetch.timeout_secs"], cfg["fetch.per_host_delay_ms"],
                                      cfg["fetch.parallelism"], tracker_params, clock=self.clock)
        self.budget = RateBudget(cfg["social.requests_per_window"], cfg["social.window_secs"],
                                 clock=lambda: self.clock().timestamp())
        self.client = SocialClient(backend, self.budget, raw_sink=self.archive.put_blob,
                                   batch_size=cfg["social.batch_size"],
                                   page_size=cfg["social.page_size"],
                                   timeline_cap=cfg["social.timeline_cap"],
                                   retries=cfg["social.retries"],
                                   backoff_secs=cfg["social.backoff_secs"],
                                   sleep=self.sleep, clock=self.clock)
        self.scheduler = self._load_scheduler()

    def _load_scheduler(self) -> TopoffScheduler:
        cfg = self.config
        state = self.archive.read_meta("scheduler.json")
        if state:
            sched = TopoffScheduler.from_json(state)
            sched.policy = cfg["scheduler.policy"]
            return sched
        seed = cfg.seed()
        if seed is None:
            stored = self.archive.read_meta("seed")
            seed = int(stored) if stored else cfg.new_seed()
        self.archive.write_meta("seed", f"{seed}\n")
        starvation = cfg["scheduler.starvation_windows"]
        return TopoffScheduler(seed, cfg["scheduler.policy"],
                               int(starvation) if starvation else None)

    def close(self):
        if hasattr(self, "scheduler"):
            self.archive.write_meta("scheduler.json", self.scheduler.to_json())
        self.archive.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- stages ----------------------------------------------------------------

    def poll(self, report: RunReport):
        seen, fresh, failed = self.tracker.poll()
        report.items_seen += seen
        report.new_items += len(fresh)
        report.feeds_failed += len(failed)

    def fetch(self, report: RunReport):
        for article, outcome in self.fetcher.fetch_all(self.fetcher.pending()):
            report.fetched += 1
            if outcome == "inserted":
                report.new_articles += 1
                if article.classification == "youtube_page":
                    report.youtube_pages += 1
                elif article.classification == "fetch_failed":
                    report.fetch_failed += 1

    def extract(self, report: RunReport):
        # YouTube pages cannot carry embeds and are never scanned
        for article in self.archive.scan("article", classification="publisher_page"):
            embeds = extract_embeds(self.archive.get_blob(article["html_ref"]), article["id"])
            report.embeds_found += len(embeds)
            for e in embeds:
                if self.archive.upsert("embed", embed_key(e.article_id, e.position),
                                       e.to_record()) == "inserted":
                    report.new_embeds += 1

    def _embedded_tweet_ids(self):
        """Tweet ids of twitter embeds in analyzable articles, with the
        earliest time each was observed."""
        articles = {a["id"]: a for a in self.archive.scan("article", classification="publisher_page")}
        first_seen = {}
        for e in self.archive.scan("embed", platform="twitter"):
            tid = e.get("tweet_id")
            if not tid or e["article_id"] not in articles:
                continue
            seen = parse_iso(articles[e["article_id"]]["fetched_at"])
            if tid not in first_seen or seen < first_seen[tid]:
                first_seen[tid] = seen
        return first_seen

    def _store_tweets(self, tweets) -> int:
        new = 0
        for t in tweets:
            if self.archive.upsert("tweet", t.id, t.to_record(), overwrite=False) == "inserted":
                new += 1
        return new

    def hydrate(self, report: RunReport):
        first_seen = self._embedded_tweet_ids()
        wanted = [tid for tid in sorted(first_seen, key=int)
                  if ("tweet", tid) not in self.archive and ("tombstone", tid) not in self.archive]
        if not wanted:
            return
        try:
            result = self.client.hydrate_tweets(wanted)
        except BudgetExhausted as exc:
            log.warning("hydrate: budget exhausted, %d ids left for later", len(exc.cursor or ()))
            result = exc.partial
            report.budget_exhausted = True
        for tweet in result.tweets:
            user = UserRecord(tweet.user_id, tweet.handle, first_embedded_at=first_seen[tweet.id])
            existing = self.archive.get("user", tweet.user_id)
            if existing is None:
                self.archive.upsert("user", user.user_id, user.to_record())
                report.new_users += 1
            elif parse_iso(existing["first_embedded_at"]) > first_seen[tweet.id]:
                existing["first_embedded_at"] = isoformat(first_seen[tweet.id])
                self.archive.upsert("user", user.user_id, existing)
        report.new_tweets_hydrated += self._store_tweets(result.tweets)
        now = isoformat(self.clock())
        for tid in result.missing:
            rec = {"id": tid, "reason": "not returned by lookup", "recorded_at": now}
            if self.archive.upsert("tombstone", tid, rec, overwrite=False) == "inserted":
                report.new_tweets_missing += 1

    def register(self, report: RunReport):
        """Backfill the timeline of every newly embedded user, then track them."""
        for rec in self.archive.scan("user", tracked=True):
            user = UserRecord.from_record(rec)
            if user.backfill_done:
                self.scheduler.register_user(user.user_id)
                continue
            cursor = None
            if user.backfill_max_id or user.backfill_fetched:
                cursor = TimelineCursor(user.backfill_max_id, user.backfill_fetched)
            try:
                tweets = self.client.fetch_full_timeline(user.user_id, cursor)
                done = True
            except BudgetExhausted as exc:
                tweets, done = exc.partial, False
                user.backfill_max_id = exc.cursor.max_id
                user.backfill_fetched = exc.cursor.fetched
                report.budget_exhausted = True
            except BackendError as exc:
                log.warning("register: timeline of %s unavailable: %s", user.user_id, exc)
                continue
            report.timeline_tweets += self._store_tweets(tweets)
            user.note_tweets(tweets)
            if done:
                user.backfill_done = True
                user.backfill_max_id = None
                user.backfill_fetched = 0
                self.scheduler.register_user(user.user_id)
                report.users_registered += 1
            self.archive.upsert("user", user.user_id, user.to_record())
            if not done:
                break

    def _recent_rates(self):
        now = self.clock()
        counts = defaultdict(int)
        for t in self.archive.scan("tweet"):
            if now - parse_iso(t["created_at"]) <= RATE_LOOKBACK:
                counts[t["user_id"]] += 1
        days = RATE_LOOKBACK.total_seconds() / 86400
        return {u: counts[u] / days for u in self.scheduler.tracked}

    def topoff(self, report: RunReport):
        for rec in self.archive.scan("user", tracked=True, backfill_done=True):
            self.scheduler.register_user(rec["user_id"])
        if self.scheduler.policy == PRIORITY:
            for user_id, rate in self._recent_rates().items():
                self.scheduler.set_rate(user_id, rate)
        batch = self.scheduler.next_batch(self.config["scheduler.batch_size"])
        for i, user_id in enumerate(batch):
            user = UserRecord.from_record(self.archive.get("user", user_id))
            try:
                if user.newest_tweet_id:
                    tweets = self.client.topoff_timeline(user)
                else:
                    tweets = self.client.fetch_full_timeline(user_id)
                    user.note_tweets(tweets)
                    user.last_topoff_at = self.clock()
            except BudgetExhausted as exc:
                self._store_tweets(exc.partial)
                self.scheduler.give_back(batch[i:])
                report.budget_exhausted = True
                log.info("topoff: budget exhausted, %d users deferred", len(batch) - i)
                break
            except BackendError as exc:
                log.warning("topoff of %s failed: %s", user_id, exc)
                continue
            report.topoff_tweets += self._store_tweets(tweets)
            report.users_topped_off += 1
            self.archive.upsert("user", user_id, user.to_record())
        self.archive.write_meta("scheduler.json", self.scheduler.to_json())

    def stats(self, report: RunReport):
        analytics = Analytics(self.archive)
        row = analytics.section_stats()[-1]
        report.stats = {"articles": row.articles, "embedded_articles": row.embedded_articles,
                        "embedded_pct": row.embedded_pct, "total_embeds": row.total_embeds,
                        "unique_tweets": row.unique_tweets, "unique_users": row.unique_users}

    # -- drivers -----------------------------------------------------------------

    def record_counts(self) -> dict[str, int]:
        counts = {k: self.archive.count(k) for k in KINDS}
        counts["blob"] = self.archive.count("blob")
        return counts

    def run_stages(self, stages=STAGES, report: RunReport | None = None) -> RunReport:
        report = report or RunReport()
        before = self.record_counts()
        try:
            for stage in stages:
                log.info("stage %s", stage)
                try:
                    getattr(self, stage)(report)
                except ArchiveUnavailable:
                    raise
                except Exception as exc:
                    raise StageFailed(stage, exc) from exc
                finally:
                    self.archive.sync()
        finally:
            after = self.record_counts()
            report.records_added = {k: after[k] - before[k] for k in after}
        return report


def run_once(config, **kwargs) -> RunReport:
    with Pipeline(config, **kwargs) as pipeline:
        return pipeline.run_stages()


class DaemonLock:
    """At most one daemon per data directory."""

    def __init__(self, data_dir):
        self.path = Path(data_dir) / "daemon.lock"
        self.fd = None

    def __enter__(self):
        self.fd = os.open(self.path, os.O_RDWR | os.O_CREAT, 0o644)
        try:
            fcntl.flock(self.fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            os.close(self.fd)
            raise StartupError(f"another daemon holds {self.path}")
        os.ftruncate(self.fd, 0)
        os.write(self.fd, f"{os.getpid()}\n".encode())
        return self

    def __exit__(self, *exc):
        fcntl.flock(self.fd, fcntl.LOCK_UN)
        os.close(self.fd)


def run_daemon(config, stop: threading.Event | None = None, monotonic=time.monotonic,
               wait=None, **kwargs):
    """Run the stages on their intervals until ``stop`` is set or a
    SIGINT/SIGTERM arrives.

    Poll through register run every ``feeds.poll_interval_secs``; top-off
    runs every ``scheduler.window_secs``. A failing cycle is logged and
    retried at the next interval. ``monotonic`` and ``wait(seconds)`` can be
    replaced to drive the loop on a simulated clock.
    """
    stop = stop or threading.Event()
    wait = wait or stop.wait
    check_data_dir(config["data_dir"])
    if threading.current_thread() is threading.main_thread():
        for sig in (signal.SIGINT, signal.SIGTERM):
            signal.signal(sig, lambda *_: stop.set())
    poll_every = config["feeds.poll_interval_secs"]
    topoff_every = config["scheduler.window_secs"]
    cycles = 0
    with DaemonLock(config["data_dir"]), Pipeline(config, **kwargs) as pipeline:
        problems = pipeline.archive.verify()
        if problems:
            log.warning("archive integrity problems at startup: %s", problems[:5])
        next_poll = next_topoff = monotonic()
        while not stop.is_set():
            now = monotonic()
            if now >= next_poll:
                cycles += 1
                log.info("poll cycle %d", cycles)
                _daemon_step(pipeline, ("poll", "fetch", "extract", "hydrate", "register"))
                next_poll += poll_every
            if now >= next_topoff:
                _daemon_step(pipeline, ("topoff",))
                next_topoff += topoff_every
            delay = max(0.0, min(next_poll, next_topoff) - monotonic())
            if delay:
                wait(delay)
    log.info("daemon stopped after %d poll cycles", cycles)
    return cycles


def _daemon_step(pipeline, stages):
    try:
        report = pipeline.run_stages(stages)
        log.info("cycle report: %s", {k: v for k, v in report.to_dict().items() if v})
    except StageFailed as exc:
        log.error("%s; retrying next interval", exc)
