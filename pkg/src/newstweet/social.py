"""Tweet hydration and timeline acquisition under a request budget."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import math
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from urllib.parse import urlencode

from newstweet.errors import (
    BackendError,
    BackendUnavailable,
    BudgetExhausted,
    TransientBackendError,
)
from newstweet.mockapi import MockTimelineStore, UnknownUser
from newstweet.timeutil import isoformat, parse_iso, parse_twitter_time, utcnow

log = logging.getLogger(__name__)

LOOKUP_BATCH = 100
PAGE_SIZE = 200
TIMELINE_CAP = 3200


def raw_bytes(raw: dict) -> bytes:
    """Canonical serialization of a backend tweet object (what ``raw_ref`` hashes)."""
    return json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


@dataclass(frozen=True)
class Tweet:
    id: str
    user_id: str
    created_at: dt.datetime
    text: str
    is_retweet: bool
    geo: tuple[float, float] | None
    raw_ref: str
    handle: str = ""

    @classmethod
    def from_raw(cls, raw: dict, raw_ref: str | None = None) -> "Tweet":
        geo = None
        coords = raw.get("coordinates")
        if coords and coords.get("coordinates"):
            lon, lat = coords["coordinates"][:2]
            geo = (float(lat), float(lon))
        user = raw.get("user") or {}
        return cls(
            id=str(raw["id_str"]),
            user_id=str(user.get("id_str", "")),
            created_at=parse_twitter_time(raw["created_at"]),
            text=raw.get("full_text", raw.get("text", "")),
            is_retweet="retweeted_status" in raw,
            geo=geo,
            raw_ref=raw_ref if raw_ref is not None else hashlib.sha256(raw_bytes(raw)).hexdigest(),
            handle=user.get("screen_name", ""),
        )

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "user_id": self.user_id,
            "created_at": isoformat(self.created_at),
            "text": self.text,
            "is_retweet": self.is_retweet,
            "geo": list(self.geo) if self.geo else None,
            "raw_ref": self.raw_ref,
            "handle": self.handle,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Tweet":
        return cls(
            id=rec["id"],
            user_id=rec["user_id"],
            created_at=parse_iso(rec["created_at"]),
            text=rec["text"],
            is_retweet=rec["is_retweet"],
            geo=tuple(rec["geo"]) if rec.get("geo") else None,
            raw_ref=rec["raw_ref"],
            handle=rec.get("handle", ""),
        )


@dataclass
class UserRecord:
    user_id: str
    handle: str = ""
    first_embedded_at: dt.datetime | None = None
    newest_tweet_id: str | None = None
    oldest_tweet_id: str | None = None
    last_topoff_at: dt.datetime | None = None
    tracked: bool = True
    backfill_done: bool = False
    # resume point of an interrupted full-timeline fetch
    backfill_max_id: str | None = None
    backfill_fetched: int = 0

    def __post_init__(self):
        if self.newest_tweet_id and self.oldest_tweet_id:
            if int(self.newest_tweet_id) < int(self.oldest_tweet_id):
                raise ValueError("newest_tweet_id must not be older than oldest_tweet_id")

    def note_tweets(self, tweets):
        """Widen the newest/oldest bounds to cover ``tweets``."""
        for t in tweets:
            if self.newest_tweet_id is None or int(t.id) > int(self.newest_tweet_id):
                self.newest_tweet_id = t.id
            if self.oldest_tweet_id is None or int(t.id) < int(self.oldest_tweet_id):
                self.oldest_tweet_id = t.id

    def to_record(self) -> dict:
        return {
            "user_id": self.user_id,
            "handle": self.handle,
            "first_embedded_at": isoformat(self.first_embedded_at) if self.first_embedded_at else None,
            "newest_tweet_id": self.newest_tweet_id,
            "oldest_tweet_id": self.oldest_tweet_id,
            "last_topoff_at": isoformat(self.last_topoff_at) if self.last_topoff_at else None,
            "tracked": self.tracked,
            "backfill_done": self.backfill_done,
            "backfill_max_id": self.backfill_max_id,
            "backfill_fetched": self.backfill_fetched,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "UserRecord":
        def ts(v):
            return parse_iso(v) if v else None

        return cls(
            user_id=rec["user_id"],
            handle=rec.get("handle", ""),
            first_embedded_at=ts(rec.get("first_embedded_at")),
            newest_tweet_id=rec.get("newest_tweet_id"),
            oldest_tweet_id=rec.get("oldest_tweet_id"),
            last_topoff_at=ts(rec.get("last_topoff_at")),
            tracked=rec.get("tracked", True),
            backfill_done=rec.get("backfill_done", False),
            backfill_max_id=rec.get("backfill_max_id"),
            backfill_fetched=rec.get("backfill_fetched", 0),
        )


class RateBudget:
    """Fixed-window request budget.

    Windows are aligned to multiples of ``window_secs`` on the clock, the
    way the public API resets its limits. :meth:`acquire` is atomic.
    """

    def __init__(self, requests_per_window: int, window_secs: int, clock=time.time):
        if requests_per_window < 0 or window_secs <= 0:
            raise ValueError("requests_per_window >= 0 and window_secs > 0 required")
        self.requests_per_window = requests_per_window
        self.window_secs = window_secs
        self.clock = clock
        self.spent = 0
        self.window_start = None
        self._lock = threading.Lock()

    def _roll(self):
        start = math.floor(self.clock() / self.window_secs) * self.window_secs
        if start != self.window_start:
            self.window_start = start
            self.spent = 0

    def remaining(self) -> int:
        with self._lock:
            self._roll()
            return self.requests_per_window - self.spent

    def acquire(self, n: int = 1):
        with self._lock:
            self._roll()
            if self.spent + n > self.requests_per_window:
                raise BudgetExhausted(retry_at=self.window_start + self.window_secs)
            self.spent += n


# -- backends --------------------------------------------------------------

class MockBackend:
    """In-process backend over a :class:`MockTimelineStore`; counts calls."""

    def __init__(self, store: MockTimelineStore):
        self.store = store
        self.calls: list[tuple] = []

    def lookup(self, ids):
        self.calls.append(("lookup", len(ids)))
        return self.store.lookup(ids)

    def user_timeline(self, user_id, count, max_id=None, since_id=None):
        self.calls.append(("timeline", user_id, max_id, since_id))
        try:
            return self.store.user_timeline(user_id, count=count, max_id=max_id, since_id=since_id)
        except UnknownUser:
            raise BackendError(f"unknown user {user_id}") from None


class HttpBackend:
    """v1.1-style REST backend: the local mock server or the live API.

    Live credentials come from ``NT_API_BEARER`` (``NT_API_KEY`` and
    ``NT_API_SECRET`` are read for completeness but app-only bearer auth is
    what the two endpoints need).
    """

    def __init__(self, base_url: str, bearer: str | None = None, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.bearer = bearer
        self.timeout = timeout

    @classmethod
    def from_env(cls, base_url="https://api.twitter.com", timeout=30.0):
        bearer = os.environ.get("NT_API_BEARER")
        if not bearer:
            raise BackendError("live mode needs NT_API_BEARER (and NT_API_KEY/NT_API_SECRET)")
        return cls(base_url, bearer, timeout)

    def _get(self, path, params):
        url = f"{self.base_url}{path}?{urlencode(params)}"
        headers = {"Authorization": f"Bearer {self.bearer}"} if self.bearer else {}
        req = urllib.request.Request(url, headers=headers)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            if exc.code == 429:
                raise BudgetExhausted("backend answered 429") from None
            if exc.code >= 500:
                raise TransientBackendError(f"{path}: HTTP {exc.code}") from None
            raise BackendError(f"{path}: HTTP {exc.code}") from None
        except (urllib.error.URLError, OSError) as exc:
            raise TransientBackendError(f"{path}: {exc}") from exc

    def lookup(self, ids):
        return self._get("/1.1/statuses/lookup.json", {"id": ",".join(ids)})

    def user_timeline(self, user_id, count, max_id=None, since_id=None):
        params = {"user_id": user_id, "count": count, "include_rts": "true"}
        if max_id is not None:
            params["max_id"] = max_id
        if since_id is not None:
            params["since_id"] = since_id
        return self._get("/1.1/statuses/user_timeline.json", params)


# -- client ----------------------------------------------------------------

@dataclass
class TimelineCursor:
    """Where an interrupted full-timeline fetch resumes."""

    max_id: str | None = None
    fetched: int = 0


@dataclass
class Hydration:
    tweets: list[Tweet] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter((self.tweets, self.missing))


class SocialClient:
    """Budgeted access to a tweet backend.

    Every backend request, retries included, spends one unit of ``budget``.
    ``raw_sink`` receives the canonical bytes of each raw tweet object and
    returns its content address (normally ``Archive.put_blob``).
    """

    def __init__(self, backend, budget: RateBudget, raw_sink=None, batch_size=LOOKUP_BATCH,
                 page_size=PAGE_SIZE, timeline_cap=TIMELINE_CAP, retries=3, backoff_secs=2.0,
                 sleep=time.sleep, clock=utcnow):
        self.backend = backend
        self.budget = budget
        self.raw_sink = raw_sink
        self.batch_size = batch_size
        self.page_size = page_size
        self.timeline_cap = timeline_cap
        self.retries = retries
        self.backoff_secs = backoff_secs
        self.sleep = sleep
        self.clock = clock
        self._user_locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _call(self, method, *args, **kwargs):
        for attempt in range(self.retries):
            self.budget.acquire()
            try:
                return getattr(self.backend, method)(*args, **kwargs)
            except TransientBackendError as exc:
                if attempt == self.retries - 1:
                    raise BackendUnavailable(f"{method} failed {self.retries} times: {exc}") from exc
                delay = self.backoff_secs * 2 ** attempt
                log.warning("%s failed (%s), retrying in %.1fs", method, exc, delay)
                self.sleep(delay)

    def _tweet(self, raw: dict) -> Tweet:
        data = raw_bytes(raw)
        ref = self.raw_sink(data) if self.raw_sink else hashlib.sha256(data).hexdigest()
        return Tweet.from_raw(raw, ref)

    def _user_lock(self, user_id):
        with self._guard:
            return self._user_locks.setdefault(str(user_id), threading.Lock())

    def hydrate_tweets(self, ids) -> Hydration:
        """Resolve tweet ids in batches; ids the backend does not return
        (deleted, protected) are listed in ``missing``."""
        ids = list(dict.fromkeys(str(i) for i in ids))
        result = Hydration()
        for start in range(0, len(ids), self.batch_size):
            batch = ids[start:start + self.batch_size]
            try:
                raws = self._call("lookup", batch)
            except BudgetExhausted as exc:
                exc.partial = result
                exc.cursor = ids[start:]
                raise
            got = {}
            for raw in raws:
                tweet = self._tweet(raw)
                got[tweet.id] = tweet
            for tid in batch:
                if tid in got:
                    result.tweets.append(got[tid])
                else:
                    result.missing.append(tid)
        return result

    def fetch_full_timeline(self, user_id, cursor: TimelineCursor | None = None) -> list[Tweet]:
        """Newest tweets of ``user_id``, up to the timeline cap, strictly
        descending by id.

        If the budget runs out, :class:`BudgetExhausted` carries the tweets
        gathered so far in ``partial`` and a :class:`TimelineCursor` to pass
        back in.
        """
        cursor = cursor or TimelineCursor()
        max_id, fetched = cursor.max_id, cursor.fetched
        out: dict[str, Tweet] = {}
        with self._user_lock(user_id):
            while fetched < self.timeline_cap:
                count = min(self.page_size, self.timeline_cap - fetched)
                try:
                    page = self._call("user_timeline", user_id, count, max_id=max_id)
                except BudgetExhausted as exc:
                    exc.partial = _descending(out.values())
                    exc.cursor = TimelineCursor(max_id, fetched)
                    raise
                fresh = [self._tweet(r) for r in page]
                fresh = [t for t in fresh if t.id not in out
                         and (max_id is None or int(t.id) <= int(max_id))]
                if not fresh:
                    break
                fresh = fresh[:self.timeline_cap - fetched]
                for t in fresh:
                    out[t.id] = t
                fetched += len(fresh)
                max_id = str(min(int(t.id) for t in fresh) - 1)
                if len(page) < count:
                    break
        return _descending(out.values())

    def topoff_timeline(self, user: UserRecord) -> list[Tweet]:
        """Tweets newer than ``user.newest_tweet_id``; updates the record.

        An empty list is a successful top-off. On :class:`BudgetExhausted`
        the record is left untouched so the next top-off covers the same
        range again.
        """
        if not user.newest_tweet_id:
            raise ValueError(f"user {user.user_id} has no newest_tweet_id; fetch the timeline first")
        since = user.newest_tweet_id
        max_id = None
        out: dict[str, Tweet] = {}
        with self._user_lock(user.user_id):
            while True:
                try:
                    page = self._call("user_timeline", user.user_id, self.page_size,
                                      max_id=max_id, since_id=since)
                except BudgetExhausted as exc:
                    exc.partial = _descending(out.values())
                    raise
                fresh = [self._tweet(r) for r in page]
                fresh = [t for t in fresh if int(t.id) > int(since) and t.id not in out]
                if not fresh:
                    break
                for t in fresh:
                    out[t.id] = t
                max_id = str(min(int(t.id) for t in fresh) - 1)
                if len(page) < self.page_size:
                    break
            tweets = _descending(out.values())
            user.note_tweets(tweets)
            user.last_topoff_at = self.clock()
        return tweets


def _descending(tweets) -> list[Tweet]:
    return sorted(tweets, key=lambda t: int(t.id), reverse=True)
