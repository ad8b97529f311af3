"""A stand-in for the tweet API, in-process or over local HTTP.

The fixture file ``mock_users.json`` maps user ids to a screen name and a
tweet list::

    {"users": {"1001": {"screen_name": "someone",
                        "tweets": [{"id_str": "5", "created_at": "...",
                                    "text": "...", "deleted": false}, ...]}}}

Tweet objects use the v1.1 wire shape (``id_str``, ``created_at`` in
``Wed Oct 10 20:19:24 +0000 2018`` form, ``text``, optional ``coordinates``
and ``retweeted_status``). A tweet flagged ``deleted`` is invisible to
lookups and timelines.

Endpoints served by :class:`MockServer` (same pagination rules as the live
API: ``max_id`` inclusive, ``since_id`` exclusive, ``count`` capped at 200,
only the newest 3,200 tweets reachable)::

    GET /1.1/statuses/lookup.json?id=1,2,3
    GET /1.1/statuses/user_timeline.json?user_id=U&count=N&max_id=M&since_id=S
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

MAX_COUNT = 200
TIMELINE_DEPTH = 3200


class UnknownUser(KeyError):
    pass


class MockTimelineStore:
    def __init__(self, users=None):
        self._lock = threading.Lock()
        self.users: dict[str, dict] = {}
        self._by_id: dict[str, tuple[str, dict]] = {}
        for user_id, spec in (users or {}).items():
            self.add_user(user_id, spec.get("screen_name", f"user{user_id}"), spec.get("tweets", ()))

    @classmethod
    def load(cls, path) -> "MockTimelineStore":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data.get("users", {}))

    def dump(self, path):
        with self._lock:
            users = {uid: {"screen_name": u["screen_name"], "tweets": u["tweets"]}
                     for uid, u in sorted(self.users.items())}
        Path(path).write_text(json.dumps({"users": users}, indent=1, sort_keys=True),
                              encoding="utf-8")

    def add_user(self, user_id, screen_name, tweets=()):
        with self._lock:
            self.users[str(user_id)] = {"screen_name": screen_name, "tweets": []}
        self.add_tweets(user_id, tweets)

    def add_tweets(self, user_id, tweets):
        with self._lock:
            user = self.users[str(user_id)]
            for tweet in tweets:
                tweet = dict(tweet)
                user["tweets"].append(tweet)
                self._by_id[tweet["id_str"]] = (str(user_id), tweet)
            user["tweets"].sort(key=lambda t: int(t["id_str"]), reverse=True)

    def delete(self, tweet_id):
        with self._lock:
            self._by_id[str(tweet_id)][1]["deleted"] = True

    def _wire(self, user_id, tweet):
        out = {k: v for k, v in tweet.items() if k != "deleted"}
        out["id"] = int(tweet["id_str"])
        user = self.users[user_id]
        out["user"] = {"id_str": user_id, "id": int(user_id), "screen_name": user["screen_name"]}
        return out

    def lookup(self, ids) -> list[dict]:
        with self._lock:
            out = []
            for tid in ids:
                hit = self._by_id.get(str(tid))
                if hit and not hit[1].get("deleted"):
                    out.append(self._wire(*hit))
            return out

    def user_timeline(self, user_id, count=20, max_id=None, since_id=None) -> list[dict]:
        user_id = str(user_id)
        with self._lock:
            if user_id not in self.users:
                raise UnknownUser(user_id)
            visible = [t for t in self.users[user_id]["tweets"] if not t.get("deleted")]
            visible = visible[:TIMELINE_DEPTH]
            page = []
            for tweet in visible:
                tid = int(tweet["id_str"])
                if max_id is not None and tid > int(max_id):
                    continue
                if since_id is not None and tid <= int(since_id):
                    break
                page.append(self._wire(user_id, tweet))
                if len(page) >= min(int(count), MAX_COUNT):
                    break
            return page

    def tweet_ids(self, user_id) -> list[str]:
        with self._lock:
            return [t["id_str"] for t in self.users[str(user_id)]["tweets"] if not t.get("deleted")]


class _Handler(BaseHTTPRequestHandler):
    store: MockTimelineStore

    def log_message(self, fmt, *args):
        pass

    def _send(self, status, obj):
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        parts = urlsplit(self.path)
        q = {k: v[-1] for k, v in parse_qs(parts.query).items()}
        self.server.hits.append(parts.path)
        if parts.path == "/1.1/statuses/lookup.json":
            ids = [i for i in q.get("id", "").split(",") if i]
            if len(ids) > 100:
                return self._send(400, {"errors": [{"message": "too many ids"}]})
            return self._send(200, self.server.store.lookup(ids))
        if parts.path == "/1.1/statuses/user_timeline.json":
            try:
                page = self.server.store.user_timeline(
                    q.get("user_id"), count=q.get("count", 20),
                    max_id=q.get("max_id"), since_id=q.get("since_id"))
            except UnknownUser:
                return self._send(404, {"errors": [{"code": 34, "message": "not found"}]})
            return self._send(200, page)
        self._send(404, {"errors": [{"message": "no such endpoint"}]})


class MockServer:
    """Serve a :class:`MockTimelineStore` on localhost in a background thread.

    >>> with MockServer(store) as server:       # doctest: +SKIP
    ...     HttpBackend(server.base_url)
    """

    def __init__(self, store: MockTimelineStore, host="127.0.0.1", port=0):
        self.store = store
        self.httpd = ThreadingHTTPServer((host, port), _Handler)
        self.httpd.store = store
        self.httpd.hits = []
        self._thread = None

    @property
    def base_url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def hits(self) -> list[str]:
        return self.httpd.hits

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def main(argv=None):
    import argparse

    parser = argparse.ArgumentParser(description="serve mock_users.json as a tweet API")
    parser.add_argument("fixture")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8799)
    args = parser.parse_args(argv)
    server = MockServer(MockTimelineStore.load(args.fixture), args.host, args.port)
    print(f"serving {args.fixture} on {server.base_url}", flush=True)
    try:
        server.httpd.serve_forever()
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
