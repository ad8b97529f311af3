"""Serve a mock tweet API over HTTP and walk a timeline through it.

    python demos/mock_api.py

Starts the local mock server on a free port, does a capped full-timeline
fetch, adds fresh tweets to the store and collects them with a top-off. The
same server can back a pipeline run via ``--set social.base_url=...``.
"""

import datetime as dt

from newstweet.mockapi import MockServer, MockTimelineStore
from newstweet.social import HttpBackend, RateBudget, SocialClient, UserRecord
from newstweet.timeutil import UTC, format_twitter_time


def tweets(user_id, count, first_id):
    start = dt.datetime(2019, 5, 1, tzinfo=UTC)
    return [{"id_str": str(first_id + i), "text": f"tweet {i}",
             "created_at": format_twitter_time(start + dt.timedelta(minutes=i))}
            for i in range(count)]


def main():
    store = MockTimelineStore()
    store.add_user("7", "newsdesk", tweets("7", 3500, 10_000))
    with MockServer(store) as server:
        print(f"mock API at {server.base_url}")
        budget = RateBudget(900, 900)
        client = SocialClient(HttpBackend(server.base_url), budget, raw_sink=None)

        full = client.fetch_full_timeline("7")
        print(f"full fetch: {len(full)} of 3500 tweets (timeline depth cap), "
              f"{len(server.hits)} requests")

        user = UserRecord("7", "newsdesk")
        user.note_tweets(full)
        store.add_tweets("7", tweets("7", 25, 50_000))
        fresh = client.topoff_timeline(user)
        print(f"top-off: {len(fresh)} new tweets, newest id {user.newest_tweet_id}")
        print(f"budget left this window: {budget.remaining()}")


if __name__ == "__main__":
    main()
