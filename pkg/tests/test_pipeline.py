import datetime as dt
import logging
import threading
from fractions import Fraction

import pytest

from newstweet.archive import Archive
from newstweet.config import PipelineConfig
from newstweet.errors import BackendError
from newstweet.pipeline import (STAGES, DaemonLock, Pipeline, StageFailed, StartupError,
                                run_daemon, run_once)
from newstweet.social import MockBackend
from newstweet.mockapi import MockTimelineStore
from conftest import FakeClock, planted_run


def test_stage_order():
    assert STAGES == ("poll", "fetch", "extract", "hydrate", "register", "topoff", "stats")


def test_report_matches_planted_totals(planted):
    c, r = planted.corpus, planted.report
    hydrated = c.embedded_tweet_ids() - c.deleted_tweets
    assert r.new_items == len(c.feed_links)
    assert r.feeds_failed == 0
    assert r.new_articles == len(c.articles) + len(c.dead_links)
    assert r.youtube_pages == c.youtube_pages
    assert r.fetch_failed == len(c.dead_links)
    assert r.new_embeds == len(c.embeds)
    assert r.new_tweets_hydrated == len(hydrated)
    assert r.new_tweets_missing == len(c.deleted_tweets & c.embedded_tweet_ids())
    assert r.new_users == r.users_registered == len(c.embedded_users())
    assert r.records_added["tweet"] == len(c.timeline_tweet_ids())
    assert r.users_topped_off == min(10, len(c.embedded_users()))
    assert not r.budget_exhausted


def test_planted_shares(planted):
    c = planted.corpus
    with Archive(planted.config["data_dir"], read_only=True) as a:
        fetched = [x for x in a.scan("article") if x["classification"] != "fetch_failed"]
        youtube = [x for x in fetched if x["classification"] == "youtube_page"]
        assert Fraction(len(youtube), len(fetched)) == Fraction(c.youtube_pages, c.fetched_pages)
        per_platform = {}
        for e in a.scan("embed"):
            per_platform[e["platform"]] = per_platform.get(e["platform"], 0) + 1
        assert per_platform == c.platform_counts()
        youtube_ids = {x["id"] for x in youtube}
        assert not [e for e in a.scan("embed") if e["article_id"] in youtube_ids]
        assert a.verify() == []
        assert a.read_meta("seed").strip() == "1234"


def test_second_run_adds_nothing(tmp_path):
    first = planted_run(tmp_path)
    again = run_once(first.config, clock=FakeClock(), sleep=lambda s: None)
    assert all(v == 0 for v in again.records_added.values()), again.records_added
    for field in ("new_items", "new_articles", "new_embeds", "new_tweets_hydrated",
                  "new_tweets_missing", "new_users", "users_registered", "timeline_tweets",
                  "topoff_tweets"):
        assert getattr(again, field) == 0, field
    assert again.stats == first.report.stats


def test_startup_error_before_network(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")

    class Spy:
        requests = []

        def get(self, url, **kw):
            self.requests.append(url)
            raise AssertionError("network touched")

    cfg = PipelineConfig({"mode": "live", "data_dir": str(blocker / "data")})
    spy = Spy()
    with pytest.raises(StartupError):
        run_once(cfg, transport=spy, backend=object())
    assert spy.requests == []


class Exploding(MockBackend):
    def lookup(self, ids):
        raise RuntimeError("bug in backend adapter")


def test_stage_failure_names_stage(tmp_path):
    from newstweet.fixtures import plant_corpus
    corpus = plant_corpus(tmp_path)
    cfg = PipelineConfig.load(corpus.config_path)
    backend = Exploding(MockTimelineStore.load(corpus.mock_file))
    with pytest.raises(StageFailed) as err:
        run_once(cfg, clock=FakeClock(), backend=backend)
    assert err.value.stage == "hydrate"
    # earlier stages' work is kept
    with Archive(cfg["data_dir"], read_only=True) as a:
        assert a.count("embed") == len(corpus.embeds)


def test_budget_exhausted_topoff_resumes_next_window(tmp_path):
    run = planted_run(tmp_path)
    clock = FakeClock(dt.datetime(2019, 5, 22, tzinfo=dt.timezone.utc))
    with Pipeline(run.config, clock=clock, sleep=lambda s: None) as p:
        cursor = p.scheduler.epoch.cursor
        p.budget.acquire(p.budget.remaining())
        report = p.run_stages(["topoff"])
        assert report.budget_exhausted and report.users_topped_off == 0
        assert p.scheduler.epoch.cursor == cursor
        clock.advance(seconds=900)
        report = p.run_stages(["topoff"])
        assert not report.budget_exhausted
        assert report.users_topped_off == len(run.corpus.embedded_users()) - cursor


def test_backfill_resumes_across_windows(tmp_path):
    clean = planted_run(tmp_path / "clean")
    tight = planted_run(tmp_path / "tight", **{"social.requests_per_window": 3})
    assert tight.report.budget_exhausted
    clock = FakeClock()
    for _ in range(200):
        clock.advance(seconds=900)
        report = run_once(tight.config, clock=clock, sleep=lambda s: None)
        if not report.budget_exhausted:
            break
    with Archive(tight.config["data_dir"], read_only=True) as a, \
            Archive(clean.config["data_dir"], read_only=True) as b:
        assert a.keys("tweet") == b.keys("tweet")
        assert a.keys("tombstone") == b.keys("tombstone")
        assert all(u["backfill_done"] for u in a.scan("user"))


def test_topoff_collects_new_tweets(tmp_path):
    from newstweet.mockapi import MockTimelineStore
    from conftest import wire_tweets
    run = planted_run(tmp_path)
    store = MockTimelineStore.load(run.corpus.mock_file)
    uid = sorted(run.corpus.embedded_users())[0]
    store.add_tweets(uid, wire_tweets(uid, 7, first_id=10**18))
    store.dump(run.corpus.mock_file)
    clock = FakeClock()
    total = 0
    for _ in range(3):
        clock.advance(seconds=900)
        total += run_once(run.config, clock=clock, sleep=lambda s: None).topoff_tweets
    assert total == 7


def test_daemon_three_poll_cycles(tmp_path, caplog):
    from newstweet.fixtures import plant_corpus
    corpus = plant_corpus(tmp_path)
    cfg = PipelineConfig.load(corpus.config_path)
    stop = threading.Event()
    now = [0.0]

    def wait(seconds):
        now[0] += seconds
        if now[0] >= 3 * cfg["feeds.poll_interval_secs"]:
            stop.set()

    with caplog.at_level(logging.INFO, logger="newstweet"):
        cycles = run_daemon(cfg, stop=stop, monotonic=lambda: now[0], wait=wait,
                            clock=FakeClock(), sleep=lambda s: None)
    assert cycles == 3
    assert sum(r.getMessage().startswith("poll cycle") for r in caplog.records) == 3
    with Archive(cfg["data_dir"], read_only=True) as a:
        assert a.verify() == []


def test_daemon_survives_failing_stage(tmp_path, caplog):
    from newstweet.fixtures import plant_corpus
    corpus = plant_corpus(tmp_path)
    cfg = PipelineConfig.load(corpus.config_path)
    stop = threading.Event()
    now = [0.0]

    def wait(seconds):
        now[0] += seconds
        if now[0] >= 2 * cfg["feeds.poll_interval_secs"]:
            stop.set()

    backend = Exploding(MockTimelineStore.load(corpus.mock_file))
    cycles = run_daemon(cfg, stop=stop, monotonic=lambda: now[0], wait=wait,
                        clock=FakeClock(), sleep=lambda s: None, backend=backend)
    assert cycles == 2
    assert any("retrying next interval" in r.getMessage() for r in caplog.records)


def test_one_daemon_per_data_dir(tmp_path):
    with DaemonLock(tmp_path):
        with pytest.raises(StartupError):
            with DaemonLock(tmp_path):
                pass


def test_missing_backend_credentials_is_startup_error(tmp_path, monkeypatch):
    monkeypatch.delenv("NT_API_BEARER", raising=False)
    cfg = PipelineConfig({"mode": "live", "data_dir": str(tmp_path)})
    with pytest.raises(StartupError):
        Pipeline(cfg)


def test_backend_error_for_one_user_does_not_stop_register(tmp_path):
    from newstweet.fixtures import plant_corpus

    corpus = plant_corpus(tmp_path)
    broken = sorted(corpus.embedded_users())[0]

    class OneBroken(MockBackend):
        def user_timeline(self, user_id, *a, **kw):
            if user_id == broken:
                raise BackendError("protected")
            return super().user_timeline(user_id, *a, **kw)

    cfg = PipelineConfig.load(corpus.config_path)
    report = run_once(cfg, clock=FakeClock(), sleep=lambda s: None,
                      backend=OneBroken(MockTimelineStore.load(corpus.mock_file)))
    assert report.users_registered == len(corpus.embedded_users()) - 1
