import datetime as dt

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newstweet.archive import Archive
from newstweet.errors import ArchiveUnavailable, MalformedFeed
from newstweet.feeds import FeedItem, FeedTracker, build_feed_url, parse_feed
from newstweet.sections import Section
from newstweet.timeutil import UTC
from newstweet.transport import FixtureTransport
from newstweet.urls import canonicalize_url

NOW = dt.datetime(2019, 5, 15, tzinfo=UTC)


def rss(*items, channel=True):
    body = "".join(f"<item><title>t{i}</title>{f'<link>{link}</link>' if link else ''}"
                   f"<pubDate>Wed, 15 May 2019 0{i % 10}:00:00 GMT</pubDate></item>"
                   for i, link in enumerate(items))
    inner = f"<channel><title>f</title>{body}</channel>" if channel else body
    return f'<?xml version="1.0"?><rss version="2.0">{inner}</rss>'.encode()


def test_sections_bijection():
    assert len(Section) == 8
    assert {s.code for s in Section} == set("BEHNSTWX")
    for s in Section:
        assert Section.from_code(s.code) is s and Section.from_token(s.token) is s


@pytest.mark.parametrize("section, base, expected", [
    (Section.SPORTS, None, "https://news.google.com/news/rss/headlines/section/topic/SPORTS"),
    (Section.HEADLINES, None, "https://news.google.com/news/rss/headlines/section/topic/HEADLINES"),
    (Section.BUSINESS, "http://localhost:9999",
     "http://localhost:9999/news/rss/headlines/section/topic/BUSINESS"),
])
def test_build_feed_url(section, base, expected):
    assert (build_feed_url(section, base) if base else build_feed_url(section)) == expected


def test_parse_three_items_in_order():
    items = parse_feed(rss("https://a.com/1", "https://a.com/2", "https://a.com/3"),
                       Section.WORLD, seen_at=NOW)
    assert [i.link for i in items] == ["https://a.com/1", "https://a.com/2", "https://a.com/3"]
    assert items[0].published_at == dt.datetime(2019, 5, 15, 0, tzinfo=UTC)
    assert all(i.section is Section.WORLD and i.seen_at == NOW for i in items)


def test_empty_channel():
    items = parse_feed(rss(), Section.WORLD)
    assert items == [] and items.skipped == 0


def test_missing_link_skipped_and_counted():
    items = parse_feed(rss("https://a.com/1", None), Section.SPORTS)
    assert len(items) == 1 and items.skipped == 1


def test_relative_link_skipped():
    items = parse_feed(rss("/relative", "https://a.com/1"), Section.SPORTS)
    assert [i.link for i in items] == ["https://a.com/1"] and items.skipped == 1


def test_malformed_without_channel_reports_offset():
    data = b"<rss><oops & broken"
    with pytest.raises(MalformedFeed) as err:
        parse_feed(data, Section.SPORTS)
    assert 0 < err.value.offset <= len(data)


def test_wellformed_without_channel():
    with pytest.raises(MalformedFeed) as err:
        parse_feed(b"<html><body/></html>", Section.SPORTS)
    assert err.value.offset == 0


def test_salvage_at_item_boundary():
    data = rss("https://a.com/1", "https://a.com/2").replace(
        b"</channel>", b"<item><title>Q&A</title><link>https://a.com/bad</link></item>"
                       b"<item><title>ok</title><link>https://a.com/3</link></item></channel>")
    items = parse_feed(data, Section.HEALTH)
    assert items.recovered
    assert [i.link for i in items] == ["https://a.com/1", "https://a.com/2", "https://a.com/3"]
    assert items.skipped == 1


def test_feed_item_record_roundtrip():
    item = FeedItem("https://a.com/x", "t", NOW, Section.TECHNOLOGY, NOW)
    assert FeedItem.from_record(item.to_record()) == item


def _items(*links):
    return [FeedItem(l, "t", NOW, Section.NATION, NOW) for l in links]


def test_ingest_examples(tmp_path):
    with Archive(tmp_path) as archive:
        tracker = FeedTracker(archive, transport=None)
        five = _items(*(f"https://a.com/{i}" for i in range(5)))
        assert len(tracker.ingest_items(five)) == 5
        assert tracker.ingest_items(five) == []
    with Archive(tmp_path / "other") as archive:
        tracker = FeedTracker(archive, transport=None)
        dup = _items("https://a.com/0", "https://a.com/1", "https://A.com/1?utm_source=x",
                     "https://a.com/2", "https://a.com/3")
        assert len(tracker.ingest_items(dup)) == 4


links = st.lists(st.builds(lambda h, p, q: f"https://{h}/{p}{q}",
                           st.sampled_from(["a.com", "A.com", "b.org:443"]),
                           st.sampled_from(["", "x", "y/z"]),
                           st.sampled_from(["", "?utm_source=1", "?k=1", "#f"])), max_size=12)


@settings(max_examples=40, deadline=None)
@given(first=links, second=links)
def test_ingest_matches_set_oracle(tmp_path_factory, first, second):
    root = tmp_path_factory.mktemp("ingest")
    with Archive(root) as archive:
        tracker = FeedTracker(archive, transport=None)
        got1 = tracker.ingest_items(_items(*first))
        got2 = tracker.ingest_items(_items(*second))
    seen = {canonicalize_url(l) for l in first}
    assert len(got1) == len(seen)
    assert len(got2) == len({canonicalize_url(l) for l in second} - seen)
    assert all(i.link for i in got1 + got2)


def test_poll_repeatedly_queues_once(tmp_path):
    t = FixtureTransport(tmp_path / "http")
    for s in Section:
        t.record(build_feed_url(s), 200, rss(f"https://a.com/{s.code}", "https://a.com/shared"))
    with Archive(tmp_path / "data") as archive:
        tracker = FeedTracker(archive, t)
        seen, fresh, failed = tracker.poll()
        assert (seen, len(fresh), failed) == (16, 9, [])
        for _ in range(3):
            assert tracker.poll()[1] == []
        assert archive.count("queue_item") == 9


def test_poll_survives_failing_section(tmp_path):
    t = FixtureTransport(tmp_path / "http")
    t.record(build_feed_url(Section.SPORTS), 200, rss("https://a.com/1"))
    t.record(build_feed_url(Section.WORLD), 500, b"")
    with Archive(tmp_path / "data") as archive:
        seen, fresh, failed = FeedTracker(archive, t).poll()
    assert seen == 1 and len(fresh) == 1
    assert len(failed) == 7


def test_ingest_wraps_archive_errors(tmp_path):
    archive = Archive(tmp_path)
    archive.close()

    class Broken:
        def upsert(self, *a, **k):
            raise OSError("disk gone")

    with pytest.raises(ArchiveUnavailable):
        FeedTracker(Broken(), transport=None).ingest_items(_items("https://a.com/"))
