import datetime as dt
import threading

from newstweet.archive import Archive
from newstweet.feeds import FeedItem
from newstweet.fetcher import Article, ArticleFetcher, HostGate
from newstweet.sections import Section
from newstweet.timeutil import UTC
from newstweet.transport import FixtureTransport
from newstweet.urls import url_id

NOW = dt.datetime(2019, 5, 15, tzinfo=UTC)


def item(link, section=Section.SPORTS):
    return FeedItem(link, "t", NOW, section, NOW)


def setup(tmp_path):
    t = FixtureTransport(tmp_path / "http")
    archive = Archive(tmp_path / "data")
    fetcher = ArticleFetcher(archive, t, per_host_delay_ms=0, clock=lambda: NOW)
    return t, archive, fetcher


def test_redirect_to_publisher(tmp_path):
    t, archive, f = setup(tmp_path)
    t.record("http://agg.example/a/1", 301, headers={"Location": "https://WWW.Pub.com/s?utm_source=g"})
    t.record("https://WWW.Pub.com/s?utm_source=g", 200, b"<html>story</html>")
    a = f.resolve_and_fetch(item("http://agg.example/a/1"))
    assert a.classification == "publisher_page"
    assert a.canonical_url == "https://www.pub.com/s"
    assert a.domain == "pub.com"
    assert a.http_status == 200
    assert archive.get_blob(a.html_ref) == b"<html>story</html>"
    assert a.id == url_id("https://www.pub.com/s")
    assert archive.get("queue_item", "http://agg.example/a/1")["status"] == "done"
    archive.close()


def test_relative_redirect(tmp_path):
    t, archive, f = setup(tmp_path)
    t.record("https://pub.com/old", 302, headers={"Location": "/new"})
    t.record("https://pub.com/new", 200, b"x")
    assert f.fetch(item("https://pub.com/old")).canonical_url == "https://pub.com/new"
    archive.close()


def test_youtube_page_still_stored(tmp_path):
    t, archive, f = setup(tmp_path)
    t.record("https://www.youtube.com/watch?v=abc", 200, b"<html>video</html>")
    a = f.resolve_and_fetch(item("https://www.youtube.com/watch?v=abc"))
    assert a.classification == "youtube_page"
    assert a.html_ref and archive.has_blob(a.html_ref)
    archive.close()


def test_404_is_fetch_failed(tmp_path):
    t, archive, f = setup(tmp_path)
    t.record("https://pub.com/gone", 404, b"nope")
    a = f.resolve_and_fetch(item("https://pub.com/gone"))
    assert (a.classification, a.http_status, a.html_ref) == ("fetch_failed", 404, None)
    assert archive.get("article", a.id)["html_ref"] is None
    archive.close()


def test_network_error_is_status_zero(tmp_path):
    t, archive, f = setup(tmp_path)
    a = f.resolve_and_fetch(item("https://unreachable.example/"))
    assert (a.classification, a.http_status) == ("fetch_failed", 0)
    archive.close()


def test_redirect_limit(tmp_path):
    t, archive, f = setup(tmp_path)
    for i in range(12):
        t.record(f"https://loop.com/{i}", 301, headers={"Location": f"https://loop.com/{i + 1}"})
    t.record("https://loop.com/12", 200, b"end")
    a = f.fetch(item("https://loop.com/0"))
    assert (a.classification, a.http_status) == ("fetch_failed", 0)
    # exactly ten redirects are followed
    assert f.fetch(item("https://loop.com/2")).classification == "publisher_page"
    archive.close()


def test_two_links_same_final_url_one_article(tmp_path):
    t, archive, f = setup(tmp_path)
    t.record("http://agg/1", 301, headers={"Location": "https://pub.com/x"})
    t.record("http://agg/2", 301, headers={"Location": "https://pub.com/x?fbclid=zz"})
    t.record("https://pub.com/x", 200, b"same")
    t.record("https://pub.com/x?fbclid=zz", 200, b"same")
    results = f.fetch_all([item("http://agg/1", Section.SPORTS), item("http://agg/2", Section.WORLD)])
    assert [o for _, o in results] == ["inserted", "unchanged"]
    assert archive.count("article") == 1
    assert archive.get("article", results[0][0].id)["section"] == "S"
    archive.close()


def test_article_record_roundtrip():
    a = Article("id", "https://x.com/", "x.com", Section.HEALTH, NOW, 200, "publisher_page",
                "ab" * 32, NOW, "http://agg/1")
    assert Article.from_record(a.to_record()) == a


class SimClock:
    def __init__(self):
        self.t = 0.0
        self.sleeps = []

    def clock(self):
        return self.t

    def sleep(self, s):
        self.sleeps.append(s)
        self.t += s


def test_host_gate_spacing_on_simulated_clock():
    c = SimClock()
    gate = HostGate(1.0, clock=c.clock, sleep=c.sleep)
    stamps = []
    for host in ["a", "a", "b", "a"]:
        gate.request(host, lambda h=host: stamps.append((h, c.t)))
        c.t += 0.25
    a_times = [t for h, t in stamps if h == "a"]
    assert all(b - a >= 1.0 for a, b in zip(a_times, a_times[1:]))
    assert stamps[2] == ("b", 1.25)  # other hosts are not delayed


def test_host_gate_one_in_flight_per_host():
    gate = HostGate(0.0)
    active, peak = [0], [0]
    lock = threading.Lock()

    def work():
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        threading.Event().wait(0.005)
        with lock:
            active[0] -= 1

    threads = [threading.Thread(target=gate.request, args=("h", work)) for _ in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert peak[0] == 1
