"""One test per acceptance criterion. Each prints a single PASS/FAIL line."""

import contextlib
import json
import random
import time
from collections import Counter

import pytest

from newstweet.analytics import (SectionStats, platform_table, rank_domains, table_rows,
                                 Analytics)
from newstweet.archive import KINDS, Archive
from newstweet.cli import main
from newstweet.embeds import evaluate_corpus, extract_embeds
from newstweet.errors import BudgetExhausted
from newstweet.fixtures import plant_corpus
from newstweet.mockapi import MockTimelineStore
from newstweet.scheduler import TopoffScheduler
from newstweet.sections import Section
from newstweet.social import MockBackend, RateBudget, SocialClient, UserRecord
from conftest import REPO, planted_run, wire_tweets
from oracle import recount


@pytest.fixture
def verdict(capsys):
    """Print ``criterion N <name>: PASS|FAIL`` once the body finishes."""

    @contextlib.contextmanager
    def run(number, name, max_secs=None):
        start = time.perf_counter()
        ok = False
        try:
            yield
            elapsed = time.perf_counter() - start
            if max_secs is not None:
                assert elapsed < max_secs, f"took {elapsed:.2f}s, limit {max_secs}s"
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            with capsys.disabled():
                print(f"\ncriterion {number} {name}: {'PASS' if ok else 'FAIL'} ({elapsed:.2f}s)")

    return run


def test_criterion_1_table_arithmetic(verdict):
    with verdict(1, "table arithmetic golden values", max_secs=1):
        published = {  # articles, embedded, embeds, unique tweets, users -> embedded %, unique %
            "B": (41006, 2285, 4488, 3510, 2314, 6, 78),
            "E": (49263, 6827, 17233, 13380, 9152, 14, 78),
            "H": (12498, 228, 378, 351, 283, 2, 93),
            "N": (38461, 4353, 8783, 7032, 3778, 11, 80),
            "S": (59553, 14429, 35841, 27857, 9398, 24, 78),
            "T": (34435, 3105, 5118, 3782, 2313, 9, 74),
            "W": (24531, 2119, 3704, 3057, 1864, 9, 83),
            "X": (14152, 1872, 3969, 3540, 2267, 13, 89),
            "A": (273899, 35218, 79514, 60523, 27838, 13, 76),
        }
        for code, (arts, emb, embeds, uniq, users, emb_pct, uniq_pct) in published.items():
            row = SectionStats.from_counts(code, arts, emb, embeds, uniq, users)
            assert (row.embedded_pct, row.unique_tweet_pct) == (emb_pct, uniq_pct), code

        rows = {r.platform: r for r in platform_table({
            "twitter": (39498, 92299), "youtube": (19557, 27960), "instagram": (8021, 13241),
            "facebook": (1785, 2081), "reddit": (27, 32), "tiktok": (2, 17)})}
        expected = {"twitter": (57.33, 68.05), "youtube": (28.39, 20.61),
                    "instagram": (11.64, 9.76), "facebook": (2.59, 1.53)}
        for platform, shares in expected.items():
            assert (rows[platform].pct_articles, rows[platform].pct_embeddings) == shares
        assert (rows["total"].articles_with, rows["total"].embeddings) == (68890, 135630)

        _, by_avg = rank_domains({"blavity.com": (11, 107), "foxnews.com": (10038, 5000)})
        assert by_avg[0].domain == "blavity.com"
        assert by_avg[0].avg_embeds_per_article == 9.73


def test_criterion_2_end_to_end_matches_oracle(tmp_path, verdict):
    with verdict(2, "planted end-to-end run matches oracle recount", max_secs=30):
        run = planted_run(tmp_path / "run")
        c = run.corpus
        sections = {a["section"] for a in c.articles.values()}
        embed_pages = {e.article_url for e in c.embeds}
        assert len(c.articles) >= 40 and sections == {s.code for s in Section}
        assert len(embed_pages) >= 12
        assert set(c.platform_counts()) == {"twitter", "youtube", "instagram", "facebook",
                                            "reddit", "tiktok"}
        assert 0.05 <= c.youtube_pages / c.fetched_pages <= 0.09
        assert len(c.users) >= 20

        export = tmp_path / "export"
        export.mkdir()
        for kind in ("article", "embed", "tweet", "user"):
            assert main(["export", "--config", str(c.config_path), "--kind", kind,
                         "-o", str(export / f"{kind}.ndjson")]) == 0
        oracle = recount(export)
        with Archive(run.config["data_dir"], read_only=True) as archive:
            analytics = Analytics(archive)
            assert table_rows(analytics, 1)[1] == oracle["table1"]
            assert table_rows(analytics, 2)[1] == oracle["table2"]
            for code, ranks in analytics.user_rankings(k=1000).items():
                got = {m.user_id: (m.user_handle, m.total_embeds, m.unique_embedded_tweets,
                                   m.tweets_produced_in_window) for m in ranks.most_embedded}
                assert got == oracle["users"][code], code
            by_count, _ = analytics.domain_stats(min_articles=1)
            assert [(d.domain, d.article_count) for d in by_count] == oracle["by_count"]


def test_criterion_3_timeline_cap_and_topoff(verdict):
    with verdict(3, "timeline cap 3200 then top-off of 450", max_secs=10):
        store = MockTimelineStore()
        store.add_user("42", "prolific", wire_tweets("42", 5000, first_id=10_000))
        client = SocialClient(MockBackend(store), RateBudget(10**6, 900),
                              raw_sink=lambda data: "", sleep=lambda s: None)
        full = client.fetch_full_timeline("42")
        assert len(full) == 3200
        assert {t.id for t in full} == set(store.tweet_ids("42")[:3200])
        user = UserRecord("42", "prolific")
        user.note_tweets(full)

        store.add_tweets("42", wire_tweets("42", 450, first_id=100_000))
        fresh = client.topoff_timeline(user)
        ids = [t.id for t in fresh]
        assert len(ids) == 450 and len(set(ids)) == 450
        assert set(ids) == {str(i) for i in range(100_000, 100_450)}
        assert not set(ids) & {t.id for t in full}


def test_criterion_4_scheduler_coverage(verdict):
    with verdict(4, "scheduler coverage and no starvation"):
        users = [f"u{i:04d}" for i in range(1000)]
        epoch = TopoffScheduler(seed=2019, policy="epoch")
        for u in users:
            epoch.register_user(u)
        for n in range(5):
            served = [u for _ in range(20) for u in epoch.next_batch(50)]
            assert Counter(served) == Counter(users), f"epoch {n}"

        prio = TopoffScheduler(seed=2019, policy="priority")
        rng = random.Random(5)
        for i, u in enumerate(users):
            prio.register_user(u)
            prio.set_rate(u, 0.0 if i % 3 == 0 else rng.expovariate(0.1))
        last = dict.fromkeys(users, 0)
        worst = 0
        for window in range(1, 10_001):
            for u in prio.next_batch(50):
                worst = max(worst, window - last[u])
                last[u] = window
        worst = max(worst, max(10_000 - w for w in last.values()))
        # every user was served, and within the starvation cap plus one epoch
        assert min(last.values()) > 0
        assert worst <= 2 * 20 * 10 + 20


def _corpus_dump():
    cases = sorted(p for p in (REPO / "corpus").iterdir() if (p / "page.html").exists())
    return "\n".join(json.dumps([e.to_record() for e in
                                 extract_embeds((c / "page.html").read_bytes(), c.name)],
                                sort_keys=True) for c in cases).encode()


def test_criterion_5_extractor_corpus(verdict):
    with verdict(5, "extractor precision and recall 1.0, byte-identical reruns"):
        precision, recall, per_case = evaluate_corpus(REPO / "corpus")
        assert (precision, recall) == (1.0, 1.0), per_case
        assert _corpus_dump() == _corpus_dump()


def test_criterion_6_idempotent_run(tmp_path, capsys, verdict):
    with verdict(6, "re-running nt run adds zero records"):
        corpus = plant_corpus(tmp_path)
        cfg = str(corpus.config_path)
        assert main(["run", "--config", cfg, "--report", "json"]) == 0
        first = json.loads(capsys.readouterr().out)
        assert sum(first["records_added"].values()) > 0
        assert main(["run", "--config", cfg, "--report", "json"]) == 0
        second = json.loads(capsys.readouterr().out)
        assert set(second["records_added"]) == set(KINDS) | {"blob"}
        assert all(n == 0 for n in second["records_added"].values()), second["records_added"]


def test_criterion_7_latecomer_effectiveness(planted, verdict):
    with verdict(7, "effectiveness 14 for the latecomer user"):
        with Archive(planted.config["data_dir"], read_only=True) as archive:
            metrics = {m.user_handle: m for m in Analytics(archive).user_metrics()}
        late = metrics["latecomer"]
        assert late.unique_embedded_tweets == 14
        assert late.tweets_produced_in_window == 1
        assert late.effectiveness == 14


class CountingBackend(MockBackend):
    def __init__(self, store, clock):
        super().__init__(store)
        self.clock = clock
        self.call_times = []

    def lookup(self, ids):
        self.call_times.append(self.clock.t)
        return super().lookup(ids)

    def user_timeline(self, user_id, count, max_id=None, since_id=None):
        self.call_times.append(self.clock.t)
        return super().user_timeline(user_id, count, max_id, since_id)


class SimClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


def test_criterion_8_rate_budget_never_exceeded(verdict):
    with verdict(8, "backend calls within budget over 1000 windows"):
        limit, window = 12, 900
        clock = SimClock()
        store = MockTimelineStore()
        for u in range(5):
            store.add_user(str(u), f"user{u}", wire_tweets(str(u), 250, first_id=10_000 * (u + 1)))
        backend = CountingBackend(store, clock)
        # small pages keep the trace fast; call counting does not depend on size
        client = SocialClient(backend, RateBudget(limit, window, clock=clock),
                              raw_sink=lambda data: "", sleep=lambda s: None,
                              batch_size=20, page_size=40)
        rng = random.Random(8)
        ids = [t for u in range(5) for t in store.tweet_ids(str(u))]
        exhausted = 0
        while clock.t < 1000 * window:
            action = rng.random()
            try:
                if action < 0.4:
                    client.hydrate_tweets(rng.sample(ids, rng.randint(1, 60)))
                elif action < 0.8:
                    client.fetch_full_timeline(str(rng.randrange(5)))
                else:
                    user = UserRecord("0", newest_tweet_id=str(10_000 + rng.randrange(250)))
                    client.topoff_timeline(user)
            except BudgetExhausted:
                exhausted += 1
            clock.t += rng.expovariate(1 / 120)
        per_window = Counter(int(t // window) for t in backend.call_times)
        assert len(per_window) >= 990
        assert max(per_window.values()) <= limit, per_window.most_common(3)
        assert exhausted > 0
