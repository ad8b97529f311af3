import datetime as dt
import sys
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from newstweet.config import PipelineConfig  # noqa: E402
from newstweet.fixtures import plant_corpus  # noqa: E402
from newstweet.pipeline import run_once  # noqa: E402
from newstweet.timeutil import UTC  # noqa: E402

RUN_AT = dt.datetime(2019, 5, 21, 12, 0, tzinfo=UTC)
REPO = Path(__file__).resolve().parent.parent


class FakeClock:
    """Settable UTC clock; ``advance`` moves it forward."""

    def __init__(self, start=RUN_AT):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, **kw):
        self.now += dt.timedelta(**kw)


@dataclass
class PlantedRun:
    corpus: object
    config: PipelineConfig
    report: object


def planted_run(root, **overrides) -> PlantedRun:
    corpus = plant_corpus(root)
    config = PipelineConfig.load(corpus.config_path,
                                 [f"{k}={v}" for k, v in overrides.items()])
    report = run_once(config, clock=FakeClock(), sleep=lambda s: None)
    return PlantedRun(corpus, config, report)


@pytest.fixture(scope="session")
def planted(tmp_path_factory):
    """One pipeline run over the planted corpus; treat as read-only."""
    return planted_run(tmp_path_factory.mktemp("planted"))


def wire_tweets(user_id, count, first_id=1000, created=dt.datetime(2019, 1, 1, tzinfo=UTC)):
    """``count`` mock tweets with ascending ids starting at ``first_id``."""
    from newstweet.timeutil import format_twitter_time
    return [{"id_str": str(first_id + i),
             "created_at": format_twitter_time(created + dt.timedelta(minutes=i)),
             "text": f"tweet {first_id + i} of {user_id}"} for i in range(count)]
