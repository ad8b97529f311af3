"""Plant a synthetic news corpus, run every stage once, print the four tables.

    python demos/planted_run.py [workdir]

Without a workdir the corpus goes to a temporary directory that is removed
afterwards. Feeds, article pages and the tweet API are all served from local
fixtures, so nothing touches the network.
"""

import sys
import tempfile
from pathlib import Path

from newstweet.analytics import Analytics, render
from newstweet.archive import Archive
from newstweet.config import PipelineConfig
from newstweet.fixtures import plant_corpus
from newstweet.pipeline import run_once


def main(workdir):
    corpus = plant_corpus(workdir)
    print(f"planted {len(corpus.articles)} articles, {len(corpus.embeds)} embeds, "
          f"{len(corpus.users)} mock users under {workdir}\n")

    config = PipelineConfig.load(corpus.config_path)
    report = run_once(config)
    for key, value in report.to_dict().items():
        if value and key != "stats":
            print(f"  {key}: {value}")

    # a second run over unchanged fixtures finds nothing new
    again = run_once(config)
    print(f"\nsecond run added {sum(again.records_added.values())} records\n")

    with Archive(config["data_dir"], read_only=True) as archive:
        analytics = Analytics(archive)
        for table in (1, 2, 3, 4):
            # the planted domains are small, so lower the average-embeds threshold
            print(render(analytics, table, "markdown", k=3, min_articles=2))
        late = {m.user_handle: m for m in analytics.user_metrics()}["latecomer"]
        print(f"latecomer: {late.unique_embedded_tweets} embedded tweets, "
              f"{late.tweets_produced_in_window} produced in window, "
              f"effectiveness {late.effectiveness:g}")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            main(Path(tmp))
