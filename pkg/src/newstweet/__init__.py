"""newstweet: collect news articles, the social-media posts they embed, and
the timelines of the embedded authors.

The pipeline polls aggregator RSS sections, fetches newly seen articles,
scans their HTML for embeds, hydrates embedded tweets, keeps the authors'
timelines topped off under a rate budget, and derives descriptive tables
from the resulting archive.
"""

from newstweet.sections import Section

__version__ = "0.1.0"

__all__ = ["Section", "__version__"]
