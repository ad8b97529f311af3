import datetime as dt

UTC = dt.timezone.utc


def utcnow() -> dt.datetime:
    return dt.datetime.now(UTC)


def from_epoch(seconds: float) -> dt.datetime:
    return dt.datetime.fromtimestamp(seconds, UTC)


def isoformat(ts: dt.datetime) -> str:
    """Render as ``YYYY-MM-DDTHH:MM:SSZ`` (UTC, second precision)."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=UTC)
    return ts.astimezone(UTC).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_iso(text: str) -> dt.datetime:
    ts = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=UTC)
    return ts.astimezone(UTC)


TWITTER_TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"


_MONTHS = {m: i for i, m in enumerate(
    "Jan Feb Mar Apr May Jun Jul Aug Sep Oct Nov Dec".split(), start=1)}


def parse_twitter_time(text: str) -> dt.datetime:
    # the backend always sends "Wed Oct 10 20:19:24 +0000 2018"; strptime is
    # slow enough to dominate timeline parsing, so that shape is sliced directly
    parts = text.split()
    if len(parts) == 6 and parts[4] == "+0000" and parts[1] in _MONTHS:
        try:
            h, m, s = parts[3].split(":")
            return dt.datetime(int(parts[5]), _MONTHS[parts[1]], int(parts[2]),
                               int(h), int(m), int(s), tzinfo=UTC)
        except ValueError:
            pass
    return dt.datetime.strptime(text, TWITTER_TIME_FORMAT).astimezone(UTC)


def format_twitter_time(ts: dt.datetime) -> str:
    return ts.astimezone(UTC).strftime(TWITTER_TIME_FORMAT)
