"""The eight aggregator news sections."""

import enum


class Section(str, enum.Enum):
    BUSINESS = "B"
    ENTERTAINMENT = "E"
    HEALTH = "H"
    NATION = "N"
    SPORTS = "S"
    TECHNOLOGY = "T"
    WORLD = "W"
    HEADLINES = "X"

    @property
    def code(self) -> str:
        return self.value

    @property
    def token(self) -> str:
        """Default feed-path token, e.g. ``SPORTS``."""
        return self.name

    @classmethod
    def from_code(cls, code: str) -> "Section":
        try:
            return cls(code.strip().upper())
        except ValueError:
            raise ValueError(f"unknown section code: {code!r}") from None

    @classmethod
    def from_token(cls, token: str) -> "Section":
        try:
            return cls[token.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown section token: {token!r}") from None


DEFAULT_TOKENS = {s: s.token for s in Section}
