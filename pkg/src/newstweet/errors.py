"""Exception hierarchy shared across the pipeline stages."""


class NewsTweetError(Exception):
    """Base class for all package errors."""


class ConfigError(NewsTweetError):
    pass


class MalformedFeed(NewsTweetError):
    """The feed document has no recoverable channel.

    ``offset`` is the byte offset of the first parse failure.
    """

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class InvalidUrl(NewsTweetError, ValueError):
    pass


class ArchiveError(NewsTweetError):
    pass


class ArchiveUnavailable(ArchiveError):
    pass


class ArchiveCorrupt(ArchiveError):
    pass


class ImmutableConflict(ArchiveError):
    pass


class ValidationFailed(ArchiveError, ValueError):
    pass


class BackendError(NewsTweetError):
    pass


class TransientBackendError(BackendError):
    """A backend failure worth retrying (connection reset, 5xx)."""


class BackendUnavailable(BackendError):
    pass


class BudgetExhausted(NewsTweetError):
    """No request slots left in the current rate window.

    Operations that were interrupted attach what they already collected in
    ``partial`` and, where resumable, a ``cursor`` to continue from.
    """

    def __init__(self, message="rate budget exhausted", partial=None, cursor=None,
                 retry_at=None):
        super().__init__(message)
        self.partial = partial if partial is not None else []
        self.cursor = cursor
        self.retry_at = retry_at
