"""Exception hierarchy shared by every layer of the storage engine."""


class VhirbError(Exception):
    """Base class for all errors raised by this package."""


class AuthError(VhirbError):
    """A ciphertext failed authentication (wrong key or tampering)."""


class LabelTooLong(VhirbError, ValueError):
    pass


class NotInitialized(VhirbError):
    """The bucket store has not been initialized yet."""


class StoreError(VhirbError, OSError):
    """I/O failure inside a bucket store backend."""


class SizeMismatch(VhirbError, ValueError):
    pass


class ProtocolError(VhirbError):
    """Malformed frame on the blob-server wire protocol."""


class StoreTimeout(StoreError, TimeoutError):
    pass


class ParseError(VhirbError, ValueError):
    """A decrypted bucket or node does not follow the expected layout."""


class LevelOutOfRange(VhirbError, ValueError):
    pass


class NotFound(VhirbError, KeyError):
    """An identifier is unknown or has already been consumed."""


class StashOverflow(VhirbError):
    def __init__(self, stash_bytes: int, limit: int):
        super().__init__(f"stash holds {stash_bytes} bytes, limit is {limit}")
        self.stash_bytes = stash_bytes
        self.limit = limit


class CapacityExceeded(VhirbError):
    pass


class BucketTooSmall(VhirbError, ValueError):
    pass
