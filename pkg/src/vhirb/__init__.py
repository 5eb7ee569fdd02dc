"""Oblivious, securely deleting, history-independent key/value storage.

The stack, bottom to top:

* :mod:`vhirb.store` and :mod:`vhirb.server`: fixed-size bucket storage
  (memory, directory, remote TCP) and the blob server.
* :mod:`vhirb.voram`: an ORAM over variable-size blocks with per-bucket
  key chaining.
* :mod:`vhirb.hirb`: a history-independent randomized B-tree whose nodes
  are vORAM blocks.
* :mod:`vhirb.omap`: the user-facing map and parameter derivation.
"""

from .crypto import AeadCipher, PlainCipher
from .errors import (AuthError, BucketTooSmall, CapacityExceeded, LabelTooLong,
                     NotFound, NotInitialized, ParseError, ProtocolError,
                     SizeMismatch, StashOverflow, StoreError, StoreTimeout,
                     VhirbError)
from .hirb import Hirb, HirbNode
from .naive import NaiveMap
from .omap import ObliviousMap, OmapConfig, derive_params
from .store import (BucketStore, BufferedStore, DirectoryStore, MemoryStore,
                    RecordingStore, StoreStats, open_backend)
from .voram import VOram, VoramConfig

__version__ = "0.1.0"

__all__ = [
    "AeadCipher", "PlainCipher", "AuthError", "BucketTooSmall", "CapacityExceeded",
    "LabelTooLong", "NotFound", "NotInitialized", "ParseError", "ProtocolError",
    "SizeMismatch", "StashOverflow", "StoreError", "StoreTimeout", "VhirbError",
    "Hirb", "HirbNode", "NaiveMap", "ObliviousMap", "OmapConfig", "derive_params",
    "BucketStore", "BufferedStore", "DirectoryStore", "MemoryStore", "RecordingStore",
    "StoreStats", "open_backend", "VOram", "VoramConfig",
]
