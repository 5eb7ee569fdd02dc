"""Symmetric cipher, salted label hash and height-coin PRG.

Randomness is always drawn from an injected :class:`random.Random`
instance.  Production code passes :class:`random.SystemRandom` (OS
entropy); tests pass a seeded ``random.Random`` so that every persistent
byte is reproducible.
"""

from __future__ import annotations

import hashlib
import random

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import AuthError, LabelTooLong

KEY_BYTES = 32
NONCE_BYTES = 12
TAG_BYTES = 16
MAX_LABEL_BYTES = 1024


def system_rng() -> random.Random:
    return random.SystemRandom()


def new_key(rng: random.Random, nbytes: int = KEY_BYTES) -> bytes:
    return rng.randbytes(nbytes)


class AeadCipher:
    """AES-256-GCM with a random nonce prepended to each ciphertext.

    Ciphertexts are exactly ``len(plaintext) + overhead`` bytes, so every
    bucket of a store has the same encrypted size.
    """

    overhead = NONCE_BYTES + TAG_BYTES
    key_bytes = KEY_BYTES

    def __init__(self, rng: random.Random | None = None):
        self.rng = rng if rng is not None else system_rng()

    def encrypt(self, key: bytes, plaintext: bytes) -> bytes:
        nonce = self.rng.randbytes(NONCE_BYTES)
        return nonce + AESGCM(key).encrypt(nonce, plaintext, None)

    def decrypt(self, key: bytes, ciphertext: bytes) -> bytes:
        if len(ciphertext) < self.overhead:
            raise AuthError("ciphertext too short")
        nonce, body = ciphertext[:NONCE_BYTES], ciphertext[NONCE_BYTES:]
        try:
            return AESGCM(key).decrypt(nonce, body, None)
        except (InvalidTag, ValueError) as exc:
            raise AuthError("bucket failed authentication") from exc


class PlainCipher:
    """Identity "cipher" for simulations that run without encryption."""

    overhead = 0
    key_bytes = KEY_BYTES

    def encrypt(self, key: bytes, plaintext: bytes) -> bytes:
        return bytes(plaintext)

    def decrypt(self, key: bytes, ciphertext: bytes) -> bytes:
        return bytes(ciphertext)


def encrypt_bucket(cipher, key: bytes, plaintext: bytes) -> bytes:
    return cipher.encrypt(key, plaintext)


def decrypt_bucket(cipher, key: bytes, ciphertext: bytes) -> bytes:
    return cipher.decrypt(key, ciphertext)


def label_hash_bits(H: int, beta: int, gamma: int, lam: int = 256) -> int:
    """Digest length ``max(2 H lg(beta) + gamma, lam)`` in bits."""
    # lg(beta) is irrational for most beta; ceil keeps the bound conservative
    two_h_lg = 0
    if beta > 1:
        # smallest integer >= 2*H*log2(beta), computed exactly
        two_h_lg = (beta ** (2 * H) - 1).bit_length()
    return max(two_h_lg + gamma, lam)


def hash_label(salt: bytes, label: bytes, nbits: int,
               max_label: int = MAX_LABEL_BYTES) -> bytes:
    """Salted SHAKE-256 digest of ``label`` truncated to ``nbits`` bits.

    The result is ``ceil(nbits / 8)`` bytes with unused low-order bits of
    the last byte cleared, so byte-wise comparison is the bitwise order.
    """
    if not label:
        raise ValueError("label must be non-empty")
    if len(label) > max_label:
        raise LabelTooLong(f"label is {len(label)} bytes, limit {max_label}")
    nbytes = (nbits + 7) // 8
    digest = bytearray(hashlib.shake_256(salt + label).digest(nbytes))
    spare = nbytes * 8 - nbits
    if spare:
        digest[-1] &= 0xFF << spare & 0xFF
    return bytes(digest)


def height_coins(h: bytes, H: int, beta: int) -> list[int]:
    """``H`` coins in ``range(beta)`` expanded from a label hash.

    Each coin is a 64-bit word reduced mod ``beta``; the modulo bias is
    below ``beta / 2**64``.
    """
    if beta < 2 or H < 1:
        raise ValueError("need beta >= 2 and H >= 1")
    stream = hashlib.shake_256(b"height-coins" + h).digest(8 * H)
    return [int.from_bytes(stream[8 * i:8 * i + 8], "big") % beta
            for i in range(H)]
