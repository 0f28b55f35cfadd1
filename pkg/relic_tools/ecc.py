"""
Extended Hamming SECDED over 64-bit words (72,64).

Data bit i sits at codeword position DATA_POSITIONS[i] (positions 1..71 that
are not powers of two); check bits 0..6 are the Hamming parities of positions
1, 2, 4, ..., 64 and check bit 7 is the overall parity of the word and the
seven Hamming bits. Words are handled as rows of 0/1 uint8 so whole frames
are encoded and checked in one numpy product.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

WORD_BITS = 64
CHECK_BITS = 8
HAMMING_BITS = 7

CLEAN = "clean"
SINGLE = "single"
DOUBLE = "double"


def _data_positions() -> Tuple[int, ...]:
    parity = {1 << j for j in range(HAMMING_BITS)}
    return tuple(p for p in range(1, 72) if p not in parity)


DATA_POSITIONS = _data_positions()
POSITION_TO_DATA = {p: i for i, p in enumerate(DATA_POSITIONS)}

# H[i, j] = 1 when data bit i is covered by Hamming check j
H = np.array([[(p >> j) & 1 for j in range(HAMMING_BITS)] for p in DATA_POSITIONS], dtype=np.uint8)
_WEIGHTS = np.array([1 << j for j in range(HAMMING_BITS)], dtype=np.int64)


@dataclass(frozen=True)
class WordStatus:
    kind: str
    # payload bit within the word for a single data error, else None
    data_bit: Optional[int] = None
    # check bit within the word for a single check-bit error, else None
    check_bit: Optional[int] = None


def _as_words(bits: np.ndarray) -> np.ndarray:
    words = np.asarray(bits, dtype=np.uint8)
    if words.ndim == 1:
        if words.size % WORD_BITS:
            raise ValueError(f"payload of {words.size} bits is not a multiple of {WORD_BITS}")
        words = words.reshape(-1, WORD_BITS)
    return words


def _popcount8(values: np.ndarray) -> np.ndarray:
    return np.unpackbits(values.astype(np.uint8)[:, None], axis=1).sum(axis=1, dtype=np.int64)


def encode_words(bits: np.ndarray) -> np.ndarray:
    """Return one check byte per 64-bit word of `bits`."""
    words = _as_words(bits)
    hamming = (words.astype(np.int64) @ H.astype(np.int64)) & 1
    overall = (words.sum(axis=1, dtype=np.int64) + hamming.sum(axis=1, dtype=np.int64)) & 1
    check = hamming @ _WEIGHTS + (overall.astype(np.int64) << HAMMING_BITS)
    return check.astype(np.uint8)


def syndromes(bits: np.ndarray, checks: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return (hamming syndrome, overall parity) per word."""
    words = _as_words(bits)
    checks = np.asarray(checks, dtype=np.uint8)
    hamming = ((words.astype(np.int64) @ H.astype(np.int64)) & 1) @ _WEIGHTS
    syndrome = hamming ^ (checks.astype(np.int64) & 0x7F)
    parity = (words.sum(axis=1, dtype=np.int64) + _popcount8(checks)) & 1
    return syndrome, parity


def classify(syndrome: int, parity: int) -> WordStatus:
    if syndrome == 0 and parity == 0:
        return WordStatus(CLEAN)
    if parity == 0:
        return WordStatus(DOUBLE)
    if syndrome == 0:
        return WordStatus(SINGLE, check_bit=HAMMING_BITS)
    if syndrome & (syndrome - 1) == 0:
        return WordStatus(SINGLE, check_bit=int(syndrome).bit_length() - 1)
    index = POSITION_TO_DATA.get(int(syndrome))
    if index is None:
        # odd-weight pattern pointing outside the codeword: more than one flip
        return WordStatus(DOUBLE)
    return WordStatus(SINGLE, data_bit=index)


def check_words(bits: np.ndarray, checks: np.ndarray) -> Tuple[WordStatus, ...]:
    syn, par = syndromes(bits, checks)
    return tuple(classify(int(s), int(p)) for s, p in zip(syn, par))


def correct_word(word: np.ndarray, check: int, status: WordStatus) -> Tuple[np.ndarray, int]:
    """Apply a single-error correction to one word; other statuses return it unchanged."""
    fixed = np.array(word, dtype=np.uint8, copy=True)
    if status.kind != SINGLE:
        return fixed, int(check)
    if status.data_bit is not None:
        fixed[status.data_bit] ^= 1
        return fixed, int(check)
    return fixed, int(check) ^ (1 << int(status.check_bit))
