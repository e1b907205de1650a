"""Small shared helpers: stable seed derivation and tokenization."""

from __future__ import annotations

import hashlib
import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def derive_seed(*parts: object) -> int:
    """Derive a stable 64-bit seed from arbitrary parts.

    Uses sha256 rather than hash() so results are identical across
    processes and interpreter runs.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokens of a string."""
    return _TOKEN_RE.findall(text.lower())
