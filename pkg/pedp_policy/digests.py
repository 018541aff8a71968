"""
Generate stable content digests for vocabularies, layouts, payloads and run configs.
"""

import hashlib
import json
from typing import Any, Iterable


def _convert_to_id(text: str) -> str:
    """Convert a string to a sha256 hex digest."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def lines_digest(lines: Iterable[str]) -> str:
    """Digest an ordered sequence of lines; order matters."""
    return _convert_to_id("\n".join(lines))


def json_digest(payload: Any) -> str:
    """Digest a JSON-serialisable value independently of dict insertion order."""
    return _convert_to_id(json.dumps(payload, sort_keys=True, separators=(",", ":")))


def bytes_digest(chunks: Iterable[bytes]) -> str:
    digest = hashlib.sha256()
    for chunk in chunks:
        digest.update(chunk)
    return digest.hexdigest()


def short_id(digest: str, length: int = 12) -> str:
    """Shorten a digest for file names and log lines."""
    return digest[:length]
