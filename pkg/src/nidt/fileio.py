"""Small file helpers shared by every module: atomic writes and key-value text files."""

from __future__ import annotations

import contextlib
import os
import tempfile
from pathlib import Path
from typing import Iterator, Mapping


@contextlib.contextmanager
def atomic_open(path: str | os.PathLike, mode: str = "w") -> Iterator:
    """Open a temp file next to ``path`` and rename it into place on clean exit.

    Readers never observe a partially written file; on error the temp file is removed.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    binary = "b" in mode
    try:
        with os.fdopen(fd, mode, **({} if binary else {"encoding": "utf-8", "newline": ""})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_kv(path: str | os.PathLike, items: Mapping[str, object], comment: str | None = None) -> None:
    """Write ``key = value`` lines, one per item, in insertion order."""
    with atomic_open(path) as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        for key, value in items.items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            fh.write(f"{key} = {value}\n")


def parse_kv(text: str, source: str = "<text>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"), source=str(path))


def format_float(value: float) -> str:
    """Shortest text that round-trips ``value`` exactly; integral values drop the ``.0``."""
    if value.is_integer() and abs(value) < 2**53 and not (value == 0 and str(value).startswith("-")):
        return str(int(value))
    return repr(value)
