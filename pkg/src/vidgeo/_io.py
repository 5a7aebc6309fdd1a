"""Atomic file writes: content goes to a temp file that is renamed into place."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Iterable


def _atomic(path, mode: str, write) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        kwargs = {"encoding": "utf-8", "newline": "\n"} if "b" not in mode else {}
        with os.fdopen(fd, mode, **kwargs) as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, lines: Iterable[str]) -> None:
    def write(fh):
        for line in lines:
            fh.write(line)
            fh.write("\n")

    _atomic(path, "w", write)


def atomic_write_bytes(path, data: bytes) -> None:
    _atomic(path, "wb", lambda fh: fh.write(data))
