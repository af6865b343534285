from contextlib import contextmanager
import json
import os
import tempfile
from typing import Iterator

import pandas as pd


@contextmanager
def atomic_open(path) -> Iterator:
    """Open a temporary sibling of ``path`` for writing and move it into
    place once the block completes.

    :param path: Final location
    :type path: os.PathLike
    """
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-",
                               suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_text(path, text: str) -> None:
    with atomic_open(path) as f:
        f.write(text)


def write_json(path, payload) -> None:
    """Write JSON with sorted keys so equal payloads give equal bytes."""
    write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path, df: pd.DataFrame) -> None:
    with atomic_open(path) as f:
        df.to_csv(f, index=False)
