import os
import posixpath

import fsspec


_AWS_PROFILE = os.getenv("AWS_PROFILE")


def _get_fs_and_root():
    """
    Initialize filesystem and root path from AVLAB_STORAGE_URI.
    Falls back to local ~/.avlab or AVLAB_HOME_DIR when not set.
    """
    uri = os.getenv("AVLAB_STORAGE_URI")

    if not uri or uri.strip() == "":
        root = os.getenv(
            "AVLAB_HOME_DIR",
            os.path.join(os.path.expanduser("~"), ".avlab"),
        )
        return fsspec.filesystem("file"), root

    fs, _token, _paths = fsspec.get_fs_token_paths(
        uri, storage_options={"profile": _AWS_PROFILE} if _AWS_PROFILE else None
    )
    # Roots keep their protocol so every joined path stays addressable
    return fs, uri.rstrip("/")


def is_remote() -> bool:
    return bool((os.getenv("AVLAB_STORAGE_URI") or "").strip())


def root_uri() -> str:
    _, root = _get_fs_and_root()
    return root


def filesystem(path: str | None = None):
    """Filesystem owning `path`; plain paths are local, URIs resolve by protocol."""
    if path is None:
        fs, _ = _get_fs_and_root()
        return fs
    if "://" in path:
        fs, _ = fsspec.core.url_to_fs(path)
        return fs
    return fsspec.filesystem("file")


def join(*parts: str) -> str:
    return posixpath.join(*parts)


def exists(path: str) -> bool:
    return filesystem(path).exists(path)


def isdir(path: str) -> bool:
    try:
        return filesystem(path).isdir(path)
    except Exception:
        return False


def makedirs(path: str, exist_ok: bool = True) -> None:
    fs = filesystem(path)
    try:
        fs.makedirs(path, exist_ok=exist_ok)
    except TypeError:
        # Some filesystems don't support exist_ok parameter
        if not exist_ok or not exists(path):
            fs.makedirs(path)


def open(path: str, mode: str = "r", **kwargs):
    return filesystem(path).open(path, mode=mode, **kwargs)


def _ensure_parent(path: str) -> None:
    parent = posixpath.dirname(path)
    if parent:
        makedirs(parent, exist_ok=True)


def read_bytes(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def write_bytes(path: str, payload: bytes) -> None:
    _ensure_parent(path)
    with open(path, "wb") as f:
        f.write(payload)


def read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def write_text(path: str, text: str) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def append_text(path: str, text: str) -> None:
    """
    Append to a text file. Object stores have no append mode, so the file is
    read back and rewritten there, the way job logs were always written.
    """
    _ensure_parent(path)
    if "://" not in path:
        with open(path, "a", encoding="utf-8") as f:
            f.write(text)
        return
    existing = read_text(path) if exists(path) else ""
    write_text(path, existing + text)
