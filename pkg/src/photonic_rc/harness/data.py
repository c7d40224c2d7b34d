"""Fetch and verify the four MNIST IDX archives."""

from __future__ import annotations

import hashlib
import logging
import shutil
import tempfile
import urllib.request
import zipfile
from pathlib import Path
from typing import Iterable

log = logging.getLogger(__name__)

# md5 of the gzipped archives as distributed since 1998
MNIST_MD5 = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}

MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
)

# A Python source distribution that bundles the original gzipped files;
# useful where only a package index is reachable.
PYPI_ARCHIVE = ("https://pypi.org/packages/04/5a/2adc258c5f510e1a2d6381b4d83548a5e8fca25b739cb5fffe80e8da080e/"
                "bob.db.mnist-2.1.1.zip")


class DataError(RuntimeError):
    pass


def md5sum(path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def verify(data_dir) -> dict[str, str]:
    """Check every archive exists with the expected checksum.

    Returns ``{file: "ok" | "missing" | "bad checksum"}``.
    """
    data_dir = Path(data_dir)
    status = {}
    for name, digest in MNIST_MD5.items():
        path = data_dir / name
        if not path.exists():
            status[name] = "missing"
        elif md5sum(path) != digest:
            status[name] = "bad checksum"
        else:
            status[name] = "ok"
    return status


def _download(url: str, dest: Path, timeout: float = 60.0) -> None:
    req = urllib.request.Request(url, headers={"User-Agent": "photonic-rc"})
    with urllib.request.urlopen(req, timeout=timeout) as resp, open(dest, "wb") as out:
        shutil.copyfileobj(resp, out)


def extract_archive(archive, data_dir) -> list[str]:
    """Copy MNIST ``*.gz`` members of a zip archive into ``data_dir``."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    found = []
    try:
        zf = zipfile.ZipFile(archive)
    except zipfile.BadZipFile as exc:
        raise DataError(f"{archive} is not a zip archive") from exc
    with zf:
        for member in zf.namelist():
            name = member.rsplit("/", 1)[-1]
            if name in MNIST_MD5:
                with zf.open(member) as src, open(data_dir / name, "wb") as dst:
                    shutil.copyfileobj(src, dst)
                found.append(name)
    return found


def fetch(data_dir, mirrors: Iterable[str] = MIRRORS, archive=None, force: bool = False,
          use_package_index: bool = True) -> dict[str, str]:
    """Download missing or corrupt archives into ``data_dir`` and verify them.

    ``archive`` is a local zip holding the files (skips the network).
    """
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    if archive is not None:
        extract_archive(archive, data_dir)
        return _checked(data_dir)

    status = verify(data_dir)
    todo = [n for n, s in status.items() if s != "ok" or force]
    for name in list(todo):
        for base in mirrors:
            tmp = data_dir / (name + ".part")
            try:
                _download(base + name, tmp)
            except OSError as exc:
                log.info("mirror %s failed for %s: %s", base, name, exc)
                tmp.unlink(missing_ok=True)
                continue
            if md5sum(tmp) == MNIST_MD5[name]:
                tmp.replace(data_dir / name)
                todo.remove(name)
                break
            log.warning("checksum mismatch for %s from %s", name, base)
            tmp.unlink(missing_ok=True)
    if todo and use_package_index:
        with tempfile.TemporaryDirectory() as tmpdir:
            zpath = Path(tmpdir) / "mnist.zip"
            try:
                _download(PYPI_ARCHIVE, zpath, timeout=300.0)
                extract_archive(zpath, data_dir)
            except OSError as exc:
                log.info("package-index archive failed: %s", exc)
    return _checked(data_dir)


def _checked(data_dir: Path) -> dict[str, str]:
    status = verify(data_dir)
    bad = {n: s for n, s in status.items() if s != "ok"}
    if bad:
        raise DataError(f"MNIST files in {data_dir} not usable: {bad}")
    return status


