"""Run directories, lock files and manifests for CLI invocations.

Layout under the output root::

    <out>/<command>/<run_name>/        one directory per invocation
    <out>/<command>/<run_name>/.lock   present while the run is active
    <out>/<command>/<run_name>/manifest.json
    <out>/<command>/latest             text file naming the last successful run
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .exceptions import MissingArtifactError, StateError

LATEST = "latest"
MANIFEST = "manifest.json"
LOCK = ".lock"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seeds: list
    tool_version: str
    started: str = field(default_factory=_now)
    finished: str | None = None
    status: str = "running"
    error: str | None = None
    inputs: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)

    def write(self, path):
        tmp = Path(str(path) + ".tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def verify(self, run_dir) -> list[str]:
        """Names of artifacts whose on-disk digest differs from the manifest."""
        bad = []
        for name, entry in self.artifacts.items():
            p = Path(run_dir) / entry["path"]
            if not p.exists() or sha256_file(p) != entry["sha256"]:
                bad.append(name)
        return bad


class RunDirectory:
    """One invocation's output directory, locked for the lifetime of the run."""

    def __init__(self, root, command, name=None):
        self.root = Path(root)
        self.command = command
        base = self.root / command
        if name is None:
            stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
            name, n = stamp, 1
            while (base / name).exists():
                n += 1
                name = f"{stamp}-{n}"
        self.name = name
        self.path = base / name
        self._lock = None

    def __enter__(self):
        self.path.mkdir(parents=True, exist_ok=True)
        lock = self.path / LOCK
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StateError(f"{self.path} is locked by another invocation ({lock})") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        self._lock = lock
        return self

    def __exit__(self, *exc):
        if self._lock is not None:
            self._lock.unlink(missing_ok=True)
            self._lock = None

    def file(self, name) -> Path:
        return self.path / name

    def mark_latest(self):
        pointer = self.root / self.command / LATEST
        tmp = pointer.with_suffix(".tmp")
        tmp.write_text(self.name + "\n", encoding="utf-8")
        os.replace(tmp, pointer)


def latest_run(root, command) -> Path:
    pointer = Path(root) / command / LATEST
    if not pointer.exists():
        raise MissingArtifactError(pointer, command)
    run = Path(root) / command / pointer.read_text(encoding="utf-8").strip()
    if not run.is_dir():
        raise MissingArtifactError(run, command)
    return run


def resolve_artifact(explicit, root, command, filename) -> Path:
    """``explicit`` if given, else ``filename`` inside the latest ``command`` run."""
    if explicit is not None:
        p = Path(explicit)
        if not p.exists():
            raise MissingArtifactError(p, command)
        return p
    p = latest_run(root, command) / filename
    if not p.exists():
        raise MissingArtifactError(p, command)
    return p
