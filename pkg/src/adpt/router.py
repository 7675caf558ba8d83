from __future__ import annotations

import hashlib
import json
import logging
import shutil
import threading
from dataclasses import dataclass
from pathlib import Path

from .exceptions import PlacementError, RouterIOError
from .records import FOLDERS, AnnotationRecord, folder_consistent

logger = logging.getLogger(__name__)

LOG_NAME = "annotations.jsonl"


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class DatasetLayout:
    root: Path
    folders: tuple[str, ...] = FOLDERS

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    @property
    def log_path(self) -> Path:
        return self.root / LOG_NAME

    def ensure(self) -> None:
        for name in self.folders:
            (self.root / name).mkdir(parents=True, exist_ok=True)

    def folder(self, name: str) -> Path:
        if name not in self.folders:
            raise ValueError(f"unknown folder {name!r}")
        return self.root / name

    def counts(self) -> dict[str, int]:
        return {name: sum(1 for p in (self.root / name).iterdir() if p.is_file()) for name in self.folders}


class Router:
    """Single writer for the dataset folders and the JSONL audit log."""

    def __init__(self, layout: DatasetLayout, mode: str = "copy"):
        if mode not in ("copy", "move"):
            raise ValueError(f"mode must be 'copy' or 'move', got {mode!r}")
        self.layout = layout
        self.mode = mode
        self._lock = threading.Lock()
        layout.ensure()
        self.logged: dict[str, str | None] = {}
        if layout.log_path.exists():
            with open(layout.log_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        row = json.loads(line)
                        self.logged[row["source_path"]] = row.get("final_folder")

    def is_done(self, source_path: str) -> bool:
        return source_path in self.logged

    def _place(self, src: Path, folder: str) -> Path:
        dest_dir = self.layout.folder(folder)
        dest = dest_dir / src.name
        if dest.exists():
            digest = file_digest(src)
            if file_digest(dest) == digest:
                logger.info("idempotent skip: %s already in %s/", src.name, folder)
                if self.mode == "move":
                    src.unlink()
                return dest
            dest = dest_dir / f"{digest[:8]}_{src.name}"
            if dest.exists():
                logger.info("idempotent skip: %s already in %s/", dest.name, folder)
                if self.mode == "move":
                    src.unlink()
                return dest
        if self.mode == "move":
            shutil.move(str(src), dest)
        else:
            shutil.copy2(src, dest)
        return dest

    def route(self, record: AnnotationRecord, src) -> AnnotationRecord:
        """Place the image in its folder, then append the record to the log."""
        if not folder_consistent(record.final_label, record.final_folder):
            raise ValueError(f"record {record.source_path}: folder {record.final_folder!r} "
                             f"does not match label {record.final_label}")
        with self._lock:
            if record.source_path in self.logged:
                logger.info("idempotent skip: %s is already logged", record.source_path)
                return record
            try:
                self._place(Path(src), record.final_folder)
            except OSError as exc:
                logger.error("cannot place %s into %s/: %s", src, record.final_folder, exc)
                raise PlacementError(f"cannot place {src} into {record.final_folder}/: {exc}") from exc
            self._append(record)
        return record

    def write_log_line(self, record: AnnotationRecord) -> None:
        with self._lock:
            self._append(record)

    def _append(self, record: AnnotationRecord) -> None:
        try:
            with open(self.layout.log_path, "a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")
                fh.flush()
        except OSError as exc:
            raise RouterIOError(f"cannot append to {self.layout.log_path}: {exc}") from exc
        self.logged[record.source_path] = record.final_folder
