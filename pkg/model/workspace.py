""" Working copies of the user's codebase. The original tree is only ever read. """
from pathlib import Path
import hashlib
import logging
import shutil

from model.codegraph import extract_functions
from model.errors import SpanDrift

logger = logging.getLogger(__name__)

# produced by builds and runs, never part of the program
BUILD_ARTIFACTS = ("*.o", "main", "runs", "workunits.txt")


def source_hash(root):
    """sha256 over relative paths and contents of every file under root"""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(root)).encode())
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()


class Workspace:
    """A copy of a codebase that patches, Makefiles and builds are written into"""

    def __init__(self, root):
        self.root = Path(root)

    @classmethod
    def create(cls, source_dir, dest):
        dest = Path(dest)
        if dest.exists():
            shutil.rmtree(dest)
        shutil.copytree(source_dir, dest, ignore=shutil.ignore_patterns(*BUILD_ARTIFACTS))
        logger.debug("Copied %s to %s", source_dir, dest)
        return cls(dest)

    def clone(self, dest):
        return Workspace.create(self.root, dest)

    def c_files(self):
        return sorted(p.relative_to(self.root).as_posix() for p in self.root.rglob("*.c") if p.is_file())

    def source_files(self):
        '''Files handed to the makefile conversation'''
        return sorted(p.relative_to(self.root).as_posix() for p in self.root.rglob("*")
                      if p.is_file() and p.suffix in (".c", ".h"))

    def codebase_text(self):
        """Every source file in one string, each under a file banner"""
        parts = []
        for name in self.source_files():
            text = (self.root / name).read_text(encoding="utf-8", errors="surrogateescape")
            parts.append(f"// File: {name}\n{text}")
        return "\n".join(parts)

    def functions(self):
        return {f.name: f for f in extract_functions(self.root)}

    def content_hash(self):
        return source_hash(self.root)

    def replace_function(self, name, code, record=None):
        """
        Splices code over the definition of name and returns the new record list.

        A stale record (its bytes no longer at its offsets) triggers one fresh
        extraction before giving up with SpanDrift.
        """
        for attempt in range(2):
            if record is None or attempt == 1:
                record = self.functions().get(name)
            if record is None or not Path(record.file).is_relative_to(self.root):
                continue
            path = Path(record.file)
            text = path.read_text(encoding="utf-8", errors="surrogateescape")
            start, end = record.offsets
            if text[start:end] != record.body:
                continue
            path.write_text(text[:start] + code + text[end:], encoding="utf-8", errors="surrogateescape")
            return self.functions()
        raise SpanDrift(name)
