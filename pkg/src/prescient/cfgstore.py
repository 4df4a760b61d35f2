"""Persistent CFG dump: binary serialization plus a lock-file protocol.

The dump is the contract between the ``instrument`` and ``fuzz`` commands.
Format (little-endian throughout):

    magic            8 bytes  "PFCFG\\0\\0\\1"
    format_version   u64      (currently 1)
    latest_coverage_map_index  u64
    latest_block_uid           u64
    module_checksums    u64 count, then strings
    functions           u64 count, then per function:
        name            string
        definitions     u64 count, then per definition:
            blocks      u64 count, then per block:
                uid                  u64
                coverage_map_index   i64   (-1 = uninstrumented)
                called_funcs         u64 count, then strings
                successor_uids       u64 count, then u64 each
                num_indirect_calls   u64

Strings are a u32 byte length followed by UTF-8 bytes.  Function names are
written sorted so equal dumps serialize byte-for-byte identically; the
definition list under one name keeps its order (the first entry is the
presumed-live definition).

Writers coordinate through a sibling ``<path>.lock`` file created with
O_EXCL and holding the owner's pid.  A lock older than ``stale_timeout``
seconds is presumed abandoned (crashed compiler invocation) and taken over.
Updates are atomic: serialize to a temp file, then rename over the target.
"""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass, field

MAGIC = b"PFCFG\x00\x00\x01"
FORMAT_VERSION = 1


class CfgFormatError(Exception):
    """Malformed dump file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class CfgLockTimeout(Exception):
    pass


class CfgContractError(Exception):
    """A store operation was called with a guard it does not own."""


@dataclass
class BasicBlockInfo:
    uid: int
    coverage_map_index: int | None
    called_funcs: list[str] = field(default_factory=list)
    successor_uids: list[int] = field(default_factory=list)
    num_indirect_calls: int = 0


@dataclass
class CfgDump:
    latest_coverage_map_index: int = 0
    latest_block_uid: int = 0
    module_checksums: list[str] = field(default_factory=list)
    # function name -> list of definitions, each an ordered block-info list.
    functions: dict[str, list[list[BasicBlockInfo]]] = field(default_factory=dict)

    def all_blocks(self):
        for defs in self.functions.values():
            for blocks in defs:
                yield from blocks

    def instrumented_count(self) -> int:
        return sum(1 for b in self.all_blocks() if b.coverage_map_index is not None)


def empty_dump() -> CfgDump:
    return CfgDump()


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u64(self, v: int):
        self.parts.append(struct.pack("<Q", v))

    def i64(self, v: int):
        self.parts.append(struct.pack("<q", v))

    def string(self, s: str):
        raw = s.encode("utf-8")
        self.parts.append(struct.pack("<I", len(raw)))
        self.parts.append(raw)

    def bytes_out(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CfgFormatError(f"truncated while reading {what}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def i64(self, what: str) -> int:
        return struct.unpack("<q", self.take(8, what))[0]

    def string(self, what: str) -> str:
        n = struct.unpack("<I", self.take(4, what))[0]
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise CfgFormatError(f"invalid UTF-8 in {what}", self.pos - n) from None


def serialize(dump: CfgDump) -> bytes:
    w = _Writer()
    w.parts.append(MAGIC)
    w.u64(FORMAT_VERSION)
    w.u64(dump.latest_coverage_map_index)
    w.u64(dump.latest_block_uid)
    w.u64(len(dump.module_checksums))
    for cs in dump.module_checksums:
        w.string(cs)
    names = sorted(dump.functions)
    w.u64(len(names))
    for name in names:
        w.string(name)
        defs = dump.functions[name]
        w.u64(len(defs))
        for blocks in defs:
            w.u64(len(blocks))
            for b in blocks:
                w.u64(b.uid)
                w.i64(-1 if b.coverage_map_index is None else b.coverage_map_index)
                w.u64(len(b.called_funcs))
                for f in b.called_funcs:
                    w.string(f)
                w.u64(len(b.successor_uids))
                for s in b.successor_uids:
                    w.u64(s)
                w.u64(b.num_indirect_calls)
    return w.bytes_out()


def deserialize(data: bytes) -> CfgDump:
    r = _Reader(data)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CfgFormatError("bad magic", 0)
    version = r.u64("format version")
    if version != FORMAT_VERSION:
        raise CfgFormatError(f"unsupported format version {version}", 8)
    dump = CfgDump()
    dump.latest_coverage_map_index = r.u64("coverage counter")
    dump.latest_block_uid = r.u64("uid counter")
    n_checksums = r.u64("checksum count")
    for _ in range(n_checksums):
        dump.module_checksums.append(r.string("module checksum"))
    n_funcs = r.u64("function count")
    for _ in range(n_funcs):
        name = r.string("function name")
        n_defs = r.u64("definition count")
        defs = []
        for _ in range(n_defs):
            n_blocks = r.u64("block count")
            blocks = []
            for _ in range(n_blocks):
                uid = r.u64("block uid")
                ci = r.i64("coverage map index")
                n_called = r.u64("called-function count")
                called = [r.string("called function") for _ in range(n_called)]
                n_succ = r.u64("successor count")
                succs = [r.u64("successor uid") for _ in range(n_succ)]
                n_ind = r.u64("indirect call count")
                blocks.append(
                    BasicBlockInfo(
                        uid=uid,
                        coverage_map_index=None if ci < 0 else ci,
                        called_funcs=called,
                        successor_uids=succs,
                        num_indirect_calls=n_ind,
                    )
                )
            defs.append(blocks)
        dump.functions[name] = defs
    if r.pos != len(data):
        raise CfgFormatError("trailing bytes after dump", r.pos)
    return dump


def validate_dump(dump: CfgDump) -> None:
    """Check the structural invariants of a dump."""
    uids: set[int] = set()
    cov: set[int] = set()
    for name, defs in dump.functions.items():
        for blocks in defs:
            def_uids = [b.uid for b in blocks]
            for b in blocks:
                if b.uid in uids:
                    raise CfgFormatError(f"duplicate uid {b.uid}", 0)
                uids.add(b.uid)
                ci = b.coverage_map_index
                if ci is not None:
                    if ci in cov:
                        raise CfgFormatError(f"duplicate coverage index {ci}", 0)
                    if ci >= dump.latest_coverage_map_index:
                        raise CfgFormatError(
                            f"coverage index {ci} beyond counter", 0
                        )
                    cov.add(ci)
            if def_uids and def_uids != list(
                range(def_uids[0], def_uids[0] + len(def_uids))
            ):
                raise CfgFormatError(
                    f"non-consecutive uids in a definition of {name!r}", 0
                )
            uid_set = set(def_uids)
            for b in blocks:
                for s in b.successor_uids:
                    if s not in uid_set:
                        raise CfgFormatError(
                            f"successor uid {s} outside its definition", 0
                        )
    for b in dump.all_blocks():
        if b.uid >= dump.latest_block_uid:
            raise CfgFormatError(f"uid {b.uid} beyond counter", 0)


@dataclass
class LockGuard:
    lock_path: str
    target_path: str
    token: str
    released: bool = False

    def release(self):
        if self.released:
            return
        self.released = True
        try:
            with open(self.lock_path, "r", encoding="utf-8") as fh:
                if fh.read().strip() == self.token:
                    os.unlink(self.lock_path)
        except OSError:
            pass


class CfgStore:
    """Read-modify-write access to one dump file, serialized by a lock file."""

    def __init__(
        self,
        path: str,
        lock_timeout: float = 10.0,
        stale_timeout: float = 120.0,
        poll_interval: float = 0.01,
    ):
        self.path = str(path)
        self.lock_path = self.path + ".lock"
        self.lock_timeout = lock_timeout
        self.stale_timeout = stale_timeout
        self.poll_interval = poll_interval

    def _acquire(self) -> LockGuard:
        token = f"{os.getpid()}:{time.monotonic_ns()}"
        deadline = time.monotonic() + self.lock_timeout
        while True:
            try:
                fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(token)
                return LockGuard(self.lock_path, self.path, token)
            except FileExistsError:
                try:
                    age = time.time() - os.stat(self.lock_path).st_mtime
                    if age > self.stale_timeout:
                        os.unlink(self.lock_path)
                        continue
                except OSError:
                    continue
                if time.monotonic() >= deadline:
                    raise CfgLockTimeout(
                        f"could not lock {self.path} within {self.lock_timeout}s"
                    ) from None
                time.sleep(self.poll_interval)

    def fetch(self) -> tuple[CfgDump, LockGuard]:
        """Return the current dump (empty if absent) holding the lock."""
        guard = self._acquire()
        try:
            try:
                with open(self.path, "rb") as fh:
                    data = fh.read()
            except FileNotFoundError:
                return empty_dump(), guard
            return deserialize(data), guard
        except Exception:
            guard.release()
            raise

    def update(self, dump: CfgDump, guard: LockGuard) -> None:
        """Atomically replace the dump file and release the lock."""
        if guard.target_path != self.path or guard.released:
            raise CfgContractError("update called with a foreign or released lock")
        tmp = f"{self.path}.tmp.{os.getpid()}.{time.monotonic_ns()}"
        try:
            data = serialize(dump)
            with open(tmp, "wb") as fh:
                fh.write(data)
            os.replace(tmp, self.path)
        except Exception:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise
        finally:
            guard.release()


def fetch(path: str) -> tuple[CfgDump, LockGuard]:
    return CfgStore(path).fetch()


def update(path: str, dump: CfgDump, guard: LockGuard) -> None:
    CfgStore(path).update(dump, guard)


def dump_to_json_dict(dump: CfgDump) -> dict:
    """Plain-dict view of a dump, for the ``cfg dump --json`` command."""
    return {
        "format_version": FORMAT_VERSION,
        "latest_coverage_map_index": dump.latest_coverage_map_index,
        "latest_block_uid": dump.latest_block_uid,
        "module_checksums": list(dump.module_checksums),
        "functions": {
            name: [
                [
                    {
                        "uid": b.uid,
                        "coverage_map_index": b.coverage_map_index,
                        "called_funcs": list(b.called_funcs),
                        "successor_uids": list(b.successor_uids),
                        "num_indirect_calls": b.num_indirect_calls,
                    }
                    for b in blocks
                ]
                for blocks in defs
            ]
            for name, defs in sorted(dump.functions.items())
        },
    }
