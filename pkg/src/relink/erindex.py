"""Entity and relationship inverted indexes with per-group aggregates.

An :class:`ERIndex` holds two :class:`IndexPartition` objects, one over
ENTITY units and one over PAIR units. Each partition stores positional
postings per unit, a unit store (unit -> group key, length), a group store
(key -> member units, summed term frequencies, total length) and collection
statistics including ordered adjacent-bigram counts.

On disk an index is a directory with ``manifest.json`` and four binary
files per partition. Every binary file starts with ``b"RLNK"`` and the
format version (u32) and ends with an 8-byte BLAKE2b checksum of everything
before it. Integers are fixed-width little-endian.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

from .extraction import EntityKey, ExtractionUnit, Kind, PairKey

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"RLNK"
PARTITIONS = ("entity", "pair")
FILE_KINDS = ("postings", "units", "groups", "stats")


class ERIndexError(Exception):
    pass


class IndexBuildError(ERIndexError):
    pass


class IndexFormatError(ERIndexError):
    """Base for problems reading a persisted index."""


class ChecksumError(IndexFormatError):
    pass


class IndexVersionError(IndexFormatError):
    pass


class TruncatedIndexError(IndexFormatError):
    pass


class NotFound(KeyError):
    """Unknown unit id or group key (distinct from an empty result)."""


class Posting(NamedTuple):
    unit_id: int
    tf: int
    positions: tuple[int, ...]


class UnitInfo(NamedTuple):
    key: tuple
    length: int


@dataclass(frozen=True)
class GroupProfile:
    key: tuple
    unit_ids: tuple[int, ...]
    term_freqs: dict[str, int]
    total_length: int


@dataclass
class CollectionStats:
    total_terms: int = 0
    unit_count: int = 0
    group_count: int = 0
    term_collection_freq: dict[str, int] = field(default_factory=dict)
    bigram_collection_freq: dict[tuple[str, str], int] = field(default_factory=dict)


def as_key(parts) -> tuple:
    parts = tuple(parts)
    return EntityKey(*parts) if len(parts) == 1 else PairKey(*parts)


class IndexPartition:
    def __init__(self, postings: dict[str, list[Posting]], units: dict[int, UnitInfo],
                 groups: dict[tuple, GroupProfile], stats: CollectionStats):
        self.postings = postings
        self.units = units
        self.groups = groups
        self.stats = stats
        self._positions: dict[str, dict[int, tuple[int, ...]]] = {}

    def lookup_postings(self, term: str) -> list[Posting]:
        return self.postings.get(term, [])

    def group_of(self, unit_id: int) -> tuple:
        try:
            return self.units[unit_id].key
        except KeyError:
            raise NotFound(unit_id) from None

    def group_profile(self, key) -> GroupProfile:
        try:
            return self.groups[tuple(key)]
        except KeyError:
            raise NotFound(key) from None

    def positions(self, term: str, unit_id: int) -> tuple[int, ...]:
        """Positions of ``term`` in one unit (empty if absent)."""
        table = self._positions.get(term)
        if table is None:
            table = {p.unit_id: p.positions for p in self.lookup_postings(term)}
            self._positions[term] = table
        return table.get(unit_id, ())

    def __eq__(self, other):
        if not isinstance(other, IndexPartition):
            return NotImplemented
        return (self.postings == other.postings and self.units == other.units
                and self.groups == other.groups and self.stats == other.stats)


@dataclass
class IndexConfig:
    # worker threads for the build map step; never affects the output
    threads: int = 1
    # stored verbatim in the manifest (e.g. tokenizer settings used upstream)
    metadata: dict = field(default_factory=dict)


@dataclass
class ERIndex:
    entity_partition: IndexPartition
    pair_partition: IndexPartition
    manifest: dict

    def partition(self, kind: Kind | str) -> IndexPartition:
        kind = Kind(kind.upper()) if isinstance(kind, str) else kind
        return self.entity_partition if kind is Kind.ENTITY else self.pair_partition


# -- build ------------------------------------------------------------------

def _map_batch(batch: list[ExtractionUnit]):
    postings: dict[str, list[Posting]] = {}
    bigrams: Counter = Counter()
    for u in batch:
        where: dict[str, list[int]] = {}
        for pos, term in enumerate(u.terms):
            where.setdefault(term, []).append(pos)
        for term, pos in where.items():
            postings.setdefault(term, []).append(Posting(u.unit_id, len(pos), tuple(pos)))
        bigrams.update(zip(u.terms, u.terms[1:]))
    return postings, bigrams


def _build_partition(units: list[ExtractionUnit], threads: int) -> IndexPartition:
    # units arrive sorted by unit_id; contiguous batches keep merged postings sorted
    n_batches = max(1, min(threads, len(units)))
    size = -(-len(units) // n_batches) if units else 0
    batches = [units[i:i + size] for i in range(0, len(units), size)] if units else []
    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_map_batch, batches))
    else:
        parts = [_map_batch(b) for b in batches]

    postings: dict[str, list[Posting]] = {}
    bigrams: Counter = Counter()
    for part_postings, part_bigrams in parts:
        for term, plist in part_postings.items():
            postings.setdefault(term, []).extend(plist)
        bigrams.update(part_bigrams)
    postings = {t: postings[t] for t in sorted(postings)}

    unit_store: dict[int, UnitInfo] = {}
    members: dict[tuple, list[ExtractionUnit]] = {}
    for u in units:
        unit_store[u.unit_id] = UnitInfo(u.key, len(u.terms))
        members.setdefault(u.key, []).append(u)
    groups = {}
    for key in sorted(members):
        tf: Counter = Counter()
        for u in members[key]:
            tf.update(u.terms)
        groups[key] = GroupProfile(key, tuple(u.unit_id for u in members[key]),
                                   {t: tf[t] for t in sorted(tf)},
                                   sum(len(u.terms) for u in members[key]))
    cf = {t: sum(p.tf for p in plist) for t, plist in postings.items()}
    stats = CollectionStats(
        total_terms=sum(len(u.terms) for u in units),
        unit_count=len(units),
        group_count=len(groups),
        term_collection_freq=cf,
        bigram_collection_freq={b: bigrams[b] for b in sorted(bigrams)},
    )
    return IndexPartition(postings, unit_store, groups, stats)


def _corpus_hash(units: list[ExtractionUnit]) -> str:
    h = hashlib.blake2b(digest_size=16)
    for u in units:
        h.update(json.dumps(u.to_record(), ensure_ascii=False, sort_keys=True).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def build_index(units: Iterable[ExtractionUnit], config: IndexConfig | None = None) -> ERIndex:
    """Index ENTITY and PAIR units into their respective partitions.

    Output is independent of ``config.threads``. Re-submitting an identical
    unit is harmless; two different units with one id is fatal.
    """
    config = config or IndexConfig()
    if config.threads < 1:
        raise ValueError("threads must be >= 1")
    by_id: dict[int, ExtractionUnit] = {}
    for u in units:
        prev = by_id.get(u.unit_id)
        if prev is not None and prev != u:
            raise IndexBuildError(f"unit_id {u.unit_id} maps to two different units "
                                  f"({prev.doc_id}#{prev.sent_index} {prev.key} vs "
                                  f"{u.doc_id}#{u.sent_index} {u.key})")
        by_id[u.unit_id] = u
    ordered = [by_id[i] for i in sorted(by_id)]
    ent = _build_partition([u for u in ordered if u.kind is Kind.ENTITY], config.threads)
    pair = _build_partition([u for u in ordered if u.kind is Kind.PAIR], config.threads)
    manifest = {
        "format_version": FORMAT_VERSION,
        "corpus_hash": _corpus_hash(ordered),
        "config": dict(config.metadata),
        "counts": {name: _counts(p) for name, p in (("entity", ent), ("pair", pair))},
    }
    return ERIndex(ent, pair, manifest)


def _counts(p: IndexPartition) -> dict:
    return {"units": p.stats.unit_count, "groups": p.stats.group_count,
            "terms": len(p.postings), "total_terms": p.stats.total_terms}


# -- binary encoding --------------------------------------------------------

class _Writer:
    def __init__(self):
        self.buf = bytearray(MAGIC + struct.pack("<I", FORMAT_VERSION))

    def u8(self, v):
        self.buf += struct.pack("<B", v)

    def u32(self, v):
        self.buf += struct.pack("<I", v)

    def u64(self, v):
        self.buf += struct.pack("<Q", v)

    def str(self, s: str):
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.buf += raw

    def key(self, key):
        self.u8(len(key))
        for part in key:
            self.str(part)

    def finish(self) -> bytes:
        return bytes(self.buf) + _checksum(self.buf)


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.name = name
        self.pos = 8

    def _take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise TruncatedIndexError(f"{self.name}: unexpected end of data")
        (v,) = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return v

    def u8(self):
        return self._take("<B")

    def u32(self):
        return self._take("<I")

    def u64(self):
        return self._take("<Q")

    def str(self) -> str:
        n = self.u32()
        if self.pos + n > len(self.data):
            raise TruncatedIndexError(f"{self.name}: unexpected end of data")
        raw = self.data[self.pos:self.pos + n]
        self.pos += n
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise IndexFormatError(f"{self.name}: invalid UTF-8 string") from None

    def key(self):
        return as_key(self.str() for _ in range(self.u8()))

    def done(self):
        if self.pos != len(self.data):
            raise IndexFormatError(f"{self.name}: {len(self.data) - self.pos} trailing bytes")


def _checksum(data) -> bytes:
    return hashlib.blake2b(bytes(data), digest_size=8).digest()


def _encode_partition(p: IndexPartition) -> dict[str, bytes]:
    w = _Writer()
    w.u32(len(p.postings))
    for term, plist in p.postings.items():
        w.str(term)
        w.u32(len(plist))
        for post in plist:
            w.u64(post.unit_id)
            w.u32(post.tf)
            for pos in post.positions:
                w.u32(pos)
    postings = w.finish()

    w = _Writer()
    w.u32(len(p.units))
    for uid in sorted(p.units):
        info = p.units[uid]
        w.u64(uid)
        w.key(info.key)
        w.u32(info.length)
    units = w.finish()

    w = _Writer()
    w.u32(len(p.groups))
    for key, g in p.groups.items():
        w.key(key)
        w.u32(len(g.unit_ids))
        for uid in g.unit_ids:
            w.u64(uid)
        w.u32(len(g.term_freqs))
        for term, tf in g.term_freqs.items():
            w.str(term)
            w.u32(tf)
        w.u64(g.total_length)
    groups = w.finish()

    s = p.stats
    w = _Writer()
    w.u64(s.total_terms)
    w.u64(s.unit_count)
    w.u64(s.group_count)
    w.u32(len(s.term_collection_freq))
    for term, cf in s.term_collection_freq.items():
        w.str(term)
        w.u64(cf)
    w.u32(len(s.bigram_collection_freq))
    for (a, b), cf in s.bigram_collection_freq.items():
        w.str(a)
        w.str(b)
        w.u64(cf)
    stats = w.finish()
    return {"postings": postings, "units": units, "groups": groups, "stats": stats}


def _decode_partition(files: dict[str, bytes], name: str) -> IndexPartition:
    r = _Reader(files["postings"], f"{name}.postings")
    postings = {}
    for _ in range(r.u32()):
        term = r.str()
        plist = []
        for _ in range(r.u32()):
            uid, tf = r.u64(), r.u32()
            plist.append(Posting(uid, tf, tuple(r.u32() for _ in range(tf))))
        postings[term] = plist
    r.done()

    r = _Reader(files["units"], f"{name}.units")
    units = {}
    for _ in range(r.u32()):
        uid = r.u64()
        key = r.key()
        units[uid] = UnitInfo(key, r.u32())
    r.done()

    r = _Reader(files["groups"], f"{name}.groups")
    groups = {}
    for _ in range(r.u32()):
        key = r.key()
        uids = tuple(r.u64() for _ in range(r.u32()))
        tfs = {}
        for _ in range(r.u32()):
            term = r.str()
            tfs[term] = r.u32()
        groups[key] = GroupProfile(key, uids, tfs, r.u64())
    r.done()

    r = _Reader(files["stats"], f"{name}.stats")
    stats = CollectionStats(r.u64(), r.u64(), r.u64())
    for _ in range(r.u32()):
        term = r.str()
        stats.term_collection_freq[term] = r.u64()
    for _ in range(r.u32()):
        a, b = r.str(), r.str()
        stats.bigram_collection_freq[(a, b)] = r.u64()
    r.done()
    return IndexPartition(postings, units, groups, stats)


def _dump_manifest(manifest: dict) -> bytes:
    return (json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def _manifest_checksum(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "manifest_checksum"}
    return _checksum(_dump_manifest(body)).hex()


# -- persistence ------------------------------------------------------------

def save_index(index: ERIndex, directory: str | Path) -> None:
    """Write ``index`` to ``directory`` (created if needed).

    Files are written under temporary names and renamed at the end; on any
    OS error the temporaries are removed and the error re-raised.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blobs: dict[str, bytes] = {}
    for name, part in (("entity", index.entity_partition), ("pair", index.pair_partition)):
        for kind, data in _encode_partition(part).items():
            blobs[f"{name}.{kind}"] = data
    manifest = dict(index.manifest)
    manifest["format_version"] = FORMAT_VERSION
    manifest["files"] = {fn: {"bytes": len(data), "checksum": data[-8:].hex()}
                         for fn, data in sorted(blobs.items())}
    manifest["manifest_checksum"] = _manifest_checksum(manifest)
    blobs["manifest.json"] = _dump_manifest(manifest)

    written: list[Path] = []
    try:
        for fn, data in blobs.items():
            tmp = directory / f".{fn}.tmp"
            written.append(tmp)
            with open(tmp, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
        for fn in blobs:
            os.replace(directory / f".{fn}.tmp", directory / fn)
    except OSError:
        for tmp in written:
            tmp.unlink(missing_ok=True)
        raise


def load_index(directory: str | Path) -> ERIndex:
    """Load and verify an index directory.

    Raises :class:`IndexVersionError`, :class:`ChecksumError`,
    :class:`TruncatedIndexError` or :class:`IndexFormatError`.
    """
    directory = Path(directory)
    try:
        raw_manifest = (directory / "manifest.json").read_bytes()
    except OSError as exc:
        raise IndexFormatError(f"cannot read manifest in {directory}: {exc}") from exc
    try:
        manifest = json.loads(raw_manifest.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ChecksumError("manifest.json is not valid JSON (corrupted?)") from None
    if not isinstance(manifest, dict):
        raise IndexFormatError("manifest.json is not an object")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise IndexVersionError(f"index format version {version!r} is not supported "
                                f"(this build reads version {FORMAT_VERSION})")
    if _dump_manifest(manifest) != raw_manifest:
        raise ChecksumError("manifest.json bytes differ from their canonical form")
    if manifest.get("manifest_checksum") != _manifest_checksum(manifest):
        raise ChecksumError("manifest.json checksum mismatch")

    parts = {}
    for name in PARTITIONS:
        files = {}
        for kind in FILE_KINDS:
            fn = f"{name}.{kind}"
            meta = manifest.get("files", {}).get(fn)
            if meta is None:
                raise IndexFormatError(f"manifest does not list {fn}")
            try:
                data = (directory / fn).read_bytes()
            except OSError as exc:
                raise IndexFormatError(f"cannot read {fn}: {exc}") from exc
            if len(data) < 16 or len(data) != meta["bytes"]:
                raise TruncatedIndexError(f"{fn}: {len(data)} bytes, manifest says {meta['bytes']}")
            if _checksum(data[:-8]) != data[-8:] or data[-8:].hex() != meta["checksum"]:
                raise ChecksumError(f"{fn}: checksum mismatch")
            if data[:4] != MAGIC:
                raise IndexFormatError(f"{fn}: bad magic")
            (file_version,) = struct.unpack_from("<I", data, 4)
            if file_version != FORMAT_VERSION:
                raise IndexVersionError(f"{fn}: format version {file_version} is not supported "
                                        f"(this build reads version {FORMAT_VERSION})")
            files[kind] = data[:-8]
        parts[name] = _decode_partition(files, name)
        if manifest["counts"][name] != _counts(parts[name]):
            raise IndexFormatError(f"{name}: manifest counts disagree with stored data")
    manifest = {k: v for k, v in manifest.items() if k not in ("files", "manifest_checksum")}
    return ERIndex(parts["entity"], parts["pair"], manifest)
