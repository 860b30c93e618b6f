"""Attribute-keyed inverted index with exact top-k ranking inside candidates.

Items are indexed under every attribute they carry plus their category;
candidate generation walks postings lists instead of the whole store, and
ranking is exact within the candidate set: semantic attribute overlap
first, then fused visual distance, then item id for determinism. The index
lives in RAM and persists via an explicit snapshot file; postings are
always rebuilt from the store on load.
"""

from __future__ import annotations

import struct
from bisect import insort
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .roi import Box
from .taxonomy import Taxonomy, content_hash, symbol_at, symbol_index
from .visfeat import (
    BinaryCode,
    ColorHistogram,
    DistanceWeights,
    combined_distance,
)

SNAPSHOT_MAGIC = b"FPSI"
SNAPSHOT_VERSION = 1


class SnapshotError(ValueError):
    pass


class DuplicateItemError(ValueError):
    pass


@dataclass(frozen=True)
class ItemRecord:
    """One indexed catalog item.

    ``attributes`` keeps generation order (category first when produced by
    the ingest pipeline); postings are keyed by the set of attributes plus
    the category.
    """

    item_id: str
    category: str
    attributes: tuple[str, ...]
    code: BinaryCode
    histogram: ColorHistogram
    roi: Box
    meta_text: str = ""


@dataclass(frozen=True)
class SearchResult:
    item_id: str
    distance: float
    match_count: int


@dataclass(frozen=True)
class IndexConfig:
    feature_dim: int
    bins: tuple[int, int, int]

    @property
    def bin_count(self) -> int:
        h, s, v = self.bins
        return h * s * v


class InvertedIndex:
    """RAM-resident store + postings. Many readers or one exclusive writer."""

    def __init__(
        self,
        taxonomy: Taxonomy,
        feature_dim: int = 1024,
        bins: tuple[int, int, int] = (8, 4, 4),
    ):
        self.taxonomy = taxonomy
        self.config = IndexConfig(feature_dim=feature_dim, bins=tuple(bins))
        self.store: dict[str, ItemRecord] = {}
        self.postings: dict[str, list[str]] = {}

    def __len__(self) -> int:
        return len(self.store)

    # -- write path ---------------------------------------------------------

    def _posting_keys(self, record: ItemRecord) -> set[str]:
        return set(record.attributes) | {record.category}

    def _validate_record(self, record: ItemRecord) -> None:
        tax = self.taxonomy
        if not tax.is_category(record.category):
            raise ValueError(f"unknown category: {record.category!r}")
        if record.code.length != self.config.feature_dim:
            raise ValueError(
                f"code length {record.code.length} does not match index "
                f"feature dim {self.config.feature_dim}"
            )
        if len(record.histogram) != self.config.bin_count:
            raise ValueError(
                f"histogram has {len(record.histogram)} bins, index expects "
                f"{self.config.bin_count}"
            )
        if not record.histogram.normalized:
            raise ValueError("item histogram must be normalized")
        for attr in record.attributes:
            if attr == record.category:
                continue
            group = tax.group_of(attr)  # raises on unknown symbols
            if not group.applies_to(record.category):
                raise ValueError(
                    f"attribute {attr!r} (group {group.group_id!r}) does not "
                    f"apply to category {record.category!r}"
                )

    def insert(self, record: ItemRecord) -> None:
        if record.item_id in self.store:
            raise DuplicateItemError(f"item already indexed: {record.item_id!r}")
        self._validate_record(record)
        self.store[record.item_id] = record
        for key in self._posting_keys(record):
            insort(self.postings.setdefault(key, []), record.item_id)

    def remove(self, item_id: str) -> None:
        record = self.store.pop(item_id, None)
        if record is None:
            raise KeyError(f"unknown item: {item_id!r}")
        for key in self._posting_keys(record):
            ids = self.postings.get(key, [])
            ids.remove(item_id)
            if not ids:
                del self.postings[key]

    # -- read path ------------------------------------------------------------

    def _check_symbol(self, symbol: str) -> None:
        if symbol == self.taxonomy.eos:
            raise ValueError("EOS is not an indexable attribute")
        symbol_index(self.taxonomy, symbol)  # raises on unknown symbols

    def candidates(
        self,
        query_attributes: set[str] | tuple[str, ...] | list[str],
        guided_category: str | None = None,
    ) -> dict[str, int]:
        """Candidate item ids with their attribute match counts.

        A guided category is a hard filter (its postings list only);
        otherwise candidates are the union of the query attributes'
        postings. Match count is the overlap between query attributes and
        the item's own attribute set.
        """
        query = set(query_attributes)
        for attr in query:
            self._check_symbol(attr)
        if guided_category is not None:
            if not self.taxonomy.is_category(guided_category):
                raise ValueError(
                    f"guided symbol is not a category: {guided_category!r}"
                )
            ids = self.postings.get(guided_category, [])
        else:
            merged: set[str] = set()
            for attr in query:
                merged.update(self.postings.get(attr, []))
            ids = sorted(merged)
        return {
            item_id: len(query & set(self.store[item_id].attributes))
            for item_id in ids
        }

    def search(
        self,
        code: BinaryCode,
        histogram: ColorHistogram,
        attributes: set[str] | tuple[str, ...] | list[str] = (),
        guided_category: str | None = None,
        k: int = 10,
        weights: DistanceWeights = DistanceWeights(),
    ) -> list[SearchResult]:
        """Exact top-k inside the candidate set.

        Ranking key: descending attribute match count, then ascending fused
        distance, then ascending item id. Returns min(k, candidates)
        results; an empty index yields an empty list.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if code.length != self.config.feature_dim:
            raise ValueError("query code length does not match index")
        if len(histogram) != self.config.bin_count:
            raise ValueError("query histogram does not match index bins")
        scored = []
        for item_id, match_count in self.candidates(
            attributes, guided_category
        ).items():
            record = self.store[item_id]
            dist = combined_distance(
                code, histogram, record.code, record.histogram, weights
            )
            scored.append(SearchResult(item_id, dist, match_count))
        scored.sort(key=lambda r: (-r.match_count, r.distance, r.item_id))
        return scored[:k]

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        chunks: list[bytes] = [
            struct.pack("<4sI", SNAPSHOT_MAGIC, SNAPSHOT_VERSION),
            content_hash(self.taxonomy),
            struct.pack(
                "<IIII",
                self.config.feature_dim,
                *self.config.bins,
            ),
            struct.pack("<Q", len(self.store)),
        ]
        for item_id in sorted(self.store):
            record = self.store[item_id]
            chunks.append(_encode_record(self.taxonomy, record))
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path: str | Path, taxonomy: Taxonomy) -> "InvertedIndex":
        reader = _Reader(Path(path).read_bytes())
        magic = reader.take(4)
        if magic != SNAPSHOT_MAGIC:
            raise SnapshotError(f"bad snapshot magic: {magic!r}")
        (version,) = reader.u32()
        if version != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported snapshot version: {version}")
        if reader.take(32) != content_hash(taxonomy):
            raise SnapshotError("snapshot was built against a different taxonomy")
        feature_dim, hb, sb, vb = reader.u32(4)
        (count,) = struct.unpack("<Q", reader.take(8))
        index = cls(taxonomy, feature_dim=feature_dim, bins=(hb, sb, vb))
        try:
            for _ in range(count):
                index.insert(_decode_record(taxonomy, reader, index.config))
        except SnapshotError:
            raise
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            raise SnapshotError(f"snapshot payload corrupt: {exc}") from exc
        if reader.pos != len(reader.data):
            raise SnapshotError("trailing bytes after snapshot payload")
        return index


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SnapshotError("snapshot truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1) -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    def text(self) -> str:
        (n,) = self.u32()
        return self.take(n).decode("utf-8")


def _encode_text(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _encode_record(taxonomy: Taxonomy, record: ItemRecord) -> bytes:
    parts = [
        _encode_text(record.item_id),
        struct.pack("<I", symbol_index(taxonomy, record.category)),
        struct.pack("<I", len(record.attributes)),
    ]
    for attr in record.attributes:
        parts.append(struct.pack("<I", symbol_index(taxonomy, attr)))
    parts.append(record.code.words.astype("<u8").tobytes())
    parts.append(record.histogram.bins.astype("<f8").tobytes())
    parts.append(
        struct.pack(
            "<IIII",
            int(record.roi.x),
            int(record.roi.y),
            int(record.roi.w),
            int(record.roi.h),
        )
    )
    parts.append(_encode_text(record.meta_text))
    return b"".join(parts)


def _decode_record(
    taxonomy: Taxonomy, reader: _Reader, config: IndexConfig
) -> ItemRecord:
    item_id = reader.text()
    (cat_idx,) = reader.u32()
    category = symbol_at(taxonomy, cat_idx)
    (n_attrs,) = reader.u32()
    attrs = tuple(symbol_at(taxonomy, reader.u32()[0]) for _ in range(n_attrs))
    n_words = (config.feature_dim + 63) // 64
    words = np.frombuffer(reader.take(8 * n_words), dtype="<u8").copy()
    code = BinaryCode(words=words, length=config.feature_dim)
    bins = np.frombuffer(reader.take(8 * config.bin_count), dtype="<f8").copy()
    histogram = ColorHistogram(bins=bins, normalized=True)
    x, y, w, h = reader.u32(4)
    meta = reader.text()
    return ItemRecord(
        item_id=item_id,
        category=category,
        attributes=attrs,
        code=code,
        histogram=histogram,
        roi=Box(x, y, w, h),
        meta_text=meta,
    )
