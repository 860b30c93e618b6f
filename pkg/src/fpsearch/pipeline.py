"""Offline ingestion and online query composition.

Offline: each catalog item arrives as an image plus merchandiser meta text.
The category is extracted from the text (seller intent is authoritative),
the attribute sequence is generated with that category injected as a guide,
detections are filtered to the category before picking the ROI, and the
item lands in the inverted index with its binary code and ROI color
histogram.

Online: three query options. Option 1 lets the model pick the category,
option 2 takes a user-selected guided category, option 3 takes a
user-drawn rectangle as the ROI (with an optional guide). All three end in
the same index search.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .attrseq import AttributeSequence, SeqModelParams, generate
from .index import InvertedIndex, ItemRecord, SearchResult
from .roi import Box, Detector, guided_filter, select_roi
from .taxonomy import symbol_at
from .visfeat import (
    ColorHistogram,
    DenseFeature,
    DistanceWeights,
    binarize,
    color_histogram,
    read_feature,
    read_ppm,
)

FALLBACK_SEED = 0x46505346  # fixed: the fallback projection must never drift
FALLBACK_GRID = (8, 8)


class IngestRejected(Exception):
    """Item could not be ingested; carries the reason (data issue, not a bug)."""

    def __init__(self, item_id: str, reason: str):
        super().__init__(f"{item_id}: {reason}")
        self.item_id = item_id
        self.reason = reason


@dataclass(frozen=True)
class KeywordTable:
    """Ordered (keyword, category) pairs for meta-text category extraction."""

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        seen = set()
        for keyword, _ in self.entries:
            if not keyword:
                raise ValueError("empty keyword in table")
            if keyword != keyword.lower():
                raise ValueError(f"keyword not lowercase-normalized: {keyword!r}")
            if keyword in seen:
                raise ValueError(f"duplicate keyword: {keyword!r}")
            seen.add(keyword)


def load_keyword_table(path: str | Path) -> KeywordTable:
    with open(path, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    return KeywordTable(
        entries=tuple((row["keyword"], row["category"]) for row in rows)
    )


def extract_category(meta_text: str, table: KeywordTable) -> str | None:
    """Case-insensitive substring scan; longest matching keyword wins,
    ties break by table order. None when nothing matches."""
    meta = meta_text.lower()
    best: tuple[int, int] | None = None
    best_category: str | None = None
    for order, (keyword, category) in enumerate(table.entries):
        if keyword in meta:
            key = (-len(keyword), order)
            if best is None or key < best:
                best = key
                best_category = category
    return best_category


@lru_cache(maxsize=8)
def _fallback_projection(dim: int) -> np.ndarray:
    rng = np.random.default_rng(FALLBACK_SEED)
    grid_cells = FALLBACK_GRID[0] * FALLBACK_GRID[1]
    return rng.normal(0.0, 1.0, size=(dim, grid_cells * 3)).astype(np.float64)


def fallback_feature(image: np.ndarray, dim: int) -> DenseFeature:
    """Deterministic stand-in feature for images without a precomputed one:
    per-block mean RGB, centered, pushed through a fixed random projection."""
    gh, gw = FALLBACK_GRID
    height, width = image.shape[:2]
    rows = np.arange(height) * gh // height
    cols = np.arange(width) * gw // width
    ids = (rows[:, None] * gw + cols[None, :]).ravel()
    pooled = []
    for ch in range(3):
        values = image[..., ch].astype(np.float64).ravel()
        sums = np.bincount(ids, weights=values, minlength=gh * gw)
        counts = np.bincount(ids, minlength=gh * gw)
        pooled.append(sums / np.maximum(counts, 1) / 255.0 - 0.5)
    signal = np.concatenate(pooled)
    return DenseFeature(values=(_fallback_projection(dim) @ signal))


def _full_image_box(image: np.ndarray) -> Box:
    return Box(0, 0, image.shape[1], image.shape[0])


def ingest(
    item_id: str,
    image: np.ndarray,
    meta_text: str,
    dense_feature: DenseFeature | None,
    model: SeqModelParams,
    detector: Detector,
    index: InvertedIndex,
    keyword_table: KeywordTable,
    category: str | None = None,
) -> ItemRecord:
    """Run the full offline path for one item and insert it.

    Rejection (no category resolvable, unknown category) raises
    :class:`IngestRejected` and leaves the index untouched; everything is
    computed before the single insert.
    """
    if category is None:
        category = extract_category(meta_text, keyword_table)
    if category is None:
        raise IngestRejected(item_id, "no category keyword matched in meta text")
    if not index.taxonomy.is_category(category):
        raise IngestRejected(item_id, f"unknown category {category!r}")

    if dense_feature is None:
        dense_feature = fallback_feature(image, index.config.feature_dim)
    if len(dense_feature) != index.config.feature_dim:
        raise ValueError(
            f"feature dim {len(dense_feature)} does not match index "
            f"{index.config.feature_dim}"
        )

    sequence = generate(
        model, dense_feature.values, mode="greedy", guided_category=category
    )
    attributes = sequence.names(index.taxonomy)[:-1]  # drop EOS

    detections = detector.detect(image, item_id)
    matching = guided_filter(detections, category)
    roi = select_roi(matching, _full_image_box(image))
    histogram = color_histogram(image, roi, index.config.bins)
    record = ItemRecord(
        item_id=item_id,
        category=category,
        attributes=attributes,
        code=binarize(dense_feature),
        histogram=histogram,
        roi=roi,
        meta_text=meta_text,
    )
    index.insert(record)
    return record


@dataclass
class IngestReport:
    inserted: list[str] = field(default_factory=list)
    rejected: list[tuple[str, str]] = field(default_factory=list)


def ingest_manifest(
    manifest_path: str | Path,
    model: SeqModelParams,
    detector: Detector,
    index: InvertedIndex,
    keyword_table: KeywordTable,
) -> IngestReport:
    """Ingest a JSON Lines corpus manifest.

    Each line: ``{item_id, image_path, meta_text, feature_path?, category?}``.
    Paths are resolved relative to the manifest file. An explicit category
    overrides extraction. Rejected items are reported, not fatal.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    report = IngestReport()
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            item_id = row["item_id"]
            image = read_ppm(base / row["image_path"])
            feature = (
                read_feature(base / row["feature_path"])
                if row.get("feature_path")
                else None
            )
            try:
                ingest(
                    item_id=item_id,
                    image=image,
                    meta_text=row.get("meta_text", ""),
                    dense_feature=feature,
                    model=model,
                    detector=detector,
                    index=index,
                    keyword_table=keyword_table,
                    category=row.get("category"),
                )
            except IngestRejected as exc:
                report.rejected.append((item_id, exc.reason))
            else:
                report.inserted.append(item_id)
    return report


@dataclass(frozen=True)
class QueryRequest:
    """One search request; field presence depends on the option.

    Option 1: model picks the category (no guide, no ROI).
    Option 2: ``guided_category`` required.
    Option 3: ``roi`` (and therefore the image) required; guide optional.
    """

    option: int
    image: np.ndarray | None = None
    feature: DenseFeature | None = None
    guided_category: str | None = None
    roi: Box | None = None
    k: int = 10
    weights: DistanceWeights = DistanceWeights()

    def validate(self) -> None:
        if self.option not in (1, 2, 3):
            raise ValueError(f"unknown query option: {self.option}")
        if self.image is None and self.feature is None:
            raise ValueError("query needs an image or a precomputed feature")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.option == 1 and self.guided_category is not None:
            raise ValueError("option 1 does not take a guided category")
        if self.option == 2 and self.guided_category is None:
            raise ValueError("option 2 requires a guided category")
        if self.option == 3:
            if self.roi is None:
                raise ValueError("option 3 requires an ROI")
            if self.image is None:
                raise ValueError("option 3 requires the query image")
        elif self.roi is not None:
            raise ValueError("only option 3 takes an ROI")


@dataclass(frozen=True)
class QueryOutcome:
    results: list[SearchResult]
    generated: AttributeSequence
    category: str | None  # category used as the hard candidate filter
    roi: Box | None  # ROI the query histogram was computed over


def query(
    request: QueryRequest,
    model: SeqModelParams,
    detector: Detector,
    index: InvertedIndex,
) -> QueryOutcome:
    """Compose one online query and run it against the index.

    Feature-only queries (no image) cannot compute a color histogram; they
    fall back to appearance-only ranking (effective appearance weight 1).
    """
    request.validate()
    tax = index.taxonomy
    if request.guided_category is not None and not tax.is_category(
        request.guided_category
    ):
        raise ValueError(f"unknown guided category: {request.guided_category!r}")

    feature = request.feature
    if feature is None:
        feature = fallback_feature(request.image, index.config.feature_dim)
    if len(feature) != index.config.feature_dim:
        raise ValueError(
            f"feature dim {len(feature)} does not match index "
            f"{index.config.feature_dim}"
        )

    sequence = generate(
        model,
        feature.values,
        mode="greedy",
        guided_category=request.guided_category,
    )
    if request.guided_category is not None:
        category = request.guided_category
    else:
        first = symbol_at(tax, sequence.symbols[0])
        category = first if tax.is_category(first) else None

    roi: Box | None = None
    weights = request.weights
    if request.image is not None:
        if request.option == 3:
            roi = request.roi
            bounds = _full_image_box(request.image)
            if (
                roi.x + roi.w > bounds.w
                or roi.y + roi.h > bounds.h
            ):
                raise ValueError(f"ROI {roi} lies outside the query image")
        else:
            detections = guided_filter(
                detector.detect(request.image, None), category
            )
            roi = select_roi(detections, _full_image_box(request.image))
        histogram = color_histogram(request.image, roi, index.config.bins)
    else:
        # color-neutral query: uniform histogram + appearance-only weights
        bins = index.config.bin_count
        histogram = ColorHistogram(np.full(bins, 1.0 / bins), normalized=True)
        weights = DistanceWeights(1.0)

    attributes = set(sequence.names(tax)[:-1])
    results = index.search(
        code=binarize(feature),
        histogram=histogram,
        attributes=attributes,
        guided_category=category,
        k=request.k,
        weights=weights,
    )
    return QueryOutcome(
        results=results, generated=sequence, category=category, roi=roi
    )
