"""Synthetic corpus generation for fixtures, demos, and tests.

Builds deterministic toy catalogs: each item gets a category-prototype
dense feature (plus small noise), a flat-color item rectangle rendered on
a noisy background, meta text containing a category keyword, a correct
detection box, and (optionally) a wrong-category distractor detection.
The feature -> attribute-sequence mapping is deterministic per category,
which is exactly what the training overfit fixtures need.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attrseq import SeqExample
from .roi import Box, Detection
from .taxonomy import Taxonomy, sequence_template, symbol_index
from .visfeat import DenseFeature, encode_ppm, feature_to_bytes

# one flat RGB per category, far apart in hue so color histograms separate
_PALETTE = [
    (220, 40, 40),
    (40, 180, 60),
    (50, 80, 220),
    (230, 200, 40),
    (170, 40, 200),
    (40, 210, 200),
    (240, 130, 30),
    (120, 120, 120),
]


@dataclass(frozen=True)
class SynthItem:
    item_id: str
    category: str
    attribute_names: tuple[str, ...]  # category first, EOS excluded
    meta_text: str
    image: np.ndarray
    feature: DenseFeature
    true_box: Box
    detections: tuple[Detection, ...]


@dataclass(frozen=True)
class SynthCorpus:
    taxonomy: Taxonomy
    items: tuple[SynthItem, ...]
    feature_dim: int


def category_sequence(taxonomy: Taxonomy, category: str, variant: int = 0) -> tuple[str, ...]:
    """Deterministic attribute names for a category: one class per
    applicable group, rotated by ``variant``."""
    names = [category]
    for group in sequence_template(taxonomy, category).groups:
        names.append(group.classes[variant % len(group.classes)])
    return tuple(names)


def build_corpus(
    taxonomy: Taxonomy,
    keywords: dict[str, str] | None = None,
    n_items: int = 12,
    seed: int = 0,
    feature_dim: int = 64,
    image_size: int = 32,
    distractor_rate: float = 0.5,
) -> SynthCorpus:
    """Deterministic synthetic catalog.

    ``keywords`` maps category -> keyword to embed in the meta text
    (defaults to the category name itself).
    """
    rng = np.random.default_rng(seed)
    categories = list(taxonomy.categories)
    # one feature prototype per distinct target sequence, so the feature ->
    # sequence mapping stays a learnable function
    prototypes: dict[tuple[str, int], np.ndarray] = {}
    items = []
    for i in range(n_items):
        category = categories[i % len(categories)]
        keyword = (keywords or {}).get(category, category)
        variant = (i // len(categories)) % 3
        attrs = category_sequence(taxonomy, category, variant=variant)
        key = (category, variant)
        if key not in prototypes:
            prototypes[key] = rng.normal(0.0, 1.0, size=feature_dim)
        feature = DenseFeature(
            prototypes[key] + rng.normal(0.0, 0.05, size=feature_dim)
        )

        image = rng.integers(170, 230, size=(image_size, image_size, 3)).astype(
            np.uint8
        )
        side = image_size // 2
        x0 = int(rng.integers(0, image_size - side))
        y0 = int(rng.integers(0, image_size - side))
        color = _PALETTE[categories.index(category) % len(_PALETTE)]
        image[y0 : y0 + side, x0 : x0 + side] = color
        true_box = Box(x0, y0, side, side)

        detections = [Detection(box=true_box, category=category, score=0.9)]
        if rng.random() < distractor_rate:
            other = categories[(categories.index(category) + 1) % len(categories)]
            dx = max(0, min(image_size - side, x0 + int(rng.integers(-4, 5))))
            dy = max(0, min(image_size - side, y0 + int(rng.integers(-4, 5))))
            detections.append(
                Detection(box=Box(dx, dy, side, side), category=other, score=0.95)
            )

        items.append(
            SynthItem(
                item_id=f"item-{i:04d}",
                category=category,
                attribute_names=attrs,
                meta_text=f"catalog listing {i}: a fine {keyword} in stock",
                image=image,
                feature=feature,
                true_box=true_box,
                detections=tuple(detections),
            )
        )
    return SynthCorpus(
        taxonomy=taxonomy, items=tuple(items), feature_dim=feature_dim
    )


def sequence_examples(corpus: SynthCorpus) -> list[SeqExample]:
    """Training examples (feature, symbol indices ending in EOS)."""
    tax = corpus.taxonomy
    eos = symbol_index(tax, tax.eos)
    out = []
    for item in corpus.items:
        symbols = tuple(
            symbol_index(tax, name) for name in item.attribute_names
        ) + (eos,)
        out.append(SeqExample(feature=item.feature.values.astype(float), symbols=symbols))
    return out


def write_corpus(corpus: SynthCorpus, out_dir: str | Path) -> dict[str, Path]:
    """Materialize a corpus: images, features, manifest, detector fixture,
    ground truth, and a sequence dataset with train/validation/test splits."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)

    manifest_lines = []
    detection_lines = []
    gt_lines = []
    seq_lines = []
    splits = ("train", "train", "validation", "test")
    for i, item in enumerate(corpus.items):
        image_rel = f"images/{item.item_id}.ppm"
        feature_rel = f"features/{item.item_id}.fpsf"
        (out_dir / image_rel).write_bytes(encode_ppm(item.image))
        (out_dir / feature_rel).write_bytes(feature_to_bytes(item.feature))
        manifest_lines.append(
            json.dumps(
                {
                    "item_id": item.item_id,
                    "image_path": image_rel,
                    "meta_text": item.meta_text,
                    "feature_path": feature_rel,
                }
            )
        )
        for det in item.detections:
            detection_lines.append(
                json.dumps(
                    {
                        "image_id": item.item_id,
                        "x": det.box.x,
                        "y": det.box.y,
                        "w": det.box.w,
                        "h": det.box.h,
                        "category": det.category,
                        "score": det.score,
                    }
                )
            )
        gt_lines.append(
            json.dumps(
                {
                    "image_id": item.item_id,
                    "x": item.true_box.x,
                    "y": item.true_box.y,
                    "w": item.true_box.w,
                    "h": item.true_box.h,
                    "category": item.category,
                }
            )
        )
        seq_lines.append(
            json.dumps(
                {
                    "item_id": item.item_id,
                    "feature_path": feature_rel,
                    "symbols": list(item.attribute_names),
                    "split": splits[i % len(splits)],
                }
            )
        )

    paths = {
        "manifest": out_dir / "manifest.jsonl",
        "detections": out_dir / "detections.jsonl",
        "ground_truth": out_dir / "ground_truth.jsonl",
        "sequences": out_dir / "sequences.jsonl",
    }
    paths["manifest"].write_text("\n".join(manifest_lines) + "\n")
    paths["detections"].write_text("\n".join(detection_lines) + "\n")
    paths["ground_truth"].write_text("\n".join(gt_lines) + "\n")
    paths["sequences"].write_text("\n".join(seq_lines) + "\n")
    return paths
