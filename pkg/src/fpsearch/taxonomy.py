"""Attribute vocabulary: groups, category applicability, and symbol numbering.

A taxonomy defines the discrete symbols the rest of the system speaks:
category identifiers, attribute identifiers grouped by aspect (collar,
sleeve-length, ...), and a reserved end-of-sequence symbol. The group
order in the source file is the canonical sequence order used by the
sequence classifier, with the category always occupying position zero.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

EOS = "<EOS>"


@dataclass(frozen=True)
class AttributeGroup:
    """One aspect of an item (e.g. collar) with its closed set of classes.

    An empty ``applicable_categories`` set means the group applies to every
    category (e.g. gender).
    """

    group_id: str
    name: str
    classes: tuple[str, ...]
    applicable_categories: frozenset[str] = frozenset()

    def applies_to(self, category: str) -> bool:
        return not self.applicable_categories or category in self.applicable_categories


@dataclass(frozen=True)
class Taxonomy:
    """Immutable symbol universe: categories, grouped attributes, EOS."""

    categories: tuple[str, ...]
    groups: tuple[AttributeGroup, ...]
    eos: str = EOS

    # Derived lookup tables; frozen dataclass, so filled in __post_init__.
    _symbol_to_index: dict[str, int] = field(
        default_factory=dict, repr=False, compare=False
    )
    _index_to_symbol: tuple[str, ...] = field(default=(), repr=False, compare=False)
    _attr_to_group: dict[str, AttributeGroup] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        order: list[str] = list(self.categories)
        attr_to_group: dict[str, AttributeGroup] = {}
        for group in self.groups:
            for cls in group.classes:
                order.append(cls)
                attr_to_group.setdefault(cls, group)
        order.append(self.eos)
        mapping = {sym: i for i, sym in enumerate(order)}
        object.__setattr__(self, "_symbol_to_index", mapping)
        object.__setattr__(self, "_index_to_symbol", tuple(order))
        object.__setattr__(self, "_attr_to_group", attr_to_group)

    @property
    def vocab_size(self) -> int:
        return len(self._index_to_symbol)

    @property
    def attributes(self) -> tuple[str, ...]:
        """All attribute symbols in canonical (group-order) sequence."""
        return tuple(cls for g in self.groups for cls in g.classes)

    def is_category(self, symbol: str) -> bool:
        return symbol in set(self.categories)

    def group_of(self, attribute: str) -> AttributeGroup:
        try:
            return self._attr_to_group[attribute]
        except KeyError:
            raise ValueError(f"unknown attribute symbol: {attribute!r}") from None


def taxonomy_from_dict(doc: dict) -> Taxonomy:
    """Build a Taxonomy from the declarative JSON document shape.

    ``{"categories": [...], "groups": [{"name", "classes",
    "applicable_categories"}]}``. No validation beyond basic shape; run
    :func:`validate` on the result to get the violation report.
    """
    categories = tuple(doc.get("categories", []))
    groups = []
    for g in doc.get("groups", []):
        groups.append(
            AttributeGroup(
                group_id=g["name"],
                name=g["name"],
                classes=tuple(g.get("classes", [])),
                applicable_categories=frozenset(g.get("applicable_categories", [])),
            )
        )
    return Taxonomy(categories=categories, groups=tuple(groups))


def load_taxonomy(path: str | Path) -> Taxonomy:
    with open(path, "r", encoding="utf-8") as fh:
        return taxonomy_from_dict(json.load(fh))


def validate(taxonomy: Taxonomy) -> list[str]:
    """Check structural invariants; returns violations (empty list = valid).

    Violations are data, not failures: duplicate symbols, empty groups,
    unknown categories in applicability sets, and use of the reserved EOS
    symbol are all reported rather than raised.
    """
    violations: list[str] = []
    if not taxonomy.categories:
        violations.append("category list is empty")

    seen: dict[str, str] = {}
    for cat in taxonomy.categories:
        if cat == taxonomy.eos:
            violations.append(f"reserved EOS symbol used as category: {cat!r}")
        if cat in seen:
            violations.append(f"duplicate symbol {cat!r} (category, also {seen[cat]})")
        else:
            seen[cat] = "category"

    known_categories = set(taxonomy.categories)
    for group in taxonomy.groups:
        if not group.classes:
            violations.append(f"group {group.group_id!r} has no classes")
        for cls in group.classes:
            if cls == taxonomy.eos:
                violations.append(
                    f"reserved EOS symbol used as class in group {group.group_id!r}"
                )
            if cls in seen:
                violations.append(
                    f"duplicate symbol {cls!r} (group {group.group_id!r}, "
                    f"also {seen[cls]})"
                )
            else:
                seen[cls] = f"group {group.group_id!r}"
        for cat in sorted(group.applicable_categories):
            if cat not in known_categories:
                violations.append(
                    f"group {group.group_id!r} applicability references unknown "
                    f"category {cat!r}"
                )
    return violations


@dataclass(frozen=True)
class SequenceTemplate:
    """Slot layout of an attribute sequence for one category.

    Position 0 is always the category symbol; the remaining positions are
    attribute groups applicable to it, in canonical group order.
    """

    category: str
    groups: tuple[AttributeGroup, ...]


def sequence_template(taxonomy: Taxonomy, category: str) -> SequenceTemplate:
    """Groups applicable to ``category``, category slot first."""
    if category not in set(taxonomy.categories):
        raise ValueError(f"unknown category: {category!r}")
    groups = tuple(g for g in taxonomy.groups if g.applies_to(category))
    return SequenceTemplate(category=category, groups=groups)


def symbol_index(taxonomy: Taxonomy, symbol: str) -> int:
    """Dense index of a symbol: categories, then attributes in group order, EOS last."""
    try:
        return taxonomy._symbol_to_index[symbol]
    except KeyError:
        raise ValueError(f"unknown symbol: {symbol!r}") from None


def symbol_at(taxonomy: Taxonomy, index: int) -> str:
    """Inverse of :func:`symbol_index`."""
    if not 0 <= index < taxonomy.vocab_size:
        raise ValueError(f"symbol index out of range: {index}")
    return taxonomy._index_to_symbol[index]


def content_hash(taxonomy: Taxonomy) -> bytes:
    """32-byte digest of the taxonomy content, used to pin checkpoints and
    index snapshots to the vocabulary they were built against."""
    doc = {
        "categories": list(taxonomy.categories),
        "groups": [
            {
                "name": g.name,
                "classes": list(g.classes),
                "applicable_categories": sorted(g.applicable_categories),
            }
            for g in taxonomy.groups
        ],
        "eos": taxonomy.eos,
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).digest()
