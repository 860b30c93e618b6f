import numpy as np
import pytest

import oracles
from fpsearch.index import (
    DuplicateItemError,
    InvertedIndex,
    ItemRecord,
    SnapshotError,
)
from fpsearch.roi import Box
from fpsearch.visfeat import ColorHistogram, DistanceWeights, pack_bits

F = 64
BINS = (2, 2, 2)


def make_record(rng, taxonomy, item_id, category=None, attributes=None):
    if category is None:
        category = str(rng.choice(list(taxonomy.categories)))
    if attributes is None:
        pool = [
            cls
            for g in taxonomy.groups
            if g.applies_to(category)
            for cls in g.classes
        ]
        n = int(rng.integers(1, min(4, len(pool)) + 1))
        picked = list(rng.choice(pool, size=n, replace=False))
        attributes = tuple([category] + picked)
    raw = rng.random(8)
    return ItemRecord(
        item_id=item_id,
        category=category,
        attributes=tuple(attributes),
        code=pack_bits(rng.integers(0, 2, size=F)),
        histogram=ColorHistogram(raw / raw.sum(), normalized=True),
        roi=Box(*rng.integers(0, 10, 2), *rng.integers(1, 30, 2)),
        meta_text=f"meta for {item_id}",
    )


def make_index(taxonomy):
    return InvertedIndex(taxonomy, feature_dim=F, bins=BINS)


def random_query(rng, taxonomy, n_attrs=2):
    pool = [cls for g in taxonomy.groups for cls in g.classes]
    attrs = set(rng.choice(pool, size=n_attrs, replace=False))
    raw = rng.random(8)
    return (
        pack_bits(rng.integers(0, 2, size=F)),
        ColorHistogram(raw / raw.sum(), normalized=True),
        attrs,
    )


class TestInsert:
    def test_item_lands_in_attribute_and_category_postings(self, taxonomy):
        rng = np.random.default_rng(0)
        idx = make_index(taxonomy)
        record = make_record(
            rng, taxonomy, "i1", category="pants",
            attributes=("bottom", "male", "a-line"),
        )
        idx.insert(record)
        assert set(idx.postings) == {"bottom", "male", "a-line", "pants"}
        for ids in idx.postings.values():
            assert ids == ["i1"]

    def test_duplicate_insert_rejected_and_index_unchanged(self, taxonomy):
        rng = np.random.default_rng(1)
        idx = make_index(taxonomy)
        record = make_record(rng, taxonomy, "i1")
        idx.insert(record)
        before = oracles.rebuild_postings(idx)
        with pytest.raises(DuplicateItemError):
            idx.insert(make_record(rng, taxonomy, "i1"))
        assert idx.postings == before
        assert len(idx) == 1

    def test_wrong_code_length_rejected(self, taxonomy):
        rng = np.random.default_rng(2)
        idx = make_index(taxonomy)
        record = make_record(rng, taxonomy, "i1")
        bad = ItemRecord(
            item_id="i2",
            category=record.category,
            attributes=record.attributes,
            code=pack_bits(rng.integers(0, 2, size=F * 2)),
            histogram=record.histogram,
            roi=record.roi,
        )
        with pytest.raises(ValueError, match="length"):
            idx.insert(bad)

    def test_inapplicable_attribute_rejected(self, taxonomy):
        rng = np.random.default_rng(3)
        idx = make_index(taxonomy)
        record = make_record(
            rng, taxonomy, "i1", category="pants", attributes=("round",)
        )
        with pytest.raises(ValueError, match="apply"):
            idx.insert(record)

    def test_unknown_category_rejected(self, taxonomy):
        rng = np.random.default_rng(4)
        with pytest.raises(ValueError, match="category"):
            make_index(taxonomy).insert(
                make_record(rng, taxonomy, "i1", category="hat", attributes=())
            )

    def test_postings_invariant_after_many_inserts(self, taxonomy):
        rng = np.random.default_rng(5)
        idx = make_index(taxonomy)
        for i in range(1000):
            idx.insert(make_record(rng, taxonomy, f"item-{i:04d}"))
        assert idx.postings == oracles.rebuild_postings(idx)
        for ids in idx.postings.values():
            assert ids == sorted(ids)
            assert len(ids) == len(set(ids))


class TestRemove:
    def test_insert_then_remove_restores_empty_index(self, taxonomy):
        rng = np.random.default_rng(6)
        idx = make_index(taxonomy)
        idx.insert(make_record(rng, taxonomy, "i1"))
        idx.remove("i1")
        assert len(idx) == 0
        assert idx.postings == {}

    def test_remove_unknown_raises(self, taxonomy):
        with pytest.raises(KeyError):
            make_index(taxonomy).remove("ghost")

    def test_random_insert_remove_interleaving_keeps_invariant(self, taxonomy):
        rng = np.random.default_rng(7)
        idx = make_index(taxonomy)
        live: list[str] = []
        for step_no in range(400):
            if live and rng.random() < 0.4:
                victim = live.pop(int(rng.integers(len(live))))
                idx.remove(victim)
            else:
                item_id = f"item-{step_no}"
                idx.insert(make_record(rng, taxonomy, item_id))
                live.append(item_id)
        assert idx.postings == oracles.rebuild_postings(idx)


class TestCandidates:
    def test_guided_category_is_hard_filter(self, taxonomy):
        rng = np.random.default_rng(8)
        idx = make_index(taxonomy)
        for i in range(2):
            idx.insert(make_record(rng, taxonomy, f"pants-{i}", category="pants"))
        for i in range(3):
            idx.insert(make_record(rng, taxonomy, f"skirt-{i}", category="skirt"))
        got = idx.candidates(set(), guided_category="pants")
        assert set(got) == {"pants-0", "pants-1"}

    def test_unguided_union_over_attribute_postings(self, taxonomy):
        rng = np.random.default_rng(9)
        idx = make_index(taxonomy)
        idx.insert(
            make_record(
                rng, taxonomy, "hit", category="t-shirts",
                attributes=("top", "long"),
            )
        )
        idx.insert(
            make_record(
                rng, taxonomy, "miss", category="t-shirts",
                attributes=("top", "half"),
            )
        )
        got = idx.candidates({"long"})
        assert set(got) == {"hit"}
        assert got["hit"] == 1

    def test_match_count_annotation(self, taxonomy):
        rng = np.random.default_rng(10)
        idx = make_index(taxonomy)
        idx.insert(
            make_record(
                rng, taxonomy, "i1", category="t-shirts",
                attributes=("top", "male", "long"),
            )
        )
        got = idx.candidates({"top", "male", "half"}, guided_category="t-shirts")
        assert got == {"i1": 2}

    def test_unknown_attribute_raises(self, taxonomy):
        with pytest.raises(ValueError):
            make_index(taxonomy).candidates({"not-a-symbol"})

    def test_unknown_guided_category_raises(self, taxonomy):
        with pytest.raises(ValueError):
            make_index(taxonomy).candidates(set(), guided_category="hat")

    def test_matches_full_scan_on_random_index(self, taxonomy):
        rng = np.random.default_rng(11)
        idx = make_index(taxonomy)
        for i in range(200):
            idx.insert(make_record(rng, taxonomy, f"item-{i}"))
        for _ in range(30):
            _, _, attrs = random_query(rng, taxonomy)
            guided = (
                str(rng.choice(list(taxonomy.categories)))
                if rng.random() < 0.5
                else None
            )
            got = idx.candidates(attrs, guided_category=guided)
            expected = {}
            for item_id, record in idx.store.items():
                if guided is not None:
                    if record.category != guided:
                        continue
                elif not (attrs & (set(record.attributes) | {record.category})):
                    continue
                expected[item_id] = len(attrs & set(record.attributes))
            assert got == expected


class TestSearch:
    def test_empty_index_returns_empty(self, taxonomy):
        rng = np.random.default_rng(12)
        code, hist, attrs = random_query(rng, taxonomy)
        assert make_index(taxonomy).search(code, hist, attrs) == []

    def test_exact_item_ranks_first_with_zero_distance(self, taxonomy):
        rng = np.random.default_rng(13)
        idx = make_index(taxonomy)
        target = make_record(rng, taxonomy, "target", category="bag")
        idx.insert(target)
        for i in range(20):
            idx.insert(make_record(rng, taxonomy, f"noise-{i}"))
        results = idx.search(
            target.code,
            target.histogram,
            set(target.attributes) - {target.category},
            guided_category="bag",
            k=5,
        )
        assert results[0].item_id == "target"
        assert results[0].distance == 0.0

    def test_k_bounds_result_count(self, taxonomy):
        rng = np.random.default_rng(14)
        idx = make_index(taxonomy)
        for i in range(7):
            idx.insert(make_record(rng, taxonomy, f"pants-{i}", category="pants"))
        code, hist, _ = random_query(rng, taxonomy)
        assert len(idx.search(code, hist, set(), "pants", k=3)) == 3
        assert len(idx.search(code, hist, set(), "pants", k=50)) == 7
        with pytest.raises(ValueError):
            idx.search(code, hist, set(), "pants", k=0)

    def test_guided_search_never_leaks_other_categories(self, taxonomy):
        rng = np.random.default_rng(15)
        idx = make_index(taxonomy)
        for i in range(50):
            idx.insert(make_record(rng, taxonomy, f"item-{i}"))
        code, hist, attrs = random_query(rng, taxonomy)
        for result in idx.search(code, hist, attrs, guided_category="bag", k=50):
            assert idx.store[result.item_id].category == "bag"

    def test_prefix_property(self, taxonomy):
        rng = np.random.default_rng(16)
        idx = make_index(taxonomy)
        for i in range(60):
            idx.insert(make_record(rng, taxonomy, f"item-{i}"))
        code, hist, attrs = random_query(rng, taxonomy)
        for n in (1, 3, 7, 20):
            small = idx.search(code, hist, attrs, None, k=n)
            bigger = idx.search(code, hist, attrs, None, k=n + 1)
            assert small == bigger[:n]

    def test_matches_full_scan_oracle(self, taxonomy):
        rng = np.random.default_rng(17)
        idx = make_index(taxonomy)
        for i in range(300):
            idx.insert(make_record(rng, taxonomy, f"item-{i:03d}"))
        weights = DistanceWeights(0.7)
        for qi in range(30):
            code, hist, attrs = random_query(rng, taxonomy)
            guided = (
                str(rng.choice(list(taxonomy.categories)))
                if qi % 2
                else None
            )
            got = idx.search(code, hist, attrs, guided, k=10, weights=weights)
            expected = oracles.full_scan_search(
                idx, code, hist, attrs, guided, 10, weights
            )
            assert [(r.item_id, r.match_count) for r in got] == [
                (e[0], e[2]) for e in expected
            ]
            for r, e in zip(got, expected):
                assert r.distance == pytest.approx(e[1], abs=1e-12)

    def test_repeated_search_is_pure(self, taxonomy):
        rng = np.random.default_rng(18)
        idx = make_index(taxonomy)
        for i in range(40):
            idx.insert(make_record(rng, taxonomy, f"item-{i}"))
        code, hist, attrs = random_query(rng, taxonomy)
        first = idx.search(code, hist, attrs)
        for _ in range(5):
            assert idx.search(code, hist, attrs) == first


class TestPersistence:
    def test_round_trip_preserves_search_results(self, taxonomy, tmp_path):
        rng = np.random.default_rng(19)
        idx = make_index(taxonomy)
        for i in range(100):
            idx.insert(make_record(rng, taxonomy, f"item-{i:03d}"))
        path = tmp_path / "index.fpsi"
        idx.save(path)
        loaded = InvertedIndex.load(path, taxonomy)
        assert len(loaded) == len(idx)
        for _ in range(20):
            code, hist, attrs = random_query(rng, taxonomy)
            assert loaded.search(code, hist, attrs) == idx.search(code, hist, attrs)

    def test_records_round_trip_exactly(self, taxonomy, tmp_path):
        rng = np.random.default_rng(20)
        idx = make_index(taxonomy)
        record = make_record(rng, taxonomy, "only")
        idx.insert(record)
        path = tmp_path / "index.fpsi"
        idx.save(path)
        loaded = InvertedIndex.load(path, taxonomy).store["only"]
        assert loaded.category == record.category
        assert loaded.attributes == record.attributes
        assert np.array_equal(loaded.code.words, record.code.words)
        assert np.array_equal(loaded.histogram.bins, record.histogram.bins)
        assert loaded.meta_text == record.meta_text

    def test_wrong_taxonomy_hash_rejected(self, taxonomy, tiny_taxonomy, tmp_path):
        idx = make_index(taxonomy)
        path = tmp_path / "index.fpsi"
        idx.save(path)
        with pytest.raises(SnapshotError, match="taxonomy"):
            InvertedIndex.load(path, tiny_taxonomy)

    def test_truncated_snapshot_rejected(self, taxonomy, tmp_path):
        rng = np.random.default_rng(21)
        idx = make_index(taxonomy)
        for i in range(5):
            idx.insert(make_record(rng, taxonomy, f"item-{i}"))
        path = tmp_path / "index.fpsi"
        idx.save(path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(SnapshotError, match="truncated"):
            InvertedIndex.load(path, taxonomy)

    def test_bad_magic_rejected(self, taxonomy, tmp_path):
        idx = make_index(taxonomy)
        path = tmp_path / "index.fpsi"
        idx.save(path)
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(SnapshotError, match="magic"):
            InvertedIndex.load(path, taxonomy)

    def test_trailing_garbage_rejected(self, taxonomy, tmp_path):
        idx = make_index(taxonomy)
        path = tmp_path / "index.fpsi"
        idx.save(path)
        path.write_bytes(path.read_bytes() + b"extra")
        with pytest.raises(SnapshotError, match="trailing"):
            InvertedIndex.load(path, taxonomy)
