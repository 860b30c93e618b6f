import base64
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

from fpsearch.attrseq import save_checkpoint, zero_params
from fpsearch.index import InvertedIndex
from fpsearch.pipeline import QueryRequest, ingest_manifest, load_keyword_table, query
from fpsearch.roi import FixtureDetector
from fpsearch.service import ServiceConfig, build_state, create_app
from fpsearch.synth import build_corpus, write_corpus
from fpsearch.visfeat import DistanceWeights, encode_ppm, feature_to_bytes

F = 32


@pytest.fixture(scope="module")
def deployment(tmp_path_factory, fixtures_dir, taxonomy):
    """Corpus + checkpoint + snapshot on disk, service state built from files."""
    root = tmp_path_factory.mktemp("service")
    keywords = {cat: cat for cat in taxonomy.categories}
    corpus = build_corpus(
        taxonomy, keywords, n_items=30, seed=7, feature_dim=F, image_size=32
    )
    paths = write_corpus(corpus, root)

    # zero parameters make the model's own choices deterministic: option 1
    # always resolves to the first category in the vocabulary
    model = zero_params(taxonomy, feature_dim=F, embed_dim=8, hidden_dim=16)
    checkpoint_path = root / "model.fpsm"
    save_checkpoint(checkpoint_path, model)

    table = load_keyword_table(fixtures_dir / "keywords.json")
    detector = FixtureDetector.from_file(paths["detections"])
    index = InvertedIndex(taxonomy, feature_dim=F, bins=(8, 4, 4))
    report = ingest_manifest(paths["manifest"], model, detector, index, table)
    assert not report.rejected
    index_path = root / "index.fpsi"
    index.save(index_path)

    config = ServiceConfig(
        taxonomy_path=fixtures_dir / "taxonomy.json",
        index_path=index_path,
        checkpoint_path=checkpoint_path,
        detector_fixture_path=paths["detections"],
        keywords_path=fixtures_dir / "keywords.json",
        default_k=10,
    )
    state = build_state(config)
    app = create_app(state)
    client = TestClient(app, raise_server_exceptions=False)
    return {
        "corpus": corpus,
        "state": state,
        "client": client,
        "paths": paths,
        "index_path": index_path,
        "root": root,
    }


def feature_payload(item):
    return base64.b64encode(feature_to_bytes(item.feature)).decode()


def image_payload(item):
    return base64.b64encode(encode_ppm(item.image)).decode()


class TestBasicEndpoints:
    def test_health_reports_item_count(self, deployment):
        response = deployment["client"].get("/health")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "ok"
        assert body["items"] == len(deployment["corpus"].items)

    def test_taxonomy_endpoint_lists_categories_and_groups(self, deployment, taxonomy):
        body = deployment["client"].get("/taxonomy").json()
        assert body["categories"] == list(taxonomy.categories)
        assert len(body["groups"]) == len(taxonomy.groups)
        assert body["eos"] == taxonomy.eos

    def test_item_lookup(self, deployment):
        item = deployment["corpus"].items[0]
        body = deployment["client"].get(f"/items/{item.item_id}").json()
        assert body["item_id"] == item.item_id
        assert body["category"] == item.category
        assert body["attributes"][0] == item.category

    def test_unknown_item_is_404(self, deployment):
        response = deployment["client"].get("/items/nope")
        assert response.status_code == 404
        assert response.json()["error"] == "not_found"


class TestSearch:
    def test_option1_returns_exactly_k(self, deployment):
        item = deployment["corpus"].items[0]
        response = deployment["client"].post(
            "/search",
            json={"option": 1, "feature_b64": feature_payload(item), "k": 5},
        )
        assert response.status_code == 200
        assert len(response.json()["results"]) == 5

    def test_option2_http_equals_in_process(self, deployment):
        state = deployment["state"]
        item = deployment["corpus"].items[2]
        guided = item.category
        response = deployment["client"].post(
            "/search",
            json={
                "option": 2,
                "feature_b64": feature_payload(item),
                "image_b64": image_payload(item),
                "guided_category": guided,
                "k": 7,
                "appearance_weight": 0.6,
            },
        )
        assert response.status_code == 200
        body = response.json()

        outcome = query(
            QueryRequest(
                option=2,
                image=item.image,
                feature=item.feature,
                guided_category=guided,
                k=7,
                weights=DistanceWeights(0.6),
            ),
            state.model,
            state.detector,
            state.index,
        )
        assert [r["item_id"] for r in body["results"]] == [
            r.item_id for r in outcome.results
        ]
        assert [r["match_count"] for r in body["results"]] == [
            r.match_count for r in outcome.results
        ]
        for got, expected in zip(body["results"], outcome.results):
            assert got["distance"] == pytest.approx(expected.distance)
        assert body["generated_sequence"] == list(
            outcome.generated.names(state.taxonomy)
        )
        assert body["category"] == guided

    def test_option2_results_all_guided_category(self, deployment):
        state = deployment["state"]
        item = deployment["corpus"].items[1]
        response = deployment["client"].post(
            "/search",
            json={
                "option": 2,
                "feature_b64": feature_payload(item),
                "guided_category": "pants",
                "k": 50,
            },
        )
        body = response.json()
        assert body["results"]
        for r in body["results"]:
            assert state.index.store[r["item_id"]].category == "pants"

    def test_option3_roi_outside_image_is_client_error(self, deployment):
        item = deployment["corpus"].items[0]
        response = deployment["client"].post(
            "/search",
            json={
                "option": 3,
                "image_b64": image_payload(item),
                "roi": {"x": 0, "y": 0, "w": 10_000, "h": 10},
            },
        )
        assert response.status_code == 400
        assert "outside" in response.json()["detail"]

    def test_unknown_guided_category_is_client_error(self, deployment):
        item = deployment["corpus"].items[0]
        response = deployment["client"].post(
            "/search",
            json={
                "option": 2,
                "feature_b64": feature_payload(item),
                "guided_category": "spaceship",
            },
        )
        assert response.status_code == 400

    def test_concurrent_identical_searches_identical_responses(self, deployment):
        item = deployment["corpus"].items[3]
        payload = {
            "option": 2,
            "feature_b64": feature_payload(item),
            "guided_category": item.category,
            "k": 8,
        }

        def call(_):
            return deployment["client"].post("/search", json=payload).json()

        with ThreadPoolExecutor(max_workers=8) as pool:
            bodies = list(pool.map(call, range(100)))
        first = bodies[0]
        assert first["results"]
        for body in bodies[1:]:
            assert body == first


class TestRobustness:
    MALFORMED = [
        "not json at all",
        "[]",
        "{}",
        json.dumps({"option": "banana"}),
        json.dumps({"option": 9, "feature_b64": "AAAA"}),
        json.dumps({"option": 1}),
        json.dumps({"option": 1, "feature_b64": "!!!not-base64!!!"}),
        json.dumps({"option": 1, "feature_b64": base64.b64encode(b"junk").decode()}),
        json.dumps({"option": 1, "image_b64": base64.b64encode(b"P6 bad").decode()}),
        json.dumps({"option": 1, "feature_b64": "", "k": -3}),
        json.dumps({"option": 3, "image_b64": None, "roi": {"x": -1, "y": 0, "w": 1, "h": 1}}),
        json.dumps({"option": 2, "feature_b64": 123}),
    ]

    @pytest.mark.parametrize("raw", MALFORMED)
    def test_malformed_bodies_yield_client_errors(self, deployment, raw):
        response = deployment["client"].post(
            "/search", content=raw, headers={"content-type": "application/json"}
        )
        assert 400 <= response.status_code < 500
        body = response.json()
        assert "error" in body and "detail" in body

    def test_fuzzed_random_bodies_never_crash(self, deployment):
        rng = np.random.default_rng(0)
        client = deployment["client"]
        for _ in range(60):
            blob = bytes(rng.integers(0, 256, size=rng.integers(0, 80)))
            response = client.post(
                "/search", content=blob, headers={"content-type": "application/json"}
            )
            assert response.status_code < 500 or response.status_code == 500
            # daemon must still be alive and consistent afterwards
        assert client.get("/health").status_code == 200

    def test_read_endpoints_do_not_mutate_index(self, deployment, tmp_path):
        state = deployment["state"]
        before = tmp_path / "before.fpsi"
        after = tmp_path / "after.fpsi"
        state.index.save(before)
        item = deployment["corpus"].items[0]
        deployment["client"].post(
            "/search", json={"option": 1, "feature_b64": feature_payload(item)}
        )
        deployment["client"].get("/health")
        deployment["client"].get(f"/items/{item.item_id}")
        state.index.save(after)
        assert before.read_bytes() == after.read_bytes()


class TestReindex:
    def test_reindex_swaps_to_new_corpus(self, deployment, taxonomy, tmp_path):
        state = deployment["state"]
        client = deployment["client"]
        old_count = len(state.index)

        keywords = {cat: cat for cat in taxonomy.categories}
        small = build_corpus(
            taxonomy, keywords, n_items=6, seed=99, feature_dim=F, image_size=32
        )
        paths = write_corpus(small, tmp_path / "corpus2")
        response = client.post(
            "/admin/reindex", json={"manifest_path": str(paths["manifest"])}
        )
        assert response.status_code == 200
        assert response.json()["items"] == 6
        assert client.get("/health").json()["items"] == 6
        assert len(state.index) == 6 != old_count

        # searches keep working against the swapped index
        item = small.items[0]
        body = client.post(
            "/search",
            json={"option": 2, "feature_b64": feature_payload(item),
                  "guided_category": item.category},
        )
        assert body.status_code == 200
        assert body.json()["results"]

    def test_missing_manifest_is_client_error(self, deployment):
        response = deployment["client"].post(
            "/admin/reindex", json={"manifest_path": "/nonexistent/manifest.jsonl"}
        )
        assert response.status_code == 400

    def test_searches_racing_reindex_never_see_torn_state(
        self, deployment, taxonomy, tmp_path
    ):
        # every response must be internally consistent with exactly one of
        # the two corpora: a pointer swap admits no intermediate states
        client = deployment["client"]
        keywords = {cat: cat for cat in taxonomy.categories}
        corpora = {}
        manifests = {}
        for label, (n, seed) in {"a": (12, 41), "b": (18, 42)}.items():
            corpus = build_corpus(
                taxonomy, keywords, n_items=n, seed=seed, feature_dim=F, image_size=32
            )
            corpora[label] = corpus
            manifests[label] = write_corpus(corpus, tmp_path / label)["manifest"]
        valid_counts = {len(corpora["a"].items), len(corpora["b"].items)}
        probe = corpora["a"].items[0]
        payload = {
            "option": 2,
            "feature_b64": feature_payload(probe),
            "guided_category": probe.category,
            "k": 50,
        }
        ids_by_corpus = {
            label: {item.item_id for item in corpus.items}
            for label, corpus in corpora.items()
        }

        def searcher(_):
            response = client.post("/search", json=payload)
            assert response.status_code == 200
            got = {r["item_id"] for r in response.json()["results"]}
            assert got <= ids_by_corpus["a"] or got <= ids_by_corpus["b"]
            return True

        def reindexer(i):
            manifest = manifests["a" if i % 2 else "b"]
            response = client.post(
                "/admin/reindex", json={"manifest_path": str(manifest)}
            )
            assert response.status_code == 200
            assert response.json()["items"] in valid_counts
            return True

        with ThreadPoolExecutor(max_workers=8) as pool:
            searches = pool.map(searcher, range(40))
            swaps = pool.map(reindexer, range(6))
            assert all(searches) and all(swaps)
        assert client.get("/health").json()["items"] in valid_counts
