"""Operator command line: offline ingestion, training, evaluation, serving.

Exit codes: 0 success, 1 operational failure, 2 usage error. Every
subcommand takes ``--json`` for machine-readable output and is
reproducible given identical inputs and ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import attrseq, synth
from .attrseq import SeqExample, TrainConfig, evaluate_pr, init_params
from .index import InvertedIndex
from .pipeline import (
    QueryRequest,
    ingest_manifest,
    load_keyword_table,
    query,
)
from .roi import Box, FixtureDetector, evaluate_map, load_detections, load_ground_truth
from .service import ServiceConfig, serve
from .taxonomy import load_taxonomy, symbol_index, validate
from .visfeat import (
    HARDWARE_POPCOUNT,
    BinaryCode,
    DistanceWeights,
    hamming,
    hamming_portable,
    hamming_scan,
    read_feature,
    read_ppm,
)


def _emit(args, payload: dict, text_lines: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


def _load_model(args, taxonomy, feature_dim: int):
    if getattr(args, "checkpoint", None) and Path(args.checkpoint).exists():
        return attrseq.load_checkpoint(args.checkpoint, taxonomy)
    return init_params(
        taxonomy,
        feature_dim=feature_dim,
        embed_dim=32,
        hidden_dim=64,
        seed=args.seed,
    )


def _detector(args):
    if getattr(args, "detector_fixture", None):
        return FixtureDetector.from_file(args.detector_fixture)

    class _Null:
        def detect(self, image, image_id=None):
            return []

    return _Null()


# --- subcommands -----------------------------------------------------------

def cmd_taxonomy_validate(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    violations = validate(taxonomy)
    _emit(
        args,
        {"valid": not violations, "violations": violations},
        ["OK"] if not violations else [f"violation: {v}" for v in violations],
    )
    return 0 if not violations else 1


def cmd_ingest(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    bins = tuple(int(b) for b in args.bins.split(","))
    index = InvertedIndex(taxonomy, feature_dim=args.feature_dim, bins=bins)
    model = _load_model(args, taxonomy, args.feature_dim)
    table = load_keyword_table(args.keywords)
    report = ingest_manifest(args.manifest, model, _detector(args), index, table)
    index.save(args.index)
    _emit(
        args,
        {
            "inserted": len(report.inserted),
            "rejected": [
                {"item_id": i, "reason": r} for i, r in report.rejected
            ],
            "items": len(index),
            "index_path": str(args.index),
        },
        [f"ingested {len(report.inserted)} items into {args.index}"]
        + [f"rejected {item_id}: {reason}" for item_id, reason in report.rejected],
    )
    return 0


def cmd_search(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    index = InvertedIndex.load(args.index, taxonomy)
    model = _load_model(args, taxonomy, index.config.feature_dim)
    image = read_ppm(args.image) if args.image else None
    feature = read_feature(args.feature) if args.feature else None
    roi = None
    if args.roi:
        x, y, w, h = (float(v) for v in args.roi.split(","))
        roi = Box(x, y, w, h)
    request = QueryRequest(
        option=args.option,
        image=image,
        feature=feature,
        guided_category=args.guided_category,
        roi=roi,
        k=args.k,
        weights=DistanceWeights(args.appearance_weight),
    )
    outcome = query(request, model, _detector(args), index)
    results = [
        {
            "item_id": r.item_id,
            "distance": r.distance,
            "match_count": r.match_count,
            "category": index.store[r.item_id].category,
        }
        for r in outcome.results
    ]
    _emit(
        args,
        {
            "results": results,
            "generated_sequence": list(outcome.generated.names(taxonomy)),
            "category": outcome.category,
        },
        [f"generated: {' '.join(outcome.generated.names(taxonomy))}"]
        + [
            f"{i + 1:2d}. {r['item_id']}  distance={r['distance']:.4f} "
            f"matches={r['match_count']} category={r['category']}"
            for i, r in enumerate(results)
        ],
    )
    return 0


def _load_sequence_dataset(path: str | Path, taxonomy):
    base = Path(path).parent
    eos = symbol_index(taxonomy, taxonomy.eos)
    splits: dict[str, list[SeqExample]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            feature = read_feature(base / row["feature_path"])
            symbols = tuple(
                symbol_index(taxonomy, name) for name in row["symbols"]
            ) + (eos,)
            splits.setdefault(row.get("split", "train"), []).append(
                SeqExample(feature=feature.values.astype(float), symbols=symbols)
            )
    return splits


def cmd_train_seq(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    splits = _load_sequence_dataset(args.manifest, taxonomy)
    train_set = splits.get("train", [])
    val_set = splits.get("validation") or train_set
    if not train_set:
        raise ValueError("sequence manifest has no training rows")
    feature_dim = len(train_set[0].feature)
    params = init_params(
        taxonomy,
        feature_dim=feature_dim,
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        seed=args.seed,
    )
    config = TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
        seed=args.seed,
        t_max=args.t_max,
        gradient_clip=args.gradient_clip,
    )
    trained, history = attrseq.train(params, train_set, val_set, config)
    attrseq.save_checkpoint(args.checkpoint, trained)
    best_val = min(h.validation_nll for h in history)
    _emit(
        args,
        {
            "epochs": len(history),
            "final_train_nll": history[-1].train_nll,
            "best_validation_nll": best_val,
            "checkpoint": str(args.checkpoint),
        },
        [
            f"trained {len(history)} epochs; final train NLL "
            f"{history[-1].train_nll:.4f}, best validation NLL {best_val:.4f}",
            f"checkpoint written to {args.checkpoint}",
        ],
    )
    return 0


def cmd_eval_seq(args) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    model = attrseq.load_checkpoint(args.checkpoint, taxonomy)
    splits = _load_sequence_dataset(args.manifest, taxonomy)
    table: dict[str, dict] = {}
    for split in ("train", "validation", "test"):
        items = splits.get(split)
        if not items:
            continue
        report = evaluate_pr(model, items)
        table[split] = {
            "precision": report.precision,
            "recall": report.recall,
            "nll": report.nll,
            "items": len(items),
        }
    lines = ["measurement " + " ".join(f"{s:>10s}" for s in table)]
    for measure in ("precision", "recall", "nll"):
        lines.append(
            f"{measure:<11s} "
            + " ".join(f"{table[s][measure]:10.3f}" for s in table)
        )
    _emit(args, {"splits": table}, lines)
    return 0


def cmd_eval_detector(args) -> int:
    thresholds = [float(v) for v in args.iou.split(",")]
    predictions = load_detections(args.pred)
    ground_truth = load_ground_truth(args.gt)
    table = evaluate_map(predictions, ground_truth, thresholds)
    lines = [
        "IoU " + " ".join(f"{t:>6.2f}" for t in thresholds),
        "mAP " + " ".join(f"{table[t]:>6.3f}" for t in thresholds),
    ]
    _emit(
        args,
        {"thresholds": thresholds, "map": {str(t): table[t] for t in thresholds}},
        lines,
    )
    return 0


def _bitloop_hamming(a: BinaryCode, b: BinaryCode) -> int:
    count = 0
    for i in range(a.length):
        bit_a = (int(a.words[i // 64]) >> (i % 64)) & 1
        bit_b = (int(b.words[i // 64]) >> (i % 64)) & 1
        count += bit_a != bit_b
    return count


def cmd_bench_hamming(args) -> int:
    rng = np.random.default_rng(args.seed)
    n_words = (args.bits + 63) // 64
    codes = rng.integers(0, 2**63, size=(args.n, n_words), dtype=np.int64).astype(
        np.uint64
    )
    query_code = BinaryCode(
        words=rng.integers(0, 2**63, size=n_words, dtype=np.int64).astype(np.uint64),
        length=args.bits,
    )

    # correctness spot-check on a small sample: fast path vs portable path
    # vs a naive per-bit loop
    sample = rng.integers(0, args.n, size=min(16, args.n))
    for row in sample:
        other = BinaryCode(words=codes[row].copy(), length=args.bits)
        fast = hamming(query_code, other)
        if fast != _bitloop_hamming(query_code, other):
            raise AssertionError("popcount path disagrees with bit-loop oracle")
        if fast != hamming_portable(query_code, other):
            raise AssertionError("hardware and portable popcount disagree")

    comparisons = 0
    start = time.perf_counter()
    while time.perf_counter() - start < 0.5:
        distances = hamming_scan(query_code, codes)
        comparisons += args.n
    elapsed = time.perf_counter() - start
    rate = comparisons / elapsed
    _emit(
        args,
        {
            "bits": args.bits,
            "n": args.n,
            "comparisons_per_second": rate,
            "oracle_checked": int(len(sample)),
            "hardware_popcount": HARDWARE_POPCOUNT,
            "max_distance_seen": int(distances.max()),
        },
        [
            f"{rate:,.0f} comparisons/s over {args.bits}-bit codes "
            f"(hardware popcount: {HARDWARE_POPCOUNT})",
            f"oracle spot-check passed on {len(sample)} pairs",
        ],
    )
    return 0


def cmd_serve(args) -> int:
    config = ServiceConfig(
        host=args.host,
        port=args.port,
        taxonomy_path=args.taxonomy,
        index_path=args.index,
        checkpoint_path=args.checkpoint,
        detector_fixture_path=args.detector_fixture,
        keywords_path=args.keywords,
        default_k=args.k,
        default_appearance_weight=args.appearance_weight,
        static_dir=args.static_dir,
    )
    serve(config)
    return 0


def cmd_make_fixture(args) -> int:
    """Generate a synthetic demo corpus next to the given taxonomy."""
    taxonomy = load_taxonomy(args.taxonomy)
    corpus = synth.build_corpus(
        taxonomy,
        n_items=args.n,
        seed=args.seed,
        feature_dim=args.feature_dim,
    )
    paths = synth.write_corpus(corpus, args.out)
    _emit(
        args,
        {"items": len(corpus.items), "paths": {k: str(v) for k, v in paths.items()}},
        [f"wrote {len(corpus.items)} items under {args.out}"],
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpsearch",
        description="guided visual catalog search: offline indexing, "
        "training, evaluation, benchmarking, serving",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = common(sub.add_parser("taxonomy-validate", help="check a taxonomy file"))
    p.add_argument("--taxonomy", required=True)
    p.set_defaults(func=cmd_taxonomy_validate)

    p = common(sub.add_parser("ingest", help="build an index from a corpus manifest"))
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--keywords", required=True)
    p.add_argument("--index", required=True, help="output snapshot path")
    p.add_argument("--checkpoint", help="sequence model checkpoint (optional)")
    p.add_argument("--detector-fixture", help="detections JSONL for the stub detector")
    p.add_argument("--feature-dim", type=int, default=1024)
    p.add_argument("--bins", default="8,4,4")
    p.set_defaults(func=cmd_ingest)

    p = common(sub.add_parser("search", help="query an index snapshot"))
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--image", help="P6 pixmap query image")
    p.add_argument("--feature", help="precomputed dense feature file")
    p.add_argument("--option", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--guided-category")
    p.add_argument("--roi", help="x,y,w,h (option 3)")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--appearance-weight", type=float, default=0.7)
    p.add_argument("--detector-fixture")
    p.set_defaults(func=cmd_search)

    p = common(sub.add_parser("serve", help="run the HTTP daemon"))
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--detector-fixture")
    p.add_argument("--keywords")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--appearance-weight", type=float, default=0.7)
    p.add_argument("--static-dir", help="serve a built web UI from this directory")
    p.set_defaults(func=cmd_serve)

    p = common(sub.add_parser("train-seq", help="train the attribute sequence model"))
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--manifest", required=True, help="sequence dataset JSONL")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--t-max", type=int, default=12)
    p.add_argument("--gradient-clip", type=float, default=5.0)
    p.set_defaults(func=cmd_train_seq)

    p = common(sub.add_parser("eval-seq", help="precision/recall/NLL per split"))
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval_seq)

    p = common(sub.add_parser("eval-detector", help="mAP table over IoU thresholds"))
    p.add_argument("--pred", required=True, help="detections JSONL")
    p.add_argument("--gt", required=True, help="ground-truth JSONL")
    p.add_argument("--iou", default="0.5,0.6,0.7,0.8,0.9")
    p.set_defaults(func=cmd_eval_detector)

    p = common(sub.add_parser("bench-hamming", help="hamming scan throughput"))
    p.add_argument("--bits", type=int, default=1024)
    p.add_argument("--n", type=int, default=100_000)
    p.set_defaults(func=cmd_bench_hamming)

    p = common(sub.add_parser("make-fixture", help="generate a synthetic demo corpus"))
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--feature-dim", type=int, default=64)
    p.set_defaults(func=cmd_make_fixture)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # operational failure, not usage
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
