"""Guided visual search for catalog items.

Items are indexed under generated attribute sets (inverted index) and
ranked by a weighted combination of binary-appearance Hamming distance and
HSV color-histogram distance. Attribute sets come from an LSTM sequence
classifier that supports guided category injection; ROIs are filtered by
the guided category before feature extraction.
"""

from .attrseq import (
    AttributeSequence,
    SeqExample,
    SeqModelParams,
    TrainConfig,
    evaluate_pr,
    generate,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sequence_nll,
    train,
)
from .index import InvertedIndex, ItemRecord, SearchResult
from .pipeline import (
    IngestRejected,
    KeywordTable,
    QueryRequest,
    extract_category,
    ingest,
    ingest_manifest,
    query,
)
from .roi import (
    Box,
    Detection,
    FixtureDetector,
    evaluate_map,
    guided_filter,
    iou,
    select_roi,
)
from .taxonomy import (
    Taxonomy,
    load_taxonomy,
    sequence_template,
    symbol_at,
    symbol_index,
    validate,
)
from .visfeat import (
    BinaryCode,
    ColorHistogram,
    DenseFeature,
    DistanceWeights,
    binarize,
    color_histogram,
    combined_distance,
    hamming,
    rgb_to_hsv,
)

__version__ = "0.1.0"
