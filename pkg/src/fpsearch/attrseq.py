"""Multi-label attribute recognition as sequence classification.

A residual-stack encoder maps a dense image feature to the initial hidden
state of a single-layer LSTM; a softmax projection over the full symbol
vocabulary (categories + attributes + EOS) turns the joint attribute
probability into a product of per-step conditionals. Training minimizes
sequence negative log-likelihood with teacher forcing and backpropagates
into the encoder as well as the sequence parameters.

Generation is constrained decoding: emitted symbols are never repeated,
and once the first symbol fixes a category (either decoded or injected as
a *guided* category), later steps are restricted to attributes applicable
to it. Guided injection replaces only the first sampling decision; the
model's parameters never influence which symbol comes first.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import residual
from .residual import ResidualStack
from .taxonomy import Taxonomy, sequence_template, symbol_at, symbol_index

CHECKPOINT_MAGIC = b"FPSM"
CHECKPOINT_VERSION = 1

_SHORTCUT_CODES = {residual.IDENTITY: 0, residual.PROJECTION: 1}
_NONLIN_CODES = {"tanh": 0, "linear": 1}


@dataclass
class SeqModelParams:
    """All trainable parameters plus the taxonomy they are wired to."""

    taxonomy: Taxonomy
    encoder: ResidualStack  # feature_dim -> hidden_dim
    embedding: np.ndarray  # (vocab, embed_dim)
    w_i: np.ndarray  # each gate: (hidden_dim, embed_dim + hidden_dim)
    w_f: np.ndarray
    w_c: np.ndarray
    w_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    w_out: np.ndarray  # (vocab, hidden_dim)
    b_out: np.ndarray

    def __post_init__(self) -> None:
        vocab, d_e = self.embedding.shape
        d_h = self.w_out.shape[1]
        if vocab != self.taxonomy.vocab_size:
            raise ValueError(
                f"embedding rows ({vocab}) do not match taxonomy vocab "
                f"({self.taxonomy.vocab_size})"
            )
        if self.encoder.output_dim != d_h:
            raise ValueError("encoder output dim must equal hidden dim")
        for name in ("w_i", "w_f", "w_c", "w_o"):
            if getattr(self, name).shape != (d_h, d_e + d_h):
                raise ValueError(f"{name} shape must be (d_h, d_e + d_h)")
        for name in ("b_i", "b_f", "b_c", "b_o"):
            if getattr(self, name).shape != (d_h,):
                raise ValueError(f"{name} shape must be (d_h,)")
        if self.w_out.shape != (vocab, d_h) or self.b_out.shape != (vocab,):
            raise ValueError("output projection dims inconsistent")

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_out.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.encoder.input_dim

    @property
    def eos_index(self) -> int:
        return symbol_index(self.taxonomy, self.taxonomy.eos)


def init_params(
    taxonomy: Taxonomy,
    feature_dim: int = 64,
    embed_dim: int = 32,
    hidden_dim: int = 64,
    seed: int = 0,
    scale: float = 0.2,
) -> SeqModelParams:
    """Random initialization; the encoder is one projection-shortcut layer."""
    rng = np.random.default_rng(seed)
    encoder = residual.random_stack([feature_dim, hidden_dim], rng)
    vocab = taxonomy.vocab_size
    d_z = embed_dim + hidden_dim

    def mat(rows: int, cols: int) -> np.ndarray:
        return rng.normal(0.0, scale / np.sqrt(cols), size=(rows, cols))

    return SeqModelParams(
        taxonomy=taxonomy,
        encoder=encoder,
        embedding=rng.normal(0.0, scale, size=(vocab, embed_dim)),
        w_i=mat(hidden_dim, d_z),
        w_f=mat(hidden_dim, d_z),
        w_c=mat(hidden_dim, d_z),
        w_o=mat(hidden_dim, d_z),
        b_i=np.zeros(hidden_dim),
        b_f=np.zeros(hidden_dim),
        b_c=np.zeros(hidden_dim),
        b_o=np.zeros(hidden_dim),
        w_out=mat(vocab, hidden_dim),
        b_out=np.zeros(vocab),
    )


def zero_params(
    taxonomy: Taxonomy,
    feature_dim: int = 64,
    embed_dim: int = 32,
    hidden_dim: int = 64,
) -> SeqModelParams:
    """All-zero parameters: every step's softmax is exactly uniform."""
    vocab = taxonomy.vocab_size
    d_z = embed_dim + hidden_dim
    encoder = residual.zero_stack([feature_dim, hidden_dim])
    zeros = np.zeros
    return SeqModelParams(
        taxonomy=taxonomy,
        encoder=encoder,
        embedding=zeros((vocab, embed_dim)),
        w_i=zeros((hidden_dim, d_z)),
        w_f=zeros((hidden_dim, d_z)),
        w_c=zeros((hidden_dim, d_z)),
        w_o=zeros((hidden_dim, d_z)),
        b_i=zeros(hidden_dim),
        b_f=zeros(hidden_dim),
        b_c=zeros(hidden_dim),
        b_o=zeros(hidden_dim),
        w_out=zeros((vocab, hidden_dim)),
        b_out=zeros(vocab),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    ex = np.exp(shifted)
    return ex / ex.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - np.log(np.exp(shifted).sum())


@dataclass
class _StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    z: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray
    logits: np.ndarray


def _lstm_step(
    params: SeqModelParams, x: np.ndarray, h: np.ndarray, c: np.ndarray
) -> _StepCache:
    z = np.concatenate([x, h])
    i = _sigmoid(params.w_i @ z + params.b_i)
    f = _sigmoid(params.w_f @ z + params.b_f)
    g = np.tanh(params.w_c @ z + params.b_c)
    o = _sigmoid(params.w_o @ z + params.b_o)
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    logits = params.w_out @ h_new + params.b_out
    return _StepCache(
        x=x, h_prev=h, c_prev=c, z=z, i=i, f=f, g=g, o=o,
        c=c_new, tanh_c=tanh_c, h=h_new, logits=logits,
    )


def step(
    params: SeqModelParams,
    symbol: int | None,
    hidden_state: np.ndarray,
    cell_state: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One decoder step: embed ``symbol``, advance the LSTM, project logits.

    ``symbol=None`` is the initial step, which feeds a zero embedding (the
    image conditioning enters through the encoder-derived hidden state).
    """
    h = np.asarray(hidden_state, dtype=np.float64)
    c = np.asarray(cell_state, dtype=np.float64)
    if h.shape != (params.hidden_dim,) or c.shape != (params.hidden_dim,):
        raise ValueError("state dims do not match hidden size")
    if symbol is None:
        x = np.zeros(params.embed_dim)
    else:
        if not 0 <= symbol < params.vocab_size:
            raise ValueError(f"symbol index out of vocabulary: {symbol}")
        x = params.embedding[symbol]
    cache = _lstm_step(params, x, h, c)
    return cache.logits, cache.h, cache.c


def _check_target(params: SeqModelParams, target: list[int] | tuple[int, ...]) -> None:
    eos = params.eos_index
    if not target or target[-1] != eos:
        raise ValueError("target sequence must end with EOS")
    if eos in target[:-1]:
        raise ValueError("EOS may appear only at the end of the target")
    for sym in target:
        if not 0 <= sym < params.vocab_size:
            raise ValueError(f"unknown symbol index in target: {sym}")


def _encode(params: SeqModelParams, feature: np.ndarray) -> list[np.ndarray]:
    feature = np.asarray(feature, dtype=np.float64).reshape(-1)
    if feature.shape != (params.feature_dim,):
        raise ValueError(
            f"feature has dim {feature.shape[0]}, encoder expects "
            f"{params.feature_dim}"
        )
    return residual.forward(params.encoder, feature)


def _run_teacher_forced(
    params: SeqModelParams, feature: np.ndarray, target: tuple[int, ...]
) -> tuple[float, list[_StepCache], list[np.ndarray]]:
    enc_acts = _encode(params, feature)
    h = enc_acts[-1]
    c = np.zeros(params.hidden_dim)
    loss = 0.0
    caches: list[_StepCache] = []
    for t, sym in enumerate(target):
        x = np.zeros(params.embed_dim) if t == 0 else params.embedding[target[t - 1]]
        cache = _lstm_step(params, x, h, c)
        loss -= log_softmax(cache.logits)[sym]
        caches.append(cache)
        h, c = cache.h, cache.c
    return float(loss), caches, enc_acts


def sequence_nll(
    params: SeqModelParams,
    image_feature: np.ndarray,
    target_sequence: list[int] | tuple[int, ...],
) -> float:
    """Teacher-forced negative log-likelihood of the full target sequence."""
    target = tuple(target_sequence)
    _check_target(params, target)
    loss, _, _ = _run_teacher_forced(params, image_feature, target)
    return loss


PARAM_KEYS = (
    "embedding",
    "w_i", "w_f", "w_c", "w_o",
    "b_i", "b_f", "b_c", "b_o",
    "w_out", "b_out",
)


def param_arrays(params: SeqModelParams) -> list[tuple[str, np.ndarray]]:
    """All trainable arrays in the fixed (documented) checkpoint order."""
    out: list[tuple[str, np.ndarray]] = []
    for li, layer in enumerate(params.encoder.layers):
        out.append((f"encoder.{li}.weight", layer.weight))
        out.append((f"encoder.{li}.bias", layer.bias))
        if layer.projection is not None:
            out.append((f"encoder.{li}.projection", layer.projection))
    for key in PARAM_KEYS:
        out.append((key, getattr(params, key)))
    return out


def _zero_grads(params: SeqModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in param_arrays(params)}


def sequence_nll_grad(
    params: SeqModelParams,
    image_feature: np.ndarray,
    target_sequence: list[int] | tuple[int, ...],
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus analytic gradients for every parameter (BPTT + encoder)."""
    target = tuple(target_sequence)
    _check_target(params, target)
    loss, caches, enc_acts = _run_teacher_forced(params, image_feature, target)

    grads = _zero_grads(params)
    d_e = params.embed_dim
    dh_next = np.zeros(params.hidden_dim)
    dc_next = np.zeros(params.hidden_dim)
    for t in range(len(target) - 1, -1, -1):
        cache = caches[t]
        dlogits = softmax(cache.logits)
        dlogits[target[t]] -= 1.0
        grads["w_out"] += np.outer(dlogits, cache.h)
        grads["b_out"] += dlogits
        dh = params.w_out.T @ dlogits + dh_next

        do = dh * cache.tanh_c
        dc = dc_next + dh * cache.o * (1.0 - cache.tanh_c**2)
        di = dc * cache.g
        dg = dc * cache.i
        df = dc * cache.c_prev
        dc_next = dc * cache.f

        da_i = di * cache.i * (1.0 - cache.i)
        da_f = df * cache.f * (1.0 - cache.f)
        da_g = dg * (1.0 - cache.g**2)
        da_o = do * cache.o * (1.0 - cache.o)

        grads["w_i"] += np.outer(da_i, cache.z)
        grads["w_f"] += np.outer(da_f, cache.z)
        grads["w_c"] += np.outer(da_g, cache.z)
        grads["w_o"] += np.outer(da_o, cache.z)
        grads["b_i"] += da_i
        grads["b_f"] += da_f
        grads["b_c"] += da_g
        grads["b_o"] += da_o

        dz = (
            params.w_i.T @ da_i
            + params.w_f.T @ da_f
            + params.w_c.T @ da_g
            + params.w_o.T @ da_o
        )
        if t > 0:
            grads["embedding"][target[t - 1]] += dz[:d_e]
        dh_next = dz[d_e:]

    _, enc_layer_grads = residual.backward(params.encoder, enc_acts, dh_next)
    for li, lg in enumerate(enc_layer_grads):
        grads[f"encoder.{li}.weight"] += lg.weight
        grads[f"encoder.{li}.bias"] += lg.bias
        if lg.projection is not None:
            grads[f"encoder.{li}.projection"] += lg.projection
    return loss, grads


def _apply_sgd(
    params: SeqModelParams,
    grads: dict[str, np.ndarray],
    learning_rate: float,
    clip: float,
) -> None:
    norm_sq = sum(float((g * g).sum()) for g in grads.values())
    norm = np.sqrt(norm_sq)
    scale = learning_rate if norm <= clip else learning_rate * clip / norm
    for name, arr in param_arrays(params):
        arr -= scale * grads[name]


@dataclass(frozen=True)
class SeqExample:
    """One training item: dense image feature and its target symbol indices
    (ending with EOS)."""

    feature: np.ndarray
    symbols: tuple[int, ...]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 10
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0
    t_max: int = 12
    gradient_clip: float = 5.0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0 or self.max_epochs <= 0 or self.patience <= 0:
            raise ValueError("batch_size, max_epochs, patience must be positive")
        if self.t_max <= 0 or self.gradient_clip <= 0:
            raise ValueError("t_max and gradient_clip must be positive")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_nll: float
    validation_nll: float


def mean_nll(params: SeqModelParams, dataset: list[SeqExample]) -> float:
    return float(
        np.mean([sequence_nll(params, ex.feature, ex.symbols) for ex in dataset])
    )


def train(
    params: SeqModelParams,
    dataset: list[SeqExample],
    validation_set: list[SeqExample],
    config: TrainConfig,
) -> tuple[SeqModelParams, list[EpochStats]]:
    """Mini-batch SGD with gradient clipping and early stopping.

    Both the encoder and the sequence parameters are updated. Returns the
    checkpoint with the best validation NLL, not the last one. Training is
    bit-reproducible for a fixed config seed.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if not validation_set:
        raise ValueError("validation set is empty")

    params = copy.deepcopy(params)
    rng = np.random.default_rng(config.seed)
    history: list[EpochStats] = []
    best_val = np.inf
    best_params = copy.deepcopy(params)
    epochs_without_improvement = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[start : start + config.batch_size]]
            total: dict[str, np.ndarray] | None = None
            for ex in batch:
                _, grads = sequence_nll_grad(params, ex.feature, ex.symbols)
                if total is None:
                    total = grads
                else:
                    for name in total:
                        total[name] += grads[name]
            assert total is not None
            for name in total:
                total[name] /= len(batch)
            _apply_sgd(params, total, config.learning_rate, config.gradient_clip)

        train_nll = mean_nll(params, dataset)
        val_nll = mean_nll(params, validation_set)
        history.append(EpochStats(epoch, train_nll, val_nll))
        if val_nll < best_val:
            best_val = val_nll
            best_params = copy.deepcopy(params)
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= config.patience:
                break
    return best_params, history


@dataclass(frozen=True)
class AttributeSequence:
    """Generated symbol indices, EOS-terminated, with per-step probabilities
    taken from the (post-masking) distribution each symbol was drawn from."""

    symbols: tuple[int, ...]
    probabilities: tuple[float, ...] | None = None

    def names(self, taxonomy: Taxonomy) -> tuple[str, ...]:
        return tuple(symbol_at(taxonomy, s) for s in self.symbols)

    def attribute_indices(self, eos_index: int) -> tuple[int, ...]:
        """Symbols without the trailing EOS."""
        return tuple(s for s in self.symbols if s != eos_index)


def _category_constraints(params: SeqModelParams, category: str) -> np.ndarray:
    """Symbols permitted after ``category`` is fixed: its applicable
    attributes plus EOS."""
    tax = params.taxonomy
    allowed = np.zeros(params.vocab_size, dtype=bool)
    for group in sequence_template(tax, category).groups:
        for cls in group.classes:
            allowed[symbol_index(tax, cls)] = True
    allowed[params.eos_index] = True
    return allowed


def generate(
    params: SeqModelParams,
    image_feature: np.ndarray,
    mode: str = "greedy",
    guided_category: str | None = None,
    seed: int | None = None,
    temperature: float = 1.0,
    t_max: int = 12,
) -> AttributeSequence:
    """Decode an attribute sequence for one image feature.

    ``mode`` is ``"greedy"`` (argmax) or ``"sample"`` (draw from the
    softmax, optionally temperature-scaled, seeded by ``seed``). A guided
    category replaces the first decision outright: it is emitted with
    probability 1 no matter what the model prefers. Already-emitted symbols
    are masked out, and once the first symbol is a category, the rest of
    the sequence is constrained to attributes applicable to it. If the
    budget ``t_max`` is about to run out, EOS is forced so the sequence is
    always terminated.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown generation mode: {mode!r}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if guided_category is not None and not params.taxonomy.is_category(
        guided_category
    ):
        raise ValueError(f"guided symbol is not a category: {guided_category!r}")
    if t_max < 2 and guided_category is not None:
        raise ValueError("guided generation needs t_max >= 2 for the EOS slot")
    rng = np.random.default_rng(seed) if mode == "sample" else None

    eos = params.eos_index
    h = _encode(params, image_feature)[-1]
    c = np.zeros(params.hidden_dim)
    allowed = np.ones(params.vocab_size, dtype=bool)

    symbols: list[int] = []
    probs: list[float] = []
    prev: int | None = None
    for t in range(t_max):
        logits, h, c = step(params, prev, h, c)
        mask = allowed.copy()
        if t == t_max - 1:
            mask[:] = False
            mask[eos] = True
        masked = np.where(mask, logits, -np.inf)
        if mode == "sample" and temperature != 1.0:
            masked = masked / temperature
        dist = softmax(masked)
        if t == 0 and guided_category is not None:
            chosen = symbol_index(params.taxonomy, guided_category)
        elif mode == "greedy":
            chosen = int(np.argmax(dist))
        else:
            chosen = int(rng.choice(params.vocab_size, p=dist))
        symbols.append(chosen)
        probs.append(float(dist[chosen]))
        if chosen == eos:
            break
        allowed[chosen] = False
        chosen_name = symbol_at(params.taxonomy, chosen)
        if t == 0 and params.taxonomy.is_category(chosen_name):
            allowed &= _category_constraints(params, chosen_name)
        prev = chosen

    return AttributeSequence(symbols=tuple(symbols), probabilities=tuple(probs))


@dataclass(frozen=True)
class PrReport:
    precision: float
    recall: float
    nll: float


def evaluate_pr(params: SeqModelParams, dataset: list[SeqExample]) -> PrReport:
    """Per-image precision/recall of predicted vs ground-truth attribute
    sets (EOS excluded), averaged arithmetically, plus mean sequence NLL.

    Prediction uses unguided greedy generation. An empty prediction against
    a non-empty ground truth scores (0, 0); two empty sets score (1, 1).
    """
    if not dataset:
        raise ValueError("evaluation dataset is empty")
    eos = params.eos_index
    precisions, recalls, nlls = [], [], []
    for ex in dataset:
        pred = set(
            generate(params, ex.feature, mode="greedy").attribute_indices(eos)
        )
        gt = set(s for s in ex.symbols if s != eos)
        if not pred and not gt:
            p, r = 1.0, 1.0
        elif not pred:
            p, r = 0.0, 0.0
        else:
            hit = len(pred & gt)
            p = hit / len(pred)
            r = hit / len(gt) if gt else 0.0
        precisions.append(p)
        recalls.append(r)
        nlls.append(sequence_nll(params, ex.feature, ex.symbols))
    return PrReport(
        precision=float(np.mean(precisions)),
        recall=float(np.mean(recalls)),
        nll=float(np.mean(nlls)),
    )


# --- checkpoint format ------------------------------------------------------

def save_checkpoint(path: str | Path, params: SeqModelParams) -> None:
    """Write magic, version, taxonomy hash, dims, encoder layout, then every
    parameter matrix row-major as little-endian float64."""
    from .taxonomy import content_hash

    chunks: list[bytes] = [
        struct.pack("<4sI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION),
        content_hash(params.taxonomy),
        struct.pack(
            "<IIII",
            params.feature_dim,
            params.embed_dim,
            params.hidden_dim,
            params.vocab_size,
        ),
        struct.pack("<I", len(params.encoder.layers)),
    ]
    for layer in params.encoder.layers:
        chunks.append(
            struct.pack(
                "<IIII",
                layer.in_dim,
                layer.out_dim,
                _SHORTCUT_CODES[layer.shortcut_kind],
                _NONLIN_CODES[layer.nonlinearity],
            )
        )
    for _, arr in param_arrays(params):
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class CheckpointError(ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1) -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    def matrix(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).copy()


def load_checkpoint(path: str | Path, taxonomy: Taxonomy) -> SeqModelParams:
    from .taxonomy import content_hash

    reader = _Reader(Path(path).read_bytes())
    magic = reader.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic: {magic!r}")
    (version,) = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version: {version}")
    tax_hash = reader.take(32)
    if tax_hash != content_hash(taxonomy):
        raise CheckpointError("checkpoint was built against a different taxonomy")
    feature_dim, embed_dim, hidden_dim, vocab = reader.u32(4)
    if vocab != taxonomy.vocab_size:
        raise CheckpointError("checkpoint vocabulary size does not match taxonomy")

    (n_layers,) = reader.u32()
    codes_to_shortcut = {v: k for k, v in _SHORTCUT_CODES.items()}
    codes_to_nonlin = {v: k for k, v in _NONLIN_CODES.items()}
    layer_specs = [reader.u32(4) for _ in range(n_layers)]
    layers = []
    for in_dim, out_dim, sc_code, nl_code in layer_specs:
        weight = reader.matrix((out_dim, in_dim))
        bias = reader.matrix((out_dim,))
        shortcut = codes_to_shortcut.get(sc_code)
        if shortcut is None:
            raise CheckpointError(f"unknown shortcut code: {sc_code}")
        projection = (
            reader.matrix((out_dim, in_dim))
            if shortcut == residual.PROJECTION
            else None
        )
        try:
            layers.append(
                residual.ResidualLayer(
                    weight=weight,
                    bias=bias,
                    shortcut_kind=shortcut,
                    projection=projection,
                    nonlinearity=codes_to_nonlin.get(nl_code, "tanh"),
                )
            )
        except ValueError as exc:
            raise CheckpointError(f"checkpoint payload corrupt: {exc}") from exc
    try:
        encoder = ResidualStack(layers)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint payload corrupt: {exc}") from exc
    if encoder.input_dim != feature_dim or encoder.output_dim != hidden_dim:
        raise CheckpointError("encoder layout inconsistent with header dims")

    d_z = embed_dim + hidden_dim
    shapes = {
        "embedding": (vocab, embed_dim),
        "w_i": (hidden_dim, d_z),
        "w_f": (hidden_dim, d_z),
        "w_c": (hidden_dim, d_z),
        "w_o": (hidden_dim, d_z),
        "b_i": (hidden_dim,),
        "b_f": (hidden_dim,),
        "b_c": (hidden_dim,),
        "b_o": (hidden_dim,),
        "w_out": (vocab, hidden_dim),
        "b_out": (vocab,),
    }
    arrays = {key: reader.matrix(shape) for key, shape in shapes.items()}
    if reader.pos != len(reader.data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    try:
        return SeqModelParams(taxonomy=taxonomy, encoder=encoder, **arrays)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint payload corrupt: {exc}") from exc
