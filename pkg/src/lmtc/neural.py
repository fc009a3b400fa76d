"""Label-wise attention networks with zero-shot capable label encoders.

One attention head per label turns the encoder states of a document
into label-specific representations, which a decoder maps to label
probabilities.  The ``base`` variant learns its attention vectors and a
per-label output layer, so it cannot score labels unseen in training.
The other variants attend with *frozen* label input vectors (descriptor
centroids ``u``, graph embeddings ``g``, or their concatenation):

    C    attend + decode directly against the frozen vectors
    DC   two-layer MLP label encoder on centroids
    DN   same, on graph embeddings
    DNC  same, on [centroid; graph] concatenations
    GC   two graph-convolution layers (parent/child means) on centroids
    GNC  graph convolutions on graph embeddings

``GC``/``GNC`` with empty neighborhoods compute exactly what ``DC``/
``DNC`` compute, which is the ablation relation tests pin down.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .container import load_container, save_container
from .corpus import Corpus, Document, EmbeddingTable
from .hierarchy import LabelGraph
from .labelrep import LabelVectors
from .metrics import RankedPrediction

logger = logging.getLogger(__name__)

VARIANTS = ("base", "C", "DC", "DN", "DNC", "GC", "GNC")
DEEP_VARIANTS = ("DC", "DN", "DNC", "GC", "GNC")
GRAPH_VARIANTS = ("GC", "GNC")

# label-input composition each variant consumes
VARIANT_INPUTS = {"C": "u", "DC": "u", "DN": "g", "DNC": "u_concat_g", "GC": "u", "GNC": "g"}


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "bigru"          # bigru | linear (test fixture)
    layers: int = 1
    hidden: int = 100
    dropout: float = 0.1
    word_dropout: float = 0.0
    train_embeddings: bool = False

    def __post_init__(self):
        if self.kind not in ("bigru", "linear"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.word_dropout < 1.0):
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "base"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    gcn_hidden: int = 100

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs, patience must be >= 1")


@dataclass
class ForwardTrace:
    """Per-forward intermediates (detached)."""

    H: torch.Tensor                 # (B, T, W) encoder states
    A: torch.Tensor                 # (B, L, T) attention weights
    D: torch.Tensor                 # (B, L, W) label-wise document vectors
    P: torch.Tensor                 # (B, L) label probabilities
    V: torch.Tensor | None = None   # (B, T, d_in) projected states
    D_o: torch.Tensor | None = None # (B, L, d_in + h) projected document vectors
    U1: torch.Tensor | None = None
    U2: torch.Tensor | None = None
    U3: torch.Tensor | None = None


class TokenEncoder(nn.Module):
    """Embeds token ids and makes them context-aware.

    ``bigru`` stacks bidirectional GRU layers (output width twice the
    hidden size); ``linear`` is a width-preserving projection used as a
    cheap deterministic fixture.
    """

    def __init__(self, embedding_matrix: np.ndarray, config: EncoderConfig):
        super().__init__()
        self.config = config
        weight = torch.as_tensor(embedding_matrix, dtype=torch.get_default_dtype())
        self.embedding = nn.Embedding.from_pretrained(
            weight, freeze=not config.train_embeddings, padding_idx=0
        )
        dim = weight.shape[1]
        if config.kind == "bigru":
            self.rnn = nn.GRU(
                dim,
                config.hidden,
                num_layers=config.layers,
                bidirectional=True,
                batch_first=True,
                dropout=config.dropout if config.layers > 1 else 0.0,
            )
            self.out_width = 2 * config.hidden
        else:
            self.proj = nn.Linear(dim, dim)
            self.out_width = dim
        self.out_dropout = nn.Dropout(config.dropout)

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        emb = self.embedding(ids)
        if self.training and self.config.word_dropout > 0:
            keep = (torch.rand(ids.shape, device=ids.device) >= self.config.word_dropout)
            emb = emb * keep.unsqueeze(-1).to(emb.dtype)
        if self.config.kind == "bigru":
            packed = nn.utils.rnn.pack_padded_sequence(
                emb, lengths.cpu(), batch_first=True, enforce_sorted=False
            )
            out, _ = self.rnn(packed)
            h, _ = nn.utils.rnn.pad_packed_sequence(
                out, batch_first=True, total_length=ids.shape[1]
            )
        else:
            h = self.proj(emb)
        return self.out_dropout(h)


class GraphLabelEncoder(nn.Module):
    """Two layers mixing each label with the mean of its parents/children.

    With no adjacency the neighbor terms vanish and the module is a
    plain two-layer MLP; the parameter set is identical either way so
    the ablation pair can share an initialization.  Output concatenates
    the input with the second layer: width ``in_dim + hidden``.
    """

    def __init__(self, in_dim: int, hidden: int):
        super().__init__()
        self.w_self1 = nn.Linear(in_dim, hidden)
        self.w_parent1 = nn.Linear(in_dim, hidden, bias=False)
        self.w_child1 = nn.Linear(in_dim, hidden, bias=False)
        self.w_self2 = nn.Linear(hidden, hidden)
        self.w_parent2 = nn.Linear(hidden, hidden, bias=False)
        self.w_child2 = nn.Linear(hidden, hidden, bias=False)
        self.out_dim = in_dim + hidden

    def forward(
        self,
        u: torch.Tensor,
        parent_mat: torch.Tensor | None = None,
        child_mat: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        pre = self.w_self1(u)
        if parent_mat is not None:
            pre = pre + parent_mat @ self.w_parent1(u)
        if child_mat is not None:
            pre = pre + child_mat @ self.w_child1(u)
        u1 = torch.tanh(pre)
        pre = self.w_self2(u1)
        if parent_mat is not None:
            pre = pre + parent_mat @ self.w_parent2(u1)
        if child_mat is not None:
            pre = pre + child_mat @ self.w_child2(u1)
        u2 = torch.tanh(pre)
        return torch.cat([u, u2], dim=1), u1, u2


def adjacency_matrices(
    graph: LabelGraph, row_labels: tuple[str, ...]
) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized parent and child mean-aggregation matrices."""
    index = {l: i for i, l in enumerate(row_labels)}
    n = len(row_labels)
    parent = np.zeros((n, n), dtype=np.float32)
    child = np.zeros((n, n), dtype=np.float32)
    for label in row_labels:
        i = index[label]
        ps = [index[p] for p in graph.parents[label] if p in index]
        cs = [index[c] for c in graph.children[label] if c in index]
        for j in ps:
            parent[i, j] = 1.0 / len(ps)
        for j in cs:
            child[i, j] = 1.0 / len(cs)
    return parent, child


class LabelAttentionModel(nn.Module):
    """Document encoder + label-wise attention + variant-specific decoder."""

    def __init__(
        self,
        variant: str,
        labels: tuple[str, ...],
        tokens: tuple[str, ...],
        embedding_matrix: np.ndarray,
        encoder: EncoderConfig,
        label_vectors: LabelVectors | None = None,
        gcn_hidden: int = 100,
        parent_mat: np.ndarray | None = None,
        child_mat: np.ndarray | None = None,
    ):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.labels = tuple(labels)
        self.tokens = tuple(tokens)
        self.token_index = {t: i + 1 for i, t in enumerate(self.tokens)}  # 0 = padding
        self.oov_policy = "skip"
        self.encoder_config = encoder
        self.gcn_hidden = gcn_hidden
        self.encoder = TokenEncoder(embedding_matrix, encoder)
        width = self.encoder.out_width
        n_labels = len(self.labels)

        if variant == "base":
            self.attn_u = nn.Parameter(torch.empty(n_labels, width))
            self.out_w = nn.Parameter(torch.empty(n_labels, width))
            self.out_b = nn.Parameter(torch.zeros(n_labels))
            nn.init.xavier_uniform_(self.attn_u)
            nn.init.xavier_uniform_(self.out_w)
            return

        if label_vectors is None:
            raise ValueError(f"variant {variant} requires frozen label vectors")
        if not label_vectors.frozen:
            raise ValueError("label vectors must be frozen")
        vec_index = {l: i for i, l in enumerate(label_vectors.labels)}
        missing = [l for l in self.labels if l not in vec_index]
        if missing:
            raise ValueError(f"labels without input vectors: {missing[:5]}")
        self.vector_labels = label_vectors.labels
        self.register_buffer(
            "label_inputs",
            torch.as_tensor(label_vectors.matrix, dtype=torch.get_default_dtype()),
        )
        self.register_buffer(
            "label_rows", torch.as_tensor([vec_index[l] for l in self.labels], dtype=torch.long)
        )
        d_in = label_vectors.dim
        self.proj = nn.Linear(width, d_in)
        if variant == "C":
            if width != d_in:
                raise ValueError(
                    f"variant C scores labels by dot product, so the encoder output width "
                    f"({width}) must equal the label vector dimension ({d_in})"
                )
            return
        # deep variants: label encoder + projected decoder
        self.label_encoder = GraphLabelEncoder(d_in, gcn_hidden)
        self.out_proj = nn.Linear(width, d_in + gcn_hidden)
        if variant in GRAPH_VARIANTS:
            if parent_mat is None or child_mat is None:
                raise ValueError(f"variant {variant} requires hierarchy adjacency")
            self.register_buffer("parent_mat", torch.as_tensor(parent_mat, dtype=torch.get_default_dtype()))
            self.register_buffer("child_mat", torch.as_tensor(child_mat, dtype=torch.get_default_dtype()))
        else:
            self.parent_mat = None
            self.child_mat = None

    # ---------------------------------------------------------------- data

    def doc_to_ids(self, tokens) -> list[int]:
        if self.oov_policy == "zero":
            return [self.token_index.get(t, 0) for t in tokens]
        return [self.token_index[t] for t in tokens if t in self.token_index]

    def make_batch(self, docs: list[Document]) -> tuple[torch.Tensor, torch.Tensor]:
        """Pad documents into an id tensor plus true lengths."""
        id_lists = []
        for doc in docs:
            ids = self.doc_to_ids(doc.tokens)
            if not ids:
                raise ValueError(f"empty document {doc.id}: no encodable tokens")
            id_lists.append(ids)
        max_len = max(len(ids) for ids in id_lists)
        batch = torch.zeros(len(id_lists), max_len, dtype=torch.long)
        lengths = torch.zeros(len(id_lists), dtype=torch.long)
        for i, ids in enumerate(id_lists):
            batch[i, : len(ids)] = torch.as_tensor(ids, dtype=torch.long)
            lengths[i] = len(ids)
        return batch, lengths

    # ------------------------------------------------------------- forward

    def _attention(self, h, lengths):
        mask = torch.arange(h.shape[1], device=h.device)[None, :] < lengths[:, None]
        if self.variant == "base":
            v = None
            scores = torch.einsum("btw,lw->blt", h, self.attn_u)
        else:
            v = torch.tanh(self.proj(h))
            queries = self.label_inputs[self.label_rows]
            scores = torch.einsum("btd,ld->blt", v, queries)
        scores = scores.masked_fill(~mask[:, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        # label-wise document vectors, including the printed 1/T factor
        d = torch.bmm(attn, h) / lengths.to(h.dtype)[:, None, None]
        return attn, d, v

    def _label_encoder_out(self):
        return self.label_encoder(self.label_inputs, self.parent_mat, self.child_mat)

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Label logits of shape (batch, labels)."""
        h = self.encoder(ids, lengths)
        attn, d, _ = self._attention(h, lengths)
        if self.variant == "base":
            return (d * self.out_w).sum(-1) + self.out_b
        if self.variant == "C":
            queries = self.label_inputs[self.label_rows]
            return (d * queries).sum(-1)
        u3, _, _ = self._label_encoder_out()
        d_o = torch.tanh(self.out_proj(d))
        return (d_o * u3[self.label_rows]).sum(-1)

    def trace(self, ids: torch.Tensor, lengths: torch.Tensor) -> ForwardTrace:
        """Forward pass in eval mode exposing all intermediates (detached)."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                return self._trace_impl(ids, lengths)
        finally:
            self.train(was_training)

    def _trace_impl(self, ids: torch.Tensor, lengths: torch.Tensor) -> ForwardTrace:
        h = self.encoder(ids, lengths)
        attn, d, v = self._attention(h, lengths)
        u1 = u2 = u3 = d_o = None
        if self.variant == "base":
            logits = (d * self.out_w).sum(-1) + self.out_b
        elif self.variant == "C":
            logits = (d * self.label_inputs[self.label_rows]).sum(-1)
        else:
            u3_full, u1, u2 = self._label_encoder_out()
            d_o = torch.tanh(self.out_proj(d))
            logits = (d_o * u3_full[self.label_rows]).sum(-1)
            u3 = u3_full
        return ForwardTrace(
            H=h.detach(),
            A=attn.detach(),
            D=d.detach(),
            P=torch.sigmoid(logits).detach(),
            V=None if v is None else v.detach(),
            D_o=None if d_o is None else d_o.detach(),
            U1=None if u1 is None else u1.detach(),
            U2=None if u2 is None else u2.detach(),
            U3=None if u3 is None else u3.detach(),
        )

    def label_vector_checksum(self) -> str | None:
        if self.variant == "base":
            return None
        import hashlib

        digest = hashlib.sha256()
        digest.update(self.label_inputs.detach().cpu().numpy().tobytes())
        return digest.hexdigest()


def build_model(
    variant: str,
    labels: tuple[str, ...],
    embeddings: EmbeddingTable,
    encoder: EncoderConfig,
    label_vectors: LabelVectors | None = None,
    graph: LabelGraph | None = None,
    gcn_hidden: int = 100,
    seed: int = 0,
) -> LabelAttentionModel:
    """Seeded model construction with variant-appropriate label inputs.

    Graph variants keep vectors for *all* hierarchy labels so that the
    convolution can mix through intermediate nodes; the other variants
    keep only the rows of the scored labels.
    """
    torch.manual_seed(seed)
    tokens = tuple(sorted(embeddings.vectors))
    matrix = np.zeros((len(tokens) + 1, embeddings.dim), dtype=np.float64)
    for i, tok in enumerate(tokens):
        matrix[i + 1] = embeddings.vectors[tok]
    parent_mat = child_mat = None
    if variant in GRAPH_VARIANTS:
        if graph is None:
            raise ValueError(f"variant {variant} requires a label hierarchy")
        if label_vectors is None:
            raise ValueError(f"variant {variant} requires frozen label vectors")
        parent_mat, child_mat = adjacency_matrices(graph, label_vectors.labels)
    elif variant != "base":
        if label_vectors is None:
            raise ValueError(f"variant {variant} requires frozen label vectors")
        label_vectors = label_vectors.subset(tuple(labels))
    model = LabelAttentionModel(
        variant=variant,
        labels=tuple(labels),
        tokens=tokens,
        embedding_matrix=matrix,
        encoder=encoder,
        label_vectors=label_vectors,
        gcn_hidden=gcn_hidden,
        parent_mat=parent_mat,
        child_mat=child_mat,
    )
    model.oov_policy = embeddings.oov_policy
    return model


def bce_loss(probs, gold) -> float:
    """Mean binary cross-entropy of probabilities against a 0/1 mask."""
    p = np.clip(np.asarray(probs, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    y = np.asarray(gold, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError("probability and gold shapes differ")
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def encode_tokens(model: LabelAttentionModel, doc: Document) -> np.ndarray:
    """Context-aware states for one document, shape (T, width)."""
    ids = model.doc_to_ids(doc.tokens)
    if not ids:
        raise ValueError(f"empty document {doc.id}: no encodable tokens")
    was_training = model.training
    model.eval()
    with torch.no_grad():
        batch = torch.as_tensor([ids], dtype=torch.long)
        lengths = torch.as_tensor([len(ids)], dtype=torch.long)
        h = model.encoder(batch, lengths)[0]
    if was_training:
        model.train()
    return h.cpu().numpy()


@dataclass
class TrainResult:
    model: LabelAttentionModel
    history: list[dict]
    best_epoch: int
    stopped_epoch: int
    skipped_docs: int


def _gold_matrix(docs: list[Document], label_index: dict[str, int]) -> torch.Tensor:
    y = torch.zeros(len(docs), len(label_index))
    for i, doc in enumerate(docs):
        for label in doc.gold_labels:
            j = label_index.get(label)
            if j is not None:
                y[i, j] = 1.0
    return y


def train(
    config: TrainConfig,
    encoder: EncoderConfig,
    train_corpus: Corpus,
    dev_corpus: Corpus,
    embeddings: EmbeddingTable,
    label_vectors: LabelVectors | None = None,
    graph: LabelGraph | None = None,
    labels: tuple[str, ...] | None = None,
    model: LabelAttentionModel | None = None,
) -> TrainResult:
    """Adam training with early stopping on development loss.

    Zero-shot variants receive loss only on labels with at least one
    training example; scoring still covers every label.  Training is
    single-threaded and fully seeded: repeated runs produce bit-identical
    parameters.
    """
    torch.set_num_threads(1)
    if labels is None:
        labels = tuple(train_corpus.label_universe)
    if model is None:
        model = build_model(
            config.variant,
            labels,
            embeddings,
            encoder,
            label_vectors=label_vectors,
            graph=graph,
            gcn_hidden=config.gcn_hidden,
            seed=config.seed,
        )
    torch.manual_seed(config.seed + 1)  # dropout / shuffling stream
    checksum_before = model.label_vector_checksum()

    label_index = {l: i for i, l in enumerate(model.labels)}
    seen = set()
    for doc in train_corpus.documents:
        seen.update(doc.gold_labels)
    if config.variant == "base":
        loss_cols = torch.arange(len(model.labels))
    else:
        loss_cols = torch.as_tensor(
            [i for i, l in enumerate(model.labels) if l in seen], dtype=torch.long
        )
    if len(loss_cols) == 0:
        raise ValueError("no trainable labels: training corpus has no gold labels")

    def usable(corpus: Corpus) -> tuple[list[Document], int]:
        kept = [d for d in corpus.documents if model.doc_to_ids(d.tokens)]
        return kept, corpus.doc_count - len(kept)

    train_docs, skipped_train = usable(train_corpus)
    dev_docs, skipped_dev = usable(dev_corpus)
    if skipped_train or skipped_dev:
        logger.warning(
            "skipping %d train / %d dev documents with no encodable tokens",
            skipped_train,
            skipped_dev,
        )
    if not train_docs or not dev_docs:
        raise ValueError("no usable documents to train or validate on")

    y_train = _gold_matrix(train_docs, label_index)
    y_dev = _gold_matrix(dev_docs, label_index)
    optim = torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad],
        lr=config.lr,
        betas=(config.beta1, config.beta2),
        eps=config.adam_eps,
    )
    shuffle = torch.Generator().manual_seed(config.seed + 2)

    def epoch_loss(docs, gold, train_mode: bool) -> float:
        model.train(train_mode)
        order = (
            torch.randperm(len(docs), generator=shuffle)
            if train_mode
            else torch.arange(len(docs))
        )
        total, count = 0.0, 0
        for lo in range(0, len(docs), config.batch_size):
            sel = order[lo : lo + config.batch_size]
            batch_docs = [docs[i] for i in sel]
            ids, lengths = model.make_batch(batch_docs)
            targets = gold[sel][:, loss_cols]
            if train_mode:
                optim.zero_grad()
                logits = model(ids, lengths)[:, loss_cols]
                loss = F.binary_cross_entropy_with_logits(logits, targets)
                loss.backward()
                optim.step()
            else:
                with torch.no_grad():
                    logits = model(ids, lengths)[:, loss_cols]
                    loss = F.binary_cross_entropy_with_logits(logits, targets)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss in epoch batch starting at {lo}")
            total += value * len(batch_docs)
            count += len(batch_docs)
        return total / count

    history: list[dict] = []
    best_loss = math.inf
    best_epoch = 0
    best_state = None
    bad_epochs = 0
    stopped_epoch = config.max_epochs
    for epoch in range(1, config.max_epochs + 1):
        train_loss = epoch_loss(train_docs, y_train, True)
        dev_loss = epoch_loss(dev_docs, y_dev, False)
        history.append({"epoch": epoch, "train_loss": train_loss, "dev_loss": dev_loss})
        if dev_loss < best_loss:
            best_loss = dev_loss
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                stopped_epoch = epoch
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    checksum_after = model.label_vector_checksum()
    if checksum_before != checksum_after:
        raise RuntimeError("frozen label vectors changed during training")
    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        stopped_epoch=stopped_epoch,
        skipped_docs=skipped_train + skipped_dev,
    )


def predict_ranking(
    model: LabelAttentionModel,
    docs: list[Document],
    top_k: int,
    batch_size: int = 32,
) -> list[RankedPrediction]:
    """Score all labels per document and rank (ties broken by label id)."""
    model.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(docs), batch_size):
            chunk = docs[lo : lo + batch_size]
            ids, lengths = model.make_batch(chunk)
            probs = torch.sigmoid(model(ids, lengths)).cpu().numpy()
            for doc, row in zip(chunk, probs):
                order = sorted(range(len(model.labels)), key=lambda j: (-row[j], model.labels[j]))
                top = order[:top_k]
                out.append(
                    RankedPrediction(
                        doc_id=doc.id,
                        labels=tuple(model.labels[j] for j in top),
                        scores=tuple(float(row[j]) for j in top),
                    )
                )
    return out


@dataclass
class GradCheckReport:
    per_parameter: dict[str, float]
    max_rel_error: float


def grad_check(
    model: LabelAttentionModel,
    ids: torch.Tensor,
    lengths: torch.Tensor,
    targets: torch.Tensor,
    epsilon: float = 1e-5,
    samples_per_param: int = 6,
    seed: int = 0,
) -> GradCheckReport:
    """Central finite differences against analytic gradients, in float64.

    Samples coordinates from every parameter tensor; the relative error
    is |fd - grad| / max(|fd| + |grad|, 1e-8).  Dropout is disabled by
    running in eval mode on a copy of the model.
    """
    work = copy.deepcopy(model).double().eval()
    for param in work.parameters():
        param.requires_grad_(True)  # check frozen groups (e.g. embeddings) too
    ids = ids.clone()
    lengths = lengths.clone()
    targets = targets.double()

    def loss_value() -> torch.Tensor:
        logits = work(ids, lengths)
        return F.binary_cross_entropy_with_logits(logits, targets)

    loss = loss_value()
    grads = torch.autograd.grad(
        loss, [p for _, p in work.named_parameters()], allow_unused=True
    )
    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    for (name, param), grad in zip(work.named_parameters(), grads):
        flat = param.data.view(-1)
        n = flat.numel()
        coords = rng.choice(n, size=min(samples_per_param, n), replace=False)
        grad_flat = (
            torch.zeros_like(flat) if grad is None else grad.reshape(-1)
        )
        worst = 0.0
        for c in coords:
            c = int(c)
            original = float(flat[c])
            with torch.no_grad():
                flat[c] = original + epsilon
                up = float(loss_value())
                flat[c] = original - epsilon
                down = float(loss_value())
                flat[c] = original
            fd = (up - down) / (2 * epsilon)
            an = float(grad_flat[c])
            err = abs(fd - an) / max(abs(fd) + abs(an), 1e-8)
            worst = max(worst, err)
        report[name] = worst
    return GradCheckReport(per_parameter=report, max_rel_error=max(report.values()))


# ------------------------------------------------------------- persistence


def save_model(model: LabelAttentionModel, path: str | Path, extra_meta: dict | None = None) -> None:
    """Checkpoint to the binary container: named float tensors + variant tag."""
    arrays: dict[str, np.ndarray] = {}
    for key, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype == np.float64:
            arr = arr.astype(np.float32)
        arrays[f"state/{key}"] = arr
    meta = {
        "variant": model.variant,
        "labels": list(model.labels),
        "tokens": list(model.tokens),
        "oov_policy": model.oov_policy,
        "encoder": asdict(model.encoder_config),
        "gcn_hidden": model.gcn_hidden,
        "has_graph": model.variant in GRAPH_VARIANTS,
        "vector_labels": list(getattr(model, "vector_labels", [])),
    }
    if extra_meta:
        meta["run"] = extra_meta
    save_container(path, "lwan", meta, arrays)


def load_model(path: str | Path) -> LabelAttentionModel:
    kind, meta, arrays = load_container(path)
    if kind != "lwan":
        raise ValueError(f"{path}: expected an lwan container, found {kind!r}")
    encoder = EncoderConfig(**meta["encoder"])
    variant = meta["variant"]
    state = {
        key[len("state/") :]: torch.as_tensor(arr)
        for key, arr in arrays.items()
        if key.startswith("state/")
    }
    emb = state["encoder.embedding.weight"].numpy()
    label_vectors = None
    parent_mat = child_mat = None
    if variant != "base":
        matrix = state["label_inputs"].numpy()
        label_vectors = LabelVectors(
            kind="centroid", labels=tuple(meta["vector_labels"]), matrix=matrix
        )
        if meta["has_graph"]:
            parent_mat = state["parent_mat"].numpy()
            child_mat = state["child_mat"].numpy()
    model = LabelAttentionModel(
        variant=variant,
        labels=tuple(meta["labels"]),
        tokens=tuple(meta["tokens"]),
        embedding_matrix=emb,
        encoder=encoder,
        label_vectors=label_vectors,
        gcn_hidden=meta["gcn_hidden"],
        parent_mat=parent_mat,
        child_mat=child_mat,
    )
    model.oov_policy = meta["oov_policy"]
    model.load_state_dict(state)
    model.eval()
    return model
