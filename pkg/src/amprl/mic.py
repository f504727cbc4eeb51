"""Activity classifier: feature embedding, focal-loss MLP, scoring, evaluation.

The score s in (0,1) estimates how likely a peptide's MIC falls at or below
the activity threshold; s feeds the MIC reward term directly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from . import numerics as nm
from .numerics.tensor import reduce_mean
from .physchem import DEFAULT_SCALE, ScaleTable, descriptor_vector
from .rng import substream
from .sequences import RESIDUES, Peptide

BUILTIN_DIM = 5 + 20 + 400

_PAIR_INDEX = {a + b: 20 * i + j for i, a in enumerate(RESIDUES) for j, b in enumerate(RESIDUES)}


@dataclass
class LabeledSet:
    """(peptide, label) pairs for one split; labels are 1=active, 0=inactive."""

    items: list[tuple[Peptide, int]]
    split: str = ""

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for pep, label in self.items:
            if label not in (0, 1):
                raise ValueError(f"label for {pep.id!r} must be 0 or 1, got {label!r}")
            if pep.residues in seen:
                raise ValueError(f"duplicate sequence within split {self.split!r}: {pep.residues}")
            seen.add(pep.residues)

    def peptides(self) -> list[Peptide]:
        return [pep for pep, _ in self.items]

    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.items], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.items)


def read_labeled_tsv(stream: str | Path | IO[str], split: str = "") -> LabeledSet:
    """TSV with header `sequence<TAB>label`; labels active/inactive or 1/0."""
    if isinstance(stream, (str, Path)) and "\t" not in str(stream) and "\n" not in str(stream):
        text = Path(stream).read_text(encoding="utf-8")
    elif isinstance(stream, str):
        text = stream
    else:
        text = stream.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split("\t")[:2] != ["sequence", "label"]:
        raise ValueError("labeled TSV must start with a 'sequence\\tlabel' header")
    items: list[tuple[Peptide, int]] = []
    mapping = {"active": 1, "inactive": 0, "1": 1, "0": 0}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) < 2:
            raise ValueError(f"line {lineno}: expected sequence and label")
        seq, label = parts[0], parts[1]
        if label not in mapping:
            raise ValueError(f"line {lineno}: unknown label {label!r}")
        items.append((Peptide(id=f"row{lineno}", residues=seq), mapping[label]))
    return LabeledSet(items=items, split=split)


def write_labeled_tsv(labeled: LabeledSet, sink: str | Path | IO[str]) -> None:
    """Paired writer for read_labeled_tsv (labels written as active/inactive)."""
    from .sequences import _write_text

    lines = ["sequence\tlabel"]
    for pep, label in labeled.items:
        lines.append(f"{pep.residues}\t{'active' if label else 'inactive'}")
    _write_text(sink, "\n".join(lines) + "\n")


def load_external_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    """JSONL with one {"sequence": ..., "vector": [...]} object per line."""
    table: dict[str, np.ndarray] = {}
    dim: int | None = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        obj = json.loads(raw)
        vec = np.asarray(obj["vector"], dtype=np.float64)
        if vec.ndim != 1:
            raise ValueError(f"{path}:{lineno}: vector must be one-dimensional")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise ValueError(f"{path}:{lineno}: vector length {vec.size} != {dim}")
        table[obj["sequence"]] = vec
    if not table:
        raise ValueError(f"{path}: no embeddings found")
    return table


class Embedder:
    """Feature provider: built-in composition/property features or an external table.

    Built-in features are the 5 descriptor values, 20 residue frequencies and
    400 dipeptide frequencies, standardized by training-set statistics that
    are frozen at fit time.
    """

    def __init__(
        self,
        kind: str = "builtin_features",
        table: dict[str, np.ndarray] | None = None,
        scale: ScaleTable = DEFAULT_SCALE,
    ):
        if kind not in ("builtin_features", "external_table"):
            raise ValueError(f"unknown embedder kind {kind!r}")
        if kind == "external_table" and not table:
            raise ValueError("external_table embedder requires a sequence->vector table")
        self.kind = kind
        self.table = table or {}
        self.scale = scale
        self.mean: np.ndarray | None = None
        self.std: np.ndarray | None = None

    @property
    def dim(self) -> int:
        if self.kind == "external_table":
            return next(iter(self.table.values())).size
        return BUILTIN_DIM

    def raw_features(self, p: Peptide) -> np.ndarray:
        props = descriptor_vector(p, self.scale)
        head = np.array(
            [
                float(props.length),
                props.hydrophobicity,
                props.hydrophobic_moment,
                props.net_charge,
                props.isoelectric_point,
            ]
        )
        freq = np.zeros(20)
        for r in p.residues:
            freq[RESIDUES.index(r)] += 1.0
        freq /= len(p.residues)
        dipep = np.zeros(400)
        if len(p.residues) > 1:
            for i in range(len(p.residues) - 1):
                dipep[_PAIR_INDEX[p.residues[i : i + 2]]] += 1.0
            dipep /= len(p.residues) - 1
        return np.concatenate([head, freq, dipep])

    def fit(self, peptides: list[Peptide]) -> "Embedder":
        if self.kind == "external_table":
            return self
        raw = np.stack([self.raw_features(p) for p in peptides])
        self.mean = raw.mean(axis=0)
        std = raw.std(axis=0)
        self.std = np.where(std < 1e-12, 1.0, std)
        return self

    def embed(self, p: Peptide) -> np.ndarray:
        if self.kind == "external_table":
            vec = self.table.get(p.residues)
            if vec is None:
                raise ValueError(f"no external embedding for sequence {p.residues!r}")
            return vec
        if self.mean is None or self.std is None:
            raise ValueError("builtin embedder must be fit before embedding")
        return (self.raw_features(p) - self.mean) / self.std

    def embed_many(self, peptides: Iterable[Peptide]) -> np.ndarray:
        return np.stack([self.embed(p) for p in peptides])


def focal_loss(probabilities, labels, alpha, gamma: float) -> nm.Tensor:
    """-(1/N) sum alpha_i (1 - p_i)^gamma log(p_i), p_i = prob of the true class."""
    probs = probabilities if isinstance(probabilities, nm.Tensor) else nm.Tensor(probabilities)
    if probs.data.size == 0:
        raise ValueError("focal loss of an empty batch is undefined")
    if not np.all((probs.data > 0.0) & (probs.data < 1.0)):
        raise ValueError("probabilities must lie strictly inside (0,1)")
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != probs.data.shape:
        raise ValueError(f"labels shape {y.shape} != probabilities shape {probs.data.shape}")
    a = np.broadcast_to(np.asarray(alpha, dtype=np.float64), y.shape)
    p_true = probs * y + (1.0 - probs) * (1.0 - y)
    weight = (1.0 - p_true) ** gamma if gamma else 1.0
    return -reduce_mean(a * weight * nm.log(p_true))


@dataclass(frozen=True)
class MicConfig:
    hidden: tuple[int, ...] = (256, 64)
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 64
    patience: int = 5
    gamma_focal: float = 2.0
    alpha_pos: float | None = None
    alpha_neg: float | None = None
    threshold: float = 0.5
    cutoff: float = 0.4
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden sizes must be positive")
        if not (0.0 < self.threshold < 1.0) or not (0.0 < self.cutoff < 1.0):
            raise ValueError("threshold and cutoff must lie in (0,1)")


class MicModel:
    def __init__(self, embedder: Embedder, params: dict[str, nm.Tensor], config: MicConfig):
        self.embedder = embedder
        self.params = params
        self.config = config

    @classmethod
    def init(cls, embedder: Embedder, config: MicConfig, seed: int) -> "MicModel":
        rng = substream(seed, "mic.init")
        sizes = (embedder.dim, *config.hidden, 1)
        params: dict[str, nm.Tensor] = {}
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            params[f"fc{i}.w"] = nm.Tensor(
                rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)), requires_grad=True
            )
            params[f"fc{i}.b"] = nm.Tensor(np.zeros(fan_out), requires_grad=True)
        return cls(embedder, params, config)

    def logits(self, features: np.ndarray) -> nm.Tensor:
        x: nm.Tensor | np.ndarray = nm.Tensor(features)
        n_layers = len(self.config.hidden) + 1
        for i in range(n_layers):
            x = nm.matmul(x, self.params[f"fc{i}.w"]) + self.params[f"fc{i}.b"]
            if i < n_layers - 1:
                x = nm.relu(x)
        return x.reshape((features.shape[0],))

    def probabilities(self, features: np.ndarray) -> nm.Tensor:
        return nm.sigmoid(self.logits(features))

    def score(self, p: Peptide) -> float:
        return float(self.probabilities(self.embedder.embed(p)[None, :]).data[0])

    def score_many(self, peptides: list[Peptide]) -> np.ndarray:
        if not peptides:
            return np.zeros(0)
        return self.probabilities(self.embedder.embed_many(peptides)).data

    def trainable(self) -> list[nm.Tensor]:
        return list(self.params.values())

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        info = dict(meta or {})
        info["mic_config"] = {
            "hidden": list(self.config.hidden),
            "gamma_focal": self.config.gamma_focal,
            "threshold": self.config.threshold,
            "cutoff": self.config.cutoff,
        }
        info["embedder_kind"] = self.embedder.kind
        tensors = dict(self.params)
        if self.embedder.kind == "builtin_features":
            tensors["embed.mean"] = nm.Tensor(self.embedder.mean)
            tensors["embed.std"] = nm.Tensor(self.embedder.std)
        nm.save_checkpoint(path, tensors, meta=info)

    @classmethod
    def load(cls, path: str | Path, external_table: dict[str, np.ndarray] | None = None) -> "MicModel":
        tensors, meta = nm.load_checkpoint(path)
        if "mic_config" not in meta:
            raise ValueError(f"{path}: checkpoint manifest lacks mic_config")
        raw = meta["mic_config"]
        config = MicConfig(
            hidden=tuple(raw["hidden"]),
            gamma_focal=raw["gamma_focal"],
            threshold=raw["threshold"],
            cutoff=raw["cutoff"],
        )
        kind = meta.get("embedder_kind", "builtin_features")
        if kind == "external_table":
            embedder = Embedder(kind=kind, table=external_table)
        else:
            embedder = Embedder(kind=kind)
            embedder.mean = tensors["embed.mean"].copy()
            embedder.std = tensors["embed.std"].copy()
        params = {
            name: nm.Tensor(arr.copy(), requires_grad=True)
            for name, arr in tensors.items()
            if name.startswith("fc")
        }
        return cls(embedder, params, config)


def train_mic(
    train: LabeledSet,
    val: LabeledSet,
    config: MicConfig = MicConfig(),
    embedder: Embedder | None = None,
) -> tuple[MicModel, list[dict]]:
    """Minibatch Adam on the focal loss; returns the best-validation-AUROC model."""
    if not len(train) or not len(val):
        raise ValueError("train and validation splits must both be non-empty")
    labels = train.labels()
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("training set is single-class; cannot fit a classifier")

    emb = embedder or Embedder()
    emb.fit(train.peptides())
    model = MicModel.init(emb, config, seed=config.seed)

    # inverse class frequency, normalized so the mean sample weight is 1
    alpha_pos = config.alpha_pos if config.alpha_pos is not None else len(labels) / (2.0 * n_pos)
    alpha_neg = config.alpha_neg if config.alpha_neg is not None else len(labels) / (2.0 * n_neg)

    x_train = emb.embed_many(train.peptides())
    y_train = labels.astype(np.float64)
    a_train = np.where(y_train == 1.0, alpha_pos, alpha_neg)
    x_val = emb.embed_many(val.peptides())
    y_val = val.labels()

    opt = nm.Adam(model.trainable(), lr=config.lr)
    shuffle_rng = substream(config.seed, "mic.shuffle")
    history: list[dict] = []
    best_auroc = -1.0
    best_epoch = 0
    best_state = [p.data.copy() for p in model.trainable()]

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(y_train))
        total = 0.0
        batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            probs = model.probabilities(x_train[idx])
            loss = focal_loss(probs, y_train[idx], a_train[idx], config.gamma_focal)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            batches += 1
        val_scores = model.probabilities(x_val).data
        val_auroc = auroc(val_scores, y_val)
        history.append(
            {
                "epoch": epoch,
                "train_loss": total / batches,
                "val_auroc": val_auroc if val_auroc is not None else float("nan"),
            }
        )
        if val_auroc is not None and val_auroc > best_auroc:
            best_auroc = val_auroc
            best_epoch = epoch
            best_state = [p.data.copy() for p in model.trainable()]
        if epoch - best_epoch >= config.patience:
            break

    for p, saved in zip(model.trainable(), best_state):
        p.data = saved
    return model, history


def auroc(scores, labels) -> float | None:
    """Rank-statistic AUROC with ties averaged; None when one class is absent."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(model: MicModel, test: LabeledSet) -> dict:
    """AUROC plus thresholded accuracy/F1/confusion counts on one split."""
    if not len(test):
        raise ValueError("cannot evaluate on an empty split")
    scores = model.score_many(test.peptides())
    y = test.labels()
    predicted = (scores >= model.config.threshold).astype(np.int64)
    tp = int(np.sum((predicted == 1) & (y == 1)))
    fp = int(np.sum((predicted == 1) & (y == 0)))
    tn = int(np.sum((predicted == 0) & (y == 0)))
    fn = int(np.sum((predicted == 0) & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "auroc": auroc(scores, y),
        "accuracy": (tp + tn) / len(y),
        "f1": f1,
        "tp": tp,
        "fp": fp,
        "tn": tn,
        "fn": fn,
    }
