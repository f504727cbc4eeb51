"""Autoregressive peptide generator: causal transformer, LoRA, SFT, sampling.

Tokenization: residues map to 0..19 in alphabet order, EOS=20, BOS=21,
PAD=22. The output head covers the 21 emittable actions (residues + EOS).
EOS is masked out at the first generation step so the model can never emit
an empty peptide; that mask is part of the sequence distribution and is
applied identically in sampling, scoring, and training losses.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .numerics.tensor import reduce_sum, transpose
from .rng import substream
from .sequences import RESIDUES, Peptide

EOS = 20
BOS = 21
PAD = 22
VOCAB = 23
N_ACTIONS = 21
NEG = -1e9

_RES_TO_ID = {r: i for i, r in enumerate(RESIDUES)}


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 128
    n_layers: int = 4
    n_heads: int = 4
    max_len: int = 50
    mlp_ratio: int = 4
    init_std: float = 0.02

    def __post_init__(self) -> None:
        if min(self.embed_dim, self.n_layers, self.n_heads, self.max_len, self.mlp_ratio) < 1:
            raise ValueError("model dimensions must be positive")
        if self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")

    @property
    def context_len(self) -> int:
        return self.max_len + 2


@dataclass
class LoraDelta:
    a: nm.Tensor
    b: nm.Tensor
    rank: int
    scaling: float


@dataclass(frozen=True)
class TokenBatch:
    """Rows of [BOS, residues..., EOS, PAD...]; PAD only after EOS."""

    ids: np.ndarray

    def __post_init__(self) -> None:
        ids = self.ids
        if ids.ndim != 2:
            raise ValueError("token batch must be 2-D")
        if not np.all(ids[:, 0] == BOS):
            raise ValueError("every row must start with BOS")
        for row in ids:
            eos_at = np.flatnonzero(row == EOS)
            if eos_at.size != 1:
                raise ValueError("every row must contain exactly one EOS")
            after = row[eos_at[0] + 1 :]
            if after.size and not np.all(after == PAD):
                raise ValueError("only PAD may follow EOS")

    @property
    def n_rows(self) -> int:
        return self.ids.shape[0]


def encode_batch(peptides: list[Peptide], pad_to: int | None = None) -> TokenBatch:
    if not peptides:
        raise ValueError("cannot encode an empty batch")
    width = max(len(p.residues) for p in peptides) + 2
    if pad_to is not None:
        width = max(width, pad_to)
    ids = np.full((len(peptides), width), PAD, dtype=np.int64)
    for i, p in enumerate(peptides):
        ids[i, 0] = BOS
        for j, r in enumerate(p.residues, start=1):
            ids[i, j] = _RES_TO_ID[r]
        ids[i, len(p.residues) + 1] = EOS
    return TokenBatch(ids=ids)


def decode_tokens(tokens: np.ndarray) -> str:
    """Residue string from action ids, stopping at EOS if present."""
    out = []
    for t in tokens:
        if t == EOS:
            break
        out.append(RESIDUES[int(t)])
    return "".join(out)


class PolicyModel:
    """Pre-norm causal transformer over the peptide alphabet with a value head."""

    def __init__(self, config: ModelConfig, params: dict[str, nm.Tensor], lora: dict[str, LoraDelta] | None = None):
        self.config = config
        self.params = params
        self.lora = lora or {}

    # --- construction -----------------------------------------------------

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "PolicyModel":
        rng = substream(seed, "policy.init")
        d = config.embed_dim
        hidden = config.mlp_ratio * d
        params: dict[str, nm.Tensor] = {}

        def normal(name: str, shape: tuple[int, ...]) -> None:
            params[name] = nm.Tensor(rng.normal(0.0, config.init_std, size=shape), requires_grad=True)

        def zeros(name: str, shape: tuple[int, ...]) -> None:
            params[name] = nm.Tensor(np.zeros(shape), requires_grad=True)

        def ones(name: str, shape: tuple[int, ...]) -> None:
            params[name] = nm.Tensor(np.ones(shape), requires_grad=True)

        normal("tok_embed", (VOCAB, d))
        normal("pos_embed", (config.context_len, d))
        for i in range(config.n_layers):
            pre = f"layer{i}"
            ones(f"{pre}.ln1.g", (d,))
            zeros(f"{pre}.ln1.b", (d,))
            for proj in ("wq", "wk", "wv", "wo"):
                normal(f"{pre}.attn.{proj}", (d, d))
                zeros(f"{pre}.attn.{proj[1]}b", (d,))
            ones(f"{pre}.ln2.g", (d,))
            zeros(f"{pre}.ln2.b", (d,))
            normal(f"{pre}.mlp.w1", (d, hidden))
            zeros(f"{pre}.mlp.b1", (hidden,))
            normal(f"{pre}.mlp.w2", (hidden, d))
            zeros(f"{pre}.mlp.b2", (d,))
        ones("ln_f.g", (d,))
        zeros("ln_f.b", (d,))
        normal("head.w", (d, N_ACTIONS))
        zeros("head.b", (N_ACTIONS,))
        normal("value.w", (d, 1))
        zeros("value.b", (1,))
        return cls(config, params)

    def parameter_count(self) -> int:
        base = sum(p.data.size for p in self.params.values())
        extra = sum(delta.a.data.size + delta.b.data.size for delta in self.lora.values())
        return base + extra

    def trainable(self) -> list[nm.Tensor]:
        out = [p for p in self.params.values() if p.requires_grad]
        for delta in self.lora.values():
            out.extend([delta.a, delta.b])
        return out

    def named_tensors(self) -> dict[str, nm.Tensor]:
        out = dict(self.params)
        for name, delta in self.lora.items():
            out[f"{name}.lora_a"] = delta.a
            out[f"{name}.lora_b"] = delta.b
        return out

    # --- forward ----------------------------------------------------------

    def _weight(self, name: str) -> nm.Tensor:
        w = self.params[name]
        delta = self.lora.get(name)
        if delta is None:
            return w
        return w + nm.matmul(delta.a, delta.b) * (delta.scaling / delta.rank)

    def forward_hidden(self, ids: np.ndarray) -> nm.Tensor:
        """Final-layer hidden states, shape (B, T, D)."""
        cfg = self.config
        b, t = ids.shape
        if t > cfg.context_len:
            raise ValueError(f"input length {t} exceeds context {cfg.context_len}")
        d = cfg.embed_dim
        heads = cfg.n_heads
        dh = d // heads
        mask = nm.causal_mask(t)

        x = nm.embedding(self.params["tok_embed"], ids) + nm.embedding(
            self.params["pos_embed"], np.arange(t)
        )
        for i in range(cfg.n_layers):
            pre = f"layer{i}"
            h = nm.layer_norm(x, self.params[f"{pre}.ln1.g"], self.params[f"{pre}.ln1.b"])
            q = nm.matmul(h, self._weight(f"{pre}.attn.wq")) + self.params[f"{pre}.attn.qb"]
            k = nm.matmul(h, self._weight(f"{pre}.attn.wk")) + self.params[f"{pre}.attn.kb"]
            v = nm.matmul(h, self._weight(f"{pre}.attn.wv")) + self.params[f"{pre}.attn.vb"]
            q = transpose(q.reshape((b, t, heads, dh)), (0, 2, 1, 3))
            k = transpose(k.reshape((b, t, heads, dh)), (0, 2, 1, 3))
            v = transpose(v.reshape((b, t, heads, dh)), (0, 2, 1, 3))
            scores = nm.matmul(q, transpose(k)) * (1.0 / np.sqrt(dh)) + mask
            att = nm.softmax(scores, axis=-1)
            ctx = transpose(nm.matmul(att, v), (0, 2, 1, 3)).reshape((b, t, d))
            x = x + nm.matmul(ctx, self._weight(f"{pre}.attn.wo")) + self.params[f"{pre}.attn.ob"]
            h2 = nm.layer_norm(x, self.params[f"{pre}.ln2.g"], self.params[f"{pre}.ln2.b"])
            m = nm.gelu(nm.matmul(h2, self.params[f"{pre}.mlp.w1"]) + self.params[f"{pre}.mlp.b1"])
            x = x + nm.matmul(m, self.params[f"{pre}.mlp.w2"]) + self.params[f"{pre}.mlp.b2"]
        return nm.layer_norm(x, self.params["ln_f.g"], self.params["ln_f.b"])

    def forward(self, ids: np.ndarray) -> nm.Tensor:
        """Raw next-action logits, shape (B, T, 21)."""
        hidden = self.forward_hidden(ids)
        return nm.matmul(hidden, self.params["head.w"]) + self.params["head.b"]

    def action_log_probs(self, ids: np.ndarray) -> nm.Tensor:
        """Log-probabilities over actions at every position.

        Rows must start with BOS; the EOS action is masked at position 0.
        """
        if not np.all(ids[:, 0] == BOS):
            raise ValueError("action_log_probs expects BOS-prefixed rows")
        logits = self.forward(ids)
        return nm.log_softmax(logits + _first_step_eos_mask(ids.shape[1]), axis=-1)

    def values_and_log_probs(self, ids: np.ndarray) -> tuple[nm.Tensor, nm.Tensor]:
        """One shared-trunk pass: per-position state values and action log-probs."""
        if not np.all(ids[:, 0] == BOS):
            raise ValueError("values_and_log_probs expects BOS-prefixed rows")
        hidden = self.forward_hidden(ids)
        logits = nm.matmul(hidden, self.params["head.w"]) + self.params["head.b"]
        log_probs = nm.log_softmax(logits + _first_step_eos_mask(ids.shape[1]), axis=-1)
        values = nm.matmul(hidden, self.params["value.w"]) + self.params["value.b"]
        return values.reshape(ids.shape), log_probs

    # --- persistence --------------------------------------------------------

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        info = dict(meta or {})
        info["model_config"] = asdict(self.config)
        info["base_trainable"] = any(p.requires_grad for p in self.params.values())
        if self.lora:
            first = next(iter(self.lora.values()))
            info["lora"] = {
                "rank": first.rank,
                "scaling": first.scaling,
                "targets": sorted(self.lora),
            }
        nm.save_checkpoint(path, self.named_tensors(), meta=info)

    @classmethod
    def load(cls, path: str | Path) -> "PolicyModel":
        tensors, meta = nm.load_checkpoint(path)
        if "model_config" not in meta:
            raise ValueError(f"{path}: checkpoint manifest lacks model_config")
        config = ModelConfig(**meta["model_config"])
        base_trainable = bool(meta.get("base_trainable", True))
        params = {
            name: nm.Tensor(arr.copy(), requires_grad=base_trainable)
            for name, arr in tensors.items()
            if not name.endswith((".lora_a", ".lora_b"))
        }
        model = cls(config, params)
        lora_meta = meta.get("lora")
        if lora_meta:
            for target in lora_meta["targets"]:
                model.lora[target] = LoraDelta(
                    a=nm.Tensor(tensors[f"{target}.lora_a"].copy(), requires_grad=True),
                    b=nm.Tensor(tensors[f"{target}.lora_b"].copy(), requires_grad=True),
                    rank=int(lora_meta["rank"]),
                    scaling=float(lora_meta["scaling"]),
                )
        return model


def _first_step_eos_mask(t: int) -> np.ndarray:
    mask = np.zeros((t, N_ACTIONS))
    mask[0, EOS] = NEG
    return mask


_LORA_TARGETS = {"wq", "wk", "wv", "wo"}


def attach_lora(
    model: PolicyModel,
    rank: int,
    scaling: float,
    targets: tuple[str, ...] = ("wq", "wv"),
    freeze_base: bool = True,
    seed: int = 0,
) -> PolicyModel:
    """Add low-rank deltas to the named attention projections (in place).

    The second factor starts at zero, so attaching never changes the forward
    pass. With freeze_base the base weights stop receiving gradients.
    """
    if rank < 1:
        raise ValueError(f"LoRA rank must be >= 1, got {rank}")
    unknown = [t for t in targets if t not in _LORA_TARGETS]
    if unknown:
        raise ValueError(f"unknown LoRA targets: {', '.join(unknown)}; valid: {sorted(_LORA_TARGETS)}")
    for i in range(model.config.n_layers):
        for proj in targets:
            name = f"layer{i}.attn.{proj}"
            d_in, d_out = model.params[name].data.shape
            rng = substream(seed, f"lora.{name}")
            model.lora[name] = LoraDelta(
                a=nm.Tensor(rng.normal(0.0, 0.02, size=(d_in, rank)), requires_grad=True),
                b=nm.Tensor(np.zeros((rank, d_out)), requires_grad=True),
                rank=rank,
                scaling=scaling,
            )
    if freeze_base:
        for p in model.params.values():
            p.requires_grad = False
        model.params["value.w"].requires_grad = True
        model.params["value.b"].requires_grad = True
    return model


# --- losses and scoring ----------------------------------------------------


@dataclass
class SftLoss:
    total: nm.Tensor
    mean: nm.Tensor
    token_count: int


def sft_loss(model: PolicyModel, batch: TokenBatch) -> SftLoss:
    """Negative log-likelihood of each next token, summed and per-token."""
    ids = batch.ids
    inputs = ids[:, :-1]
    targets = ids[:, 1:]
    mask = (targets != PAD).astype(np.float64)
    safe_targets = np.where(targets == PAD, 0, targets)
    log_probs = model.action_log_probs(inputs)
    token_lp = nm.gather_last(log_probs, safe_targets)
    total = -reduce_sum(token_lp * mask)
    count = int(mask.sum())
    return SftLoss(total=total, mean=total * (1.0 / count), token_count=count)


def log_probs(model: PolicyModel, peptide: Peptide) -> np.ndarray:
    """Log-probability of each token of the peptide (residues then EOS)."""
    batch = encode_batch([peptide])
    out = sequence_log_probs(model, batch.ids)
    return out[0, : len(peptide.residues) + 1]


def sequence_log_probs(model: PolicyModel, ids: np.ndarray) -> np.ndarray:
    """Per-position log-probs of the realized tokens; PAD positions get 0."""
    inputs = ids[:, :-1]
    targets = ids[:, 1:]
    mask = targets != PAD
    safe_targets = np.where(mask, targets, 0)
    lp = model.action_log_probs(inputs).data
    picked = np.take_along_axis(lp, safe_targets[..., None], axis=-1)[..., 0]
    return np.where(mask, picked, 0.0)


def perplexity(model: PolicyModel, peptides: list[Peptide], batch_size: int = 64) -> float:
    """exp(mean per-token negative log-likelihood) over the dataset."""
    if not peptides:
        raise ValueError("perplexity needs at least one peptide")
    total = 0.0
    count = 0
    for start in range(0, len(peptides), batch_size):
        chunk = peptides[start : start + batch_size]
        out = sft_loss(model, encode_batch(chunk))
        total += out.total.item()
        count += out.token_count
    return float(np.exp(total / count))


# --- SFT training loop -------------------------------------------------------


@dataclass(frozen=True)
class SftConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 3
    seed: int = 0


@dataclass
class SftResult:
    model: PolicyModel
    history: list[dict]
    best_epoch: int
    best_val_perplexity: float


def train_sft(
    model: PolicyModel,
    train: list[Peptide],
    val: list[Peptide],
    config: SftConfig,
) -> SftResult:
    """Adam on the next-token loss; keeps the best-validation-perplexity weights.

    Stops once the epochs since the best validation score reach the patience.
    """
    if not train or not val:
        raise ValueError("train and validation sets must both be non-empty")
    params = model.trainable()
    if not params:
        raise ValueError("model has no trainable parameters")
    opt = nm.Adam(params, lr=config.lr)
    shuffle_rng = substream(config.seed, "sft.shuffle")
    history: list[dict] = []
    best_ppl = float("inf")
    best_epoch = 0
    best_state = [p.data.copy() for p in params]

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train))
        epoch_loss = 0.0
        epoch_tokens = 0
        for start in range(0, len(order), config.batch_size):
            chunk = [train[i] for i in order[start : start + config.batch_size]]
            out = sft_loss(model, encode_batch(chunk))
            opt.zero_grad()
            out.mean.backward()
            opt.step()
            epoch_loss += out.total.item()
            epoch_tokens += out.token_count
        val_ppl = perplexity(model, val)
        history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / epoch_tokens,
                "val_perplexity": val_ppl,
            }
        )
        if val_ppl < best_ppl:
            best_ppl = val_ppl
            best_epoch = epoch
            best_state = [p.data.copy() for p in params]
        if epoch - best_epoch >= config.patience:
            break

    for p, saved in zip(params, best_state):
        p.data = saved
    return SftResult(model=model, history=history, best_epoch=best_epoch, best_val_perplexity=best_ppl)


# --- sampling ---------------------------------------------------------------


@dataclass
class SampledSequence:
    peptide: Peptide
    tokens: np.ndarray
    log_probs: np.ndarray
    terminated: bool


def sample(
    model: PolicyModel,
    n: int,
    temperature: float = 1.0,
    top_k: int | None = None,
    max_len: int | None = None,
    seed: int = 0,
    greedy: bool = False,
    source: str = "generated_sft",
    id_prefix: str = "gen",
    id_start: int = 0,
) -> list[SampledSequence]:
    """Draw n sequences; per-token log-probs are under the untempered model.

    All rows advance in lockstep and uniforms are drawn for every row at every
    step, so row i's outcome does not depend on when other rows finish. A row
    that exhausts the residue budget has EOS forced as its final action (its
    log-prob is still the model's own), and is flagged as not terminated.
    """
    if not greedy and temperature <= 0.0:
        raise ValueError("temperature must be positive unless decoding greedily")
    if top_k is not None and top_k < 1:
        raise ValueError("top_k must be >= 1 when given")
    limit = model.config.max_len if max_len is None else min(max_len, model.config.max_len)
    rng = substream(seed, "policy.sample")

    rows = np.full((n, 1), BOS, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    token_lists: list[list[int]] = [[] for _ in range(n)]
    lp_lists: list[list[float]] = [[] for _ in range(n)]

    for step in range(limit + 1):
        logits = model.forward(rows).data[:, -1, :].copy()
        if step == 0:
            logits[:, EOS] = NEG
        base_lp = _log_softmax_rows(logits)
        sample_logits = logits if greedy else logits / temperature
        if step == limit:
            # residue budget exhausted; EOS is the only remaining action
            sample_logits = np.where(
                np.arange(N_ACTIONS) == EOS, sample_logits, NEG
            )
        if top_k is not None:
            kth = np.partition(sample_logits, -top_k, axis=-1)[:, -top_k][:, None]
            sample_logits = np.where(sample_logits < kth, NEG, sample_logits)
        if greedy:
            choices = np.argmax(sample_logits, axis=-1)
        else:
            probs = _softmax_rows(sample_logits)
            u = rng.random(n)
            cum = np.cumsum(probs, axis=-1)
            choices = np.minimum((cum < u[:, None]).sum(axis=-1), N_ACTIONS - 1)
        was_alive = alive.copy()
        for i in range(n):
            if not was_alive[i]:
                continue
            token = int(choices[i])
            token_lists[i].append(token)
            lp_lists[i].append(float(base_lp[i, token]))
            if token == EOS:
                alive[i] = False
        if not alive.any():
            break
        col = np.where(was_alive, choices, PAD).astype(np.int64)
        rows = np.concatenate([rows, col[:, None]], axis=1)

    out: list[SampledSequence] = []
    for i in range(n):
        tokens = np.array(token_lists[i], dtype=np.int64)
        residues = decode_tokens(tokens)
        pep = Peptide(id=f"{id_prefix}{id_start + i}", residues=residues, source=source)
        out.append(
            SampledSequence(
                peptide=pep,
                tokens=tokens,
                log_probs=np.array(lp_lists[i]),
                terminated=len(residues) < limit,
            )
        )
    return out


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
