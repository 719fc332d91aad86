"""Tiny bidirectional transformer seq2seq with a single tied embedding table.

The table is shared between source input, target input and (by default) the
output projection, so a token has one vector no matter where it appears. The
module exposes exactly the surfaces the online training loop needs: encoder
states, a training step, and deterministic greedy translation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import TaggedSentence

PAD_ID, BOS_ID, EOS_ID, UNK_ID, MASK_ID = 0, 1, 2, 3, 4

CHECKPOINT_VERSION = 1
_NEG = -1e9


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class CheckpointError(RuntimeError):
    """Unreadable or incompatible checkpoint."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    ff_dim: int = 256
    max_len: int = 100
    batch_size: int = 50
    dropout: float = 0.1
    label_smoothing: float = 0.1
    lr_factor: float = 2.0
    warmup_steps: int = 400
    adam_betas: tuple[float, float] = (0.9, 0.98)
    adam_eps: float = 1e-9
    tie_output: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.vocab_size < 6:
            raise ValueError("vocab_size too small for the special tokens")


def _sinusoid_table(n_pos: int, d: int) -> torch.Tensor:
    pos = torch.arange(n_pos, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float32) * (-math.log(10000.0) / d))
    table = torch.zeros(n_pos, d)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div[: (d + 1) // 2])
    return table


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = nn.Linear(d_model, d_model)
        self.wk = nn.Linear(d_model, d_model)
        self.wv = nn.Linear(d_model, d_model)
        self.wo = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.d_head).transpose(1, 2)

    def project_kv(self, kv_in: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self._split(self.wk(kv_in)), self._split(self.wv(kv_in))

    def attend(self, q_in: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
               mask: torch.Tensor | None) -> torch.Tensor:
        q = self._split(self.wq(q_in))
        scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.d_head)
        if mask is not None:
            scores = scores.masked_fill(~mask, _NEG)
        weights = self.dropout(torch.softmax(scores, dim=-1))
        out = torch.matmul(weights, v)
        b, _, t, _ = out.shape
        return self.wo(out.transpose(1, 2).reshape(b, t, -1))

    def forward(self, q_in, kv_in, mask=None):
        k, v = self.project_kv(kv_in)
        return self.attend(q_in, k, v, mask)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ff_dim: int, dropout: float):
        super().__init__()
        self.w1 = nn.Linear(d_model, ff_dim)
        self.w2 = nn.Linear(ff_dim, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.w2(self.dropout(F.relu(self.w1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ff = FeedForward(cfg.d_model, cfg.ff_dim, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, mask):
        h = self.norm1(x)
        x = x + self.dropout(self.attn(h, h, mask))
        x = x + self.dropout(self.ff(self.norm2(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ff = FeedForward(cfg.d_model, cfg.ff_dim, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, memory, self_mask, mem_mask):
        h = self.norm1(x)
        x = x + self.dropout(self.self_attn(h, h, self_mask))
        x = x + self.dropout(self.cross_attn(self.norm2(x), memory, mem_mask))
        x = x + self.dropout(self.ff(self.norm3(x)))
        return x

    def step(self, x, cache, mem_mask):
        """One cached decode position; x is (batch, 1, d)."""
        h = self.norm1(x)
        k_new, v_new = self.self_attn.project_kv(h)
        cache["k"] = k_new if cache.get("k") is None else torch.cat([cache["k"], k_new], dim=2)
        cache["v"] = v_new if cache.get("v") is None else torch.cat([cache["v"], v_new], dim=2)
        x = x + self.self_attn.attend(h, cache["k"], cache["v"], None)
        x = x + self.cross_attn.attend(self.norm2(x), cache["mk"], cache["mv"], mem_mask)
        x = x + self.ff(self.norm3(x))
        return x


class Seq2SeqNet(nn.Module):
    """Pre-norm transformer; one embedding table feeds encoder, decoder and logits."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model, padding_idx=PAD_ID)
        self.register_buffer("pos", _sinusoid_table(cfg.max_len + 8, cfg.d_model))
        self.enc_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_enc_layers))
        self.dec_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.enc_norm = nn.LayerNorm(cfg.d_model)
        self.dec_norm = nn.LayerNorm(cfg.d_model)
        self.out_proj = None if cfg.tie_output else nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        self.emb_dropout = nn.Dropout(cfg.dropout)
        self.scale = math.sqrt(cfg.d_model)

    def _embed(self, ids: torch.Tensor, offset: int = 0) -> torch.Tensor:
        t = ids.shape[1]
        return self.emb_dropout(self.embed(ids) * self.scale + self.pos[offset:offset + t])

    def logits(self, h: torch.Tensor) -> torch.Tensor:
        if self.out_proj is None:
            return F.linear(h, self.embed.weight)
        return self.out_proj(h)

    def encode(self, src_ids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (memory, key-padding mask with True where attendable)."""
        pad_mask = (src_ids != PAD_ID).unsqueeze(1).unsqueeze(2)  # B,1,1,T
        x = self._embed(src_ids)
        for layer in self.enc_layers:
            x = layer(x, pad_mask)
        return self.enc_norm(x), pad_mask

    def decode_teacher(self, dec_in: torch.Tensor, memory: torch.Tensor,
                       mem_mask: torch.Tensor) -> torch.Tensor:
        t = dec_in.shape[1]
        causal = torch.ones(t, t, dtype=torch.bool, device=dec_in.device).tril()
        self_mask = causal.unsqueeze(0).unsqueeze(0) & (dec_in != PAD_ID).unsqueeze(1).unsqueeze(2)
        x = self._embed(dec_in)
        for layer in self.dec_layers:
            x = layer(x, memory, self_mask, mem_mask)
        return self.logits(self.dec_norm(x))

    def forward(self, src_ids, dec_in):
        memory, mem_mask = self.encode(src_ids)
        return self.decode_teacher(dec_in, memory, mem_mask)


@dataclass
class ModelState:
    """All trainable parameters plus optimizer state and step counter."""

    config: ModelConfig
    net: Seq2SeqNet
    optimizer: torch.optim.Adam
    step: int = 0

    def embedding_matrix(self) -> np.ndarray:
        """Snapshot of the tied embedding table (vocab_size x d_model)."""
        with torch.no_grad():
            return self.net.embed.weight.detach().cpu().numpy().copy()


@dataclass
class EncoderStates:
    """Per-token encoder output vectors, PAD positions excluded."""

    vectors: np.ndarray  # (length, d_model)

    def __len__(self) -> int:
        return self.vectors.shape[0]


def _init_parameters(net: Seq2SeqNet, seed: int) -> None:
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in net.named_parameters():
            if p.dim() >= 2:
                if name == "embed.weight":
                    p.normal_(0.0, net.cfg.d_model ** -0.5, generator=g)
                    p[PAD_ID].zero_()
                else:
                    bound = math.sqrt(6.0 / (p.shape[0] + p.shape[1]))
                    p.uniform_(-bound, bound, generator=g)
            elif "weight" in name:  # LayerNorm gains
                p.fill_(1.0)
            else:
                p.zero_()


def init_model(config: ModelConfig, mode: str = "random",
               embeddings: np.ndarray | None = None,
               checkpoint_path=None) -> ModelState:
    """Build a fresh model. Deterministic given config.seed.

    mode="from_embeddings" overwrites only the embedding table and leaves all
    other layers at their seeded random initialization.
    """
    if mode == "from_checkpoint":
        state = load_checkpoint(checkpoint_path)
        if state.config.vocab_size != config.vocab_size:
            raise CheckpointError(
                f"checkpoint vocab_size {state.config.vocab_size} != requested {config.vocab_size}")
        return state
    net = Seq2SeqNet(config)
    _init_parameters(net, config.seed)
    if mode == "from_embeddings":
        if embeddings is None:
            raise ValueError("from_embeddings mode requires an embedding matrix")
        if tuple(embeddings.shape) != (config.vocab_size, config.d_model):
            raise ValueError(
                f"embedding matrix shape {tuple(embeddings.shape)} != "
                f"({config.vocab_size}, {config.d_model})")
        with torch.no_grad():
            net.embed.weight.copy_(torch.from_numpy(np.asarray(embeddings, dtype=np.float32)))
    elif mode != "random":
        raise ValueError(f"unknown init mode {mode!r}")
    optimizer = torch.optim.Adam(net.parameters(), lr=1.0,
                                 betas=config.adam_betas, eps=config.adam_eps)
    return ModelState(config=config, net=net, optimizer=optimizer, step=0)


def _noam_lr(cfg: ModelConfig, step: int) -> float:
    step = max(step, 1)
    return cfg.lr_factor * cfg.d_model ** -0.5 * min(step ** -0.5, step * cfg.warmup_steps ** -1.5)


def _check_lengths(cfg: ModelConfig, src_ids, tgt_ids) -> None:
    if len(src_ids) > cfg.max_len or len(tgt_ids) + 1 > cfg.max_len:
        raise ValueError(f"sequence exceeds max_len={cfg.max_len}")


def _pad_batch(rows: list[list[int]], dtype=torch.long) -> torch.Tensor:
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), PAD_ID, dtype=dtype)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.tensor(r, dtype=dtype)
    return out


def batch_loss(state: ModelState, batch) -> tuple[torch.Tensor, torch.Tensor]:
    """Label-smoothed teacher-forcing loss.

    Returns (mean loss, per-sentence mean-per-token losses). Differentiable;
    no optimizer update.
    """
    if not batch:
        raise ValueError("empty batch")
    cfg = state.config
    src_rows, dec_rows, lbl_rows = [], [], []
    for src, tgt in batch:
        src_ids = list(src.full_ids) if isinstance(src, TaggedSentence) else list(src)
        tgt_ids = [int(t) for t in tgt]
        _check_lengths(cfg, src_ids, tgt_ids)
        src_rows.append(src_ids)
        dec_rows.append([BOS_ID] + tgt_ids)
        lbl_rows.append(tgt_ids + [EOS_ID])
    device = state.net.embed.weight.device
    dtype_ok = state.net.embed.weight.dtype
    src_t = _pad_batch(src_rows).to(device)
    dec_t = _pad_batch(dec_rows).to(device)
    lbl_t = _pad_batch(lbl_rows).to(device)

    logits = state.net(src_t, dec_t)
    token_loss = F.cross_entropy(
        logits.reshape(-1, cfg.vocab_size).to(dtype_ok),
        lbl_t.reshape(-1),
        ignore_index=PAD_ID,
        label_smoothing=cfg.label_smoothing,
        reduction="none",
    ).reshape(lbl_t.shape)
    mask = (lbl_t != PAD_ID).to(token_loss.dtype)
    per_sentence = (token_loss * mask).sum(dim=1) / mask.sum(dim=1)
    return per_sentence.mean(), per_sentence


@dataclass
class StepResult:
    loss: float
    per_sentence: np.ndarray
    lr: float


def train_step(state: ModelState, batch) -> StepResult:
    """One optimizer update on a batch of (tagged source, target ids) pairs."""
    cfg = state.config
    if len(batch) > cfg.batch_size:
        raise ValueError(f"batch of {len(batch)} exceeds batch_size={cfg.batch_size}")
    state.net.train()
    loss, per_sentence = batch_loss(state, batch)
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite loss at step {state.step}")
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    lr = _noam_lr(cfg, state.step + 1)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()
    state.step += 1
    return StepResult(loss=float(loss.detach()),
                      per_sentence=per_sentence.detach().cpu().numpy(),
                      lr=lr)


def encode(state: ModelState, sentence: TaggedSentence) -> EncoderStates:
    """Encoder outputs for one sentence (pure function of state and input)."""
    return encode_batch(state, [sentence])[0]


def encode_batch(state: ModelState, sentences: list[TaggedSentence]) -> list[EncoderStates]:
    cfg = state.config
    rows = []
    for s in sentences:
        ids = list(s.full_ids)
        if len(ids) > cfg.max_len:
            raise ValueError(f"sentence of {len(ids)} tokens exceeds max_len={cfg.max_len}")
        rows.append(ids)
    if not rows:
        return []
    state.net.eval()
    with torch.no_grad():
        memory, _ = state.net.encode(_pad_batch(rows))
        out = memory.cpu().numpy()
    return [EncoderStates(vectors=out[i, : len(rows[i])].copy()) for i in range(len(rows))]


def translate(state: ModelState, tokens, src_tag: int, tgt_tag: int,
              max_out_len: int | None = None) -> list[int]:
    """Greedy argmax decoding until EOS or max_out_len. Deterministic."""
    return translate_batch(state, [tokens], src_tag, tgt_tag, max_out_len)[0]


def translate_batch(state: ModelState, token_seqs, src_tag: int, tgt_tag: int,
                    max_out_len: int | None = None) -> list[list[int]]:
    cfg = state.config
    if max_out_len is None:
        max_out_len = cfg.max_len - 2
    max_out_len = min(max_out_len, cfg.max_len + 6)
    if not token_seqs:
        return []
    rows = [[src_tag, tgt_tag] + [int(t) for t in seq] for seq in token_seqs]
    for r in rows:
        if len(r) > cfg.max_len:
            raise ValueError(f"sentence of {len(r)} tokens exceeds max_len={cfg.max_len}")
    state.net.eval()
    net = state.net
    b = len(rows)
    with torch.no_grad():
        memory, mem_mask = net.encode(_pad_batch(rows))
        caches = []
        for layer in net.dec_layers:
            mk, mv = layer.cross_attn.project_kv(memory)
            caches.append({"k": None, "v": None, "mk": mk, "mv": mv})
        last = torch.full((b, 1), BOS_ID, dtype=torch.long)
        done = [False] * b
        outputs: list[list[int]] = [[] for _ in range(b)]
        for t in range(max_out_len):
            x = net.embed(last) * net.scale + net.pos[t: t + 1]
            for layer, cache in zip(net.dec_layers, caches):
                x = layer.step(x, cache, mem_mask)
            step_logits = net.logits(net.dec_norm(x))[:, -1, :]
            next_ids = step_logits.argmax(dim=-1)
            last = next_ids.unsqueeze(1)
            for i in range(b):
                if done[i]:
                    continue
                nid = int(next_ids[i])
                if nid == EOS_ID:
                    done[i] = True
                else:
                    outputs[i].append(nid)
            if all(done):
                break
    return outputs


def save_checkpoint(state: ModelState, path) -> None:
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "config": asdict(state.config),
            "step": state.step,
            "model": state.net.state_dict(),
            "optimizer": state.optimizer.state_dict(),
        },
        path,
    )


def load_checkpoint(path) -> ModelState:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version in {path}")
    cfg_dict = dict(payload["config"])
    cfg_dict["adam_betas"] = tuple(cfg_dict["adam_betas"])
    config = ModelConfig(**cfg_dict)
    net = Seq2SeqNet(config)
    try:
        net.load_state_dict(payload["model"])
    except Exception as e:
        raise CheckpointError(f"checkpoint parameters do not match config: {e}") from e
    optimizer = torch.optim.Adam(net.parameters(), lr=1.0,
                                 betas=config.adam_betas, eps=config.adam_eps)
    optimizer.load_state_dict(payload["optimizer"])
    return ModelState(config=config, net=net, optimizer=optimizer, step=int(payload["step"]))
