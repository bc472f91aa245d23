"""Small encoder-decoder transformer with soft prompts.

Parameters are split into three groups that the trainer freezes or updates
independently:

* ``backbone`` - token/position embeddings, encoder and decoder stacks
* ``head``     - output projection (vocabulary logits, or M class logits)
* ``prompt``   - soft prompt vectors prepended to the embedded input
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import torch
import torch.nn.functional as F
from torch import nn


class Paradigm(str, Enum):
    PROMPTING = "Prompting"
    PROMPT_TUNING = "PromptTuning"
    MODEL_TUNING = "ModelTuning"
    PROMPT_PLUS_MODEL_TUNING = "PromptPlusModelTuning"
    M_WAY = "MWayClassification"

    @property
    def uses_prompt(self) -> bool:
        return self in (Paradigm.PROMPT_TUNING, Paradigm.PROMPT_PLUS_MODEL_TUNING)

    @property
    def generative(self) -> bool:
        return self is not Paradigm.M_WAY


@dataclass(frozen=True)
class ModelDims:
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    enc_layers: int = 2
    dec_layers: int = 2
    prompt_len: int = 20
    max_positions: int = 128

    def to_dict(self) -> dict:
        return asdict(self)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        assert d_model % n_heads == 0
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.d_head).transpose(1, 2)

    def forward(self, query, key, key_mask, causal: bool = False):
        # key_mask: (batch, key_len) bool, True where the key is a real token
        q, k, v = self._split(self.q(query)), self._split(self.k(key)), self._split(self.v(key))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        mask = key_mask[:, None, None, :]
        if causal:
            n = query.shape[1]
            tri = torch.ones(n, n, dtype=torch.bool, device=query.device).tril()
            mask = mask & tri[None, None]
        scores = scores.masked_fill(~mask, torch.finfo(scores.dtype).min)
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(query.shape)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.inner = nn.Linear(d_model, d_ff)
        self.outer = nn.Linear(d_ff, d_model)

    def forward(self, x):
        # gelu keeps the network smooth for finite-difference checks
        return self.outer(F.gelu(self.inner(x)))


class EncoderLayer(nn.Module):
    def __init__(self, dims: ModelDims):
        super().__init__()
        self.norm1 = nn.LayerNorm(dims.d_model)
        self.attn = MultiHeadAttention(dims.d_model, dims.n_heads)
        self.norm2 = nn.LayerNorm(dims.d_model)
        self.ff = FeedForward(dims.d_model, dims.d_ff)

    def forward(self, x, mask):
        h = self.norm1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ff(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, dims: ModelDims):
        super().__init__()
        self.norm1 = nn.LayerNorm(dims.d_model)
        self.self_attn = MultiHeadAttention(dims.d_model, dims.n_heads)
        self.norm2 = nn.LayerNorm(dims.d_model)
        self.cross_attn = MultiHeadAttention(dims.d_model, dims.n_heads)
        self.norm3 = nn.LayerNorm(dims.d_model)
        self.ff = FeedForward(dims.d_model, dims.d_ff)

    def forward(self, y, y_mask, memory, memory_mask):
        h = self.norm1(y)
        y = y + self.self_attn(h, h, y_mask, causal=True)
        y = y + self.cross_attn(self.norm2(y), memory, memory_mask)
        return y + self.ff(self.norm3(y))


class Backbone(nn.Module):
    """The pretrained-language-model part (embeddings, encoder, decoder)."""

    def __init__(self, vocab_size: int, dims: ModelDims):
        super().__init__()
        self.dims = dims
        self.embed = nn.Embedding(vocab_size, dims.d_model)
        self.enc_pos = nn.Embedding(dims.max_positions, dims.d_model)
        self.dec_pos = nn.Embedding(dims.max_positions, dims.d_model)
        self.encoder = nn.ModuleList(EncoderLayer(dims) for _ in range(dims.enc_layers))
        self.decoder = nn.ModuleList(DecoderLayer(dims) for _ in range(dims.dec_layers))
        self.enc_norm = nn.LayerNorm(dims.d_model)
        self.dec_norm = nn.LayerNorm(dims.d_model)
        nn.init.normal_(self.embed.weight, std=1.0)
        nn.init.normal_(self.enc_pos.weight, std=0.1)
        nn.init.normal_(self.dec_pos.weight, std=0.1)

    @property
    def vocab_size(self) -> int:
        return self.embed.num_embeddings

    def encode(self, input_ids, input_mask, prompt: torch.Tensor | None = None):
        """Encoder states and mask; `prompt` (P x d) is prepended after embedding."""
        n = input_ids.shape[1]
        x = self.embed(input_ids) + self.enc_pos(torch.arange(n, device=input_ids.device))[None]
        mask = input_mask
        if prompt is not None:
            b = input_ids.shape[0]
            x = torch.cat([prompt[None].expand(b, -1, -1), x], dim=1)
            mask = torch.cat([torch.ones(b, prompt.shape[0], dtype=torch.bool, device=mask.device), mask], dim=1)
        for layer in self.encoder:
            x = layer(x, mask)
        return self.enc_norm(x), mask

    def decode(self, decoder_ids, decoder_mask, memory, memory_mask):
        n = decoder_ids.shape[1]
        y = self.embed(decoder_ids) + self.dec_pos(torch.arange(n, device=decoder_ids.device))[None]
        for layer in self.decoder:
            y = layer(y, decoder_mask, memory, memory_mask)
        return self.dec_norm(y)

    def resize_vocab(self, new_size: int, generator: torch.Generator | None = None) -> None:
        """Append freshly initialised embedding rows for tokens added after pretraining."""
        old = self.embed.weight.data
        if new_size <= old.shape[0]:
            return
        extra = torch.randn(new_size - old.shape[0], old.shape[1], generator=generator, dtype=old.dtype)
        self.embed = nn.Embedding(new_size, old.shape[1], dtype=old.dtype)
        self.embed.weight.data.copy_(torch.cat([old, extra]))


class SectorModel(nn.Module):
    """Backbone + output head + soft prompt for one paradigm."""

    def __init__(self, backbone: Backbone, paradigm: Paradigm, n_outputs: int, generator: torch.Generator | None = None):
        super().__init__()
        self.paradigm = Paradigm(paradigm)
        self.backbone = backbone
        dims = backbone.dims
        dtype = backbone.embed.weight.dtype
        self.head = nn.Linear(dims.d_model, n_outputs, bias=False, dtype=dtype)
        self.prompt = nn.Parameter(torch.empty(dims.prompt_len, dims.d_model, dtype=dtype))
        with torch.no_grad():
            bound = 1.0 / math.sqrt(dims.d_model)
            self.head.weight.copy_((torch.rand(self.head.weight.shape, generator=generator, dtype=dtype) * 2 - 1) * bound)
            self.prompt.copy_(torch.randn(self.prompt.shape, generator=generator, dtype=dtype) * 0.5)

    def groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "backbone": list(self.backbone.parameters()),
            "head": list(self.head.parameters()),
            "prompt": [self.prompt],
        }

    def _encode(self, input_ids, input_mask):
        prompt = self.prompt if self.paradigm.uses_prompt else None
        return self.backbone.encode(input_ids, input_mask, prompt)

    def logits(self, input_ids, input_mask, decoder_ids=None, decoder_mask=None):
        memory, memory_mask = self._encode(input_ids, input_mask)
        if not self.paradigm.generative:
            m = memory_mask.to(memory.dtype)[..., None]
            pooled = (memory * m).sum(1) / m.sum(1)
            return self.head(pooled)
        states = self.backbone.decode(decoder_ids, decoder_mask, memory, memory_mask)
        return self.head(states)

    def loss(self, batch) -> tuple[torch.Tensor, torch.Tensor]:
        """Mean over samples of the per-sample mean token cross entropy.

        Returns (loss, logits).  For the M-way paradigm the target is a class
        index and the loss is ordinary one-hot cross entropy.
        """
        if not self.paradigm.generative:
            logits = self.logits(batch.input_ids, batch.input_mask)
            return F.cross_entropy(logits, batch.labels), logits
        logits = self.logits(batch.input_ids, batch.input_mask, batch.decoder_ids, batch.decoder_mask)
        tok = F.cross_entropy(logits.transpose(1, 2), batch.target_ids, reduction="none")
        m = batch.decoder_mask.to(tok.dtype)
        per_sample = (tok * m).sum(1) / m.sum(1)
        return per_sample.mean(), logits

    @torch.no_grad()
    def generate(self, input_ids, input_mask, max_len: int, eos_id: int, pad_id: int = 0) -> list[list[int]]:
        """Greedy decoding; each row stops at end-of-sequence or `max_len` tokens."""
        memory, memory_mask = self._encode(input_ids, input_mask)
        b = input_ids.shape[0]
        dec = torch.full((b, 1), pad_id, dtype=torch.long)
        done = torch.zeros(b, dtype=torch.bool)
        out: list[list[int]] = [[] for _ in range(b)]
        for _ in range(max_len):
            states = self.backbone.decode(dec, torch.ones_like(dec, dtype=torch.bool), memory, memory_mask)
            nxt = self.head(states[:, -1]).argmax(-1)
            for i in range(b):
                if not done[i]:
                    if nxt[i].item() == eos_id:
                        done[i] = True
                    else:
                        out[i].append(int(nxt[i]))
            if bool(done.all()):
                break
            dec = torch.cat([dec, nxt[:, None]], dim=1)
        return out

    @torch.no_grad()
    def classify(self, input_ids, input_mask) -> list[int]:
        return self.logits(input_ids, input_mask).argmax(-1).tolist()
