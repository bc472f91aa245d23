"""Pretraining surrogate, the two-phase prompt + model tuning loop, and gradient checks."""

from __future__ import annotations

import copy
import hashlib
import logging
import math
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

from sectorgen.model.net import Backbone, ModelDims, Paradigm, SectorModel
from sectorgen.model.vocab import N_SENTINELS, Vocabulary
from sectorgen.text import normalize

MAX_INPUT_LEN = 96

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    T: int = 3000
    t_prime: int = 300
    eps1: float = 0.1
    eps2: float = 5e-3
    warmup1: int = 100
    warmup2: int = 150
    batch_size: int = 50
    seed: int = 0
    paradigm: Paradigm = Paradigm.PROMPT_PLUS_MODEL_TUNING
    patience: int = 5
    eval_every: int = 100
    max_gen_len: int = 8

    def __post_init__(self):
        object.__setattr__(self, "paradigm", Paradigm(self.paradigm))
        if not 0 <= self.t_prime <= self.T:
            raise ValueError(f"t_prime must lie in [0, T], got {self.t_prime} with T={self.T}")
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("learning rates must be positive")
        if self.warmup1 > self.t_prime:
            raise ValueError("warmup1 must not exceed t_prime")
        if self.batch_size < 1 or self.eval_every < 1 or self.patience < 1:
            raise ValueError("batch_size, eval_every and patience must be >= 1")

    @classmethod
    def production_scale(cls, **overrides) -> "TrainConfig":
        """Hyperparameters of the original large-model production run."""
        base = dict(T=1_000_000, t_prime=3_000, eps1=0.1, eps2=5e-3, warmup1=1_000, warmup2=1_500, batch_size=50)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["paradigm"] = self.paradigm.value
        return d


def lr_at(step: int, config: TrainConfig) -> float:
    """Learning rate for 1-based `step`: linear warmup to eps1, then a second warmup to eps2 after t_prime."""
    if step <= config.t_prime:
        if config.warmup1 > 0 and step < config.warmup1:
            return config.eps1 * (step / config.warmup1)
        return config.eps1
    since = step - config.t_prime
    if config.warmup2 > 0 and since < config.warmup2:
        return config.eps2 * (since / config.warmup2)
    return config.eps2


def schedule_for(config: TrainConfig) -> TrainConfig:
    """Express each paradigm as the two-phase schedule with a fitting freeze horizon.

    Model tuning (and the M-way head) skip the prompt phase entirely, prompting
    and prompt tuning never leave it.
    """
    p = config.paradigm
    if p in (Paradigm.MODEL_TUNING, Paradigm.M_WAY):
        return replace(config, t_prime=0, warmup1=0)
    if p in (Paradigm.PROMPTING, Paradigm.PROMPT_TUNING):
        return replace(config, t_prime=config.T, warmup1=min(config.warmup1, config.T))
    return config


def updates_backbone(paradigm: Paradigm, step: int, t_prime: int) -> bool:
    if paradigm in (Paradigm.PROMPTING, Paradigm.PROMPT_TUNING):
        return False
    return step > t_prime


# ---------------------------------------------------------------------------
# batching


@dataclass
class Example:
    input_text: str
    target_text: str


@dataclass
class Batch:
    input_ids: torch.Tensor
    input_mask: torch.Tensor
    decoder_ids: torch.Tensor | None = None
    decoder_mask: torch.Tensor | None = None
    target_ids: torch.Tensor | None = None
    labels: torch.Tensor | None = None


def _pad(seqs: Sequence[Sequence[int]], pad: int = 0) -> tuple[torch.Tensor, torch.Tensor]:
    n = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), n), pad, dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    mask = torch.arange(n)[None] < torch.tensor([len(s) for s in seqs])[:, None]
    return ids, mask


def make_batch(inputs: Sequence[Sequence[int]], targets: Sequence[Sequence[int]] | None = None,
               labels: Sequence[int] | None = None, vocab_size: int | None = None) -> Batch:
    if vocab_size is not None:
        for seq in list(inputs) + list(targets or []):
            for t in seq:
                if t < 0 or t >= vocab_size:
                    raise IndexError(f"token index {t} out of range for vocabulary of size {vocab_size}")
    input_ids, input_mask = _pad(inputs)
    batch = Batch(input_ids, input_mask)
    if targets is not None:
        if any(len(t) == 0 for t in targets):
            raise ValueError("empty target sequence")
        target_ids, decoder_mask = _pad(targets)
        decoder_ids = torch.zeros_like(target_ids)
        decoder_ids[:, 1:] = target_ids[:, :-1]
        batch.target_ids = target_ids
        batch.decoder_ids = decoder_ids.masked_fill(~decoder_mask, 0)
        batch.decoder_mask = decoder_mask
    if labels is not None:
        batch.labels = torch.tensor(list(labels), dtype=torch.long)
    return batch


class Encoded:
    """Examples tokenized once against a vocabulary (and a label list for M-way)."""

    def __init__(self, examples: Sequence[Example], vocab: Vocabulary, labels: Sequence[str] | None = None,
                 max_input_len: int = MAX_INPUT_LEN):
        self.examples = list(examples)
        self.inputs = [vocab.encode(e.input_text)[:max_input_len] for e in self.examples]
        self.targets = [vocab.encode(e.target_text, add_eos=True) for e in self.examples]
        self.labels = None
        if labels is not None:
            index = {normalize(s): i for i, s in enumerate(labels)}
            self.labels = [index[normalize(e.target_text)] for e in self.examples]

    def __len__(self) -> int:
        return len(self.examples)

    def batch(self, idx: Sequence[int], generative: bool) -> Batch:
        inputs = [self.inputs[i] for i in idx]
        if generative:
            return make_batch(inputs, targets=[self.targets[i] for i in idx])
        return make_batch(inputs, labels=[self.labels[i] for i in idx])


# ---------------------------------------------------------------------------
# hashing / evaluation helpers


def tensor_hash(params: Sequence[torch.Tensor]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def group_hashes(model: SectorModel) -> dict[str, str]:
    return {name: tensor_hash(ps) for name, ps in model.groups().items()}


def predict_texts(model: SectorModel, vocab: Vocabulary, inputs: Sequence[Sequence[int]],
                  max_len: int = 8, labels: Sequence[str] | None = None, batch_size: int = 128) -> list[str]:
    """Generated sector text (or the argmax label name for M-way) for each tokenized input."""
    model.eval()
    out: list[str] = []
    for start in range(0, len(inputs), batch_size):
        chunk = inputs[start : start + batch_size]
        ids, mask = _pad(chunk)
        if model.paradigm.generative:
            for seq in model.generate(ids, mask, max_len, vocab.eos_id, vocab.pad_id):
                out.append(vocab.decode(seq))
        else:
            out.extend(labels[i] for i in model.classify(ids, mask))
    return out


def accuracy(model: SectorModel, vocab: Vocabulary, data: Encoded, max_len: int = 8,
             labels: Sequence[str] | None = None) -> float:
    if len(data) == 0:
        return 0.0
    preds = predict_texts(model, vocab, data.inputs, max_len, labels)
    hits = sum(normalize(p) == normalize(e.target_text) for p, e in zip(preds, data.examples))
    return hits / len(data)


# ---------------------------------------------------------------------------
# pretraining surrogate


def span_corrupt(ids: Sequence[int], vocab: Vocabulary, rng: random.Random,
                 density: float = 0.15, mean_span: float = 3.0) -> tuple[list[int], list[int]]:
    """Replace random contiguous spans with sentinels; the target lists the dropped spans."""
    n = len(ids)
    if n < 2:
        return list(ids), [vocab.sentinel_id(0), vocab.eos_id]
    n_noise = max(1, round(n * density))
    n_spans = max(1, min(N_SENTINELS, round(n_noise / mean_span), n // 2))
    span_len = max(1, math.ceil(n_noise / n_spans))
    starts = sorted(rng.sample(range(n), n_spans))
    source: list[int] = []
    target: list[int] = []
    pos = 0
    for k, s in enumerate(starts):
        if s < pos:
            continue
        end = min(s + span_len, n, starts[k + 1] if k + 1 < len(starts) else n)
        source.extend(ids[pos:s])
        source.append(vocab.sentinel_id(k))
        target.append(vocab.sentinel_id(k))
        target.extend(ids[s:end])
        pos = end
    source.extend(ids[pos:])
    target.append(vocab.eos_id)
    return source, target


def pretrain_loss(backbone: Backbone, batch: Batch) -> torch.Tensor:
    """Span-corruption loss with the output projection tied to the token embeddings."""
    memory, memory_mask = backbone.encode(batch.input_ids, batch.input_mask)
    states = backbone.decode(batch.decoder_ids, batch.decoder_mask, memory, memory_mask)
    logits = states @ backbone.embed.weight.T / math.sqrt(backbone.dims.d_model)
    tok = F.cross_entropy(logits.transpose(1, 2), batch.target_ids, reduction="none")
    m = batch.decoder_mask.to(tok.dtype)
    return ((tok * m).sum(1) / m.sum(1)).mean()


@dataclass
class PretrainResult:
    backbone: Backbone
    losses: list[float]


def init_backbone(vocab_size: int, dims: ModelDims, seed: int, dtype=torch.float32) -> Backbone:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Backbone(vocab_size, dims).to(dtype)


def pretrain(corpus: Sequence[Sequence[int]], vocab: Vocabulary, steps: int, seed: int = 0,
             dims: ModelDims = ModelDims(), batch_size: int = 32, lr: float = 3e-3,
             backbone: Backbone | None = None) -> PretrainResult:
    """Train the backbone with span corruption on unlabeled token sequences."""
    corpus = [list(s) for s in corpus if len(s) > 0]
    if not corpus:
        raise ValueError("pretraining corpus is empty")
    if backbone is None:
        backbone = init_backbone(len(vocab), dims, seed)
    losses: list[float] = []
    if steps <= 0:
        return PretrainResult(backbone, losses)
    rng = random.Random(seed)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        opt = torch.optim.Adam(backbone.parameters(), lr=lr)
        backbone.train()
        for _ in range(steps):
            pairs = [span_corrupt(corpus[rng.randrange(len(corpus))], vocab, rng) for _ in range(batch_size)]
            batch = make_batch([p[0] for p in pairs], [p[1] for p in pairs])
            loss = pretrain_loss(backbone, batch)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite pretraining loss at step {len(losses) + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
    return PretrainResult(backbone, losses)


# ---------------------------------------------------------------------------
# fine-tuning (two-phase prompt + model tuning)


@dataclass
class TrainResult:
    model: SectorModel
    history: list[dict] = field(default_factory=list)
    best_step: int = 0
    best_accuracy: float | None = None
    stopped_early: bool = False


def build_model(backbone: Backbone, paradigm: Paradigm, n_outputs: int, seed: int) -> SectorModel:
    gen = torch.Generator().manual_seed(seed + 1)
    return SectorModel(copy.deepcopy(backbone), paradigm, n_outputs, generator=gen)


def train(train_set: Sequence[Example], validation: Sequence[Example], config: TrainConfig, backbone: Backbone,
          vocab: Vocabulary, labels: Sequence[str] | None = None, init: SectorModel | None = None,
          on_step: Callable[[int, SectorModel], None] | None = None) -> TrainResult:
    """Mini-batch SGD over the three parameter groups with the phase-dependent freeze.

    Steps 1..t' update only the head and the soft prompt at the phase-one rate;
    afterwards the backbone joins at the phase-two rate (for paradigms that
    permit backbone updates).  The best validation checkpoint is returned.
    """
    if not train_set or not validation:
        raise ValueError("training and validation sets must be non-empty")
    paradigm = config.paradigm
    if not paradigm.generative and labels is None:
        raise ValueError("M-way classification needs the label list")
    sched = schedule_for(config)

    if init is not None:
        model = copy.deepcopy(init)
        model.paradigm = paradigm
    else:
        n_out = len(vocab) if paradigm.generative else len(labels)
        model = build_model(backbone, paradigm, n_out, config.seed)
    if paradigm.generative and model.backbone.vocab_size < len(vocab):
        raise ValueError("backbone vocabulary is smaller than the training vocabulary")

    data = Encoded(train_set, vocab, None if paradigm.generative else labels)
    val = Encoded(validation, vocab, None if paradigm.generative else labels)
    result = TrainResult(model)
    if config.T == 0:
        return result

    groups = model.groups()
    train_head = True
    train_prompt = paradigm.uses_prompt
    for p in groups["prompt"]:
        p.requires_grad_(train_prompt)

    def evaluate(step: int) -> float:
        acc = accuracy(model, vocab, val, config.max_gen_len, labels)
        model.train()
        return acc

    gen = torch.Generator().manual_seed(config.seed)
    order: list[int] = []
    best_state = copy.deepcopy(model.state_dict())
    best_acc = -1.0
    stale = 0
    model.train()
    for step in range(1, config.T + 1):
        backbone_on = updates_backbone(paradigm, step, sched.t_prime)
        for p in groups["backbone"]:
            p.requires_grad_(backbone_on)
        if len(order) < config.batch_size:
            order.extend(torch.randperm(len(data), generator=gen).tolist())
        idx, order = order[: config.batch_size], order[config.batch_size :]
        batch = data.batch(idx, paradigm.generative)
        loss, _ = model.loss(batch)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss.item()} at step {step} ({paradigm.value})")
        model.zero_grad(set_to_none=True)
        loss.backward()
        lr = lr_at(step, sched)
        with torch.no_grad():
            active = list(groups["head"]) if train_head else []
            if train_prompt:
                active += groups["prompt"]
            if backbone_on:
                active += groups["backbone"]
            for p in active:
                if p.grad is not None:
                    p.add_(p.grad, alpha=-lr)
        entry = {"step": step, "loss": loss.item(), "lr": lr}
        if on_step is not None:
            on_step(step, model)
        if step % config.eval_every == 0 or step == config.T:
            acc = evaluate(step)
            entry["val_accuracy"] = acc
            if acc > best_acc:
                best_acc, result.best_step, stale = acc, step, 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                stale += 1
            if step == sched.t_prime and paradigm is Paradigm.PROMPT_PLUS_MODEL_TUNING:
                # the joint phase gets its own patience budget
                stale = 0
            if stale >= config.patience and (step > sched.t_prime or not updates_backbone(paradigm, config.T, sched.t_prime)):
                result.history.append(entry)
                result.stopped_early = True
                log.info("early stop at step %d (best %.4f at %d)", step, best_acc, result.best_step)
                break
        result.history.append(entry)

    model.load_state_dict(best_state)
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    result.best_accuracy = best_acc
    return result


# ---------------------------------------------------------------------------
# gradient checking


def gradient_check(model: SectorModel, batch: Batch, h: float = 1e-5, n_coords: int = 12, seed: int = 0,
                   floor: float = 1e-6) -> dict[str, float]:
    """Max relative error between autograd and central differences, per parameter group.

    The model should be in double precision.  Relative error is
    |a - n| / max(|a|, |n|, floor).  Coordinates are drawn from those whose
    analytic gradient exceeds `floor` (so the check is never vacuous), plus a
    few zero-gradient ones, which must also come out near zero numerically.
    """
    model.eval()
    params = model.groups()
    for ps in params.values():
        for p in ps:
            p.requires_grad_(True)
    model.zero_grad(set_to_none=True)
    loss, _ = model.loss(batch)
    loss.backward()
    analytic = {name: [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in ps]
                for name, ps in params.items()}
    rng = random.Random(seed)
    errors: dict[str, float] = {}
    with torch.no_grad():
        for name, ps in params.items():
            flat = torch.cat([g.reshape(-1) for g in analytic[name]])
            live = torch.nonzero(flat.abs() > floor).flatten().tolist()
            dead = torch.nonzero(flat.abs() <= floor).flatten().tolist()
            picks = rng.sample(live, min(n_coords, len(live))) + rng.sample(dead, min(max(1, n_coords // 4), len(dead)))
            sizes = [p.numel() for p in ps]
            worst = 0.0
            for j in picks:
                k = 0
                while j >= sizes[k]:
                    j -= sizes[k]
                    k += 1
                view = ps[k].view(-1)
                orig = view[j].item()
                view[j] = orig + h
                plus = model.loss(batch)[0].item()
                view[j] = orig - h
                minus = model.loss(batch)[0].item()
                view[j] = orig
                numeric = (plus - minus) / (2 * h)
                a = analytic[name][k].view(-1)[j].item()
                worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
            errors[name] = worst
    model.zero_grad(set_to_none=True)
    return errors
