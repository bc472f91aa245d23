"""Checkpoint files for fine-tuned models and the pretrained backbone."""

from __future__ import annotations

import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import torch

from sectorgen.model.net import Backbone, ModelDims, Paradigm, SectorModel
from sectorgen.model.vocab import Vocabulary
from sectorgen.persistence import atomic_write_bytes, atomic_write_text

FORMAT_VERSION = 1


class CheckpointError(IOError):
    pass


def _content_hash(header: dict, state: dict[str, torch.Tensor]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(header, sort_keys=True).encode("utf-8"))
    for name in sorted(state):
        h.update(name.encode("utf-8"))
        h.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()[:16]


@dataclass
class Checkpoint:
    model: SectorModel
    vocab: Vocabulary
    labels: list[str]
    config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "kind": "sector-model",
            "paradigm": self.model.paradigm.value,
            "dims": self.model.backbone.dims.to_dict(),
            "vocab": self.vocab.to_list(),
            "labels": list(self.labels),
            "config": self.config,
            "meta": self.meta,
        }

    @property
    def version(self) -> str:
        return _content_hash(self.header(), self.model.state_dict())

    def save(self, path: str | os.PathLike) -> str:
        buf = io.BytesIO()
        torch.save({"header": self.header(), "state": self.model.state_dict()}, buf)
        atomic_write_bytes(path, buf.getvalue())
        return self.version

    @classmethod
    def load(cls, path: str | os.PathLike, expected_version: str | None = None) -> "Checkpoint":
        """Rebuild a checkpoint; `expected_version` (e.g. the registry file name) is verified."""
        try:
            blob = torch.load(Path(path), map_location="cpu", weights_only=True)
            header, state = blob["header"], blob["state"]
        except FileNotFoundError:
            raise CheckpointError(f"checkpoint {path} not found") from None
        except Exception as exc:
            raise CheckpointError(f"checkpoint {path} is unreadable: {exc}") from None
        if header.get("kind") != "sector-model" or header.get("format") != FORMAT_VERSION:
            raise CheckpointError(f"{path} is not a sector-model checkpoint")
        dims = ModelDims(**header["dims"])
        vocab = Vocabulary.from_list(header["vocab"])
        dtype = state["backbone.embed.weight"].dtype
        backbone = Backbone(state["backbone.embed.weight"].shape[0], dims).to(dtype)
        paradigm = Paradigm(header["paradigm"])
        model = SectorModel(backbone, paradigm, state["head.weight"].shape[0])
        model.load_state_dict(state)
        model.eval()
        ckpt = cls(model, vocab, header["labels"], header["config"], header["meta"])
        if expected_version is not None and ckpt.version != expected_version:
            raise CheckpointError(f"{path}: content hash {ckpt.version} does not match version {expected_version}")
        return ckpt


def save_backbone(path: str | os.PathLike, backbone: Backbone, vocab: Vocabulary, meta: dict | None = None) -> str:
    header = {"format": FORMAT_VERSION, "kind": "backbone", "dims": backbone.dims.to_dict(),
              "vocab": vocab.to_list(), "meta": meta or {}}
    buf = io.BytesIO()
    torch.save({"header": header, "state": backbone.state_dict()}, buf)
    atomic_write_bytes(path, buf.getvalue())
    return _content_hash(header, backbone.state_dict())


def load_backbone(path: str | os.PathLike) -> tuple[Backbone, Vocabulary, dict]:
    try:
        blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"pretrained backbone {path} not found; run `pretrain` first") from None
    header, state = blob["header"], blob["state"]
    if header.get("kind") != "backbone":
        raise CheckpointError(f"{path} is not a backbone checkpoint")
    backbone = Backbone(state["embed.weight"].shape[0], ModelDims(**header["dims"]))
    backbone.load_state_dict(state)
    return backbone, Vocabulary.from_list(header["vocab"]), header["meta"]


class ModelRegistry:
    """Directory of ``<version>.ckpt`` files plus a ``CURRENT`` pointer."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def path_for(self, version: str) -> Path:
        return self.root / f"{version}.ckpt"

    def versions(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(p.stem for p in self.root.glob("*.ckpt"))

    def current(self) -> str | None:
        ptr = self.root / "CURRENT"
        if not ptr.exists():
            return None
        version = ptr.read_text(encoding="utf-8").strip()
        return version or None

    def release(self, ckpt: Checkpoint) -> str:
        self.root.mkdir(parents=True, exist_ok=True)
        version = ckpt.save(self.path_for(ckpt.version))
        # pointer is only moved once the checkpoint file is in place
        atomic_write_text(self.root / "CURRENT", version + "\n")
        return version

    def load(self, version: str | None = None) -> Checkpoint:
        version = version or self.current()
        if version is None:
            raise CheckpointError(f"no released model in {self.root}")
        return Checkpoint.load(self.path_for(version), expected_version=version)
