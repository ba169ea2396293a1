"""Encode documents with a transformer and export the embedding matrix.

One document per input JSONL line, one output row per line, in line order.
A document embedding is the mean of the encoder's last hidden states over
the non-padding positions, L2-normalized. Long documents are truncated at
max_length; there is no sliding window.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .writer import EmbeddingWriter

log = logging.getLogger("icpe_export")


class ExportError(RuntimeError):
    pass


@dataclass
class ExportJob:
    model: str
    input_path: str | Path
    output_path: str | Path
    batch_size: int = 32
    max_length: int = 512
    device: str = "auto"
    dim: int | None = None  # expected hidden size; None accepts whatever the model has

    def __post_init__(self):
        if self.batch_size < 1:
            raise ExportError(f"batch_size must be positive, got {self.batch_size}")
        if self.max_length < 2:
            raise ExportError(f"max_length must be at least 2, got {self.max_length}")
        if self.dim is not None and self.dim < 1:
            raise ExportError(f"dim must be positive, got {self.dim}")


def read_texts(path):
    """Texts from a JSONL file with a 'text' field, in line order."""
    texts = []
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    raise ExportError(f"{path}: line {lineno} is blank")
                try:
                    doc = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ExportError(
                        f"{path}: line {lineno} is not valid JSON: {exc}"
                    ) from exc
                if not isinstance(doc, dict) or "text" not in doc:
                    raise ExportError(f"{path}: line {lineno} has no 'text' field")
                texts.append(str(doc["text"]))
    except OSError as exc:
        raise ExportError(f"cannot read {path}: {exc}") from exc
    if not texts:
        raise ExportError(f"{path}: no documents")
    return texts


def resolve_device(device):
    if device == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    try:
        dev = torch.device(device)
        torch.empty(0, device=dev)  # fails fast on unavailable backends
    except (RuntimeError, AssertionError, ValueError) as exc:
        raise ExportError(f"device {device!r} is unavailable: {exc}") from exc
    return dev


def load_encoder(model_id, device="auto"):
    """Tokenizer and encoder for a model name or local checkpoint directory."""
    from transformers import AutoModel, AutoTokenizer

    dev = resolve_device(device)
    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModel.from_pretrained(model_id)
    except Exception as exc:
        raise ExportError(f"cannot load encoder {model_id!r}: {exc}") from exc
    model.eval()
    model.to(dev)
    return tokenizer, model, dev


def _encode_batch(texts, tokenizer, model, device, max_length):
    enc = tokenizer(
        texts,
        padding=True,
        truncation=True,
        max_length=max_length,
        return_tensors="pt",
    ).to(device)
    with torch.no_grad():
        hidden = model(**enc).last_hidden_state
    mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
    pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
    pooled = torch.nn.functional.normalize(pooled, dim=1)
    return pooled.cpu().numpy().astype(np.float32)


def encode_texts(texts, tokenizer, model, device, batch_size=32, max_length=512):
    """Full embedding matrix for a list of texts, row i for text i."""
    parts = [
        _encode_batch(texts[lo : lo + batch_size], tokenizer, model, device, max_length)
        for lo in range(0, len(texts), batch_size)
    ]
    return np.vstack(parts)


def export_embeddings(job: ExportJob):
    """Run the job end to end. Returns (row count, dim) of the written file."""
    texts = read_texts(job.input_path)
    tokenizer, model, device = load_encoder(job.model, job.device)
    hidden = int(model.config.hidden_size)
    if job.dim is not None and job.dim != hidden:
        raise ExportError(
            f"encoder hidden size {hidden} does not match declared dim {job.dim}"
        )
    log.info(
        "encoding %d documents with %s (hidden %d) on %s",
        len(texts), job.model, hidden, device,
    )
    with EmbeddingWriter(job.output_path, len(texts), hidden) as writer:
        for lo in range(0, len(texts), job.batch_size):
            batch = texts[lo : lo + job.batch_size]
            writer.append(_encode_batch(batch, tokenizer, model, device, job.max_length))
            log.info("  %d/%d", min(lo + job.batch_size, len(texts)), len(texts))
    return len(texts), hidden
