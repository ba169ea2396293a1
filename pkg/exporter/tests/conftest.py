import json
import os

import pytest
import torch

os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")
os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

WORDS = [
    "the", "a", "kernel", "cache", "memory", "gradient", "descent", "converges",
    "slowly", "fast", "bread", "sourdough", "ferment", "music", "tempo", "chord",
    "goal", "match", "league", "defender", "stack", "heap", "pointer", "loaf",
    "crust", "rhythm", "melody", "striker", "season", "training", "model",
    "vector", "token", "batch", "layer", "mask", "pool", "norm", "line", "order",
]


@pytest.fixture(scope="session")
def encoder_dir(tmp_path_factory):
    """A fully offline encoder checkpoint: random weights, tiny vocab."""
    from transformers import BertConfig, BertModel, BertTokenizer
    from transformers.utils import logging as hf_logging

    hf_logging.set_verbosity_error()
    hf_logging.disable_progress_bar()

    d = tmp_path_factory.mktemp("encoder")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + WORDS
    (d / "vocab.txt").write_text("\n".join(vocab) + "\n")
    BertTokenizer(str(d / "vocab.txt")).save_pretrained(str(d))

    cfg = BertConfig(
        vocab_size=len(vocab),
        hidden_size=768,
        num_hidden_layers=1,
        num_attention_heads=12,
        intermediate_size=1024,
        max_position_embeddings=64,
    )
    torch.manual_seed(7)
    BertModel(cfg).save_pretrained(str(d))
    return str(d)


def write_jsonl(path, texts):
    with open(path, "w", encoding="utf-8") as f:
        for t in texts:
            f.write(json.dumps({"text": t}) + "\n")
    return str(path)


@pytest.fixture()
def make_corpus(tmp_path):
    def _make(texts, name="docs.jsonl"):
        return write_jsonl(tmp_path / name, texts)

    return _make
