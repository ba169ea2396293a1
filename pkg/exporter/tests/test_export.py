import json
import struct
import subprocess
import sys
import warnings

import numpy as np
import pytest

from icpe_export import (
    EmbeddingWriter,
    ExportError,
    ExportJob,
    WriterError,
    encode_texts,
    export_embeddings,
    load_encoder,
    read_texts,
    write_matrix,
)
from icpe_export.cli import main

from conftest import WORDS


def parse_file(path):
    """Independent byte-level parse: (count, dim, flags, rows)."""
    raw = open(path, "rb").read()
    assert raw[:4] == b"ICPE"
    (version,) = struct.unpack("<I", raw[4:8])
    assert version == 1
    count, dim, flags = struct.unpack("<QII", raw[8:24])
    rows = np.frombuffer(raw[24:], dtype="<f4").reshape(count, dim)
    return count, dim, flags, rows


def corpus_texts(n, seed=0, dups=()):
    rng = np.random.default_rng(seed)
    texts = [
        " ".join(rng.choice(WORDS, size=rng.integers(3, 13)))
        for _ in range(n)
    ]
    for i, j in dups:
        texts[j] = texts[i]
    return texts


# --- writer ------------------------------------------------------------------


def test_write_matrix_roundtrip(tmp_path):
    rows = np.eye(3, 4, dtype=np.float32)
    out = tmp_path / "m.icpe"
    write_matrix(rows, out)
    count, dim, flags, got = parse_file(out)
    assert (count, dim, flags) == (3, 4, 1)
    assert np.array_equal(got, rows)


def test_writer_rejects_wrong_dim(tmp_path):
    with pytest.raises(WriterError, match="does not match dim"):
        with EmbeddingWriter(tmp_path / "m.icpe", 2, 4) as w:
            w.append(np.zeros((2, 3), dtype=np.float32))


def test_writer_rejects_overflow_and_nonfinite(tmp_path):
    w = EmbeddingWriter(tmp_path / "m.icpe", 1, 2)
    with pytest.raises(WriterError, match="more rows than declared"):
        w.append(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(WriterError, match="non-finite"):
        w.append(np.array([[np.nan, 0.0]], dtype=np.float32))


def test_writer_underfull_close_raises(tmp_path):
    w = EmbeddingWriter(tmp_path / "m.icpe", 3, 2)
    w.append(np.zeros((1, 2), dtype=np.float32))
    with pytest.raises(WriterError, match="wrote 1 of 3"):
        w.close()


# --- input handling ----------------------------------------------------------


def test_read_texts_line_order(make_corpus):
    path = make_corpus(["alpha", "beta", "gamma"])
    assert read_texts(path) == ["alpha", "beta", "gamma"]


@pytest.mark.parametrize(
    "line,msg",
    [
        ("not json", "line 2 is not valid JSON"),
        ('{"body": "x"}', "line 2 has no 'text' field"),
        ("", "line 2 is blank"),
    ],
)
def test_read_texts_names_bad_line(tmp_path, line, msg):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"text": "ok"}\n' + line + "\n")
    with pytest.raises(ExportError, match=msg):
        read_texts(path)


def test_read_texts_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(ExportError, match="no documents"):
        read_texts(path)


# --- encoding and export -----------------------------------------------------


def test_header_contract_ten_docs(encoder_dir, make_corpus, tmp_path):
    path = make_corpus(corpus_texts(10))
    out = tmp_path / "emb.icpe"
    count, dim = export_embeddings(
        ExportJob(model=encoder_dir, input_path=path, output_path=out, batch_size=4)
    )
    assert (count, dim) == (10, 768)
    fcount, fdim, flags, rows = parse_file(out)
    assert (fcount, fdim) == (10, 768)
    assert flags & 1, "normalized flag not set"
    assert rows.shape == (10, 768)


def test_row_norms_unit(encoder_dir, make_corpus, tmp_path):
    path = make_corpus(corpus_texts(17, seed=3))
    out = tmp_path / "emb.icpe"
    export_embeddings(ExportJob(model=encoder_dir, input_path=path, output_path=out))
    _, _, _, rows = parse_file(out)
    norms = np.linalg.norm(rows, axis=1)
    assert np.abs(norms - 1.0).max() <= 1e-4


def test_duplicate_texts_near_identical(encoder_dir, make_corpus, tmp_path):
    path = make_corpus(corpus_texts(8, seed=5, dups=[(0, 6), (2, 7)]))
    out = tmp_path / "emb.icpe"
    export_embeddings(
        ExportJob(model=encoder_dir, input_path=path, output_path=out, batch_size=3)
    )
    _, _, _, rows = parse_file(out)
    assert float(rows[0] @ rows[6]) >= 0.999
    assert float(rows[2] @ rows[7]) >= 0.999


def test_row_order_matches_line_order(encoder_dir, make_corpus, tmp_path):
    texts = corpus_texts(9, seed=11)
    path = make_corpus(texts)
    out = tmp_path / "emb.icpe"
    export_embeddings(
        ExportJob(model=encoder_dir, input_path=path, output_path=out, batch_size=4)
    )
    _, _, _, rows = parse_file(out)
    tok, model, dev = load_encoder(encoder_dir, "cpu")
    for i, text in enumerate(texts):
        single = encode_texts([text], tok, model, dev)[0]
        assert np.allclose(rows[i], single, atol=1e-5), f"row {i} is not line {i}"


def test_batch_size_does_not_change_rows(encoder_dir, make_corpus, tmp_path):
    path = make_corpus(corpus_texts(21, seed=13))
    outs = []
    for bs in (3, 64):
        out = tmp_path / f"emb_{bs}.icpe"
        export_embeddings(
            ExportJob(model=encoder_dir, input_path=path, output_path=out, batch_size=bs)
        )
        outs.append(parse_file(out)[3])
    assert np.allclose(outs[0], outs[1], atol=1e-5)


def test_truncation_at_max_length(encoder_dir, make_corpus, tmp_path):
    head = WORDS[:6]
    texts = [" ".join(WORDS), " ".join(head)]  # 40 words vs its 6-word prefix
    path = make_corpus(texts)
    out = tmp_path / "emb.icpe"
    # [CLS] + 6 tokens + [SEP]: both lines truncate to the same input
    export_embeddings(
        ExportJob(model=encoder_dir, input_path=path, output_path=out, max_length=8)
    )
    _, _, _, rows = parse_file(out)
    assert np.allclose(rows[0], rows[1], atol=1e-5)


# --- errors ------------------------------------------------------------------


def test_model_load_failure(tmp_path, make_corpus):
    path = make_corpus(["hello"])
    job = ExportJob(
        model=str(tmp_path / "no_such_checkpoint"),
        input_path=path,
        output_path=tmp_path / "emb.icpe",
    )
    with pytest.raises(ExportError, match="cannot load encoder"):
        export_embeddings(job)


def test_declared_dim_mismatch(encoder_dir, make_corpus, tmp_path):
    path = make_corpus(["hello"])
    job = ExportJob(
        model=encoder_dir,
        input_path=path,
        output_path=tmp_path / "emb.icpe",
        dim=64,
    )
    with pytest.raises(ExportError, match="hidden size 768 does not match declared dim 64"):
        export_embeddings(job)


def test_job_argument_validation(tmp_path):
    with pytest.raises(ExportError, match="batch_size"):
        ExportJob(model="x", input_path="a", output_path="b", batch_size=0)
    with pytest.raises(ExportError, match="max_length"):
        ExportJob(model="x", input_path="a", output_path="b", max_length=1)


# --- command line ------------------------------------------------------------


def test_cli_end_to_end(encoder_dir, make_corpus, tmp_path, capsys):
    path = make_corpus(corpus_texts(12, seed=17))
    out = tmp_path / "emb.icpe"
    rc = main(
        ["--model", encoder_dir, "--input", path, "--output", str(out), "--batch-size", "5"]
    )
    assert rc == 0
    assert "wrote 12 embeddings (dim 768)" in capsys.readouterr().out
    count, dim, flags, _ = parse_file(out)
    assert (count, dim, flags) == (12, 768, 1)


def test_cli_reports_errors(tmp_path, make_corpus, capsys):
    path = make_corpus(["hello"])
    rc = main(
        ["--model", str(tmp_path / "missing"), "--input", path, "--output", str(tmp_path / "o")]
    )
    assert rc == 1
    assert "cannot load encoder" in capsys.readouterr().err


def test_console_script_installed():
    proc = subprocess.run(
        ["icpe-export", "--help"], capture_output=True, text=True, timeout=120
    )
    assert proc.returncode == 0
    assert "--model" in proc.stdout


# --- interop with the consumer toolkit ---------------------------------------


def test_output_loads_in_primary_on_100_docs(encoder_dir, make_corpus, tmp_path):
    icpack_embeddings = pytest.importorskip("icpack.embeddings")
    path = make_corpus(corpus_texts(100, seed=23, dups=[(0, 99)]))
    out = tmp_path / "emb.icpe"
    export_embeddings(
        ExportJob(model=encoder_dir, input_path=path, output_path=out, batch_size=16)
    )
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        store = icpack_embeddings.read_embeddings(out)
    assert store.normalized is True
    assert (store.count, store.dim) == (100, 768)
    norms = np.linalg.norm(store.data, axis=1)
    assert np.abs(norms - 1.0).max() <= 1e-4
