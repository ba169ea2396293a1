"""Export transformer document embeddings in the icpack binary format."""

from .export import (
    ExportError,
    ExportJob,
    encode_texts,
    export_embeddings,
    load_encoder,
    read_texts,
)
from .writer import EmbeddingWriter, WriterError, write_matrix

__all__ = [
    "EmbeddingWriter",
    "ExportError",
    "ExportJob",
    "WriterError",
    "encode_texts",
    "export_embeddings",
    "load_encoder",
    "read_texts",
    "write_matrix",
]
