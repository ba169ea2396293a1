import argparse
import logging
import sys

from .export import ExportError, ExportJob, export_embeddings
from .writer import WriterError


def build_parser():
    p = argparse.ArgumentParser(
        prog="icpe-export",
        description="Embed a JSONL corpus with a transformer encoder and write "
        "the rows as an icpack embedding file.",
    )
    p.add_argument("--model", required=True, help="model name or checkpoint directory")
    p.add_argument("--input", "-i", required=True, help="JSONL corpus with a 'text' field")
    p.add_argument("--output", "-o", required=True, help="embedding file to write")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-length", type=int, default=512)
    p.add_argument("--device", default="auto", help="cpu, cuda, or auto")
    p.add_argument("--dim", type=int, default=None, help="expected hidden size")
    p.add_argument("--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s"
    )
    try:
        job = ExportJob(
            model=args.model,
            input_path=args.input,
            output_path=args.output,
            batch_size=args.batch_size,
            max_length=args.max_length,
            device=args.device,
            dim=args.dim,
        )
        count, dim = export_embeddings(job)
    except (ExportError, WriterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {count} embeddings (dim {dim}) to {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
