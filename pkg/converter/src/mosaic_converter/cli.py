"""Command-line entry points: convert-model and convert-corpus."""

from __future__ import annotations

import argparse
import sys

from .convert import convert_model
from .corpus import convert_corpus
from .formats import FormatError, atomic_write_bytes
from .manifest import ConversionError, ConversionManifest


def main_convert_model(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="convert-model",
        description="Convert a LLaMA-family checkpoint directory to engine format",
    )
    parser.add_argument("--src", required=True, help="Hugging Face model directory")
    parser.add_argument("--manifest", default=None, help="optional mapping override JSON")
    parser.add_argument("--out", required=True, help="output checkpoint path")
    args = parser.parse_args(argv)
    try:
        manifest = None
        if args.manifest:
            with open(args.manifest) as f:
                manifest = ConversionManifest.from_json(f.read())
        blob, manifest = convert_model(args.src, manifest, out_path=args.out)
        manifest_path = f"{args.out}.manifest.json"
        atomic_write_bytes(manifest_path, manifest.to_json().encode())
        print(f"wrote {args.out} ({len(blob)} bytes)")
        print(f"fingerprint {manifest.converted_fingerprint}")
        print(f"manifest {manifest_path}")
        return 0
    except (ConversionError, FormatError, OSError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main_convert_corpus(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="convert-corpus",
        description="Tokenize text into calibration and evaluation token streams",
    )
    parser.add_argument("--text", required=True, nargs="+", help="input text file(s)")
    parser.add_argument("--tokenizer", required=True, help="tokenizer directory")
    parser.add_argument("--seq-len", type=int, required=True)
    parser.add_argument("--calib-windows", type=int, default=128)
    parser.add_argument("--out-prefix", required=True)
    parser.add_argument("--vocab-size", type=int, default=None,
                        help="model vocabulary size (defaults to tokenizer size)")
    args = parser.parse_args(argv)
    try:
        calib, eval_ids, info = convert_corpus(
            args.text,
            args.tokenizer,
            seq_len=args.seq_len,
            calib_windows=args.calib_windows,
            out_prefix=args.out_prefix,
            expected_vocab=args.vocab_size,
        )
        print(f"calibration: {info['calib_tokens']} tokens "
              f"({info['calib_windows']} x {info['seq_len']})")
        print(f"evaluation:  {info['eval_tokens']} tokens")
        print(f"wrote {args.out_prefix}.calib.most and {args.out_prefix}.eval.most")
        return 0
    except (ConversionError, FormatError, OSError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main_convert_model())
