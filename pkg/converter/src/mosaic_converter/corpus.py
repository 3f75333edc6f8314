"""Tokenize text files into calibration and evaluation token streams.

All input files are concatenated and tokenized once; the calibration stream
takes the first calib_windows * seq_len tokens and the evaluation stream
takes everything after, so the two splits never share text.
"""

from __future__ import annotations

import numpy as np

from .formats import atomic_write_bytes, stream_bytes
from .manifest import ConversionError


def load_tokenizer(tokenizer_dir: str):
    from transformers import AutoTokenizer

    return AutoTokenizer.from_pretrained(tokenizer_dir)


def convert_corpus(
    text_paths: list[str],
    tokenizer_dir: str,
    seq_len: int,
    calib_windows: int = 128,
    out_prefix: str | None = None,
    expected_vocab: int | None = None,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Returns (calib_ids, eval_ids, corpus_info); optionally writes streams."""
    if seq_len < 1 or calib_windows < 1:
        raise ConversionError("seq_len and calib_windows must be positive")
    texts = []
    for path in text_paths:
        with open(path, "r", encoding="utf-8", errors="replace") as f:
            texts.append(f.read())
    text = "\n".join(texts)
    if not text.strip():
        raise ConversionError("input text is empty")

    tokenizer = load_tokenizer(tokenizer_dir)
    vocab = expected_vocab if expected_vocab is not None else len(tokenizer)
    if len(tokenizer) > vocab:
        raise ConversionError(
            f"tokenizer vocabulary ({len(tokenizer)}) exceeds the model's ({vocab})"
        )
    ids = np.asarray(tokenizer(text, add_special_tokens=False)["input_ids"], dtype=np.int64)
    if ids.size and ids.max() >= vocab:
        raise ConversionError("tokenizer produced ids outside the model vocabulary")

    calib_len = calib_windows * seq_len
    if ids.size < calib_len + 2:
        raise ConversionError(
            f"corpus too small: {ids.size} tokens but the calibration split "
            f"needs {calib_len} plus an evaluation remainder"
        )
    calib_ids = ids[:calib_len]
    eval_ids = ids[calib_len:]
    info = {
        "texts": [str(p) for p in text_paths],
        "seq_len": seq_len,
        "calib_windows": calib_windows,
        "calib_tokens": int(calib_ids.size),
        "eval_tokens": int(eval_ids.size),
    }
    if out_prefix:
        atomic_write_bytes(f"{out_prefix}.calib.most", stream_bytes(calib_ids, vocab))
        atomic_write_bytes(f"{out_prefix}.eval.most", stream_bytes(eval_ids, vocab))
    return calib_ids, eval_ids, info
