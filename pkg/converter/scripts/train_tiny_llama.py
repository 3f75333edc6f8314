"""Train the tiny LLaMA-architecture fixture checkpoint on the gathered corpus.

Produces an ordinary Hugging Face model directory (config.json +
model.safetensors in fp16 + byte-level BPE tokenizer) that the converter
tests treat as "a small pretrained checkpoint from the ecosystem". Training
is CPU-friendly: ~0.9M parameters, a few minutes.

Usage: python train_tiny_llama.py CORPUS_DIR OUT_DIR [STEPS] [SNAPSHOT_STEPS]

SNAPSHOT_STEPS is an optional comma list; each snapshot lands in
OUT_DIR-stepN so a downstream harness can pick the checkpoint with the
clearest pruning behavior.
"""

import math
import os
import sys

import numpy as np
import torch
from tokenizers import Tokenizer, decoders, models, pre_tokenizers, trainers
from transformers import LlamaConfig, LlamaForCausalLM, PreTrainedTokenizerFast

VOCAB = 384
SEQ = 128
BATCH = 12


def build_tokenizer(train_text: str, out_dir: str) -> PreTrainedTokenizerFast:
    tok = Tokenizer(models.BPE())
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=VOCAB, initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
        show_progress=False,
    )
    tok.train_from_iterator([train_text], trainer=trainer)
    fast = PreTrainedTokenizerFast(tokenizer_object=tok)
    fast.save_pretrained(out_dir)
    return fast


def main() -> int:
    corpus_dir, out_dir = sys.argv[1], sys.argv[2]
    steps = int(sys.argv[3]) if len(sys.argv) > 3 else 1500
    snapshots = (
        {int(s) for s in sys.argv[4].split(",")} if len(sys.argv) > 4 else set()
    )
    torch.manual_seed(0)
    np.random.seed(0)
    torch.set_num_threads(os.cpu_count() or 2)

    with open(os.path.join(corpus_dir, "train.txt")) as f:
        train_text = f.read()
    with open(os.path.join(corpus_dir, "calib.txt")) as f:
        val_text = f.read()[:50_000]

    os.makedirs(out_dir, exist_ok=True)
    tokenizer = build_tokenizer(train_text, out_dir)
    ids = np.array(tokenizer(train_text, add_special_tokens=False)["input_ids"],
                   dtype=np.int64)
    val_ids = np.array(tokenizer(val_text, add_special_tokens=False)["input_ids"],
                       dtype=np.int64)
    print(f"train tokens: {ids.size}, val tokens: {val_ids.size}", flush=True)

    config = LlamaConfig(
        vocab_size=VOCAB,
        hidden_size=160,
        intermediate_size=448,
        num_hidden_layers=5,
        num_attention_heads=4,
        num_key_value_heads=4,
        max_position_embeddings=512,
        rms_norm_eps=1e-5,
        rope_theta=10000.0,
        tie_word_embeddings=False,
        attention_bias=False,
        mlp_bias=False,
        bos_token_id=None,
        eos_token_id=None,
    )
    model = LlamaForCausalLM(config)
    print(f"parameters: {sum(p.numel() for p in model.parameters())}", flush=True)

    # no weight decay: let the trained weight/activation outliers grow,
    # they are the signal the pruning engine ranks by
    opt = torch.optim.AdamW(model.parameters(), lr=2e-3, weight_decay=0.0)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: min((s + 1) / 100, 0.5 * (1 + math.cos(math.pi * s / steps)))
    )
    rng = np.random.default_rng(0)

    def batch():
        starts = rng.integers(0, ids.size - SEQ - 1, size=BATCH)
        x = np.stack([ids[s : s + SEQ + 1] for s in starts])
        t = torch.from_numpy(x)
        return t[:, :-1], t[:, 1:]

    import copy

    model.train()
    for step in range(steps):
        inputs, labels = batch()
        out = model(input_ids=inputs, labels=labels)
        opt.zero_grad()
        out.loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        sched.step()
        if step % 100 == 0 or step == steps - 1:
            print(f"step {step:5d} loss {out.loss.item():.4f} "
                  f"ppl {math.exp(out.loss.item()):.2f}", flush=True)
        if (step + 1) in snapshots:
            snap_dir = f"{out_dir}-step{step + 1}"
            copy.deepcopy(model).half().save_pretrained(snap_dir, safe_serialization=True)
            tokenizer.save_pretrained(snap_dir)
            print(f"snapshot -> {snap_dir}", flush=True)

    model.eval()
    with torch.no_grad():
        losses = []
        for start in range(0, min(val_ids.size - SEQ - 1, 40 * SEQ), SEQ):
            chunk = torch.from_numpy(val_ids[start : start + SEQ + 1][None, :])
            losses.append(model(input_ids=chunk[:, :-1], labels=chunk[:, 1:]).loss.item())
        print(f"val ppl: {math.exp(float(np.mean(losses))):.2f}", flush=True)

    model.half().save_pretrained(out_dir, safe_serialization=True)
    print(f"saved fp16 checkpoint to {out_dir}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
