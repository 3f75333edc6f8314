"""Assemble a real-English training corpus from text already on the host.

Sources: long package descriptions from installed distributions' metadata
and the system's common license texts. Output is deterministic for a fixed
environment (sources are sorted by name). The corpus is split into train /
calibration / evaluation slices on whole-source boundaries so the slices
never share text.

Usage: python gather_corpus.py OUTDIR
"""

import glob
import importlib.metadata
import os
import re
import sys


def clean(text: str) -> str:
    # strip the heaviest markup so the model sees mostly prose
    text = re.sub(r"```.*?```", " ", text, flags=re.S)
    text = re.sub(r"<[^>]+>", " ", text)
    text = re.sub(r"!\[[^\]]*\]\([^)]*\)", " ", text)
    text = re.sub(r"\[([^\]]*)\]\([^)]*\)", r"\1", text)
    text = re.sub(r"[|#*`_=~-]{2,}", " ", text)
    text = re.sub(r"https?://\S+", " ", text)
    text = re.sub(r"[ \t]+", " ", text)
    text = re.sub(r"\n{3,}", "\n\n", text)
    return text.strip()


def package_descriptions() -> list[tuple[str, str]]:
    docs = {}
    for dist in importlib.metadata.distributions():
        name = (dist.metadata or {}).get("Name", "") if dist.metadata else ""
        try:
            meta = dist.read_text("METADATA") or ""
        except Exception:
            continue
        parts = meta.split("\n\n", 1)
        if name and len(parts) == 2 and len(parts[1]) > 500:
            body = clean(parts[1])
            if len(body) > 400:
                docs[name.lower()] = body
    return sorted(docs.items())


def license_texts() -> list[tuple[str, str]]:
    out = []
    for path in sorted(glob.glob("/usr/share/common-licenses/*")):
        if os.path.isfile(path):
            with open(path, "r", errors="replace") as f:
                out.append((os.path.basename(path), clean(f.read())))
    return out


def main() -> int:
    outdir = sys.argv[1] if len(sys.argv) > 1 else "."
    os.makedirs(outdir, exist_ok=True)
    sources = package_descriptions() + license_texts()
    blobs = [f"= {name} =\n\n{text}\n" for name, text in sources]
    print(f"{len(blobs)} sources, {sum(map(len, blobs)) / 1e6:.2f} MB")

    # round-robin assignment keeps each slice topically mixed
    slices = {"train": [], "calib": [], "eval": []}
    for i, blob in enumerate(blobs):
        if i % 10 == 8:
            slices["calib"].append(blob)
        elif i % 10 == 9:
            slices["eval"].append(blob)
        else:
            slices["train"].append(blob)
    for split, parts in slices.items():
        path = os.path.join(outdir, f"{split}.txt")
        with open(path, "w") as f:
            f.write("\n".join(parts))
        print(f"{split}: {os.path.getsize(path)} bytes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
