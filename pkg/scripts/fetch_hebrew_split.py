"""Rebuild tests/data/hebrew_{train,dev}.conllu from a public PyPI artifact.

The hebpipe 4.0.2.0 source distribution ships the UD Hebrew training
treebank as ``hebpipe/data/heb_train_tb.conll10``.  The first 1000
sentences become the training split and the next 200 the dev split,
copied verbatim.

    python scripts/fetch_hebrew_split.py [--sdist path/to/hebpipe-4.0.2.0.tar.gz]
"""

from __future__ import annotations

import argparse
import hashlib
import io
import tarfile
import urllib.request
from pathlib import Path

URL = ("https://files.pythonhosted.org/packages/c0/44/2a887d2bd0ee9ad410dba9be7301edaf62c6f4642ccc7b141b2e57358a70/"
       "hebpipe-4.0.2.0.tar.gz")
SHA256 = "ed1753cd9412d94ed1003a32fa006a659d851919343207170aead2eb6810f32e"
MEMBER = "hebpipe-4.0.2.0/hebpipe/data/heb_train_tb.conll10"
TRAIN, DEV = 1000, 200
OUT = Path(__file__).resolve().parent.parent / "tests" / "data"


def sentences(text: str) -> list[str]:
    blocks, cur = [], []
    for line in text.splitlines():
        if line.strip():
            cur.append(line)
        elif cur:
            blocks.append("\n".join(cur) + "\n")
            cur = []
    if cur:
        blocks.append("\n".join(cur) + "\n")
    return blocks


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sdist", help="local copy of the sdist (downloaded otherwise)")
    args = ap.parse_args(argv)
    if args.sdist:
        data = Path(args.sdist).read_bytes()
    else:
        with urllib.request.urlopen(URL, timeout=600) as resp:
            data = resp.read()
    digest = hashlib.sha256(data).hexdigest()
    if digest != SHA256:
        raise SystemExit(f"sha256 mismatch: {digest}")
    with tarfile.open(fileobj=io.BytesIO(data), mode="r:gz") as tar:
        text = tar.extractfile(MEMBER).read().decode("utf-8")
    blocks = sentences(text)
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "hebrew_train.conllu").write_text("\n".join(blocks[:TRAIN]) + "\n", encoding="utf-8")
    (OUT / "hebrew_dev.conllu").write_text("\n".join(blocks[TRAIN:TRAIN + DEV]) + "\n", encoding="utf-8")
    print(f"wrote {TRAIN} + {DEV} sentences to {OUT}")


if __name__ == "__main__":
    main()
