#!/usr/bin/env python3
"""Build the small State of the Union corpus used by the relative-ordering test.

Input: the data/ directory of the `@stdlib/datasets-sotu` npm package
(public-domain US government works). Output: train.txt and dev.txt in the
corpus file format (one sentence per line, `<doc>` between addresses).

    npm pack @stdlib/datasets-sotu && tar xzf stdlib-datasets-sotu-*.tgz
    python3 scripts/prepare_sotu.py package/data crates/core/tests/data/sotu
"""
import json
import pathlib
import re
import sys

TOKEN = re.compile(r"\d+(?:[.,]\d+)*|\w+(?:[-']\w+)*|[^\w\s]")
SENTENCE_END = re.compile(r"(?<=[.!?])\s+(?=[A-Z\"'(])")

TRAIN_TOKENS = 200_000
DEV_TOKENS = 25_000


def sentences(text):
    for raw in SENTENCE_END.split(" ".join(text.split())):
        toks = TOKEN.findall(raw)
        if toks:
            yield " ".join(toks)


def main(src, dst):
    files = sorted(pathlib.Path(src).glob("*.json"))
    out = pathlib.Path(dst)
    out.mkdir(parents=True, exist_ok=True)
    splits = [("train.txt", TRAIN_TOKENS), ("dev.txt", DEV_TOKENS)]
    it = iter(files)
    for name, budget in splits:
        lines, count = [], 0
        while count < budget:
            doc = json.loads(next(it).read_text())
            if lines:
                lines.append("<doc>")
            for s in sentences(doc["text"]):
                lines.append(s)
                count += len(s.split())
        (out / name).write_text("\n".join(lines) + "\n")
        print(name, count, "tokens")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
