#!/usr/bin/env python3
"""Add-one-smoothed unigram perplexity of a held-out corpus.

Reads two corpus containers (as written by `whai ingest` or
`whai eval --split-out`), fits word frequencies on the training part and
prints the per-word perplexity of the held-out part as JSON.
"""

import argparse
import json
import math
import struct
import zlib

MAGIC = b"WHAICORP"
VERSION = 1


def read_counts(path):
    """Returns (vocab_size, per-term totals) of a corpus container."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise SystemExit(f"{path}: not a corpus container")
    version, length = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise SystemExit(f"{path}: unsupported version {version}")
    payload = data[20 : 20 + length]
    (crc,) = struct.unpack_from("<I", data, 20 + length)
    if len(payload) != length or zlib.crc32(payload) != crc:
        raise SystemExit(f"{path}: corrupt payload")
    v, n, nnz = struct.unpack_from("<QQQ", payload, 0)
    pos = 24
    for _ in range(v):
        (tlen,) = struct.unpack_from("<Q", payload, pos)
        pos += 8 + tlen
    pos += 8 * (n + 1)
    terms = struct.unpack_from(f"<{nnz}I", payload, pos)
    counts = struct.unpack_from(f"<{nnz}I", payload, pos + 4 * nnz)
    totals = [0] * v
    for t, c in zip(terms, counts):
        totals[t] += c
    return v, totals


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--train", required=True)
    p.add_argument("--heldout", required=True)
    a = p.parse_args()
    v, train = read_counts(a.train)
    v2, held = read_counts(a.heldout)
    if v != v2:
        raise SystemExit("vocabulary sizes differ")
    denom = sum(train) + v
    tokens = sum(held)
    ll = sum(c * math.log((train[t] + 1) / denom) for t, c in enumerate(held) if c)
    print(json.dumps({"perplexity": math.exp(-ll / tokens), "heldout_tokens": tokens, "vocabulary": v}))


if __name__ == "__main__":
    main()
