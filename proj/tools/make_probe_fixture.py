#!/usr/bin/env python3
"""Writes the small probe fixture used by the CLI test.

One-dimensional embeddings make the trained probe's test scores a monotone
function of the embedding (w > 0) or of its negation (w < 0), so the expected
AUROC is the brute-force pair count over the raw feature with the sign implied
by how each label was generated.
"""

import argparse
import json
import random
import struct
from pathlib import Path


def f32(x):
    return struct.unpack("<f", struct.pack("<f", x))[0]


def pair_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "probe"))
    ap.add_argument("--seed", type=int, default=20240611)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)

    n_train, n_val, n_test = 48, 6, 26
    n = n_train + n_val + n_test
    split = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    ids = [f"ex{i:03d}" for i in range(n)]
    # Distinct values on a 1/64 lattice so float32 holds them exactly.
    xs = [f32(v / 64.0) for v in rng.sample(range(-256, 256), n)]

    def noisy(sign, flip):
        return [1 if (sign * x > 0) != (rng.random() < flip) else 0 for x in xs]

    tasks = {
        "rises": (noisy(+1, 0.15), +1),
        "falls": (noisy(-1, 0.15), -1),
        "no_test_positives": ([1 if (x > 0 and s == "train") else 0 for x, s in zip(xs, split)], +1),
        "masked": (noisy(+1, 0.1), +1),
    }
    # Some "masked" answers are NotMentioned; in masked mode they drop out.
    na = set(rng.sample(range(n), 20))

    with open(out / "embeddings.f32", "wb") as f:
        for x in xs:
            f.write(struct.pack("<f", x))
    (out / "embeddings.json").write_text(json.dumps({"n": n, "d": 1, "row_ids": ids, "split": split}, indent=2) + "\n")

    qids = list(tasks)
    lines = ["exam_id," + ",".join(qids)]
    for i in range(n):
        cells = []
        for q in qids:
            y = tasks[q][0][i]
            cells.append("NA" if q == "masked" and i in na else str(y))
        lines.append(ids[i] + "," + ",".join(cells))
    lines.append("ghost," + ",".join("1" for _ in qids))
    (out / "labels.csv").write_text("\n".join(lines) + "\n")

    expected = {"label_mode": "masked", "questions": {}}
    test = [i for i in range(n) if split[i] == "test"]
    included = []
    for q in qids:
        labels, sign = tasks[q]
        rows = [i for i in test if not (q == "masked" and i in na)]
        ys = [labels[i] for i in rows]
        p = sum(ys)
        entry = {"positives": p, "negatives": len(ys) - p}
        if p == 0 or p == len(ys):
            entry["auroc"] = None
        else:
            entry["auroc"] = pair_auroc([sign * xs[i] for i in rows], ys)
            included.append(entry["auroc"])
        expected["questions"][q] = entry
    expected["mean_auroc"] = sum(included) / len(included)
    (out / "expected.json").write_text(json.dumps(expected, indent=2) + "\n")


if __name__ == "__main__":
    main()
