#!/usr/bin/env python3
"""Generate small synthetic tabular datasets plus descriptor files.

Two flavours:
  rule   -- categorical columns sharing one vocabulary; the label XORs
            per-column membership tests, so identical strings carry
            different meanings in different columns
  mixed  -- two numerical and two categorical columns with missing cells

Usage: python scripts/make_synthetic_dataset.py --kind rule --rows 240 \
           --seed 31 --missing 0.2 --noise 0.03 --out data/rule
"""

import argparse
from pathlib import Path

import numpy as np

VOCAB = ["a", "b", "c", "d", "e", "f"]


def rule_rows(rows, seed, columns, noise, missing):
    rng = np.random.default_rng(seed)
    membership = []
    while len(membership) < columns:
        candidate = frozenset(rng.choice(VOCAB, size=3, replace=False))
        if candidate not in membership:
            membership.append(candidate)
    header = [f"c{k}" for k in range(columns)]
    out = []
    for _ in range(rows):
        values = [str(rng.choice(VOCAB)) for _ in range(columns)]
        bit = 0
        for v, members in zip(values, membership):
            bit ^= int(v in members)
        if rng.random() < noise:
            bit ^= 1
        cells = ["" if rng.random() < missing else v for v in values]
        out.append(cells + [str(bit)])
    return header, header, out


def mixed_rows(rows, seed, noise, missing):
    rng = np.random.default_rng(seed)
    members = {"u", "w"}
    header = ["x0", "x1", "c0", "c1"]
    out = []
    for _ in range(rows):
        x0, x1 = rng.normal(), rng.normal()
        c0 = str(rng.choice(["u", "v", "w", "x"]))
        c1 = str(rng.choice(["u", "v", "w", "x"]))
        bit = int((x0 + x1 > 0.0) != (c0 in members))
        if rng.random() < noise:
            bit ^= 1
        cells = [f"{x0!r}", f"{x1!r}", c0, c1]
        cells = ["" if rng.random() < missing else v for v in cells]
        out.append(cells + [str(bit)])
    return header, ["c0", "c1"], out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kind", choices=("rule", "mixed"), default="rule")
    ap.add_argument("--rows", type=int, default=240)
    ap.add_argument("--columns", type=int, default=2, help="rule kind only")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", type=float, default=0.03)
    ap.add_argument("--missing", type=float, default=0.0)
    ap.add_argument("--out", required=True,
                    help="output prefix; writes <out>.csv and <out>.descriptor")
    args = ap.parse_args()

    if args.kind == "rule":
        header, categorical, rows = rule_rows(args.rows, args.seed,
                                              args.columns, args.noise,
                                              args.missing)
    else:
        header, categorical, rows = mixed_rows(args.rows, args.seed,
                                               args.noise, args.missing)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_suffix(".csv")
    lines = [",".join(header + ["label"])]
    lines += [",".join(r) for r in rows]
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    descriptor = out.with_suffix(".descriptor")
    descriptor.write_text(
        f"csv = {csv_path.name}\n"
        f"target = label\n"
        f"categorical = {','.join(categorical)}\n",
        encoding="utf-8",
    )
    print(f"wrote {csv_path} ({len(rows)} rows) and {descriptor}")


if __name__ == "__main__":
    main()
