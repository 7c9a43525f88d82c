"""Convert the PROMISE NFR ARFF export into the id,text,label CSV that
``rebench ingest --promise`` reads.

    python scripts/arff_to_csv.py promise_exp.arff data/promise.csv

The class attribute ``F`` stays F; every other class (A, L, LF, MN, O, PE,
SC, SE, US, FT, PO) becomes NF. Ids are assigned 1..N in file order.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path


def read_arff(path: Path) -> tuple[list[str], list[list[str]]]:
    attrs, rows = [], []
    in_data = False
    with path.open(encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("%"):
                continue
            low = s.lower()
            if not in_data:
                if low.startswith("@attribute"):
                    attrs.append(s.split(None, 2)[1].strip("'\""))
                elif low.startswith("@data"):
                    in_data = True
                continue
            row = next(csv.reader([s], quotechar="'", escapechar="\\", skipinitialspace=True))
            if len(row) != len(attrs):
                raise ValueError(f"{path}:{lineno}: expected {len(attrs)} fields, got {len(row)}")
            rows.append(row)
    return attrs, rows


def convert(src: Path, dst: Path, text_attr: str | None = None, class_attr: str | None = None) -> tuple[int, int]:
    attrs, rows = read_arff(src)
    lower = [a.lower() for a in attrs]
    ti = lower.index(text_attr.lower()) if text_attr else next(i for i, a in enumerate(lower) if "text" in a)
    ci = lower.index(class_attr.lower()) if class_attr else len(attrs) - 1
    n_f = 0
    with dst.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "text", "label"])
        for i, row in enumerate(rows, 1):
            label = "F" if row[ci].strip() == "F" else "NF"
            n_f += label == "F"
            w.writerow([i, " ".join(row[ti].split()), label])
    return len(rows), n_f


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("arff", type=Path)
    ap.add_argument("csv", type=Path)
    ap.add_argument("--text-attr", help="name of the requirement text attribute")
    ap.add_argument("--class-attr", help="name of the class attribute (default: last)")
    args = ap.parse_args(argv)
    total, n_f = convert(args.arff, args.csv, args.text_attr, args.class_attr)
    print(f"{args.csv}: {total} total, {n_f} F, {total - n_f} NF")
    return 0


if __name__ == "__main__":
    sys.exit(main())
