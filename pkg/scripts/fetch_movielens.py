#!/usr/bin/env python3
"""Fetch MovieLens-100K and write it in the ids4nr raw-file layout.

The GroupLens host is often unreachable from build machines, so the data is
taken from the copy bundled in the ``recbole`` wheel on PyPI (``pip download``
only, nothing is installed).  Output directory layout::

    <out>/interactions.tsv   user_id  item_id  rating  timestamp
    <out>/user_attrs.tsv     user_id  field    value
    <out>/item_attrs.tsv     item_id  field    value

Usage::

    python scripts/fetch_movielens.py [--out DIR]

``DIR`` defaults to ``$IDS4NR_DATA_DIR/ml-100k`` or ``./data/ml-100k``.
"""

import argparse
import os
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

WHEEL_SPEC = "recbole==1.2.1"
PREFIX = "recbole/dataset_example/ml-100k/ml-100k"

AGE_BUCKETS = [(18, "under-18"), (25, "18-24"), (35, "25-34"), (45, "35-44"),
               (50, "45-49"), (56, "50-55")]


def age_bucket(age):
    for upper, label in AGE_BUCKETS:
        if age < upper:
            return label
    return "56+"


def year_bucket(token):
    if not token.isdigit():
        return None
    year = int(token)
    if year < 1960:
        return "pre-1960"
    if year < 1990:
        return f"{year // 10 * 10}s"
    return str(year)


def _rows(text):
    lines = text.splitlines()
    return [line.split("\t") for line in lines[1:] if line.strip()]


def download_wheel(dest):
    cmd = [sys.executable, "-m", "pip", "download", "--no-deps", "--quiet",
           "-d", str(dest), WHEEL_SPEC]
    subprocess.run(cmd, check=True)
    wheels = sorted(Path(dest).glob("recbole-*.whl"))
    if not wheels:
        raise RuntimeError("pip did not produce a recbole wheel")
    return wheels[0]


def convert(wheel, out):
    out.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(wheel) as zf:
        inter = zf.read(PREFIX + ".inter").decode("utf-8")
        users = zf.read(PREFIX + ".user").decode("utf-8")
        items = zf.read(PREFIX + ".item").decode("latin-1")

    with open(out / "interactions.tsv", "w", encoding="utf-8") as f:
        for u, i, r, t in _rows(inter):
            f.write(f"{u}\t{i}\t{r}\t{int(float(t))}\n")

    with open(out / "user_attrs.tsv", "w", encoding="utf-8") as f:
        for u, age, gender, occupation, _zip in _rows(users):
            f.write(f"{u}\tage\t{age_bucket(int(age))}\n")
            f.write(f"{u}\tgender\t{gender}\n")
            f.write(f"{u}\toccupation\t{occupation}\n")

    with open(out / "item_attrs.tsv", "w", encoding="utf-8") as f:
        for row in _rows(items):
            item, year, genres = row[0], row[-2], row[-1]
            for genre in genres.split():
                f.write(f"{item}\tgenre\t{genre}\n")
            bucket = year_bucket(year)
            if bucket is not None:
                f.write(f"{item}\tyear\t{bucket}\n")


def default_out():
    root = os.environ.get("IDS4NR_DATA_DIR")
    return Path(root) / "ml-100k" if root else Path("data") / "ml-100k"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=None)
    parser.add_argument("--wheel", type=Path, default=None,
                        help="use an already downloaded recbole wheel")
    args = parser.parse_args(argv)
    out = args.out or default_out()
    if args.wheel is not None:
        convert(args.wheel, out)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            convert(download_wheel(tmp), out)
    print(f"wrote MovieLens-100K to {out}")


if __name__ == "__main__":
    main()
