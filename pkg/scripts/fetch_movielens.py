"""Fetch MovieLens-100K into ``data/ml-100k``.

Writes two files:

* ``u.data``     tab-separated ``user item rating timestamp`` (the original layout)
* ``movies.dat`` ``item::title::Genre|Genre`` (MovieLens-1M style genre file)

Sources are tried in order: the GroupLens zip, then the copy of the dataset
shipped inside the ``recbole`` wheel (reachable through a PyPI mirror when
the GroupLens host is not).  Nothing is downloaded at test time.

Usage::

    python scripts/fetch_movielens.py [--dest data/ml-100k]
"""
import argparse
import glob
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
]


def from_grouplens():
    with urllib.request.urlopen(GROUPLENS_URL, timeout=20) as resp:
        z = zipfile.ZipFile(io.BytesIO(resp.read()))
    ratings = z.read("ml-100k/u.data").decode("latin-1")
    movies = []
    for line in z.read("ml-100k/u.item").decode("latin-1").splitlines():
        parts = line.split("|")
        if len(parts) < 24:
            continue
        flags = parts[5:24]
        genres = [g for g, f in zip(GENRES, flags) if f == "1"]
        movies.append(f"{parts[0]}::{parts[1]}::{'|'.join(genres)}")
    return ratings, "\n".join(movies) + "\n"


def from_recbole():
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
             "-d", tmp, "recbole==1.2.1"],
            check=True,
        )
        (wheel,) = glob.glob(f"{tmp}/*.whl")
        z = zipfile.ZipFile(wheel)
        base = "recbole/dataset_example/ml-100k/ml-100k"
        inter = z.read(f"{base}.inter").decode("latin-1").splitlines()
        items = z.read(f"{base}.item").decode("latin-1").splitlines()
    ratings = "\n".join(inter[1:]) + "\n"
    movies = []
    for line in items[1:]:
        item, title, year, classes = line.split("\t")
        movies.append(f"{item}::{title} ({year})::{'|'.join(classes.split())}")
    return ratings, "\n".join(movies) + "\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dest", default="data/ml-100k")
    args = ap.parse_args()
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)

    try:
        ratings, movies = from_grouplens()
        source = "grouplens"
    except Exception as exc:  # offline, proxy, etc.
        print(f"grouplens unavailable ({exc}); falling back to recbole wheel")
        ratings, movies = from_recbole()
        source = "recbole"

    (dest / "u.data").write_text(ratings)
    (dest / "movies.dat").write_text(movies, encoding="utf-8")
    n = sum(1 for line in ratings.splitlines() if line.strip())
    print(f"wrote {n} ratings to {dest} (source: {source})")


if __name__ == "__main__":
    main()
