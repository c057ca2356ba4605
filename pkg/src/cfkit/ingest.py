"""Readers for MovieLens-style ratings, item attributes and embedding tables.

Supported rating layouts:

* ``dat_1m``      ``UserID::MovieID::Rating::Timestamp`` (no header)
* ``u_data_100k`` tab-separated ``user item rating timestamp`` (no header)
* ``csv_latest``  CSV with header ``user_id,item_id,rating[,timestamp]``
  (``userId,movieId,...`` as in ml-latest is accepted too)

Timestamps are read and dropped.  External ids are mapped to contiguous
internal ids in first-seen order.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RatingsMatrix

_logger = logging.getLogger(__name__)

RATING_FORMATS = ("dat_1m", "csv_latest", "u_data_100k")
FEATURE_FORMATS = ("movielens_genres", "csv_key_value")


class IngestError(ValueError):
    pass


class MalformedLine(IngestError):
    def __init__(self, line_no: int, line: str = "", reason: str = ""):
        msg = f"line {line_no}: malformed"
        if reason:
            msg += f" ({reason})"
        if line:
            msg += f": {line[:80]!r}"
        super().__init__(msg)
        self.line_no = line_no


class UnknownFormat(IngestError):
    pass


class DimensionMismatch(IngestError):
    pass


class ZeroVector(IngestError):
    def __init__(self, ident):
        super().__init__(f"zero vector for id {ident!r}")
        self.ident = ident


class IdMap:
    """Bijection between external ids (as strings) and ``range(len(self))``."""

    def __init__(self, external=()):
        self._ext: list[str] = []
        self._int: dict[str, int] = {}
        for e in external:
            self.add(e)

    def add(self, ext) -> int:
        ext = str(ext)
        idx = self._int.get(ext)
        if idx is None:
            idx = len(self._ext)
            self._int[ext] = idx
            self._ext.append(ext)
        return idx

    def to_internal(self, ext, default=None):
        return self._int.get(str(ext), default)

    def to_external(self, idx: int) -> str:
        return self._ext[idx]

    def __contains__(self, ext):
        return str(ext) in self._int

    def __len__(self):
        return len(self._ext)

    @property
    def external_ids(self):
        return list(self._ext)


@dataclass
class Dataset:
    """Ratings plus the id maps needed to go back to file ids."""

    ratings: RatingsMatrix
    user_map: IdMap
    item_map: IdMap
    skipped_lines: list = field(default_factory=list)

    def summary(self) -> dict:
        r = self.ratings
        return {
            "users": r.num_users,
            "items": r.num_items,
            "ratings": r.nnz,
            "density": r.density,
            "rating_min": r.rating_scale[0],
            "rating_max": r.rating_scale[1],
        }


def _read_lines(path):
    raw = Path(path).read_bytes()
    return raw.decode("utf-8", errors="replace").splitlines()


def _rating_fields(fmt, lines):
    """Yield ``(line_no, user, item, rating_str)`` or ``(line_no, None, line, reason)``."""
    if fmt == "dat_1m":
        for no, line in enumerate(lines, 1):
            if not line.strip():
                continue
            parts = line.strip().split("::")
            if len(parts) not in (3, 4):
                yield no, None, line, "expected 4 '::'-separated fields"
                continue
            yield no, parts[0], parts[1], parts[2]
    elif fmt == "u_data_100k":
        for no, line in enumerate(lines, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) not in (3, 4):
                yield no, None, line, "expected 4 tab-separated fields"
                continue
            yield no, parts[0], parts[1], parts[2]
    elif fmt == "csv_latest":
        if not lines:
            return
        reader = csv.reader(lines)
        header = [h.strip().lower() for h in next(reader)]
        aliases = {"userid": "user_id", "movieid": "item_id", "itemid": "item_id"}
        header = [aliases.get(h, h) for h in header]
        try:
            cu, ci, cr = (header.index(c) for c in ("user_id", "item_id", "rating"))
        except ValueError:
            raise MalformedLine(1, lines[0], "header must contain user_id,item_id,rating")
        for no, row in enumerate(reader, 2):
            if not row or not "".join(row).strip():
                continue
            if len(row) <= max(cu, ci, cr):
                yield no, None, ",".join(row), "too few columns"
                continue
            yield no, row[cu].strip(), row[ci].strip(), row[cr].strip()
    else:
        raise UnknownFormat(f"unknown ratings format {fmt!r}; expected one of {RATING_FORMATS}")


def parse_movielens(path, format: str, strict: bool = False) -> Dataset:
    """Parse a ratings file into a :class:`Dataset`.

    Invalid lines are skipped and reported through ``Dataset.skipped_lines``
    and a warning; with ``strict=True`` the first one raises
    :class:`MalformedLine`.  Duplicate (user, item) pairs keep the first
    occurrence and count as invalid.
    """
    if format not in RATING_FORMATS:
        raise UnknownFormat(f"unknown ratings format {format!r}; expected one of {RATING_FORMATS}")
    lines = _read_lines(path)
    user_map, item_map = IdMap(), IdMap()
    users, items, ratings = [], [], []
    seen = set()
    skipped = []

    def bad(no, line, reason):
        if strict:
            raise MalformedLine(no, line, reason)
        skipped.append((no, reason))

    for no, u, i, r in _rating_fields(format, lines):
        if u is None:
            bad(no, i, r)
            continue
        try:
            value = float(r)
        except ValueError:
            bad(no, f"{u} {i} {r}", "rating is not a number")
            continue
        if not np.isfinite(value):
            bad(no, f"{u} {i} {r}", "non-finite rating")
            continue
        key = (u, i)
        if key in seen:
            bad(no, f"{u} {i} {r}", "duplicate user/item pair")
            continue
        seen.add(key)
        users.append(user_map.add(u))
        items.append(item_map.add(i))
        ratings.append(value)

    if skipped:
        warnings.warn(f"{path}: skipped {len(skipped)} invalid line(s), "
                      f"first at line {skipped[0][0]} ({skipped[0][1]})")
    if not ratings:
        warnings.warn(f"{path}: no ratings found")
    matrix = RatingsMatrix(users, items, ratings, len(user_map), len(item_map))
    return Dataset(matrix, user_map, item_map, skipped)


def export_ratings(dataset: Dataset, path, format: str = "csv_latest"):
    """Write ratings back out with external ids (timestamps written as 0)."""
    r = dataset.ratings
    rows = zip(r.users.tolist(), r.items.tolist(), r.ratings.tolist())
    with open(path, "w", newline="") as fh:
        if format == "csv_latest":
            fh.write("user_id,item_id,rating\n")
            for u, i, v in rows:
                fh.write(f"{dataset.user_map.to_external(u)},"
                         f"{dataset.item_map.to_external(i)},{v!r}\n")
        elif format in ("dat_1m", "u_data_100k"):
            sep = "::" if format == "dat_1m" else "\t"
            for u, i, v in rows:
                fh.write(sep.join([dataset.user_map.to_external(u),
                                   dataset.item_map.to_external(i), repr(v), "0"]) + "\n")
        else:
            raise UnknownFormat(format)


# ---------------------------------------------------------------------------
# item attributes

@dataclass(frozen=True)
class ItemFeatures:
    """Sparse attribute vector of one item over a shared vocabulary."""

    item_id: int
    indices: tuple
    values: tuple

    def dense(self, vocab_size: int) -> np.ndarray:
        v = np.zeros(vocab_size)
        v[list(self.indices)] = self.values
        return v


class FeatureTable:
    """Attribute matrix aligned to internal item ids.

    ``matrix[i]`` is item ``i``'s attribute vector; items without attributes
    have a zero row.
    """

    def __init__(self, matrix: np.ndarray, vocabulary: list[str]):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != len(vocabulary):
            raise DimensionMismatch("feature matrix width must equal vocabulary size")
        if not np.all(np.isfinite(matrix)):
            raise IngestError("non-finite attribute value")
        self.matrix = matrix
        self.matrix.flags.writeable = False
        self.vocabulary = list(vocabulary)

    @property
    def num_items(self):
        return self.matrix.shape[0]

    def __getitem__(self, item: int) -> ItemFeatures:
        row = self.matrix[item]
        nz = np.flatnonzero(row)
        return ItemFeatures(int(item), tuple(nz.tolist()), tuple(row[nz].tolist()))

    def vector(self, item: int) -> np.ndarray:
        if 0 <= item < self.num_items:
            return self.matrix[item]
        return np.zeros(len(self.vocabulary))

    def with_items(self, num_items: int) -> "FeatureTable":
        """Pad (or truncate) to ``num_items`` rows."""
        out = np.zeros((num_items, len(self.vocabulary)))
        n = min(num_items, self.num_items)
        out[:n] = self.matrix[:n]
        return FeatureTable(out, self.vocabulary)


def parse_item_features(path, format: str, item_map: IdMap | None = None,
                        num_items: int | None = None) -> FeatureTable:
    """Read item attributes into a :class:`FeatureTable`.

    ``movielens_genres`` reads ``movies.dat`` (``id::title::G1|G2``); each
    genre becomes a binary attribute.  ``csv_key_value`` reads rows of
    ``item_id,attr,value``.

    With ``item_map`` the rows are aligned to the ratings' internal ids and
    items missing from the map are skipped with a warning; without it, the
    item ids in the file must already be internal integers.
    """
    if format not in FEATURE_FORMATS:
        raise UnknownFormat(f"unknown feature format {format!r}; expected one of {FEATURE_FORMATS}")
    lines = _read_lines(path)
    vocab: dict[str, int] = {}
    entries: dict[int, dict[int, float]] = {}
    unknown = []
    no_genre = []

    def resolve(ext, no):
        if item_map is not None:
            idx = item_map.to_internal(ext)
            if idx is None:
                unknown.append(ext)
            return idx
        try:
            return int(ext)
        except ValueError:
            raise MalformedLine(no, ext, "item id is not an integer")

    if format == "movielens_genres":
        for no, line in enumerate(lines, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\r\n").split("::")
            if len(parts) != 3:
                raise MalformedLine(no, line, "expected 'id::title::genres'")
            item = resolve(parts[0].strip(), no)
            genres = [g for g in parts[2].strip().split("|") if g and g != "(no genres listed)"]
            if item is None:
                continue
            if not genres:
                no_genre.append(parts[0])
            row = entries.setdefault(item, {})
            for g in genres:
                row[vocab.setdefault(g, len(vocab))] = 1.0
    else:
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None:
            return FeatureTable(np.zeros((num_items or 0, 0)), [])
        if [h.strip().lower() for h in header[:3]] != ["item_id", "attr", "value"]:
            raise MalformedLine(1, ",".join(header), "header must be item_id,attr,value")
        for no, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedLine(no, ",".join(row), "expected 3 columns")
            try:
                value = float(row[2])
            except ValueError:
                raise MalformedLine(no, ",".join(row), "value is not a number")
            if not np.isfinite(value):
                raise MalformedLine(no, ",".join(row), "non-finite value")
            item = resolve(row[0].strip(), no)
            if item is None:
                continue
            entries.setdefault(item, {})[vocab.setdefault(row[1].strip(), len(vocab))] = value

    if unknown:
        warnings.warn(f"{path}: {len(unknown)} item(s) not present in the ratings were skipped")
    if no_genre:
        warnings.warn(f"{path}: {len(no_genre)} item(s) have no listed genre (zero vector)")

    if num_items is None:
        num_items = len(item_map) if item_map is not None else \
            (max(entries) + 1 if entries else 0)
    mat = np.zeros((num_items, len(vocab)))
    for item, row in entries.items():
        if item < num_items:
            for j, v in row.items():
                mat[item, j] = v
    return FeatureTable(mat, list(vocab))


# ---------------------------------------------------------------------------
# embeddings

class EmbeddingTable:
    """Unit-normalized dense vectors keyed by external id."""

    def __init__(self, vectors: dict, normalize: bool = True):
        self.vectors: dict[str, np.ndarray] = {}
        self.dimension = None
        for ident, vec in vectors.items():
            v = np.asarray(vec, dtype=np.float64)
            if self.dimension is None:
                self.dimension = len(v)
            elif len(v) != self.dimension:
                raise DimensionMismatch(
                    f"id {ident!r}: length {len(v)} != dimension {self.dimension}")
            norm = np.linalg.norm(v)
            if norm == 0.0:
                raise ZeroVector(ident)
            self.vectors[str(ident)] = v / norm if normalize else v
        self.dimension = self.dimension or 0

    def __getitem__(self, ident):
        return self.vectors[str(ident)]

    def __contains__(self, ident):
        return str(ident) in self.vectors

    def __len__(self):
        return len(self.vectors)

    def aligned(self, id_map: IdMap | None, count: int):
        """``(matrix, present)`` with row ``k`` holding the vector of internal
        id ``k``; ``present[k]`` is False where no embedding exists."""
        out = np.zeros((count, self.dimension))
        present = np.zeros(count, dtype=bool)
        for ident, vec in self.vectors.items():
            k = id_map.to_internal(ident) if id_map is not None else int(ident)
            if k is not None and 0 <= k < count:
                out[k] = vec
                present[k] = True
        return out, present


def load_embeddings(path) -> EmbeddingTable:
    """Read an ``id,v1,...,vd`` CSV.  A header row is detected when its
    second field is not numeric."""
    vectors = {}
    dim = None
    with open(path, newline="") as fh:
        for no, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            try:
                vals = [float(x) for x in row[1:]]
            except ValueError:
                if no == 1:
                    continue
                raise MalformedLine(no, ",".join(row), "non-numeric component")
            if dim is None:
                dim = len(vals)
            elif len(vals) != dim:
                raise DimensionMismatch(f"row {no}: {len(vals)} components, expected {dim}")
            if not np.all(np.isfinite(vals)):
                raise MalformedLine(no, ",".join(row), "non-finite component")
            ident = row[0].strip()
            if not any(vals):
                raise ZeroVector(ident)
            vectors[ident] = vals
    return EmbeddingTable(vectors)


def load_dataset(path, format: str, features=None, feature_format="movielens_genres"):
    """Convenience: ratings plus optional aligned feature table."""
    ds = parse_movielens(path, format)
    table = None
    if features is not None:
        table = parse_item_features(features, feature_format, ds.item_map,
                                    ds.ratings.num_items)
    return ds, table
