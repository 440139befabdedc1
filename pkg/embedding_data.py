"""
Embedding data: vectors, class tables, labeled datasets and class folds.

File formats (UTF-8, line oriented, `#` starts a comment line):
    embedding table   <id>\t<v1> <v2> ... <vd>
    dataset manifest  <instance_id>\t<class_id>
    fold file         <class_id>\t<fold_index>
    label file        <class_id>\t<label>[,<label>...]
"""

import logging
import re
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from errors import ConfigError, DataError, EmbeddingFormatError

NUMBER_PATTERN = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


def _frozen_array(values) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """A fixed-dimension float64 vector (acoustic or semantic embedding)."""

    values: np.ndarray

    def __post_init__(self):
        array = _frozen_array(self.values)
        if array.ndim != 1 or array.size == 0:
            raise DataError(f"Embedding vector must be one-dimensional and non-empty, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise DataError("Embedding vector contains NaN or infinite entries")
        object.__setattr__(self, "values", array)

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.dim

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"EmbeddingVector(dim={self.dim}, values={self.values.tolist()})"


class EmbeddingTable:
    """
    Ordered mapping from id to EmbeddingVector, all of one dimension.

    Args:
        entries (Mapping | Iterable): (id, vector) pairs. Vectors may be
            EmbeddingVector instances or plain sequences of floats.
    """

    def __init__(self, entries: Mapping[str, object] | Iterable[tuple[str, object]]):
        pairs = entries.items() if isinstance(entries, Mapping) else entries
        table: dict[str, EmbeddingVector] = {}
        for key, vector in pairs:
            # ids must survive a write / parse round trip of the line format
            if not isinstance(key, str) or key.splitlines() != [key] or "\t" in key or key.startswith("#"):
                raise DataError(f"Invalid id {key!r}: ids are non-empty single-line strings without tabs or a leading '#'")
            if key in table:
                raise DataError(f"Duplicate id '{key}'")
            table[key] = vector if isinstance(vector, EmbeddingVector) else EmbeddingVector(vector)
        if not table:
            raise DataError("Embedding table is empty")
        dims = {vector.dim for vector in table.values()}
        if len(dims) != 1:
            raise DataError(f"Embedding table mixes dimensions {sorted(dims)}")
        self._entries = table
        self._dim = dims.pop()

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def entries(self) -> Mapping[str, EmbeddingVector]:
        return dict(self._entries)

    def ids(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def __getitem__(self, key: str) -> EmbeddingVector:
        try:
            return self._entries[key]
        except KeyError:
            raise DataError(f"Unknown id '{key}'") from None

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def matrix(self, ids: Sequence[str] | None = None) -> np.ndarray:
        """Stack vectors row-wise, in table order or in the order of `ids`."""
        keys = self.ids() if ids is None else ids
        return np.vstack([self[key].values for key in keys])

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return self.ids() == other.ids() and all(self[key] == other[key] for key in self)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(entries={len(self)}, dim={self.dim})"


class ClassTable(EmbeddingTable):
    """Class id -> semantic embedding. Class order for scoring is lexicographic."""

    @property
    def semantic_dim(self) -> int:
        return self.dim

    @cached_property
    def class_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.ids()))

    def class_matrix(self) -> np.ndarray:
        """Semantic embeddings stacked in `class_ids` order."""
        return self.matrix(self.class_ids)

    def index_of(self, labels: Iterable[str]) -> np.ndarray:
        positions = {class_id: i for i, class_id in enumerate(self.class_ids)}
        try:
            return np.array([positions[label] for label in labels], dtype=np.int64)
        except KeyError as e:
            raise DataError(f"Unknown class id {e.args[0]!r}") from None

    def subset(self, class_ids: Iterable[str]) -> "ClassTable":
        return ClassTable([(class_id, self[class_id]) for class_id in sorted(set(class_ids))])

    @classmethod
    def from_table(cls, table: EmbeddingTable) -> "ClassTable":
        return cls(table.items())


class LabeledInstance(NamedTuple):
    instance_id: str
    acoustic: EmbeddingVector
    class_id: str


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Training or evaluation instances: (instance id, acoustic embedding, class id)."""

    items: tuple[LabeledInstance, ...]
    acoustic_dim: int | None = None

    def __post_init__(self):
        items = tuple(LabeledInstance(*item) for item in self.items)
        acoustic_dim = self.acoustic_dim
        if acoustic_dim is None:
            if not items:
                raise DataError("Empty dataset needs an explicit acoustic_dim")
            acoustic_dim = items[0].acoustic.dim
        if acoustic_dim < 1:
            raise DataError(f"acoustic_dim must be positive, got {acoustic_dim}")
        seen = set()
        for item in items:
            if item.acoustic.dim != acoustic_dim:
                raise DataError(
                    f"Instance '{item.instance_id}' has dimension {item.acoustic.dim}, expected {acoustic_dim}"
                )
            if item.instance_id in seen:
                raise DataError(f"Duplicate instance id '{item.instance_id}'")
            seen.add(item.instance_id)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "acoustic_dim", acoustic_dim)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[LabeledInstance]:
        return iter(self.items)

    @property
    def instance_ids(self) -> tuple[str, ...]:
        return tuple(item.instance_id for item in self.items)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(item.class_id for item in self.items)

    @property
    def label_set(self) -> frozenset[str]:
        return frozenset(self.labels)

    @cached_property
    def acoustic_matrix(self) -> np.ndarray:
        """Acoustic embeddings as an (N, acoustic_dim) array."""
        if not self.items:
            matrix = np.zeros((0, self.acoustic_dim))
        else:
            matrix = np.vstack([item.acoustic.values for item in self.items])
        matrix.setflags(write=False)
        return matrix

    def subset(self, indices: Iterable[int]) -> "LabeledDataset":
        return LabeledDataset(tuple(self.items[i] for i in indices), self.acoustic_dim)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return self.acoustic_dim == other.acoustic_dim and self.items == other.items


@dataclass(frozen=True)
class FoldAssignment:
    """Class id -> fold index in [0, k). Each class sits in exactly one fold."""

    folds: Mapping[str, int]
    k: int = field(default=0)

    def __post_init__(self):
        folds = dict(self.folds)
        if not folds:
            raise DataError("Fold assignment is empty")
        k = self.k or max(folds.values()) + 1
        for class_id, index in folds.items():
            if not 0 <= index < k:
                raise DataError(f"Class '{class_id}' has fold index {index} outside [0, {k})")
        object.__setattr__(self, "folds", folds)
        object.__setattr__(self, "k", k)

    def fold(self, index: int) -> tuple[str, ...]:
        return tuple(sorted(class_id for class_id, i in self.folds.items() if i == index))

    def classes_in(self, indices: Iterable[int]) -> tuple[str, ...]:
        wanted = set(indices)
        return tuple(sorted(class_id for class_id, i in self.folds.items() if i in wanted))

    def sizes(self) -> list[int]:
        return [len(self.fold(i)) for i in range(self.k)]


def _read_text(path: Path | str) -> str:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"File not found: {path}")
    try:
        return path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise EmbeddingFormatError(f"not valid UTF-8 ({e.reason})", path) from None


def _read_lines(path: Path | str) -> Iterator[tuple[int, str]]:
    """Yield (line number, line) for non-blank, non-comment lines."""
    for line_number, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        yield line_number, line


def _split_pair(path: Path | str, line_number: int, line: str) -> tuple[str, str]:
    fields = line.split("\t")
    if len(fields) != 2 or not fields[0] or not fields[1].strip():
        raise EmbeddingFormatError(
            f"expected '<id>\\t<value>', found {len(fields)} tab-separated field(s)", path, line_number
        )
    return fields[0], fields[1].strip()


def _read_pair_frame(path: Path | str, columns: tuple[str, str]) -> pd.DataFrame:
    """
    Read a two-column tab-separated file into a string DataFrame.

    Blank and `#` comment lines are dropped. The `line` column holds each
    row's 1-based line number for error messages; values are stripped.

    Raises:
        DataError: the file does not exist.
        EmbeddingFormatError: invalid UTF-8, empty input or a line without
            exactly two non-empty fields.
    """
    key, value = columns
    lines = pd.Series(_read_text(path).splitlines(), dtype=object)
    frame = pd.DataFrame({"line": np.arange(1, len(lines) + 1), "raw": lines})
    frame = frame[(frame["raw"].str.strip() != "") & ~frame["raw"].str.startswith("#")]
    if frame.empty:
        raise EmbeddingFormatError("empty input: no data lines found", path)
    # a third field stays inside the value and is rejected with its line number
    pairs = frame["raw"].str.split("\t", n=1, expand=True).reindex(columns=[0, 1]).fillna("")
    frame = frame.assign(**{key: pairs[0], value: pairs[1]}).drop(columns="raw")
    malformed = (frame[key] == "") | (frame[value].str.strip() == "") | frame[value].str.contains("\t", regex=False)
    if malformed.any():
        line_number = int(frame[malformed].iloc[0]["line"])
        raise EmbeddingFormatError(f"expected two non-empty tab-separated fields '<{key}>\\t<{value}>'", path, line_number)
    frame[value] = frame[value].str.strip()
    return frame.reset_index(drop=True)


def _first_duplicate(frame: pd.DataFrame, column: str) -> pd.Series | None:
    duplicated = frame[column].duplicated()
    return frame[duplicated].iloc[0] if duplicated.any() else None


def parse_embedding_file(path: Path | str, expected_dim: int | None = None) -> EmbeddingTable:
    """
    Parse an embedding table file.

    Args:
        path (Path | str): File with lines `<id>\\t<v1> <v2> ... <vd>`.
        expected_dim (int | None): When given, every vector must have this dimension.

    Returns:
        EmbeddingTable: Entries in file order.

    Raises:
        EmbeddingFormatError: malformed line, non-numeric value, duplicate id,
            dimension mismatch or empty file, with the line number.
    """
    entries: dict[str, np.ndarray] = {}
    dim = expected_dim
    for line_number, line in _read_lines(path):
        key, rest = _split_pair(path, line_number, line)
        tokens = rest.split()
        for token in tokens:
            if not NUMBER_PATTERN.match(token):
                raise EmbeddingFormatError(f"non-numeric value '{token}'", path, line_number)
        if key in entries:
            raise EmbeddingFormatError(f"duplicate id '{key}'", path, line_number)
        if dim is None:
            dim = len(tokens)
        elif len(tokens) != dim:
            raise EmbeddingFormatError(
                f"dimension mismatch for '{key}': found {len(tokens)} values, expected {dim}", path, line_number
            )
        entries[key] = np.array([float(token) for token in tokens], dtype=np.float64)
    if not entries:
        raise EmbeddingFormatError("empty input: no embedding lines found", path)
    try:
        return EmbeddingTable(entries)
    except DataError as e:
        # overflowing literals such as 1e999 parse to inf
        raise EmbeddingFormatError(str(e), path) from None


def format_embedding_table(table: EmbeddingTable) -> str:
    """Render a table in the embedding file format; values use the shortest exact repr."""
    lines = []
    for key, vector in table.items():
        lines.append(key + "\t" + " ".join(repr(float(value)) for value in vector.values))
    return "\n".join(lines) + "\n"


def write_embedding_file(table: EmbeddingTable, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_embedding_table(table), encoding="utf-8")
    logging.info(f"Wrote {len(table)} embeddings (dim {table.dim}) to {path}")
    return path


def average_vectors(vectors: Sequence[EmbeddingVector]) -> EmbeddingVector:
    """
    Elementwise arithmetic mean of equally sized vectors.

    Used both for clip-level acoustic embeddings (mean of segment embeddings)
    and for class semantic embeddings (mean of label word vectors).
    """
    vectors = list(vectors)
    if not vectors:
        raise DataError("Cannot average an empty sequence of vectors")
    dims = {vector.dim for vector in vectors}
    if len(dims) != 1:
        raise DataError(f"Cannot average vectors of mixed dimensions {sorted(dims)}")
    return EmbeddingVector(np.mean(np.vstack([vector.values for vector in vectors]), axis=0))


def split_folds(class_ids: Sequence[str], k: int, seed: int) -> FoldAssignment:
    """
    Randomly partition classes into k disjoint folds of near-equal size.

    Classes are sorted before shuffling so the result depends only on the
    class set and the seed. When the count does not divide evenly, the last
    folds receive the extra class (521 classes, k=5 -> 104,104,104,104,105).

    Args:
        class_ids (Sequence[str]): Class ids to partition (must be unique).
        k (int): Number of folds, 1 <= k <= number of classes.
        seed (int): Seed for numpy's default generator.

    Returns:
        FoldAssignment: Fold sizes differ by at most one.
    """
    ids = sorted(class_ids)
    if len(set(ids)) != len(ids):
        raise DataError("Class ids passed to split_folds must be unique")
    if k < 1:
        raise ConfigError(f"Number of folds must be positive, got {k}")
    if k > len(ids):
        raise ConfigError(f"Cannot split {len(ids)} classes into {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    base, extra = divmod(len(ids), k)
    sizes = [base + (1 if fold >= k - extra else 0) for fold in range(k)]
    folds: dict[str, int] = {}
    start = 0
    for fold, size in enumerate(sizes):
        for position in order[start:start + size]:
            folds[ids[position]] = fold
        start += size
    return FoldAssignment(folds, k)


def parse_manifest(path: Path | str) -> list[tuple[str, str]]:
    """Read `<instance_id>\\t<class_id>` lines. Instance ids must be unique."""
    frame = _read_pair_frame(path, ("instance_id", "class_id"))
    duplicate = _first_duplicate(frame, "instance_id")
    if duplicate is not None:
        raise EmbeddingFormatError(f"duplicate instance id '{duplicate['instance_id']}'", path, int(duplicate["line"]))
    return list(zip(frame["instance_id"], frame["class_id"]))


def write_manifest(dataset: LabeledDataset, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"instance_id": dataset.instance_ids, "class_id": dataset.labels})
    frame.to_csv(path, sep="\t", header=False, index=False, lineterminator="\n")
    logging.info(f"Wrote manifest with {len(dataset)} instances to {path}")
    return path


def parse_fold_file(path: Path | str) -> FoldAssignment:
    """Read `<class_id>\\t<fold_index>` lines into a FoldAssignment."""
    frame = _read_pair_frame(path, ("class_id", "fold_index"))
    invalid = ~frame["fold_index"].str.fullmatch(r"\d+")
    if invalid.any():
        row = frame[invalid].iloc[0]
        raise EmbeddingFormatError(
            f"fold index must be a non-negative integer, got '{row['fold_index']}'", path, int(row["line"])
        )
    duplicate = _first_duplicate(frame, "class_id")
    if duplicate is not None:
        raise EmbeddingFormatError(
            f"class '{duplicate['class_id']}' assigned to more than one fold", path, int(duplicate["line"])
        )
    return FoldAssignment({class_id: int(index) for class_id, index in zip(frame["class_id"], frame["fold_index"])})


def write_fold_file(folds: FoldAssignment, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    class_ids = sorted(folds.folds)
    frame = pd.DataFrame({"class_id": class_ids, "fold": [folds.folds[c] for c in class_ids]})
    frame.to_csv(path, sep="\t", header=False, index=False, lineterminator="\n")
    return path


def build_dataset(manifest: Sequence[tuple[str, str]], acoustic: EmbeddingTable) -> LabeledDataset:
    """Join manifest rows with their acoustic embeddings."""
    items = []
    for instance_id, class_id in manifest:
        if instance_id not in acoustic:
            raise DataError(f"Instance '{instance_id}' has no acoustic embedding")
        items.append(LabeledInstance(instance_id, acoustic[instance_id], class_id))
    return LabeledDataset(tuple(items), acoustic.dim)


def average_segments(table: EmbeddingTable, separator: str = "/") -> EmbeddingTable:
    """
    Collapse segment-level embeddings `<clip_id><separator><segment>` into one
    clip-level embedding per clip by averaging its segments.

    Segments are averaged in segment order (numeric when the suffix is an integer).
    """
    groups: dict[str, list[tuple[str, EmbeddingVector]]] = {}
    for key, vector in table.items():
        clip_id, sep, segment = key.rpartition(separator)
        if not sep or not clip_id or not segment:
            raise DataError(f"Segment id '{key}' is not of the form <clip>{separator}<segment>")
        groups.setdefault(clip_id, []).append((segment, vector))

    def segment_order(item):
        segment = item[0]
        return (0, int(segment), "") if segment.isdigit() else (1, 0, segment)

    clips = {}
    for clip_id, segments in groups.items():
        clips[clip_id] = average_vectors([vector for _, vector in sorted(segments, key=segment_order)])
    logging.info(f"Averaged {len(table)} segment embeddings into {len(clips)} clip embeddings")
    return EmbeddingTable(clips)


def parse_label_file(path: Path | str) -> dict[str, list[str]]:
    """Read `<class_id>\\t<label>[,<label>...]` lines."""
    frame = _read_pair_frame(path, ("class_id", "labels"))
    duplicate = _first_duplicate(frame, "class_id")
    if duplicate is not None:
        raise EmbeddingFormatError(f"duplicate class id '{duplicate['class_id']}'", path, int(duplicate["line"]))
    return {
        class_id: [label.strip() for label in value.split(",") if label.strip()]
        for class_id, value in zip(frame["class_id"], frame["labels"])
    }


def build_class_table(labels: Mapping[str, Sequence[str]], token_vectors: EmbeddingTable) -> ClassTable:
    """
    Build class semantic embeddings by averaging the vectors of each class's labels.

    Labels without a vector are skipped with a warning; a class left with no
    vector at all is an error, since dropping it would change the class set.
    """
    entries = {}
    for class_id, class_labels in labels.items():
        available = [token_vectors[label] for label in class_labels if label in token_vectors]
        missing = [label for label in class_labels if label not in token_vectors]
        if missing:
            logging.warning(f"Class '{class_id}': no vector for label(s) {missing}")
        if not available:
            raise DataError(f"Class '{class_id}' has no label with an available vector")
        entries[class_id] = average_vectors(available)
    return ClassTable(entries)


def fold_summary(folds: FoldAssignment, dataset: LabeledDataset | None = None) -> pd.DataFrame:
    """
    Per-fold class and sample counts.

    Args:
        folds (FoldAssignment): Fold assignment to summarize.
        dataset (LabeledDataset | None): Optional instances; their labels are counted per fold.

    Returns:
        pandas.DataFrame: Columns fold, classes, samples (samples is 0 without a dataset).
    """
    counts = pd.Series(dataset.labels if dataset is not None else [], dtype=object).value_counts()
    rows = []
    for index in range(folds.k):
        members = folds.fold(index)
        rows.append({
            "fold": f"Fold{index}",
            "classes": len(members),
            "samples": int(sum(counts.get(class_id, 0) for class_id in members)),
        })
    return pd.DataFrame(rows, columns=["fold", "classes", "samples"])
