"""Labeled graph datasets: generation, splitting, and serialization.

A dataset is an ordered collection of labeled examples plus a split tag.
The on-disk format is one self-describing JSON record per line (gzip when
the path ends in .gz): a header line with format name, version, split tag,
and metadata, then one line per example carrying the packed adjacency
bitstring, endpoint indices, label, hitting times, and provenance.
"""

from __future__ import annotations

import gzip
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .graphs import Graph, enumerate_line_graphs, random_graph
from .walkers import CLASSICAL, QUANTUM, IntegratorError, WalkConfig, label_graph

__all__ = [
    "Example",
    "Dataset",
    "DatasetFormatError",
    "build_line_dataset",
    "build_random_dataset",
    "split",
    "merge",
    "drop_indeterminate",
    "save",
    "load",
]

_FORMAT = "qwalk-dataset"
_VERSION = 1
_SPLIT_TAGS = ("train", "test", "unsplit")


class DatasetFormatError(ValueError):
    """A dataset file failed to parse or violated a record invariant."""


def _expected_label(t_classical: float | None, t_quantum: float | None) -> int:
    if t_quantum is not None and (t_classical is None or t_quantum < t_classical):
        return QUANTUM
    return CLASSICAL


@dataclass(frozen=True)
class Example:
    """One labeled graph together with the hitting times behind the label."""

    graph: Graph
    label: int
    classical_hit_time: float | None = None
    quantum_hit_time: float | None = None
    indeterminate: bool = False
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.label not in (CLASSICAL, QUANTUM):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.label != _expected_label(self.classical_hit_time, self.quantum_hit_time):
            raise ValueError("label contradicts the stored hitting times")
        if self.indeterminate and not (
            self.classical_hit_time is None and self.quantum_hit_time is None
        ):
            raise ValueError("an indeterminate example cannot carry hitting times")


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...]
    split_tag: str = "unsplit"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "examples", tuple(self.examples))
        if not self.examples:
            raise ValueError("a dataset must contain at least one example")
        if self.split_tag not in _SPLIT_TAGS:
            raise ValueError(f"split_tag must be one of {_SPLIT_TAGS}, got {self.split_tag!r}")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    @property
    def class_fractions(self) -> tuple[float, float]:
        """Empirical (classical, quantum) fractions of the examples."""
        quantum = sum(1 for e in self.examples if e.label == QUANTUM)
        total = len(self.examples)
        return ((total - quantum) / total, quantum / total)

    @property
    def max_n(self) -> int:
        return max(e.graph.n for e in self.examples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.examples], dtype=np.int64)


# ====== generation ======


def _config_record(cfg: WalkConfig) -> dict:
    return {
        "gamma": cfg.gamma,
        "p_threshold_override": cfg.p_threshold_override,
        "t_max_cap": cfg.t_max_cap,
        "dt": cfg.dt,
        "record_stride": cfg.record_stride,
        "convergence_check": cfg.convergence_check,
    }


def _path_sequence(g: Graph) -> list[int]:
    """Recover a line graph's vertex order, smaller endpoint reading first."""
    degrees = g.adjacency.sum(axis=0)
    ends = np.nonzero(degrees == 1)[0]
    if ends.size != 2 or not np.all((degrees == 1) | (degrees == 2)):
        raise ValueError("graph is not a line graph")
    best: list[int] | None = None
    for start in ends:
        seq = [int(start)]
        prev = -1
        while len(seq) < g.n:
            neighbors = np.nonzero(g.adjacency[seq[-1]])[0]
            step = int(neighbors[0]) if int(neighbors[0]) != prev else int(neighbors[1])
            prev = seq[-1]
            seq.append(step)
        if best is None or seq < best:
            best = seq
    assert best is not None
    return best


def _label_example(task: tuple) -> Example:
    kind, payload, cfg = task
    if kind == "line":
        graph, provenance = payload
    else:
        n, graph_seed = payload
        graph = random_graph(n, graph_seed)
        provenance = {"kind": "random", "seed": graph_seed}
    try:
        outcome = label_graph(graph, cfg)
    except IntegratorError as exc:
        raise IntegratorError(f"simulation failed for graph {provenance}: {exc}") from exc
    return Example(
        graph=graph,
        label=outcome.label,
        classical_hit_time=outcome.classical_hit_time,
        quantum_hit_time=outcome.quantum_hit_time,
        indeterminate=outcome.indeterminate,
        provenance=provenance,
    )


def _run_tasks(tasks: list[tuple], jobs: int) -> list[Example]:
    if jobs <= 1 or len(tasks) < 2:
        return [_label_example(t) for t in tasks]
    chunk = max(1, len(tasks) // (jobs * 8))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_label_example, tasks, chunksize=chunk))


def build_line_dataset(n: int, cfg: WalkConfig = WalkConfig(), jobs: int = 1) -> Dataset:
    """Label every distinct line graph on n vertices (n!/2 of them)."""
    if not 3 <= n <= 10:
        raise ValueError(f"n must lie in [3, 10], got {n}")
    tasks = [
        ("line", (g, {"kind": "line", "labeling": _path_sequence(g)}), cfg)
        for g in enumerate_line_graphs(n)
    ]
    examples = _run_tasks(tasks, jobs)
    metadata = {"kind": "line", "n": n, "config": _config_record(cfg)}
    return Dataset(tuple(examples), "unsplit", metadata)


def build_random_dataset(
    n: int, count: int, seed: int, cfg: WalkConfig = WalkConfig(), jobs: int = 1
) -> Dataset:
    """Label `count` random connected graphs, deterministically under `seed`.

    Each example gets its own child seed drawn up front, so the result does
    not depend on worker count.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    child_seeds = np.random.default_rng(seed).integers(2**63, size=count)
    tasks = [("random", (n, int(s)), cfg) for s in child_seeds]
    examples = _run_tasks(tasks, jobs)
    metadata = {"kind": "random", "n": n, "count": count, "seed": seed, "config": _config_record(cfg)}
    return Dataset(tuple(examples), "unsplit", metadata)


# ====== reshaping ======


def split(d: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random train/test partition; train size is round(fraction * size)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    size = len(d.examples)
    n_train = int(math.floor(train_fraction * size + 0.5))
    if n_train == 0 or n_train == size:
        raise ValueError(f"split of {size} examples at {train_fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(size)
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    extra = {"split_seed": seed, "train_fraction": train_fraction}
    train = Dataset(
        tuple(d.examples[i] for i in train_idx), "train", {**d.metadata, **extra}
    )
    test = Dataset(tuple(d.examples[i] for i in test_idx), "test", {**d.metadata, **extra})
    return train, test


def merge(parts: Sequence[Dataset]) -> Dataset:
    """Concatenate datasets, keeping a common split tag if they share one."""
    if not parts:
        raise ValueError("merge needs at least one dataset")
    if len(parts) == 1:
        return parts[0]
    tags = {d.split_tag for d in parts}
    tag = tags.pop() if len(tags) == 1 else "unsplit"
    examples = tuple(e for d in parts for e in d.examples)
    return Dataset(examples, tag, {"kind": "merged", "parts": [d.metadata for d in parts]})


def drop_indeterminate(d: Dataset) -> Dataset:
    """Remove examples whose walkers never crossed the threshold."""
    kept = tuple(e for e in d.examples if not e.indeterminate)
    dropped = len(d.examples) - len(kept)
    if dropped == 0:
        return d
    return Dataset(kept, d.split_tag, {**d.metadata, "indeterminate_dropped": dropped})


# ====== serialization ======


def _example_record(e: Example) -> dict:
    return {
        "n": e.graph.n,
        "adjacency": "".join(str(int(b)) for b in e.graph.adjacency.reshape(-1)),
        "v_init": e.graph.v_init,
        "v_target": e.graph.v_target,
        "label": e.label,
        "t_classical": e.classical_hit_time,
        "t_quantum": e.quantum_hit_time,
        "indeterminate": e.indeterminate,
        "provenance": e.provenance,
    }


def save(d: Dataset, path) -> None:
    """Write the line-per-example file; gzip when the path ends in .gz.

    Output bytes are a pure function of the dataset (sorted keys, shortest
    round-trip floats, zeroed gzip timestamp), so identical datasets give
    identical files.
    """
    header = {
        "format": _FORMAT,
        "version": _VERSION,
        "split": d.split_tag,
        "count": len(d.examples),
        "metadata": d.metadata,
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    lines.extend(
        json.dumps(_example_record(e), sort_keys=True, separators=(",", ":"))
        for e in d.examples
    )
    data = ("\n".join(lines) + "\n").encode("utf-8")
    if str(path).endswith(".gz"):
        with open(path, "wb") as raw:
            # filename="" keeps the gzip header free of the output path
            with gzip.GzipFile(fileobj=raw, filename="", mode="wb", mtime=0) as zf:
                zf.write(data)
    else:
        with open(path, "wb") as fh:
            fh.write(data)


def _parse_example(record: dict, lineno: int) -> Example:
    def fail(msg: str):
        raise DatasetFormatError(f"line {lineno}: {msg}")

    for key in ("n", "adjacency", "v_init", "v_target", "label"):
        if key not in record:
            fail(f"missing field {key!r}")
    n = record["n"]
    if not isinstance(n, int) or n < 3:
        fail(f"bad vertex count {n!r}")
    bits = record["adjacency"]
    if not isinstance(bits, str) or len(bits) != n * n or set(bits) - {"0", "1"}:
        fail("adjacency must be a bitstring of length n*n")
    label = record["label"]
    if label not in (0, 1):
        fail(f"label must be 0 or 1, got {label!r}")
    for key in ("t_classical", "t_quantum"):
        value = record.get(key)
        if value is not None and not isinstance(value, (int, float)):
            fail(f"{key} must be a number or null")
    adjacency = np.array([int(c) for c in bits], dtype=np.int64).reshape(n, n)
    try:
        graph = Graph(adjacency, record["v_init"], record["v_target"])
        return Example(
            graph=graph,
            label=label,
            classical_hit_time=record.get("t_classical"),
            quantum_hit_time=record.get("t_quantum"),
            indeterminate=bool(record.get("indeterminate", False)),
            provenance=record.get("provenance", {}),
        )
    except ValueError as exc:
        fail(str(exc))
    raise AssertionError("unreachable")


def load(path) -> Dataset:
    """Read a dataset file, validating every record.

    Raises DatasetFormatError naming the offending line on any parse or
    invariant failure.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if str(path).endswith(".gz"):
        try:
            data = gzip.decompress(data)
        except OSError as exc:
            raise DatasetFormatError(f"not a gzip file: {exc}") from exc
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetFormatError(f"not UTF-8 text: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line 1: invalid JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != _FORMAT:
        raise DatasetFormatError("line 1: missing dataset header")
    if header.get("version") != _VERSION:
        raise DatasetFormatError(f"line 1: unsupported version {header.get('version')!r}")
    examples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            raise DatasetFormatError(f"line {lineno}: empty record")
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: invalid JSON: {exc}") from exc
        examples.append(_parse_example(record, lineno))
    count = header.get("count")
    if count != len(examples):
        raise DatasetFormatError(f"header promises {count} examples, file has {len(examples)}")
    split_tag = header.get("split", "unsplit")
    metadata = header.get("metadata", {})
    try:
        return Dataset(tuple(examples), split_tag, metadata)
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from exc
