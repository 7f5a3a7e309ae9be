"""Synthetic slate interaction data and the per-model dataset views."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Dataset, ModelKind, ModelParams, Slate

__all__ = [
    "GeneratorSpec",
    "DatasetFormatError",
    "RNG_ALGORITHM",
    "enumerate_slates",
    "slate_array",
    "make_true_params",
    "simulate",
    "to_reward_view",
    "to_rank_view",
    "view_for",
    "dataset_to_csv",
    "dataset_from_csv",
    "write_dataset",
    "read_dataset",
]

RNG_ALGORITHM = (
    "numpy.random.Philox (Philox4x64-10); one stream per slate keyed by "
    "seed XOR splitmix64(slate_index); per-slate counts by sequential "
    "conditional binomials over [non-click, item_1..item_K]"
)

_MASK64 = (1 << 64) - 1


def _splitmix64(i: int) -> int:
    z = (i + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def slate_array(catalog_size: int, slate_size: int) -> np.ndarray:
    """All K-subsets of range(N) as a lexicographically ordered (C(N,K), K) array."""
    N, K = int(catalog_size), int(slate_size)
    if K < 2:
        raise ValueError(f"slate size must be >= 2, got {K}")
    if K > N:
        raise ValueError(f"slate size {K} exceeds catalog size {N}")
    count = math.comb(N, K)
    flat = np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(N), K)),
                       dtype=np.int64, count=count * K)
    return flat.reshape(count, K)


def enumerate_slates(catalog_size: int, slate_size: int) -> list[Slate]:
    return [Slate(tuple(row)) for row in slate_array(catalog_size, slate_size).tolist()]


def make_true_params(catalog_size: int) -> ModelParams:
    """phi = 100 and theta evenly spaced from 1 (item 0) to 6 (item N-1)."""
    if catalog_size < 2:
        raise ValueError(f"catalog size must be >= 2, got {catalog_size}")
    return ModelParams(np.linspace(1.0, 6.0, catalog_size), 100.0)


@dataclass(frozen=True)
class GeneratorSpec:
    catalog_size: int
    slate_size: int
    samples_per_slate: int
    true_params: ModelParams
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_slate < 1:
            raise ValueError("samples_per_slate must be >= 1")
        if not 2 <= self.slate_size <= self.catalog_size:
            raise ValueError(
                f"need 2 <= slate_size <= catalog_size, got K={self.slate_size}, N={self.catalog_size}")
        if self.true_params.catalog_size != self.catalog_size:
            raise ValueError("true_params dimension does not match catalog size")
        if self.true_params.phi is None:
            raise ValueError("true_params must include phi")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def standard(cls, catalog_size: int, slate_size: int, samples_per_slate: int,
              seed: int = 0) -> "GeneratorSpec":
        return cls(catalog_size, slate_size, samples_per_slate,
                   make_true_params(catalog_size), seed)

    def metadata(self) -> dict:
        return {
            "catalog_size": self.catalog_size,
            "slate_size": self.slate_size,
            "samples_per_slate": self.samples_per_slate,
            "seed": self.seed,
            "rng_algorithm": RNG_ALGORITHM,
            "numpy_version": np.__version__,
            "true_params": self.true_params.to_dict(),
        }


def _conditional_probs(scores: np.ndarray) -> np.ndarray:
    """P(outcome o | not any earlier outcome) for every row of ``scores``."""
    tail = np.cumsum(scores[:, ::-1], axis=1)[:, ::-1]
    return np.minimum(1.0, scores[:, :-1] / tail[:, :-1])


def _draw_counts(gen: np.random.Generator, n: int, cond: list[float]) -> list[int]:
    out = []
    remaining = n
    for p in cond:
        k = int(gen.binomial(remaining, p)) if remaining else 0
        out.append(k)
        remaining -= k
    out.append(remaining)
    return out


def simulate(spec: GeneratorSpec) -> Dataset:
    """Draw one multinomial outcome vector of ``n`` trials for every slate.

    Each slate gets its own Philox stream derived from ``(seed, slate index)``,
    so any record can be regenerated on its own and the result does not
    depend on the order slates are visited in.
    """
    slates = slate_array(spec.catalog_size, spec.slate_size)
    theta, phi = spec.true_params.theta, spec.true_params.phi
    scores = np.column_stack([np.full(len(slates), phi), theta[slates]])
    cond = _conditional_probs(scores).tolist()
    n = spec.samples_per_slate
    counts = np.array(
        [_draw_counts(np.random.Generator(np.random.Philox(key=spec.seed ^ _splitmix64(i))), n, c)
         for i, c in enumerate(cond)], dtype=np.int64).reshape(scores.shape)
    return Dataset(spec.catalog_size, spec.slate_size, slates, counts[:, 0], counts[:, 1:])


# -- views -------------------------------------------------------------------


def _require_raw(dataset: Dataset) -> None:
    if dataset.view != "raw":
        raise ValueError(f"views are derived from raw data, got the {dataset.view!r} view")


def to_reward_view(dataset: Dataset) -> Dataset:
    """Collapse per-item clicks into one click count per slate."""
    if dataset.view == "reward":
        return dataset
    _require_raw(dataset)
    return Dataset(dataset.catalog_size, dataset.slate_size, dataset.slates,
                   dataset.non_clicks, dataset.total_clicks[:, None], view="reward")


def to_rank_view(dataset: Dataset) -> Dataset:
    """Drop the non-click counts, keeping only which item was clicked."""
    if dataset.view == "rank":
        return dataset
    _require_raw(dataset)
    return Dataset(dataset.catalog_size, dataset.slate_size, dataset.slates,
                   np.zeros(len(dataset), dtype=np.int64), dataset.clicks, view="rank")


def view_for(kind: ModelKind | str, dataset: Dataset) -> Dataset:
    kind = ModelKind.parse(kind)
    if dataset.view == kind.view:
        return dataset
    if kind is ModelKind.REWARD:
        return to_reward_view(dataset)
    if kind is ModelKind.RANK:
        return to_rank_view(dataset)
    raise ValueError(f"the full model needs raw data, got the {dataset.view!r} view")


# -- file format ---------------------------------------------------------------


class DatasetFormatError(ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


def dataset_to_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    width = dataset.clicks.shape[1]
    writer.writerow(["slate", "nc"] + [f"c_{i + 1}" for i in range(width)])
    for s, nc, c in zip(dataset.slates.tolist(), dataset.non_clicks.tolist(),
                        dataset.clicks.tolist()):
        writer.writerow([";".join(map(str, s)), nc, *c])
    return buf.getvalue()


def dataset_from_csv(text: str, catalog_size: int | None = None,
                     view: str | None = None) -> Dataset:
    """Parse the ``slate,nc,c_1,...`` table.

    Without ``catalog_size`` the catalog is taken to be ``max item + 1``.
    Rows for the same slate (in any item order) are summed.
    """
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise DatasetFormatError("empty dataset: no header")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[:2] != ["slate", "nc"]:
        raise DatasetFormatError("header must start with 'slate,nc' followed by click columns", row=1)
    width = len(header) - 2
    expected = [f"c_{i + 1}" for i in range(width)]
    if header[2:] != expected:
        raise DatasetFormatError(f"click columns must be {','.join(expected)}", row=1)
    if len(rows) == 1:
        raise DatasetFormatError("empty dataset: header but no data rows")

    agg: dict[tuple[int, ...], list[int]] = {}
    K = None
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetFormatError(f"expected {len(header)} fields, got {len(row)}", row=lineno)
        try:
            items = [int(tok) for tok in row[0].split(";")]
        except ValueError:
            raise DatasetFormatError(f"bad slate {row[0]!r}", row=lineno, column="slate") from None
        if len(set(items)) != len(items) or min(items) < 0:
            raise DatasetFormatError(f"invalid slate {row[0]!r}", row=lineno, column="slate")
        if K is None:
            K = len(items)
        elif len(items) != K:
            raise DatasetFormatError(f"slate has {len(items)} items, expected {K}",
                                     row=lineno, column="slate")
        counts = []
        for name, cell in zip(header[1:], row[1:]):
            try:
                v = int(cell)
            except ValueError:
                raise DatasetFormatError(f"not an integer: {cell!r}", row=lineno, column=name) from None
            if v < 0:
                raise DatasetFormatError(f"negative count {v}", row=lineno, column=name)
            counts.append(v)
        order = np.argsort(items)
        key = tuple(items[j] for j in order)
        clicks = counts[1:]
        if width == K:
            clicks = [clicks[j] for j in order]
        if key in agg:
            agg[key] = [a + b for a, b in zip(agg[key], [counts[0], *clicks])]
        else:
            agg[key] = [counts[0], *clicks]

    if view is None:
        view = "reward" if width == 1 else "raw"
    if width != (1 if view == "reward" else K):
        raise DatasetFormatError(f"{width} click columns do not fit slates of size {K} ({view} view)")
    keys = sorted(agg)
    max_item = max(k[-1] for k in keys)
    if catalog_size is None:
        catalog_size = max(max_item + 1, K)
    elif max_item >= catalog_size:
        raise DatasetFormatError(f"item {max_item} outside catalog of size {catalog_size}")
    vals = np.array([agg[k] for k in keys], dtype=np.int64)
    return Dataset(catalog_size, K, np.array(keys), vals[:, 0], vals[:, 1:], view=view)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_dataset(path, dataset: Dataset, metadata: dict | None = None) -> tuple[Path, Path]:
    """Write the CSV plus a JSON sidecar next to it (same stem, ``.json``)."""
    path = Path(path)
    meta = {"catalog_size": dataset.catalog_size, "slate_size": dataset.slate_size,
            "view": dataset.view, "num_slates": len(dataset), "sha256": dataset.digest()}
    meta.update(metadata or {})
    side = _sidecar(path)
    path.write_text(dataset_to_csv(dataset), encoding="utf-8", newline="\n")
    side.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8", newline="\n")
    return path, side


def read_dataset(path) -> tuple[Dataset, dict | None]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    meta = None
    side = _sidecar(path)
    if side.exists() and side != path:
        meta = json.loads(side.read_text(encoding="utf-8"))
    catalog = meta.get("catalog_size") if meta else None
    view = meta.get("view") if meta else None
    return dataset_from_csv(text, catalog_size=catalog, view=view), meta
