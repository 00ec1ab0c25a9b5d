"""State-box covers, input grids, and the one-step data-collection campaign.

The cover is an axis-aligned uniform grid of centers with per-axis spacing
``h = 2 eps / sqrt(n)``, the tightest uniform spacing for which every point
of the box is within Euclidean distance ``eps`` of some center. The grid is
truncated per axis so centers stay inside the box (a symmetric margin of at
most h/2 on each side), which preserves the covering radius.

A dataset holds, for every (cover center, input) pair, one nominal next
state and a fixed number of simulator replicates with per-replicate seeds
derived deterministically from a master seed, so collection is
bit-reproducible for synthetic backends.
"""

from __future__ import annotations

import csv
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    CorruptDatasetError,
    InvalidArgumentError,
    ResourceLimitError,
    SimulatorIOError,
)
from .seeding import derive_seed
from .systems import NominalModel, StochasticSimulator, SystemSpec

DATASET_MAGIC = "simgap-dataset"
DATASET_VERSION = 1

DEFAULT_CENTER_CAP = 10_000_000


@dataclass(frozen=True)
class Cover:
    """Finite cover of the state box by balls of radius epsilon."""

    epsilon: float
    centers: np.ndarray          # (N, n)
    per_axis_spacing: np.ndarray  # (n,)
    per_axis_counts: tuple

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]


def build_cover(state_box, epsilon: float, max_centers: int = DEFAULT_CENTER_CAP) -> Cover:
    """Uniform grid of centers covering the box within Euclidean radius epsilon."""
    if not epsilon > 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    box = np.asarray(state_box, dtype=float)
    n = box.shape[0]
    widths = box[:, 1] - box[:, 0]
    h = 2.0 * epsilon / np.sqrt(n)

    counts = [max(1, int(np.ceil(w / h - 1e-12))) for w in widths]
    total = 1
    for c in counts:
        total *= c
    if total > max_centers:
        raise ResourceLimitError(
            f"cover would need {total} centers, exceeding the cap of {max_centers}; "
            f"increase epsilon or raise the cap",
            required=total,
            cap=max_centers,
        )

    axes = []
    for lo, w, c in zip(box[:, 0], widths, counts):
        margin = (w - (c - 1) * h) / 2.0
        axes.append(lo + margin + h * np.arange(c))
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    return Cover(
        epsilon=float(epsilon),
        centers=centers,
        per_axis_spacing=np.full(n, h),
        per_axis_counts=tuple(counts),
    )


def enumerate_inputs(lo, hi, step) -> np.ndarray:
    """Cartesian product of per-axis arithmetic sequences, endpoints included.

    Endpoint inclusion uses an absolute tolerance of 1e-9 on the final value,
    matching grids written as {lo, lo+step, ..., hi}.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    step = np.atleast_1d(np.asarray(step, dtype=float))
    if np.any(step <= 0):
        raise InvalidArgumentError("step must be positive componentwise")
    if np.any(lo > hi):
        raise InvalidArgumentError("lo must be <= hi componentwise")
    axes = []
    for a, b, s in zip(lo, hi, step):
        count = int(np.floor((b - a) / s + 1e-9)) + 1
        axes.append(a + s * np.arange(count))
    rows = list(itertools.product(*axes))
    return np.array(rows, dtype=float)


@dataclass(frozen=True)
class DatasetRecord:
    r: int
    j: int
    x_r: np.ndarray
    u: np.ndarray
    nominal: np.ndarray          # (n,)
    replicates: np.ndarray       # (n_hat_1, n)
    seeds: np.ndarray            # (n_hat_1,) uint64


@dataclass
class Dataset:
    spec: SystemSpec
    cover: Cover
    inputs: np.ndarray
    n_hat_1: int
    master_seed: int
    records: list
    complete: bool = True

    @property
    def n_pairs(self) -> int:
        return len(self.records)

    def record(self, r: int, j: int) -> DatasetRecord:
        idx = r * len(self.inputs) + j
        rec = self.records[idx]
        if rec.r != r or rec.j != j:
            raise CorruptDatasetError(f"record order broken at ({r}, {j})")
        return rec

    def empirical_means(self) -> np.ndarray:
        """(N*M, n) matrix of replicate means in canonical (r-major) order."""
        return np.stack([rec.replicates.mean(axis=0) for rec in self.records])

    def nominals(self) -> np.ndarray:
        return np.stack([rec.nominal for rec in self.records])


def _collect_pair(model, sim, x_r, u, n_hat_1, master_seed, r, j):
    seeds = np.array(
        [derive_seed(master_seed, r, j, k) for k in range(n_hat_1)], dtype=np.uint64
    )
    nominal = model.map_batch(x_r, u)
    try:
        reps = sim.replicates(x_r, u, seeds)
    except SimulatorIOError as exc:
        exc.location = (r, j)
        raise
    return DatasetRecord(r=r, j=j, x_r=x_r, u=u, nominal=nominal,
                         replicates=np.asarray(reps, dtype=float), seeds=seeds)


def collect_dataset(model: NominalModel, sim: StochasticSimulator, cover: Cover,
                    inputs, n_hat_1: int, master_seed: int, workers: int = 1,
                    checkpoint_path: Optional[str] = None,
                    resume_from: Optional[Dataset] = None) -> Dataset:
    """Run the N x M x n_hat_1 campaign over all (center, input) pairs.

    Replicate k at pair (r, j) uses the seed derived from
    (master_seed, r, j, k); records are stored r-major regardless of
    completion order. On a simulator IO failure the partial dataset is saved
    to ``checkpoint_path`` (when given) with a resume marker before the error
    propagates; passing that file back via ``resume_from`` skips the pairs it
    already holds.
    """
    if n_hat_1 < 1:
        raise InvalidArgumentError("n_hat_1 must be >= 1")
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs.reshape(-1, 1)
    all_pairs = [(r, j) for r in range(cover.n_centers) for j in range(len(inputs))]

    results: dict = {}
    if resume_from is not None:
        for rec in resume_from.records:
            results[(rec.r, rec.j)] = rec
    pairs = [p for p in all_pairs if p not in results]

    error: Optional[Exception] = None
    if workers <= 1:
        try:
            for r, j in pairs:
                results[(r, j)] = _collect_pair(
                    model, sim, cover.centers[r], inputs[j], n_hat_1, master_seed, r, j
                )
        except SimulatorIOError as exc:
            error = exc
    else:
        sims = [sim] + [sim.clone() for _ in range(workers - 1)]
        chunks = [pairs[w::workers] for w in range(workers)]

        def run_chunk(widx):
            out = {}
            for r, j in chunks[widx]:
                out[(r, j)] = _collect_pair(
                    model, sims[widx], cover.centers[r], inputs[j], n_hat_1,
                    master_seed, r, j,
                )
            return out

        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_chunk, w) for w in range(workers)]
            for fut in futures:
                try:
                    results.update(fut.result())
                except SimulatorIOError as exc:
                    error = error or exc
        for s in sims[1:]:
            s.close()

    records = [results[p] for p in all_pairs if p in results]
    complete = len(records) == len(all_pairs)
    ds = Dataset(
        spec=model.spec, cover=cover, inputs=inputs, n_hat_1=n_hat_1,
        master_seed=master_seed, records=records, complete=complete,
    )
    if error is not None:
        if checkpoint_path:
            save_dataset(ds, checkpoint_path)
        raise error
    return ds


# ---------------------------------------------------------------------------
# Persistence: line-delimited JSON, full double precision via repr round-trip
# ---------------------------------------------------------------------------

def _header_dict(ds: Dataset) -> dict:
    return {
        "magic": DATASET_MAGIC,
        "version": DATASET_VERSION,
        "n": ds.spec.state_dim,
        "m": ds.spec.input_dim,
        "tau": ds.spec.tau,
        "state_box": ds.spec.state_box.tolist(),
        "input_grid": ds.spec.input_grid.tolist(),
        "epsilon": ds.cover.epsilon,
        "per_axis_spacing": ds.cover.per_axis_spacing.tolist(),
        "per_axis_counts": list(ds.cover.per_axis_counts),
        "centers": ds.cover.centers.tolist(),
        "inputs": ds.inputs.tolist(),
        "N": ds.cover.n_centers,
        "M": int(len(ds.inputs)),
        "n_hat_1": ds.n_hat_1,
        "master_seed": ds.master_seed,
        "complete": ds.complete,
        "n_records": len(ds.records),
    }


def save_dataset(ds: Dataset, path: str) -> None:
    """Write the canonical dataset file: one JSON header line, one line per record."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_header_dict(ds), sort_keys=True) + "\n")
        for rec in ds.records:
            fh.write(json.dumps({
                "r": rec.r,
                "j": rec.j,
                "x_r": rec.x_r.tolist(),
                "u": rec.u.tolist(),
                "nominal": rec.nominal.tolist(),
                "seeds": [int(s) for s in rec.seeds],
                "replicates": rec.replicates.tolist(),
            }, sort_keys=True) + "\n")


def load_dataset(path: str, allow_partial: bool = False) -> Dataset:
    """Read a canonical dataset file; validates schema, counts, and finiteness."""
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise CorruptDatasetError(f"{path}: empty file")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise CorruptDatasetError(f"{path}: unreadable header") from exc
        if header.get("magic") != DATASET_MAGIC:
            raise CorruptDatasetError(f"{path}: bad magic {header.get('magic')!r}")
        if header.get("version") != DATASET_VERSION:
            raise CorruptDatasetError(
                f"{path}: schema version {header.get('version')} != {DATASET_VERSION}"
            )
        spec = SystemSpec(
            state_dim=header["n"], input_dim=header["m"], tau=header["tau"],
            state_box=np.array(header["state_box"]),
            input_grid=np.array(header["input_grid"]),
        )
        cov = Cover(
            epsilon=header["epsilon"],
            centers=np.array(header["centers"], dtype=float).reshape(header["N"], header["n"]),
            per_axis_spacing=np.array(header["per_axis_spacing"]),
            per_axis_counts=tuple(header["per_axis_counts"]),
        )
        n_hat_1 = header["n_hat_1"]
        records = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptDatasetError(f"{path}:{lineno}: unreadable record") from exc
            reps = np.array(obj["replicates"], dtype=float)
            if reps.shape != (n_hat_1, header["n"]):
                raise CorruptDatasetError(
                    f"{path}:{lineno}: record (r={obj.get('r')}, j={obj.get('j')}) has "
                    f"replicate shape {reps.shape}, expected ({n_hat_1}, {header['n']})"
                )
            rec = DatasetRecord(
                r=obj["r"], j=obj["j"],
                x_r=np.array(obj["x_r"], dtype=float),
                u=np.array(obj["u"], dtype=float),
                nominal=np.array(obj["nominal"], dtype=float),
                replicates=reps,
                seeds=np.array(obj["seeds"], dtype=np.uint64),
            )
            if not (np.all(np.isfinite(rec.nominal)) and np.all(np.isfinite(rec.replicates))):
                raise CorruptDatasetError(
                    f"{path}:{lineno}: non-finite entries in record (r={rec.r}, j={rec.j})"
                )
            records.append(rec)

    if len(records) != header["n_records"]:
        raise CorruptDatasetError(
            f"{path}: truncated file, {len(records)} records but header promises "
            f"{header['n_records']}"
        )
    complete = bool(header.get("complete", True))
    if not complete and not allow_partial:
        raise CorruptDatasetError(
            f"{path}: dataset carries a resume marker (partial collection); "
            f"pass allow_partial=True to load it anyway"
        )

    m_inputs = header["M"]
    n_centers = header["N"]
    ds = Dataset(
        spec=spec, cover=cov,
        inputs=np.array(header["inputs"], dtype=float).reshape(m_inputs, header["m"]),
        n_hat_1=n_hat_1, master_seed=header["master_seed"], records=records,
        complete=complete,
    )
    if complete:
        expected = [(r, j) for r in range(n_centers) for j in range(m_inputs)]
        got = [(rec.r, rec.j) for rec in records]
        if got != expected:
            missing = sorted(set(expected) - set(got))
            raise CorruptDatasetError(
                f"{path}: records out of order or missing, first problem near "
                f"{missing[0] if missing else got[0]}"
            )
    return ds


def export_csv(ds: Dataset, path: str) -> None:
    """Inspection export: r, j, k (k=-1 for the nominal row), x_r, u, next state."""
    n, m = ds.spec.state_dim, ds.spec.input_dim
    header = (
        ["r", "j", "k"]
        + [f"x_r{i+1}" for i in range(n)]
        + [f"u{i+1}" for i in range(m)]
        + [f"next{i+1}" for i in range(n)]
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in ds.records:
            base = [rec.r, rec.j]
            xr = [repr(v) for v in rec.x_r]
            uu = [repr(v) for v in rec.u]
            writer.writerow(base + [-1] + xr + uu + [repr(v) for v in rec.nominal])
            for k in range(rec.replicates.shape[0]):
                writer.writerow(base + [k] + xr + uu + [repr(v) for v in rec.replicates[k]])
