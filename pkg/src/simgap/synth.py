"""Symbolic abstraction of the gap-inflated nominal model and controller synthesis.

The nominal map plus the fitted gap is treated as an uncertain system: from
any state x in a grid cell with center x_c and half-width vector rho, the
next mean state lies in the hyper-interval

    f_i(x_c, u) +- ( L_f_i * ||rho|| + sup_cell gamma_i(., u) )

per dimension, where the gamma supremum over the cell is certified by
interval arithmetic on the fitted polynomial. Cells whose closed extent
touches that interval are successors; intervals escaping the state box mark
the (cell, input) pair unusable.

Invariance controllers come from the greatest fixed point (repeatedly drop
cells with no input keeping all successors inside), reach-avoid controllers
from the least fixed point growing backwards from the target, recording the
iteration index as a ranking that strictly decreases along closed-loop steps.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError, ResourceLimitError
from .scp import GapModel
from .systems import NominalModel

DEFAULT_CELL_CAP = 2_000_000
_BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class StateGrid:
    """Uniform cell grid exactly tiling the state box.

    Cells own the half-open interval [lower, upper) on each axis, with the
    last cell per axis closed, so every point of the box belongs to exactly
    one cell. Cell ids are row-major over integer coordinates.
    """

    state_box: np.ndarray
    counts: tuple

    def __post_init__(self):
        object.__setattr__(self, "state_box", np.asarray(self.state_box, dtype=float))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if len(self.counts) != self.state_box.shape[0]:
            raise InvalidArgumentError("counts and state_box dimensions differ")
        if any(c < 1 for c in self.counts):
            raise InvalidArgumentError("every axis needs at least one cell")

    @property
    def state_dim(self) -> int:
        return self.state_box.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return (self.state_box[:, 1] - self.state_box[:, 0]) / np.array(self.counts)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    def coords_of(self, cell_id) -> np.ndarray:
        return np.stack(np.unravel_index(cell_id, self.counts), axis=-1)

    def id_of(self, coords) -> np.ndarray:
        coords = np.asarray(coords)
        return np.ravel_multi_index(tuple(coords.T) if coords.ndim == 2 else tuple(coords),
                                    self.counts)

    def centers(self) -> np.ndarray:
        """(n_cells, n) matrix of cell centers in cell-id order."""
        axes = [
            self.state_box[a, 0] + (np.arange(c) + 0.5) * self.widths[a]
            for a, c in enumerate(self.counts)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def cell_lower(self, cell_id) -> np.ndarray:
        coords = self.coords_of(cell_id)
        return self.state_box[:, 0] + coords * self.widths

    def locate(self, x) -> Optional[int]:
        """Cell owning x, or None when x is outside the box."""
        x = np.asarray(x, dtype=float)
        lo = self.state_box[:, 0]
        hi = self.state_box[:, 1]
        if np.any(x < lo) or np.any(x > hi):
            return None
        idx = np.floor((x - lo) / self.widths).astype(int)
        idx = np.minimum(idx, np.array(self.counts) - 1)  # closed last cell
        return int(self.id_of(idx))


# ---------------------------------------------------------------------------
# Vectorized interval bound of the fitted gap polynomial over every cell
# ---------------------------------------------------------------------------

def _power_range_arrays(lo: np.ndarray, hi: np.ndarray, k: int):
    if k == 1:
        return lo, hi
    a = lo ** k
    b = hi ** k
    r_lo = np.minimum(a, b)
    r_hi = np.maximum(a, b)
    if k % 2 == 0:
        crosses = (lo < 0) & (hi > 0)
        r_lo = np.where(crosses, 0.0, r_lo)
    return r_lo, r_hi


def _gap_upper_on_cells(dim_gap, cell_lo: np.ndarray, cell_hi: np.ndarray,
                        u: np.ndarray) -> np.ndarray:
    """sup of gamma_i over each cell box at a fixed input; shape (n_cells,)."""
    n = cell_lo.shape[1]
    c_count = cell_lo.shape[0]
    total_lo = np.zeros(c_count)
    total_hi = np.zeros(c_count)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    for exps, coef in zip(dim_gap.basis.exponents, dim_gap.q):
        if coef == 0.0:
            continue
        cur_lo = np.ones(c_count)
        cur_hi = np.ones(c_count)
        for axis in range(n):
            k = exps[axis]
            if k == 0:
                continue
            p_lo, p_hi = _power_range_arrays(cell_lo[:, axis], cell_hi[:, axis], k)
            cands = np.stack([cur_lo * p_lo, cur_lo * p_hi, cur_hi * p_lo, cur_hi * p_hi])
            cur_lo = cands.min(axis=0)
            cur_hi = cands.max(axis=0)
        factor = coef * float(np.prod(u ** np.array(exps[n:])))
        term_lo = np.minimum(cur_lo * factor, cur_hi * factor)
        term_hi = np.maximum(cur_lo * factor, cur_hi * factor)
        total_lo += term_lo
        total_hi += term_hi
    return dim_gap.constant_margin + total_hi


@dataclass
class SymbolicModel:
    """Finite abstraction: per (cell, input) a successor hyper-interval,
    the index box of cells it touches, and an out-of-box flag."""

    grid: StateGrid
    inputs: np.ndarray            # (M, m)
    interval_lo: np.ndarray       # (M, C, n)
    interval_hi: np.ndarray       # (M, C, n)
    succ_lo_idx: np.ndarray       # (M, C, n) int
    succ_hi_idx: np.ndarray       # (M, C, n) int
    out_of_box: np.ndarray        # (M, C) bool

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[0]

    def successor_interval(self, cell_id: int, input_index: int) -> np.ndarray:
        return np.stack([self.interval_lo[input_index, cell_id],
                         self.interval_hi[input_index, cell_id]], axis=-1)

    def successor_cells(self, cell_id: int, input_index: int) -> np.ndarray:
        """Explicit successor cell ids for one (cell, input)."""
        lo = self.succ_lo_idx[input_index, cell_id]
        hi = self.succ_hi_idx[input_index, cell_id]
        ranges = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*ranges, indexing="ij")
        coords = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        return self.grid.id_of(coords)


def _index_ranges(lo_vals, hi_vals, grid: StateGrid):
    """Closed-overlap cell index ranges of intervals, per axis, vectorized.

    A boundary touch counts as overlap: an interval endpoint lying exactly on
    a cell face (within a relative 1e-9 in cell units) includes the touching
    neighbor cell as well.
    """
    box_lo = grid.state_box[:, 0]
    w = grid.widths
    counts = np.array(grid.counts)

    ra = (lo_vals - box_lo) / w
    ka = np.floor(ra)
    near = np.abs(ra - np.round(ra)) <= _BOUNDARY_TOL * np.maximum(1.0, np.abs(ra))
    lo_idx = np.where(near, np.round(ra) - 1, ka).astype(int)

    rb = (hi_vals - box_lo) / w
    kb = np.floor(rb)
    near_b = np.abs(rb - np.round(rb)) <= _BOUNDARY_TOL * np.maximum(1.0, np.abs(rb))
    hi_idx = np.where(near_b, np.round(rb), kb).astype(int)

    lo_idx = np.clip(lo_idx, 0, counts - 1)
    hi_idx = np.clip(hi_idx, 0, counts - 1)
    return lo_idx, hi_idx


def build_abstraction(model: NominalModel, gap: GapModel, grid: StateGrid,
                      lipschitz_f, max_cells: int = DEFAULT_CELL_CAP) -> SymbolicModel:
    """Compute successor hyper-intervals for every (cell, input) pair.

    ``lipschitz_f`` is the per-dimension Euclidean Lipschitz constant of the
    nominal map used as the growth bound; gamma upper bounds over each cell
    are clamped at zero before inflating.
    """
    if grid.n_cells > max_cells:
        raise ResourceLimitError(
            f"grid has {grid.n_cells} cells, exceeding the cap of {max_cells}",
            required=grid.n_cells, cap=max_cells,
        )
    l_f = np.broadcast_to(np.asarray(lipschitz_f, dtype=float), (grid.state_dim,))
    inputs = np.asarray(model.spec.input_grid, dtype=float)
    centers = grid.centers()
    half = grid.widths / 2.0
    rho_norm = float(np.linalg.norm(half))
    cell_lo = centers - half
    cell_hi = centers + half
    c_count = grid.n_cells
    m_count = inputs.shape[0]
    n = grid.state_dim

    interval_lo = np.empty((m_count, c_count, n))
    interval_hi = np.empty((m_count, c_count, n))
    succ_lo = np.empty((m_count, c_count, n), dtype=int)
    succ_hi = np.empty((m_count, c_count, n), dtype=int)
    out = np.zeros((m_count, c_count), dtype=bool)

    box_lo = grid.state_box[:, 0]
    box_hi = grid.state_box[:, 1]
    scale = np.maximum(1.0, np.maximum(np.abs(box_lo), np.abs(box_hi)))

    for j in range(m_count):
        u = inputs[j]
        image = model.map_batch(centers, u)
        for i in range(n):
            gamma_up = _gap_upper_on_cells(gap.dims[i], cell_lo, cell_hi, u)
            inflate = l_f[i] * rho_norm + np.maximum(gamma_up, 0.0)
            interval_lo[j, :, i] = image[:, i] - inflate
            interval_hi[j, :, i] = image[:, i] + inflate
        escaped = np.any(
            (interval_lo[j] < box_lo - _BOUNDARY_TOL * scale)
            | (interval_hi[j] > box_hi + _BOUNDARY_TOL * scale),
            axis=1,
        )
        out[j] = escaped
        lo_idx, hi_idx = _index_ranges(interval_lo[j], interval_hi[j], grid)
        succ_lo[j] = lo_idx
        succ_hi[j] = hi_idx

    return SymbolicModel(
        grid=grid, inputs=inputs, interval_lo=interval_lo, interval_hi=interval_hi,
        succ_lo_idx=succ_lo, succ_hi_idx=succ_hi, out_of_box=out,
    )


# ---------------------------------------------------------------------------
# Fixed-point games over the abstraction
# ---------------------------------------------------------------------------

def _integral_image(mask_nd: np.ndarray) -> np.ndarray:
    """Zero-padded cumulative count table for O(1) box-sum queries."""
    table = mask_nd.astype(np.int64)
    for axis in range(mask_nd.ndim):
        table = np.cumsum(table, axis=axis)
    padded = np.zeros(tuple(s + 1 for s in mask_nd.shape), dtype=np.int64)
    padded[tuple(slice(1, None) for _ in mask_nd.shape)] = table
    return padded


def _box_counts(table: np.ndarray, lo_idx: np.ndarray, hi_idx: np.ndarray) -> np.ndarray:
    """Number of True cells in each inclusive index box; vectorized."""
    n = lo_idx.shape[1]
    total = np.zeros(lo_idx.shape[0], dtype=np.int64)
    for corner in range(1 << n):
        coords = []
        sign = 1
        for axis in range(n):
            if corner & (1 << axis):
                coords.append(hi_idx[:, axis] + 1)
            else:
                coords.append(lo_idx[:, axis])
                sign = -sign
        # even number of low choices gives +, odd gives -
        total += sign * table[tuple(coords)]
    return total


def _all_successors_in(table: np.ndarray, sym: SymbolicModel, j: int) -> np.ndarray:
    """For input j, whether every successor cell of each cell lies in the masked
    set whose integral image is ``table``."""
    lo = sym.succ_lo_idx[j]
    hi = sym.succ_hi_idx[j]
    counts = _box_counts(table, lo, hi)
    volume = np.prod(hi - lo + 1, axis=1)
    return counts == volume


@dataclass
class Controller:
    """Winning set with a chosen input per cell and a progress ranking."""

    grid: StateGrid
    inputs: np.ndarray
    winning: np.ndarray        # (C,) bool
    choice: np.ndarray         # (C,) int, -1 when not winning
    ranking: np.ndarray        # (C,) int, 0 on targets / invariant cells
    spec_descriptor: dict = field(default_factory=dict)
    gap_digest: str = ""

    @property
    def winning_cells(self) -> np.ndarray:
        return np.nonzero(self.winning)[0]


def lookup(controller: Controller, x) -> Tuple[Optional[np.ndarray], str]:
    """Input for the cell owning x; (None, reason) when unavailable.

    Reasons: "ok", "out-of-domain" (x outside the box), "not-winning".
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("lookup requires a finite state")
    cell = controller.grid.locate(x)
    if cell is None:
        return None, "out-of-domain"
    if not controller.winning[cell]:
        return None, "not-winning"
    return controller.inputs[controller.choice[cell]], "ok"


def synthesize_invariance(sym: SymbolicModel, safe: np.ndarray,
                          spec_descriptor: Optional[dict] = None,
                          gap_digest: str = "") -> Controller:
    """Greatest fixed point: keep cells with some input whose successors all
    stay in the current set and in the box; inputs are chosen
    lexicographically first by grid order."""
    c_count = sym.grid.n_cells
    safe_mask = np.zeros(c_count, dtype=bool)
    safe_mask[np.asarray(safe, dtype=int)] = True

    w = safe_mask.copy()
    while True:
        table = _integral_image(w.reshape(sym.grid.counts))
        ok_any = np.zeros(c_count, dtype=bool)
        for j in range(sym.n_inputs):
            ok = (~sym.out_of_box[j]) & _all_successors_in(table, sym, j)
            ok_any |= ok
        new_w = w & ok_any
        if np.array_equal(new_w, w):
            break
        w = new_w

    choice = np.full(c_count, -1, dtype=int)
    if w.any():
        table = _integral_image(w.reshape(sym.grid.counts))
        remaining = w.copy()
        for j in range(sym.n_inputs):
            ok = (~sym.out_of_box[j]) & _all_successors_in(table, sym, j)
            pick = remaining & ok
            choice[pick] = j
            remaining &= ~ok
    return Controller(
        grid=sym.grid, inputs=sym.inputs, winning=w, choice=choice,
        ranking=np.where(w, 0, -1),
        spec_descriptor=spec_descriptor or {"type": "invariance"},
        gap_digest=gap_digest,
    )


def synthesize_reach_avoid(sym: SymbolicModel, target: np.ndarray, avoid: np.ndarray,
                           spec_descriptor: Optional[dict] = None,
                           gap_digest: str = "") -> Controller:
    """Least fixed point growing from the target set while shunning avoid cells.

    Ranking is the iteration a cell joined the winning set (0 on targets);
    the chosen input's successors all carry strictly smaller rank.
    """
    c_count = sym.grid.n_cells
    target_mask = np.zeros(c_count, dtype=bool)
    target_mask[np.asarray(target, dtype=int)] = True
    avoid_mask = np.zeros(c_count, dtype=bool)
    if len(np.asarray(avoid).reshape(-1)):
        avoid_mask[np.asarray(avoid, dtype=int)] = True
    if np.any(target_mask & avoid_mask):
        raise InvalidArgumentError("target and avoid sets intersect")

    w = target_mask.copy()
    ranking = np.where(target_mask, 0, -1)
    choice = np.full(c_count, -1, dtype=int)

    iteration = 0
    while True:
        iteration += 1
        table = _integral_image(w.reshape(sym.grid.counts))
        added = np.zeros(c_count, dtype=bool)
        for j in range(sym.n_inputs):
            ok = (~sym.out_of_box[j]) & _all_successors_in(table, sym, j)
            newly = ok & ~w & ~avoid_mask & ~added
            choice[newly] = j
            added |= newly
        if not added.any():
            break
        ranking[added] = iteration
        w |= added

    # target cells need a stored input too; prefer one that stays in the box
    for cid in np.nonzero(target_mask)[0]:
        in_box = np.nonzero(~sym.out_of_box[:, cid])[0]
        choice[cid] = int(in_box[0]) if in_box.size else 0

    return Controller(
        grid=sym.grid, inputs=sym.inputs, winning=w, choice=choice, ranking=ranking,
        spec_descriptor=spec_descriptor or {"type": "reach-avoid"},
        gap_digest=gap_digest,
    )


def cells_in_box(grid: StateGrid, box) -> np.ndarray:
    """Ids of cells whose closed extent lies entirely inside the given box."""
    box = np.asarray(box, dtype=float)
    centers = grid.centers()
    half = grid.widths / 2.0
    tol = _BOUNDARY_TOL * np.maximum(1.0, np.abs(box).max())
    inside = np.all(
        (centers - half >= box[:, 0] - tol) & (centers + half <= box[:, 1] + tol),
        axis=1,
    )
    return np.nonzero(inside)[0]


def cells_touching_box(grid: StateGrid, box) -> np.ndarray:
    """Ids of cells whose closed extent intersects the given box."""
    box = np.asarray(box, dtype=float)
    centers = grid.centers()
    half = grid.widths / 2.0
    overlap = np.all(
        (centers + half >= box[:, 0]) & (centers - half <= box[:, 1]), axis=1,
    )
    return np.nonzero(overlap)[0]


# ---------------------------------------------------------------------------
# Controller export: deterministic text artifact
# ---------------------------------------------------------------------------

def gap_model_digest(gap: GapModel) -> str:
    payload = json.dumps(
        [[d.q.tolist(), [list(e) for e in d.basis.exponents], d.constant_margin]
         for d in gap.dims],
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def save_controller(controller: Controller, path: str) -> None:
    """Header line (grid, spec descriptor, gap digest) + one row per winning cell."""
    header = {
        "magic": "simgap-controller",
        "version": 1,
        "state_box": controller.grid.state_box.tolist(),
        "counts": list(controller.grid.counts),
        "inputs": controller.inputs.tolist(),
        "spec_descriptor": controller.spec_descriptor,
        "gap_digest": controller.gap_digest,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for cid in np.nonzero(controller.winning)[0]:
            lower = controller.grid.cell_lower(int(cid))
            u = controller.inputs[controller.choice[cid]]
            fields = (
                [str(int(cid))]
                + [repr(float(v)) for v in lower]
                + [repr(float(v)) for v in u]
                + [str(int(controller.ranking[cid]))]
            )
            fh.write(",".join(fields) + "\n")


def load_controller(path: str) -> Controller:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("magic") != "simgap-controller":
            raise InvalidArgumentError(f"{path} is not a controller export")
        grid = StateGrid(state_box=np.array(header["state_box"]),
                         counts=tuple(header["counts"]))
        inputs = np.array(header["inputs"], dtype=float)
        c_count = grid.n_cells
        winning = np.zeros(c_count, dtype=bool)
        choice = np.full(c_count, -1, dtype=int)
        ranking = np.full(c_count, -1, dtype=int)
        n, m = grid.state_dim, inputs.shape[1]
        for line in fh:
            parts = line.strip().split(",")
            cid = int(parts[0])
            u = np.array([float(v) for v in parts[1 + n:1 + n + m]])
            winning[cid] = True
            match = np.nonzero(np.all(np.isclose(inputs, u, atol=0.0), axis=1))[0]
            choice[cid] = int(match[0])
            ranking[cid] = int(parts[1 + n + m])
    return Controller(
        grid=grid, inputs=inputs, winning=winning, choice=choice, ranking=ranking,
        spec_descriptor=header.get("spec_descriptor", {}),
        gap_digest=header.get("gap_digest", ""),
    )
