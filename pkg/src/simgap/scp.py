"""Scenario program for the simulation-gap function and its assembly.

Per state dimension i, the fitted gap is a polynomial q_i' p_i(x, u) chosen
by the linear program

    minimize   eta
    subject to q' p(x_r, u_j)  <=  eta                    (row A, every pair)
               q' p(x_r, u_j)  >=  rho_{r,j} + delta1     (row B, every pair)

where rho is the absolute difference between the replicate mean and the
nominal next state. The full gap function then adds the transfer margins:

    gamma_i(x, u) = L_x_i * epsilon + q_i' p_i(x, u) + delta2_i
    L_x_i = L_f_i + L_fhat_i + L_basis_i

holding with per-dimension confidence 1 - beta1_i - beta2_i, and jointly
with confidence 1 - sum_i (beta1_i + beta2_i), floored at zero.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .cover import Dataset
from .errors import InfeasibleError, InvalidArgumentError, UnboundedError
from .estimate import EstimationReport, beta1 as beta1_fn, beta2 as beta2_fn
from .intervals import lipschitz_bound_in_state, polynomial_interval
from .simplex import SimplexResult, solve_standard_form


@dataclass(frozen=True)
class BasisDescriptor:
    """Monomial basis over (x_1..x_n, u_1..u_m); one exponent tuple per term."""

    state_dim: int
    input_dim: int
    exponents: tuple

    def __post_init__(self):
        seen = set()
        for e in self.exponents:
            if len(e) != self.state_dim + self.input_dim:
                raise InvalidArgumentError(
                    f"exponent tuple {e} has wrong length, expected "
                    f"{self.state_dim + self.input_dim}"
                )
            if e in seen:
                raise InvalidArgumentError(f"duplicate basis term {e}")
            seen.add(e)
        if not self.exponents:
            raise InvalidArgumentError("basis needs at least one term")

    @classmethod
    def monomials(cls, state_dim: int, input_dim: int, degree: int) -> "BasisDescriptor":
        """All monomials of total degree <= degree, constant term included."""
        if degree < 0:
            raise InvalidArgumentError("degree must be >= 0")
        nv = state_dim + input_dim
        terms = [
            e for e in itertools.product(range(degree + 1), repeat=nv)
            if sum(e) <= degree
        ]
        terms.sort(key=lambda e: (sum(e), e))
        return cls(state_dim=state_dim, input_dim=input_dim, exponents=tuple(terms))

    @property
    def size(self) -> int:
        return len(self.exponents)

    def eval(self, x, u) -> np.ndarray:
        """Basis vector at one (x, u); shape (z,)."""
        v = np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)),
                            np.atleast_1d(np.asarray(u, dtype=float))])
        return np.array([np.prod(v ** np.array(e)) for e in self.exponents])

    def eval_batch(self, points: np.ndarray) -> np.ndarray:
        """Basis matrix for stacked (x, u) rows; shape (K, z)."""
        pts = np.asarray(points, dtype=float)
        cols = []
        for e in self.exponents:
            col = np.ones(pts.shape[0])
            for axis, k in enumerate(e):
                if k:
                    col = col * pts[:, axis] ** k
            cols.append(col)
        return np.stack(cols, axis=1)


def eval_basis(basis: BasisDescriptor, x, u) -> np.ndarray:
    return basis.eval(x, u)


def residuals(dataset: Dataset, dim: int) -> np.ndarray:
    """|replicate mean - nominal| for dimension ``dim``; shape (N, M)."""
    means = dataset.empirical_means()[:, dim]
    noms = dataset.nominals()[:, dim]
    flat = np.abs(means - noms)
    return flat.reshape(dataset.cover.n_centers, len(dataset.inputs))


@dataclass
class ScenarioLP:
    """The gap-fitting LP in the variables (q, eta).

    Rows come in (A, B) pairs per sample, r-major: row 2s is
    q'p_s - eta <= 0 and row 2s + 1 is -q'p_s <= -(rho_s + delta1).
    """

    basis_values: np.ndarray    # (S, z)
    residual_flat: np.ndarray   # (S,)
    delta1: float

    def __post_init__(self):
        if self.delta1 < 0:
            raise InvalidArgumentError("delta1 must be >= 0")
        if np.any(self.residual_flat < 0):
            raise InvalidArgumentError("residuals must be non-negative")

    @property
    def n_samples(self) -> int:
        return self.basis_values.shape[0]

    @property
    def n_variables(self) -> int:
        return self.basis_values.shape[1] + 1

    @property
    def n_constraints(self) -> int:
        return 2 * self.n_samples

    def inequality_form(self):
        """(G, h) with G @ [q; eta] <= h in canonical row order."""
        s, z = self.basis_values.shape
        g = np.zeros((2 * s, z + 1))
        h = np.zeros(2 * s)
        g[0::2, :z] = self.basis_values
        g[0::2, z] = -1.0
        g[1::2, :z] = -self.basis_values
        h[1::2] = -(self.residual_flat + self.delta1)
        return g, h

    def row_label(self, row: int) -> str:
        kind = "A" if row % 2 == 0 else "B"
        return f"sample {row // 2} ({kind} row)"


def assemble_scp(residual_matrix: np.ndarray, basis_values: np.ndarray,
                 delta1: float) -> ScenarioLP:
    """Build the scenario LP from a residual matrix (or flat vector) and
    precomputed basis values at the sample pairs."""
    flat = np.asarray(residual_matrix, dtype=float).reshape(-1)
    basis_values = np.asarray(basis_values, dtype=float)
    if basis_values.shape[0] != flat.shape[0]:
        raise InvalidArgumentError(
            f"{basis_values.shape[0]} basis rows vs {flat.shape[0]} residuals"
        )
    return ScenarioLP(basis_values=basis_values, residual_flat=flat, delta1=float(delta1))


@dataclass
class LPSolution:
    status: str
    q: Optional[np.ndarray] = None
    eta: Optional[float] = None
    iterations: int = 0
    infeasible_row: Optional[str] = None
    phase1_objective: Optional[float] = None


CONSTRAINT_CHECK_TOL = 1e-8


def solve_lp(lp: ScenarioLP) -> LPSolution:
    """Solve the scenario LP with the two-phase Bland simplex.

    The simplex runs on the dual of the (q, eta) program, which has only
    z + 1 rows regardless of the sample count, keeping the dense tableau
    small and numerically tame. One dual variable corresponds to each
    canonical constraint row, so simplex indices line up with row labels.
    The primal optimum is recovered exactly from the optimal dual basis and
    re-checked against every constraint within 1e-8.

    Duality map, with G v <= h the canonical inequality form over
    v = (q, eta) and objective min eta: the dual is
    min h'lam s.t. G'lam = -(objective), lam >= 0, and the primal optimum is
    v* = -y where y are the simplex multipliers of the dual equalities.
    """
    s, z = lp.basis_values.shape
    p = lp.basis_values
    rho = lp.residual_flat + lp.delta1
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(rho))):
        raise InvalidArgumentError("LP coefficients must be finite")

    g, h = lp.inequality_form()
    c_primal = np.zeros(z + 1)
    c_primal[z] = 1.0

    a_dual = g.T                  # (z+1, 2s), column order = canonical row order
    b_dual = -c_primal
    c_dual = h

    res: SimplexResult = solve_standard_form(a_dual, b_dual, c_dual)
    if res.status == "infeasible":
        # cannot happen: lam uniform on A rows, matched on B rows, is feasible
        raise RuntimeError("dual of the scenario LP reported infeasible")
    if res.status == "unbounded":
        # unbounded dual == infeasible primal; the entering column names a row
        row = res.unbounded_var
        label = lp.row_label(row) if row is not None and row < 2 * s else "unknown row"
        return LPSolution(status="infeasible", infeasible_row=label,
                          iterations=res.iterations)

    # the simplex multipliers of the dual equalities are an optimal primal
    # point: y satisfies G y <= h with objective value equal to the optimum
    v = res.duals
    q = v[:z]
    eta = float(v[z])

    fitted = p @ q
    if np.any(fitted - eta > CONSTRAINT_CHECK_TOL) or np.any(rho - fitted > CONSTRAINT_CHECK_TOL):
        raise RuntimeError(
            "recovered primal point violates constraints beyond 1e-8; "
            f"max upper violation {float((fitted - eta).max()):.3e}, "
            f"max lower violation {float((rho - fitted).max()):.3e}"
        )
    if abs(res.objective + eta) > CONSTRAINT_CHECK_TOL * max(1.0, abs(eta)):
        raise RuntimeError(
            f"strong duality gap {res.objective + eta:.3e} beyond tolerance"
        )
    return LPSolution(status="optimal", q=q, eta=eta, iterations=res.iterations)


def overall_confidence(betas: Sequence) -> float:
    """1 - sum of all (beta1_i, beta2_i), floored at 0."""
    total = 0.0
    for b1, b2 in betas:
        for val in (b1, b2):
            if not 0.0 <= val <= 1.0:
                raise InvalidArgumentError(f"beta {val} outside [0, 1]")
        total += b1 + b2
    return max(0.0, 1.0 - total)


@dataclass
class GapDimension:
    """One dimension of the fitted gap: gamma(x,u) = L_x*eps + q'p(x,u) + delta2."""

    basis: BasisDescriptor
    q: np.ndarray
    eta: float
    lipschitz_f: float
    lipschitz_fhat: float
    lipschitz_basis: float
    epsilon: float
    delta1: float
    delta2: float
    beta1: float
    beta2: float

    @property
    def lipschitz_sum(self) -> float:
        return self.lipschitz_f + self.lipschitz_fhat + self.lipschitz_basis

    @property
    def confidence(self) -> float:
        return 1.0 - self.beta1 - self.beta2

    @property
    def constant_margin(self) -> float:
        return self.lipschitz_sum * self.epsilon + self.delta2

    def evaluate(self, x, u) -> float:
        return float(self.constant_margin + self.q @ self.basis.eval(x, u))

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray:
        return self.constant_margin + self.basis.eval_batch(points) @ self.q

    def upper_bound_on_box(self, state_bounds, u) -> float:
        """Interval upper bound of gamma over a state sub-box at a fixed input."""
        bounds = [tuple(row) for row in np.asarray(state_bounds, dtype=float)]
        bounds += [(float(v), float(v)) for v in np.atleast_1d(u)]
        lo, hi = polynomial_interval(self.basis.exponents, self.q, bounds)
        return float(self.constant_margin + hi)


@dataclass
class GapModel:
    """Componentwise simulation-gap function with its confidence bookkeeping."""

    dims: List[GapDimension]

    @property
    def state_dim(self) -> int:
        return len(self.dims)

    @property
    def betas(self):
        return [(d.beta1, d.beta2) for d in self.dims]

    @property
    def overall_confidence(self) -> float:
        return overall_confidence(self.betas)

    def evaluate(self, x, u) -> np.ndarray:
        return np.array([d.evaluate(x, u) for d in self.dims])

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray:
        return np.stack([d.evaluate_batch(points) for d in self.dims], axis=1)

    @classmethod
    def zero(cls, state_dim: int, input_dim: int) -> "GapModel":
        """Degenerate gap (gamma = 0 everywhere), the deterministic-gap baseline."""
        basis = BasisDescriptor.monomials(state_dim, input_dim, 0)
        dims = [
            GapDimension(basis=basis, q=np.zeros(1), eta=0.0, lipschitz_f=0.0,
                         lipschitz_fhat=0.0, lipschitz_basis=0.0, epsilon=1.0,
                         delta1=0.0, delta2=0.0, beta1=0.0, beta2=0.0)
            for _ in range(state_dim)
        ]
        return cls(dims=dims)


def eval_gap(gap: GapModel, x, u) -> np.ndarray:
    """gamma(x, u) componentwise."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise InvalidArgumentError("eval_gap requires finite (x, u)")
    return gap.evaluate(x, u)


def assemble_gap(q: np.ndarray, basis: BasisDescriptor, lipschitz_f: float,
                 lipschitz_fhat: float, lipschitz_basis: float, epsilon: float,
                 delta1: float, delta2: float, beta1: float, beta2: float,
                 eta: float = float("nan")) -> GapDimension:
    """Bundle one solved dimension into an evaluable gap component."""
    if epsilon <= 0:
        raise InvalidArgumentError("epsilon must be positive")
    if delta2 < 0 or delta1 < 0:
        raise InvalidArgumentError("delta terms must be >= 0")
    for name, val in (("lipschitz_f", lipschitz_f), ("lipschitz_fhat", lipschitz_fhat),
                      ("lipschitz_basis", lipschitz_basis)):
        if val < 0:
            raise InvalidArgumentError(f"{name} must be >= 0")
    return GapDimension(
        basis=basis, q=np.asarray(q, dtype=float), eta=float(eta),
        lipschitz_f=float(lipschitz_f), lipschitz_fhat=float(lipschitz_fhat),
        lipschitz_basis=float(lipschitz_basis), epsilon=float(epsilon),
        delta1=float(delta1), delta2=float(delta2),
        beta1=float(beta1), beta2=float(beta2),
    )


def fit_gap_model(dataset: Dataset, report: EstimationReport, delta1, delta2,
                  basis_degree, input_hull=None) -> GapModel:
    """Fit all dimensions of the gap from a dataset and an estimation report.

    ``delta1``, ``delta2`` and ``basis_degree`` may be scalars or
    per-dimension sequences. The Lipschitz constant of each fitted
    polynomial is certified afterwards by interval arithmetic and written
    back into ``report.lipschitz_gap_basis``.
    """
    n = dataset.spec.state_dim
    m = dataset.spec.input_dim
    delta1 = np.broadcast_to(np.asarray(delta1, dtype=float), (n,))
    delta2 = np.broadcast_to(np.asarray(delta2, dtype=float), (n,))
    degrees = np.broadcast_to(np.asarray(basis_degree, dtype=int), (n,))
    if input_hull is None:
        grid = dataset.inputs
        input_hull = np.stack([grid.min(axis=0), grid.max(axis=0)], axis=1)

    points = np.concatenate(
        [np.repeat(dataset.cover.centers, len(dataset.inputs), axis=0),
         np.tile(dataset.inputs, (dataset.cover.n_centers, 1))], axis=1,
    )
    dims = []
    l_basis_all = np.zeros(n)
    for i in range(n):
        basis = BasisDescriptor.monomials(n, m, int(degrees[i]))
        values = basis.eval_batch(points)
        lp = assemble_scp(residuals(dataset, i), values, delta1[i])
        sol = solve_lp(lp)
        if sol.status == "infeasible":
            raise InfeasibleError(
                f"gap LP for dimension {i} infeasible at {sol.infeasible_row}",
                row=sol.infeasible_row,
            )
        if sol.status == "unbounded":
            raise UnboundedError(f"gap LP for dimension {i} unbounded")
        l_basis = lipschitz_bound_in_state(
            basis.exponents, sol.q, dataset.spec.state_box, input_hull, n
        )
        l_basis_all[i] = l_basis
        b1 = beta1_fn(report.variance_bound[i], delta1[i], dataset.n_hat_1)
        b2 = beta2_fn(report.variance_bound[i], delta2[i], dataset.n_hat_1)
        dims.append(assemble_gap(
            q=sol.q, basis=basis, lipschitz_f=report.lipschitz_f[i],
            lipschitz_fhat=report.lipschitz_fhat[i], lipschitz_basis=l_basis,
            epsilon=dataset.cover.epsilon, delta1=delta1[i], delta2=delta2[i],
            beta1=b1, beta2=b2, eta=sol.eta,
        ))
    report.lipschitz_gap_basis = l_basis_all
    return GapModel(dims=dims)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_gap_model(gap: GapModel, path: str) -> None:
    payload = {
        "overall_confidence": gap.overall_confidence,
        "dims": [
            {
                "state_dim": d.basis.state_dim,
                "input_dim": d.basis.input_dim,
                "exponents": [list(e) for e in d.basis.exponents],
                "q": d.q.tolist(),
                "eta": d.eta,
                "lipschitz_f": d.lipschitz_f,
                "lipschitz_fhat": d.lipschitz_fhat,
                "lipschitz_basis": d.lipschitz_basis,
                "epsilon": d.epsilon,
                "delta1": d.delta1,
                "delta2": d.delta2,
                "beta1": d.beta1,
                "beta2": d.beta2,
            }
            for d in gap.dims
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_gap_model(path: str) -> GapModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    dims = []
    for d in payload["dims"]:
        basis = BasisDescriptor(
            state_dim=d["state_dim"], input_dim=d["input_dim"],
            exponents=tuple(tuple(e) for e in d["exponents"]),
        )
        dims.append(GapDimension(
            basis=basis, q=np.array(d["q"], dtype=float), eta=d["eta"],
            lipschitz_f=d["lipschitz_f"], lipschitz_fhat=d["lipschitz_fhat"],
            lipschitz_basis=d["lipschitz_basis"], epsilon=d["epsilon"],
            delta1=d["delta1"], delta2=d["delta2"],
            beta1=d["beta1"], beta2=d["beta2"],
        ))
    return GapModel(dims=dims)
