"""Canonical conic programs over Hermitian PSD matrices, and solver backends.

A :class:`ConicProblem` holds Hermitian matrix variables (always PSD), real
scalar variables, a linear objective to maximize, and three constraint
kinds:

* linear: ``Re(expr) >= 0``, ``<= 0`` or ``== 0``
* modulus: ``|expr| <= Re(bound)`` with ``expr`` complex
* fixed entries: ``X[i, j] == value``

An affine expression is a mapping ``{variable: coefficient}`` plus a
constant.  For a matrix variable the coefficient ``C`` contributes
``Tr(C X)``; for a scalar it multiplies the scalar.

Two backends ship: :class:`CvxoptBackend` (default) and
:class:`CvxpyBackend`.  The cvxopt backend feeds the problem to cvxopt as the
*dual* of a linear matrix inequality in the constraint multipliers, with each
Hermitian variable replaced by its real symmetric embedding.  The size of the
Newton system is then the number of scalar constraints rather than the number
of matrix entries, which keeps 50 x 50 complex SDPs cheap.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"


class SolverError(RuntimeError):
    """Numerical failure of a conic backend; the caller may retry."""


@dataclass
class Affine:
    terms: dict = field(default_factory=dict)
    const: complex = 0.0

    def __add__(self, other: "Affine") -> "Affine":
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms[k] + v if k in terms else v
        return Affine(terms, self.const + other.const)

    def scale(self, c) -> "Affine":
        return Affine({k: c * v for k, v in self.terms.items()}, c * self.const)


def affine(const=0.0, **terms) -> Affine:
    return Affine(terms, const)


@dataclass
class Constraint:
    kind: str  # "ge", "le", "eq", "mod", "fix"
    expr: Affine
    bound: Optional[Affine] = None
    label: str = ""
    family: str = ""


@dataclass
class ConicSolution:
    status: str
    values: dict
    objective: float
    residuals: dict
    max_residual: float
    solve_time: float = 0.0
    iterations: int = 0
    implicated: list = field(default_factory=list)
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class ConicProblem:
    def __init__(self):
        self.matrices: dict[str, int] = {}
        self.scalars: dict[str, bool] = {}
        self.objective = Affine()
        self.constraints: list[Constraint] = []

    def add_matrix(self, name: str, dim: int) -> str:
        self._check_new(name)
        self.matrices[name] = int(dim)
        return name

    def add_scalar(self, name: str, nonneg: bool = False) -> str:
        self._check_new(name)
        self.scalars[name] = nonneg
        return name

    def _check_new(self, name):
        if name in self.matrices or name in self.scalars:
            raise ValueError(f"variable {name!r} declared twice")

    def _check_expr(self, e: Affine):
        for k, v in e.terms.items():
            if k in self.matrices:
                n = self.matrices[k]
                if np.shape(v) != (n, n):
                    raise ValueError(f"coefficient of {k!r} must be {n}x{n}")
            elif k not in self.scalars:
                raise ValueError(f"undeclared variable {k!r}")

    def maximize(self, e: Affine):
        self._check_expr(e)
        self.objective = e

    def add_linear(self, e: Affine, sense: str, label: str = "", family: str = ""):
        if sense not in (">=", "<=", "=="):
            raise ValueError(f"bad sense {sense!r}")
        self._check_expr(e)
        kind = {">=": "ge", "<=": "le", "==": "eq"}[sense]
        self.constraints.append(Constraint(kind, e, None, label, family or label))

    def add_modulus(self, e: Affine, bound: Affine, label: str = "", family: str = ""):
        self._check_expr(e)
        self._check_expr(bound)
        self.constraints.append(Constraint("mod", e, bound, label, family or label))

    def fix_entry(self, name: str, i: int, j: int, value: complex, label: str = "", family: str = ""):
        n = self.matrices[name]
        c = np.zeros((n, n), dtype=complex)
        c[j, i] = 1.0  # Tr(C X) = X[i, j]
        self.constraints.append(Constraint("fix", Affine({name: c}, -value), None,
                                           label or f"{name}[{i},{j}]", family or "fixed_entry"))

    def families(self) -> dict:
        out: dict[str, int] = {}
        for c in self.constraints:
            out[c.family] = out.get(c.family, 0) + 1
        return out

    # evaluation -----------------------------------------------------------
    def evaluate(self, e: Affine, values: dict) -> complex:
        total = complex(e.const)
        for k, coef in e.terms.items():
            v = values[k]
            if k in self.matrices:
                total += np.sum(np.asarray(coef).T * v)
            else:
                total += coef * v
        return total

    def residuals(self, values: dict) -> dict:
        """Constraint violations (>= 0) at ``values``, in problem units."""
        res = {}
        for c in self.constraints:
            v = self.evaluate(c.expr, values)
            if c.kind == "ge":
                r = max(0.0, -v.real)
            elif c.kind == "le":
                r = max(0.0, v.real)
            elif c.kind == "eq":
                r = abs(v.real)
            elif c.kind == "fix":
                r = abs(v)
            else:
                r = max(0.0, abs(v) - self.evaluate(c.bound, values).real)
            res[c.label] = r
        for name in self.matrices:
            res[f"psd:{name}"] = max(0.0, -np.linalg.eigvalsh(values[name]).min())
        for name, nonneg in self.scalars.items():
            if nonneg:
                res[f"nonneg:{name}"] = max(0.0, -values[name])
        return res


def hermitian_to_real(x: np.ndarray) -> np.ndarray:
    """Real symmetric embedding [[Re X, -Im X], [Im X, Re X]]."""
    x = np.asarray(x)
    return np.block([[x.real, -x.imag], [x.imag, x.real]])


def real_to_hermitian(y: np.ndarray) -> np.ndarray:
    """Hermitian matrix whose embedding is the structured average of ``y``.

    For any real symmetric PSD ``y`` the result is PSD, and every functional
    ``Tr(emb(H) y)`` with Hermitian ``H`` equals ``2 Tr(H X)``.
    """
    n = y.shape[0] // 2
    p, q, r, s = y[:n, :n], y[:n, n:], y[n:, :n], y[n:, n:]
    x = (p + s) / 2 + 1j * (r - q) / 2
    return (x + x.conj().T) / 2


def _hermitian_parts(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Re Tr(C X) = Tr(H X), Im Tr(C X) = Tr(K X) for Hermitian X
    c = np.asarray(c, dtype=complex)
    return (c + c.conj().T) / 2, (c - c.conj().T) / 2j


class CvxoptBackend:
    """Interior-point backend built on ``cvxopt.solvers.conelp``."""

    name = "cvxopt"

    def __init__(self, tol: float = 1e-8, max_iters: int = 100, accept_tol: float | None = None,
                 fallback: tuple = (1e-7, 1e-6)):
        self.tol = tol
        # converging solves of the AO subproblems take 15-35 iterations and
        # infeasibility certificates up to ~100; beyond that cvxopt is stalled
        self.max_iters = max_iters
        # 'unknown' exits are accepted when residuals stay below accept_tol
        self.accept_tol = accept_tol if accept_tol is not None else 10 * tol
        # looser stopping tolerances tried in turn when the first attempt stalls;
        # a fallback result must still meet its own residual threshold
        self.fallback = tuple(t for t in fallback if t > tol)

    def solve(self, problem: ConicProblem) -> ConicSolution:
        sol = None
        for tol in (self.tol, *self.fallback):
            try:
                sol = self._solve(problem, tol, max(self.accept_tol, 10 * tol))
            except SolverError:
                if tol == (self.tol, *self.fallback)[-1]:
                    raise
                continue
            if sol.status != NUMERICAL_FAILURE:
                return sol
        return sol

    def _solve(self, problem: ConicProblem, tol: float, accept_tol: float) -> ConicSolution:
        from cvxopt import matrix, solvers

        t0 = time.perf_counter()
        mats = list(problem.matrices.items())
        nonneg = [k for k, nn in problem.scalars.items() if nn]
        free = [k for k, nn in problem.scalars.items() if not nn]
        n_slack = sum(c.kind in ("ge", "le") for c in problem.constraints)
        n_mod = sum(c.kind == "mod" for c in problem.constraints)

        n_l = len(nonneg) + n_slack
        s_off, off = {}, n_l + 3 * n_mod
        for name, n in mats:
            s_off[name] = off
            off += (2 * n) ** 2
        n_z = off
        l_idx = {k: i for i, k in enumerate(nonneg)}
        y_idx = {k: i for i, k in enumerate(free)}

        cols_g, cols_a, consts, row_owner = [], [], [], []

        def new_row(owner):
            cols_g.append(np.zeros(n_z))
            cols_a.append(np.zeros(len(free)))
            consts.append(0.0)
            row_owner.append(owner)
            return len(consts) - 1

        def put(row, e: Affine, part: str, sign: float = 1.0):
            for k, coef in e.terms.items():
                if k in problem.matrices:
                    herm, skew = _hermitian_parts(coef)
                    h = herm if part == "re" else skew
                    n = problem.matrices[k]
                    block = 0.5 * sign * hermitian_to_real(h)
                    cols_g[row][s_off[k]:s_off[k] + 4 * n * n] += block.ravel(order="F")
                else:
                    v = complex(coef)
                    v = v.real if part == "re" else v.imag
                    if k in l_idx:
                        cols_g[row][l_idx[k]] += sign * v
                    else:
                        cols_a[row][y_idx[k]] += sign * v
            c0 = complex(e.const)
            consts[row] += sign * (c0.real if part == "re" else c0.imag)

        slack, soc = len(nonneg), n_l
        for ci, c in enumerate(problem.constraints):
            if c.kind in ("ge", "le"):
                r = new_row(ci)
                put(r, c.expr, "re")
                cols_g[r][slack] = -1.0 if c.kind == "ge" else 1.0
                slack += 1
            elif c.kind == "eq":
                put(new_row(ci), c.expr, "re")
            elif c.kind == "fix":
                put(new_row(ci), c.expr, "re")
                if _has_imaginary_part(c.expr, problem):
                    put(new_row(ci), c.expr, "im")
            else:
                r = new_row(ci)
                put(r, c.bound, "re", -1.0)
                cols_g[r][soc] = 1.0
                r = new_row(ci)
                put(r, c.expr, "re", -1.0)
                cols_g[r][soc + 1] = 1.0
                r = new_row(ci)
                put(r, c.expr, "im", -1.0)
                cols_g[r][soc + 2] = 1.0
                soc += 3

        # rows that touch no variable are either vacuous or a plain contradiction
        keep = [r for r in range(len(consts)) if np.any(cols_g[r]) or np.any(cols_a[r])]
        for r in set(range(len(consts))) - set(keep):
            if abs(consts[r]) > tol:
                fam = problem.constraints[row_owner[r]].family
                return ConicSolution(INFEASIBLE, {}, np.nan, {}, np.inf, time.perf_counter() - t0,
                                     implicated=[fam], message="constant constraint violated")
        cols_g = [cols_g[r] for r in keep]
        cols_a = [cols_a[r] for r in keep]
        consts = [consts[r] for r in keep]
        row_owner = [row_owner[r] for r in keep]
        m = len(consts)
        G = np.array(cols_g).T if m else np.zeros((n_z, 0))
        A = np.array(cols_a).T if m else np.zeros((len(free), 0))
        # objective: maximize -h^T z - b^T y
        h = np.zeros(n_z)
        b = np.zeros(len(free))
        for k, coef in problem.objective.terms.items():
            if k in problem.matrices:
                n = problem.matrices[k]
                herm, _ = _hermitian_parts(coef)
                h[s_off[k]:s_off[k] + 4 * n * n] -= 0.5 * hermitian_to_real(herm).ravel(order="F")
            elif k in l_idx:
                h[l_idx[k]] -= complex(coef).real
            else:
                b[y_idx[k]] -= complex(coef).real

        dims = {"l": n_l, "q": [3] * n_mod, "s": [2 * n for _, n in mats]}
        opts = {"show_progress": False, "maxiters": self.max_iters, "abstol": tol * 1e-1,
                "reltol": tol, "feastol": tol, "refinement": 2}
        try:
            sol = solvers.conelp(matrix(np.asarray(consts, dtype=float)), matrix(G), matrix(h), dims,
                                 A=matrix(A), b=matrix(b), options=opts)
        except (ArithmeticError, ValueError) as exc:
            raise SolverError(f"cvxopt failed: {exc}") from exc
        elapsed = time.perf_counter() - t0

        status = sol["status"]
        if status == "dual infeasible":
            x = np.array(sol["x"]).ravel()
            weight = np.abs(x) / max(np.abs(x).max(), 1e-300)
            fams = sorted({problem.constraints[row_owner[r]].family for r in range(m) if weight[r] > 1e-3})
            return ConicSolution(INFEASIBLE, {}, np.nan, {}, np.inf, elapsed, sol["iterations"], fams,
                                 "infeasibility certificate found")
        if status == "primal infeasible":
            return ConicSolution(UNBOUNDED, {}, np.inf, {}, np.inf, elapsed, sol["iterations"], [],
                                 "objective unbounded")
        if sol["z"] is None:
            raise SolverError(f"cvxopt returned status {status!r} without an iterate")

        z = np.array(sol["z"]).ravel()
        y = np.array(sol["y"]).ravel() if len(free) else np.zeros(0)
        values = {k: z[l_idx[k]] for k in nonneg}
        values.update({k: y[y_idx[k]] for k in free})
        for name, n in mats:
            blk = z[s_off[name]:s_off[name] + 4 * n * n].reshape(2 * n, 2 * n, order="F")
            blk = np.tril(blk) + np.tril(blk, -1).T
            values[name] = real_to_hermitian(blk)
        return _finish(problem, values, status == "optimal", accept_tol, elapsed,
                       sol["iterations"], f"cvxopt status {status} (tol {tol:g})")


class CvxpyBackend:
    """Backend using cvxpy's native complex support (small problems, cross-checks)."""

    name = "cvxpy"

    def __init__(self, solver: str = "CLARABEL", tol: float = 1e-8, accept_tol: float | None = None):
        self.solver = solver
        self.tol = tol
        self.accept_tol = accept_tol if accept_tol is not None else 1e3 * tol

    def solve(self, problem: ConicProblem) -> ConicSolution:
        import cvxpy as cp

        t0 = time.perf_counter()
        var = {}
        cons = []
        for name, n in problem.matrices.items():
            var[name] = cp.Variable((n, n), hermitian=True, name=name)
            cons.append(var[name] >> 0)
        for name, nn in problem.scalars.items():
            var[name] = cp.Variable(nonneg=nn, name=name)

        def expr(e: Affine):
            out = complex(e.const)
            for k, coef in e.terms.items():
                if k in problem.matrices:
                    out = out + cp.sum(cp.multiply(np.asarray(coef).T, var[k]))
                else:
                    out = out + coef * var[k]
            return out

        for c in problem.constraints:
            ex = expr(c.expr)
            if c.kind == "ge":
                cons.append(cp.real(ex) >= 0)
            elif c.kind == "le":
                cons.append(cp.real(ex) <= 0)
            elif c.kind == "eq":
                cons.append(cp.real(ex) == 0)
            elif c.kind == "fix":
                cons.append(ex == 0)
            else:
                cons.append(cp.abs(ex) <= cp.real(expr(c.bound)))
        prob = cp.Problem(cp.Maximize(cp.real(expr(problem.objective))), cons)
        try:
            prob.solve(solver=self.solver)
        except cp.error.SolverError as exc:
            raise SolverError(str(exc)) from exc
        elapsed = time.perf_counter() - t0
        if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return ConicSolution(INFEASIBLE, {}, np.nan, {}, np.inf, elapsed, message=prob.status)
        if prob.status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            return ConicSolution(UNBOUNDED, {}, np.inf, {}, np.inf, elapsed, message=prob.status)
        if any(v.value is None for v in var.values()):
            raise SolverError(f"cvxpy status {prob.status}")
        values = {}
        for k, v in var.items():
            val = v.value
            values[k] = (np.asarray(val) + np.asarray(val).conj().T) / 2 if k in problem.matrices else float(val)
        return _finish(problem, values, prob.status == cp.OPTIMAL, self.accept_tol, elapsed, 0,
                       f"cvxpy status {prob.status}")


def _has_imaginary_part(e: Affine, problem: ConicProblem) -> bool:
    if complex(e.const).imag != 0:
        return True
    for k, coef in e.terms.items():
        if k in problem.matrices:
            if np.any(_hermitian_parts(coef)[1]):
                return True
        elif complex(coef).imag != 0:
            return True
    return False


def _finish(problem, values, converged, accept_tol, elapsed, iterations, message) -> ConicSolution:
    res = problem.residuals(values)
    worst = max(res.values(), default=0.0)
    status = OPTIMAL if (converged or worst <= accept_tol) else NUMERICAL_FAILURE
    obj = problem.evaluate(problem.objective, values).real
    return ConicSolution(status, values, obj, res, worst, elapsed, iterations, [], message)


def default_backend(tol: float = 1e-8):
    return CvxoptBackend(tol=tol)
