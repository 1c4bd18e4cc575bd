"""Interior-point solver for the tri-market scheduling QP, with duals.

Solves the assembled concave QP (maximization) by running a Mehrotra-style
predictor-corrector primal-dual interior-point method on the equivalent
minimization.  Multipliers are first-class outputs: the solver returns one
dual per equality row plus nonnegative multipliers for every bound side and
for the two coupling rows, in the sign convention fixed by
:func:`kkt_residuals`.

Named-dual convention (maximization form).  With ``lam`` the equality duals,
``zl``/``zu`` the lower/upper bound multipliers and ``zc`` the coupling
multipliers, a point is stationary when, componentwise,

    grad_obj(x) - a_eq' lam + zl - zu - coup' zc = 0

so for example the retirement floor's multiplier prices REC retirement and
the quota ceiling's multiplier prices allowance headroom, both >= 0.

The interior-point iteration is followed by an active-set "polish": once the
active set is identified, one sparse quasi-definite solve plus iterative
refinement produces primal/dual values accurate to near machine precision,
which downstream sensitivity checks rely on.  The polish is verified before
it is accepted; on rejection the interior-point iterate is returned as-is.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import null_space
from scipy.optimize import linprog
from scipy.sparse.linalg import splu

from .model import QpProblem

__all__ = [
    "SolverSettings",
    "IneqDuals",
    "Residuals",
    "Solution",
    "solve_qp",
    "kkt_residuals",
    "oracle_solve",
    "diagnose_infeasibility",
]

# statuses a Solution can carry
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class SolverSettings:
    """Interior-point tolerances and iteration limits."""

    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    tol_gap: float = 1e-8
    max_iter: int = 200
    regularization: float = 1e-9   # diagonal shift for curvature-free directions
    polish: bool = True
    verbose: bool = False

    def __post_init__(self):
        for name in ("tol_primal", "tol_dual", "tol_gap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.regularization <= 0:
            raise ValueError("regularization must be > 0")


@dataclass(frozen=True)
class IneqDuals:
    """Nonnegative multipliers per inequality side.

    lower[j] prices x_j >= lb_j, upper[j] prices x_j <= ub_j (zero where the
    bound is infinite), coupling[k] prices coupling row k in the order of
    QpProblem.coup ("rps" then "quota").
    """

    lower: np.ndarray
    upper: np.ndarray
    coupling: np.ndarray


@dataclass(frozen=True)
class Residuals:
    """Infinity-norm KKT residuals plus the total complementarity gap."""

    primal_inf: float
    dual_inf: float
    comp_gap: float


@dataclass(frozen=True)
class Solution:
    """Primal/dual solve result.

    eq_duals follows the equality-row order of the problem (6 rows per hour);
    ineq_duals holds the bound and coupling multipliers.  On status
    "optimal" the point passes kkt_residuals at the solver tolerances.
    """

    status: str
    x: np.ndarray
    objective: float
    eq_duals: np.ndarray
    ineq_duals: IneqDuals
    iterations: int = 0
    residuals: Residuals | None = None
    message: str = ""


def _empty_solution(p: QpProblem, status: str, message: str = "", iterations: int = 0) -> Solution:
    n = p.n
    return Solution(
        status=status,
        x=np.zeros(n),
        objective=float("nan"),
        eq_duals=np.zeros(p.m_eq),
        ineq_duals=IneqDuals(np.zeros(n), np.zeros(n), np.zeros(2)),
        iterations=iterations,
        residuals=None,
        message=message,
    )


# ---------------------------------------------------------------------------
# KKT residual evaluation (full Lagrangian gradient, not just printed rows)


def kkt_residuals(p: QpProblem, sol: Solution) -> Residuals:
    """Evaluate stationarity, feasibility and complementarity at a solution.

    Dimension mismatches raise ValueError.  Stationarity is the full
    gradient identity of the module docstring, so each per-hour balance,
    storage and retirement identity is covered as a special case.
    """
    x = np.asarray(sol.x, dtype=float)
    lam = np.asarray(sol.eq_duals, dtype=float)
    zl = np.asarray(sol.ineq_duals.lower, dtype=float)
    zu = np.asarray(sol.ineq_duals.upper, dtype=float)
    zc = np.asarray(sol.ineq_duals.coupling, dtype=float)
    n = p.n
    if x.shape != (n,) or zl.shape != (n,) or zu.shape != (n,):
        raise ValueError("primal/bound-dual vectors do not match problem size")
    if lam.shape != (p.m_eq,):
        raise ValueError(f"expected {p.m_eq} equality duals, got shape {lam.shape}")
    if zc.shape != (2,):
        raise ValueError("expected one coupling dual per coupling row")

    grad = p.h_diag * x + p.f
    stat = grad - p.a_eq.T @ lam + zl - zu - p.coup.T @ zc
    dual_inf = float(np.max(np.abs(stat))) if n else 0.0

    r_eq = p.a_eq @ x - p.b_eq
    r_coup = p.coup @ x - p.coup_rhs
    lo = np.isfinite(p.lb)
    hi = np.isfinite(p.ub)
    viol = [np.max(np.abs(r_eq), initial=0.0), np.max(r_coup, initial=0.0)]
    viol.append(np.max(p.lb[lo] - x[lo], initial=0.0))
    viol.append(np.max(x[hi] - p.ub[hi], initial=0.0))
    primal_inf = float(max(0.0, *viol))

    gap = float(
        zl[lo] @ np.maximum(x[lo] - p.lb[lo], 0.0)
        + zu[hi] @ np.maximum(p.ub[hi] - x[hi], 0.0)
        + zc @ np.maximum(-r_coup, 0.0)
    )
    return Residuals(primal_inf=primal_inf, dual_inf=dual_inf, comp_gap=gap)


# ---------------------------------------------------------------------------
# Presolve: fixed variables and degenerate coupling rows


class _InfeasibleProblem(Exception):
    pass


@dataclass
class _Presolved:
    """Minimization-form data after pinning fixed variables.

    Variables with lb == ub, and variables forced to a bound by a coupling
    row whose right-hand side equals the row's minimum over the box, are
    re-expressed as appended equality rows so the barrier only ever sees
    strictly widenable intervals.
    """

    q: np.ndarray              # diagonal of the (PSD) minimization Hessian
    c: np.ndarray
    a_ext: sp.csr_matrix       # original equalities + one row per pinned var
    b_ext: np.ndarray
    m_orig: int
    pin_idx: np.ndarray        # pinned variable indices, aligned with rows m_orig..
    lo_idx: np.ndarray         # unpinned variables with finite lower bound
    up_idx: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    coup: sp.csr_matrix        # kept coupling rows
    coup_rhs: np.ndarray
    keep_rows: list[int]
    dropped_rows: list[int]    # coupling rows absorbed into pins


def _presolve(p: QpProblem) -> _Presolved:
    n = p.n
    lb, ub = p.lb.copy(), p.ub.copy()
    bad = lb > ub + 1e-12 * (1.0 + np.abs(lb))
    if np.any(bad):
        j = int(np.argmax(bad))
        raise _InfeasibleProblem(f"empty bound interval on variable {j}: [{lb[j]}, {ub[j]}]")

    pins: dict[int, float] = {}
    fixed = np.isfinite(lb) & (lb == ub)
    for j in np.nonzero(fixed)[0]:
        pins[int(j)] = float(lb[j])

    keep_rows, dropped_rows = [], []
    coup = p.coup.tocsr()
    for k in range(coup.shape[0]):
        row = coup.getrow(k)
        cols, vals = row.indices, row.data
        lo_val = 0.0
        achievable = True
        for j, v in zip(cols, vals):
            bnd = lb[j] if v > 0 else ub[j]
            if not np.isfinite(bnd):
                achievable = False
                break
            lo_val += v * bnd
        rhs = p.coup_rhs[k]
        tol = 1e-9 * (1.0 + abs(rhs) + (abs(lo_val) if achievable else 0.0))
        if achievable and rhs < lo_val - tol:
            raise _InfeasibleProblem(
                f"coupling row {k} requires value below its box minimum ({rhs} < {lo_val})"
            )
        if achievable and rhs <= lo_val + tol:
            # the row can only hold with every participating variable at the
            # bound that minimizes it; pin them and drop the row
            for j, v in zip(cols, vals):
                val = float(lb[j] if v > 0 else ub[j])
                if j in pins and pins[j] != val:
                    raise _InfeasibleProblem(f"conflicting pins on variable {j}")
                pins[int(j)] = val
            dropped_rows.append(k)
        else:
            keep_rows.append(k)

    pin_idx = np.array(sorted(pins), dtype=int)
    pin_val = np.array([pins[j] for j in pin_idx])
    for j in pin_idx:  # pinned vars leave the box constraints entirely
        lb[j], ub[j] = -np.inf, np.inf

    m = p.m_eq
    if len(pin_idx):
        pin_mat = sp.coo_matrix(
            (np.ones(len(pin_idx)), (np.arange(len(pin_idx)), pin_idx)), shape=(len(pin_idx), n)
        )
        a_ext = sp.vstack([p.a_eq, pin_mat]).tocsr()
        b_ext = np.concatenate([p.b_eq, pin_val])
    else:
        a_ext = p.a_eq
        b_ext = p.b_eq

    kept = coup[keep_rows, :] if keep_rows else sp.csr_matrix((0, n))
    return _Presolved(
        q=-p.h_diag,
        c=-p.f,
        a_ext=a_ext,
        b_ext=b_ext,
        m_orig=m,
        pin_idx=pin_idx,
        lo_idx=np.nonzero(np.isfinite(lb))[0],
        up_idx=np.nonzero(np.isfinite(ub))[0],
        lb=lb,
        ub=ub,
        coup=kept.tocsr(),
        coup_rhs=p.coup_rhs[keep_rows] if keep_rows else np.zeros(0),
        keep_rows=keep_rows,
        dropped_rows=dropped_rows,
    )


def _finalize(p: QpProblem, pre: _Presolved, x, y_ext, zl_part, zu_part, zc_part,
              iterations: int, settings: SolverSettings, message: str = "") -> Solution:
    """Map presolved-space duals back to the original constraint families."""
    n = p.n
    zl = np.zeros(n)
    zu = np.zeros(n)
    zl[pre.lo_idx] = np.maximum(zl_part, 0.0)
    zu[pre.up_idx] = np.maximum(zu_part, 0.0)

    pin_duals = dict(zip(pre.pin_idx.tolist(), y_ext[pre.m_orig:].tolist()))
    coupling = np.zeros(2)
    if len(pre.keep_rows):
        coupling[pre.keep_rows] = np.maximum(zc_part, 0.0)

    handled = set()
    coup = p.coup.tocsr()
    for k in pre.dropped_rows:
        # a dropped row holds with equality; recover the smallest nonnegative
        # row multiplier consistent with stationarity of its pinned variables
        row = coup.getrow(k)
        plain = all(
            v == 1.0 and np.isfinite(p.lb[j]) and not np.isfinite(p.ub[j])
            for j, v in zip(row.indices, row.data)
        )
        if plain:
            need = max([0.0] + [-pin_duals.get(int(j), 0.0) for j in row.indices])
            coupling[k] = need
            for j in row.indices:
                zl[j] = max(need + pin_duals.get(int(j), 0.0), 0.0)
                handled.add(int(j))
        # else: leave the multiplier at zero; residuals will report the gap

    for j, w in pin_duals.items():
        if j in handled:
            continue
        # fixed interval: the signed multiplier splits across the two sides
        zl[j] = max(w, 0.0)
        zu[j] = max(-w, 0.0)

    lam = -y_ext[: pre.m_orig]
    sol = Solution(
        status=OPTIMAL,
        x=x.copy(),
        objective=p.objective(x),
        eq_duals=lam,
        ineq_duals=IneqDuals(lower=zl, upper=zu, coupling=coupling),
        iterations=iterations,
        residuals=None,
        message=message,
    )
    return replace(sol, residuals=kkt_residuals(p, sol))


# ---------------------------------------------------------------------------
# Mehrotra predictor-corrector


def _scatter(values: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    out[idx] = values
    return out


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _factor(k_mat: sp.csc_matrix):
    return splu(k_mat, permc_spec="COLAMD")


def solve_qp(p: QpProblem, settings: SolverSettings | None = None) -> Solution:
    """Solve the concave QP to the requested tolerances.

    Returns a Solution with status "optimal", "infeasible" or
    "iteration_limit".  Deterministic: identical inputs produce identical
    iterates.  Infeasibility is certified with an LP feasibility probe
    rather than inferred from divergence alone.
    """
    s = settings if settings is not None else SolverSettings()
    try:
        pre = _presolve(p)
    except _InfeasibleProblem as exc:
        return _empty_solution(p, INFEASIBLE, message=str(exc))

    n = p.n
    q, c = pre.q, pre.c
    a, b = pre.a_ext, pre.b_ext
    cp, d = pre.coup, pre.coup_rhs
    lo, up = pre.lo_idx, pre.up_idx
    lb_l, ub_u = pre.lb[lo], pre.ub[up]
    n_l, n_u, n_c = len(lo), len(up), cp.shape[0]
    m = a.shape[0]
    m_comp = n_l + n_u + n_c

    if m_comp == 0:
        # every variable pinned or free: one equality-constrained solve
        res = _polish(p, pre, np.zeros(n_l, bool), np.zeros(n_u, bool), np.zeros(n_c, bool), s)
        if res is not None:
            return replace(res, iterations=0)
        return _empty_solution(p, ITERATION_LIMIT, message="equality-constrained solve failed")

    # strictly interior start; x need not satisfy the equalities
    x = np.zeros(n)
    both = np.isfinite(pre.lb) & np.isfinite(pre.ub)
    x[both] = 0.5 * (pre.lb[both] + pre.ub[both])
    lo_only = np.isfinite(pre.lb) & ~np.isfinite(pre.ub)
    up_only = np.isfinite(pre.ub) & ~np.isfinite(pre.lb)
    x[lo_only] = pre.lb[lo_only] + 1.0 + 0.1 * np.abs(pre.lb[lo_only])
    x[up_only] = pre.ub[up_only] - 1.0 - 0.1 * np.abs(pre.ub[up_only])
    if len(pre.pin_idx):
        x[pre.pin_idx] = b[pre.m_orig:]

    y = np.zeros(m)
    sl = np.maximum(x[lo] - lb_l, 1.0)
    su = np.maximum(ub_u - x[up], 1.0)
    sc = np.maximum(d - cp @ x, 1.0) if n_c else np.zeros(0)
    z0 = max(1.0, 0.1 * float(np.max(np.abs(c), initial=1.0)))
    zl = np.full(n_l, z0)
    zu = np.full(n_u, z0)
    zc = np.full(n_c, z0)

    scale_p = 1.0 + max(
        float(np.max(np.abs(b), initial=0.0)), float(np.max(np.abs(d), initial=0.0))
    )
    scale_d = 1.0 + float(np.max(np.abs(c), initial=0.0))
    reg = s.regularization
    eye_m = sp.identity(m, format="csr")
    mu0 = (sl @ zl + su @ zu + sc @ zc) / m_comp
    best: tuple | None = None

    status, message = ITERATION_LIMIT, ""
    it = 0
    for it in range(1, s.max_iter + 1):
        rd = q * x + c - a.T @ y - _scatter(zl, lo, n) + _scatter(zu, up, n)
        if n_c:
            rd += cp.T @ zc
        rp_eq = a @ x - b
        rp_l = x[lo] - sl - lb_l
        rp_u = x[up] + su - ub_u
        rp_c = (cp @ x + sc - d) if n_c else np.zeros(0)
        gap = float(sl @ zl + su @ zu + sc @ zc)
        mu = gap / m_comp

        obj_min = float(0.5 * (q * x) @ x + c @ x)
        primal_inf = max(
            float(np.max(np.abs(rp_eq), initial=0.0)),
            float(np.max(np.abs(rp_l), initial=0.0)),
            float(np.max(np.abs(rp_u), initial=0.0)),
            float(np.max(np.abs(rp_c), initial=0.0)),
        )
        dual_inf = float(np.max(np.abs(rd), initial=0.0))

        if s.verbose:
            print(
                f"  it={it:3d} mu={mu:.3e} rp={primal_inf:.3e} rd={dual_inf:.3e} "
                f"gap={gap:.3e} obj={-obj_min:.6e}"
            )
        if not np.isfinite(mu) or not np.all(np.isfinite(x)):
            message = "iterates lost finiteness"
            break
        merit = (primal_inf / scale_p, dual_inf / scale_d, gap / (1.0 + abs(obj_min)))
        if best is None or max(merit) < best[0]:
            best = (max(merit), x.copy(), y.copy(), zl.copy(), zu.copy(), zc.copy())

        if (
            primal_inf <= s.tol_primal * scale_p
            and dual_inf <= s.tol_dual * scale_d
            and gap <= s.tol_gap * (1.0 + abs(obj_min))
        ):
            status = OPTIMAL
            break
        if mu > 1e10 * (1.0 + mu0) or np.max(np.abs(x)) > 1e13:
            message = "diverging iterates"
            break

        # bordered augmented system; only the diagonals change per iteration.
        # Factor a statically regularized copy, but refine each direction
        # against the true matrix so barrier ill-conditioning cannot leak
        # into the equality rows.
        # clamp slack denominators: an underflowed slack must read as a huge
        # but finite diagonal entry, not an inf that poisons the factorization
        sl_d = np.maximum(sl, 1e-280)
        su_d = np.maximum(su, 1e-280)
        d1 = q + _scatter(zl / sl_d, lo, n) + _scatter(zu / su_d, up, n)
        blocks = [
            [sp.diags(d1), a.T, cp.T if n_c else None],
            [a, None, None],
            [cp if n_c else None, None, sp.diags(-(sc / np.maximum(zc, 1e-280))) if n_c else None],
        ]
        if n_c == 0:
            blocks = [row[:2] for row in blocks[:2]]
        k_true = sp.bmat(blocks, format="csc")
        reg_sign = np.concatenate([np.ones(n), -np.ones(m), -np.ones(n_c)])
        lu = None
        for bump in range(4):
            try:
                lu = _factor((k_true + sp.diags(reg * (100.0 ** bump) * reg_sign)).tocsc())
                break
            except RuntimeError:
                continue
        if lu is None:
            message = "KKT factorization failed"
            break

        def solve_direction(rc_l, rc_u, rc_c):
            gl = (rc_l - zl * rp_l) / sl_d
            gu = (rc_u + zu * rp_u) / su_d
            rhs_x = -rd + _scatter(gl, lo, n) - _scatter(gu, up, n)
            parts = [rhs_x, -rp_eq]
            if n_c:
                parts.append(-rp_c - rc_c / np.maximum(zc, 1e-280))
            vec = np.concatenate(parts)
            step = lu.solve(vec)
            v_scale = 1.0 + float(np.max(np.abs(vec), initial=0.0))
            for _ in range(3):
                err = vec - k_true @ step
                if np.max(np.abs(err), initial=0.0) <= 1e-11 * v_scale:
                    break
                step += lu.solve(err)
            dx = step[:n]
            dy = -step[n : n + m]
            dzc = step[n + m :] if n_c else np.zeros(0)
            dsl = dx[lo] + rp_l
            dsu = -dx[up] - rp_u
            dsc = (-(cp @ dx) - rp_c) if n_c else np.zeros(0)
            dzl = (rc_l - zl * dsl) / sl_d
            dzu = (rc_u - zu * dsu) / su_d
            return dx, dy, dzl, dzu, dzc, dsl, dsu, dsc

        aff = solve_direction(-sl * zl, -su * zu, -sc * zc)
        ap = min(1.0, _max_step(sl, aff[5]), _max_step(su, aff[6]), _max_step(sc, aff[7]))
        ad = min(1.0, _max_step(zl, aff[2]), _max_step(zu, aff[3]), _max_step(zc, aff[4]))
        mu_aff = (
            (sl + ap * aff[5]) @ (zl + ad * aff[2])
            + (su + ap * aff[6]) @ (zu + ad * aff[3])
            + (sc + ap * aff[7]) @ (zc + ad * aff[4])
        ) / m_comp
        sigma = float(np.clip((max(mu_aff, 0.0) / mu) ** 3, 1e-8, 0.9999))

        tau = 0.9995 if gap <= 1e-3 * (1.0 + abs(obj_min)) else 0.995

        def clipped_step(direction):
            dxx, dyy, dzl_, dzu_, dzc_, dsl_, dsu_, dsc_ = direction
            a_p = min(1.0, tau * _max_step(sl, dsl_), tau * _max_step(su, dsu_), tau * _max_step(sc, dsc_))
            a_d = min(1.0, tau * _max_step(zl, dzl_), tau * _max_step(zu, dzu_), tau * _max_step(zc, dzc_))
            nxt = (
                (sl + a_p * dsl_) @ (zl + a_d * dzl_)
                + (su + a_p * dsu_) @ (zu + a_d * dzu_)
                + (sc + a_p * dsc_) @ (zc + a_d * dzc_)
            ) / m_comp
            return a_p, a_d, nxt

        combined = solve_direction(
            sigma * mu - sl * zl - aff[5] * aff[2],
            sigma * mu - su * zu - aff[6] * aff[3],
            sigma * mu - sc * zc - aff[7] * aff[4],
        )
        ap, ad, mu_next = clipped_step(combined)
        direction = combined
        if not (mu_next <= 0.95 * mu) or min(ap, ad) < 1e-10:
            # second-order correction overshoots near a degenerate face;
            # retry with a strongly centered first-order direction
            sigma_c = max(sigma, 0.5)
            centered = solve_direction(
                sigma_c * mu - sl * zl, sigma_c * mu - su * zu, sigma_c * mu - sc * zc
            )
            ap2, ad2, mu_next2 = clipped_step(centered)
            if mu_next2 < mu_next:
                direction, ap, ad, mu_next = centered, ap2, ad2, mu_next2
        dx, dy, dzl, dzu, dzc, dsl, dsu, dsc = direction
        x += ap * dx
        sl += ap * dsl
        su += ap * dsu
        sc += ap * dsc
        y += ad * dy
        zl += ad * dzl
        zu += ad * dzu
        zc += ad * dzc

    if status != OPTIMAL:
        if best is not None:
            _, x, y, zl, zu, zc = best
            if s.polish:
                # the iterate may sit at the optimum with only complementarity
                # unresolved (degenerate face); a fully verified polish can
                # still rescue it
                scale_x = 1.0 + float(np.max(np.abs(x), initial=0.0))
                scale_z = 1.0 + float(np.max(np.abs(c), initial=0.0))
                rescued = _polish(p, pre, zl / scale_z > sl / scale_x,
                                  zu / scale_z > su / scale_x,
                                  (zc / scale_z > sc / scale_x) if n_c else np.zeros(0, bool), s,
                                  hint=(x, y, zl, zu, zc))
                if rescued is not None and _meets_tolerances(rescued, s, scale_p, scale_d):
                    return replace(rescued, iterations=it)
        lp_status = _feasibility_probe(p)
        if lp_status == INFEASIBLE:
            return _empty_solution(
                p, INFEASIBLE, message=message or diagnose_infeasibility(p), iterations=it
            )
        return _empty_solution(
            p, ITERATION_LIMIT, message=message or "tolerances not reached", iterations=it
        )

    if s.polish:
        scale_x = 1.0 + float(np.max(np.abs(x), initial=0.0))
        scale_z = 1.0 + float(np.max(np.abs(c), initial=0.0))
        act_l = zl / scale_z > sl / scale_x
        act_u = zu / scale_z > su / scale_x
        act_c = (zc / scale_z > sc / scale_x) if n_c else np.zeros(0, bool)
        polished = _polish(p, pre, act_l, act_u, act_c, s, hint=(x, y, zl, zu, zc))
        if polished is None:
            # second chance with a primal-slack criterion
            act_l = sl <= 1e-6 * scale_x
            act_u = su <= 1e-6 * scale_x
            act_c = (sc <= 1e-6 * scale_x) if n_c else act_c
            polished = _polish(p, pre, act_l, act_u, act_c, s, hint=(x, y, zl, zu, zc))
        if polished is not None:
            return replace(polished, iterations=it)

    return _finalize(p, pre, x, y, zl, zu, zc, it, s)


def _meets_tolerances(sol: Solution, s: SolverSettings, scale_p: float, scale_d: float) -> bool:
    r = sol.residuals
    return (
        r is not None
        and r.primal_inf <= s.tol_primal * scale_p
        and r.dual_inf <= s.tol_dual * scale_d
        and r.comp_gap <= s.tol_gap * (1.0 + abs(sol.objective))
    )


def _polish(p: QpProblem, pre: _Presolved, act_l, act_u, act_c, s: SolverSettings,
            hint=None) -> Solution | None:
    """Quasi-definite solve on the predicted active set, then verify.

    `hint` is an interior-point iterate (x, y, zl, zu, zc); the regularized
    system is biased toward it so that on a degenerate optimal face the
    solve selects a sign-feasible multiplier set instead of the minimal-norm
    one.  When an active bound still gets a negative multiplier, the row is
    released and the system re-solved, crossover-style.  Returns None when
    no verified point emerges; the caller keeps the interior-point iterate.
    """
    n = p.n
    act_l = np.array(act_l, dtype=bool, copy=True)
    act_u = np.array(act_u, dtype=bool, copy=True)
    act_c = np.array(act_c, dtype=bool, copy=True)
    dual_tol = 1e-7 * (1.0 + float(np.max(np.abs(pre.c), initial=0.0)))
    if hint is None:
        x_hint = np.zeros(n)
        y_hint = np.zeros(pre.a_ext.shape[0])
        zl_hint = np.zeros(len(pre.lo_idx))
        zu_hint = np.zeros(len(pre.up_idx))
        zc_hint = np.zeros(pre.coup.shape[0])
    else:
        x_hint, y_hint, zl_hint, zu_hint, zc_hint = hint

    for _ in range(8):
        lo_act = pre.lo_idx[act_l]
        up_act = pre.up_idx[act_u]
        c_act_idx = np.nonzero(act_c)[0]
        rows = [pre.a_ext]
        rhs = [pre.b_ext]
        # stationarity convention: contributions -y, -zl, +zu, +zc, so the
        # stacked hint multiplier is w = (-y, -zl, +zu, +zc) on active rows
        w_hint = [-y_hint]
        if len(lo_act):
            rows.append(sp.coo_matrix(
                (np.ones(len(lo_act)), (np.arange(len(lo_act)), lo_act)), shape=(len(lo_act), n)))
            rhs.append(pre.lb[lo_act])
            w_hint.append(-zl_hint[act_l])
        if len(up_act):
            rows.append(sp.coo_matrix(
                (np.ones(len(up_act)), (np.arange(len(up_act)), up_act)), shape=(len(up_act), n)))
            rhs.append(pre.ub[up_act])
            w_hint.append(zu_hint[act_u])
        if len(c_act_idx):
            rows.append(pre.coup[c_act_idx, :])
            rhs.append(pre.coup_rhs[c_act_idx])
            w_hint.append(zc_hint[c_act_idx])
        a_bar = sp.vstack(rows).tocsr()
        r_bar = np.concatenate(rhs)
        m_bar = a_bar.shape[0]

        eps = 1e-10
        k_mat = sp.bmat(
            [[sp.diags(pre.q + eps), a_bar.T], [a_bar, -eps * sp.identity(m_bar)]], format="csc"
        )
        try:
            lu = _factor(k_mat)
        except RuntimeError:
            return None

        true_target = np.concatenate([-pre.c, r_bar])
        biased = true_target + eps * np.concatenate([x_hint, -np.concatenate(w_hint)])
        z = lu.solve(biased)
        scale = 1.0 + float(np.max(np.abs(true_target), initial=0.0))
        for _r in range(5):
            xh, wh = z[:n], z[n:]
            resid = true_target - np.concatenate([pre.q * xh + a_bar.T @ wh, a_bar @ xh])
            if np.max(np.abs(resid), initial=0.0) <= 1e-12 * scale:
                break
            z += lu.solve(resid)
        xh, wh = z[:n], z[n:]
        resid = true_target - np.concatenate([pre.q * xh + a_bar.T @ wh, a_bar @ xh])
        if np.max(np.abs(resid), initial=0.0) > 1e-9 * scale:
            return None

        v = -wh  # multipliers in the residual convention of kkt_residuals
        ofs = pre.a_ext.shape[0]
        v_eq = v[:ofs]
        zl_act = v[ofs : ofs + len(lo_act)]          # enter stationarity as +zl
        ofs += len(lo_act)
        zu_act = -v[ofs : ofs + len(up_act)]
        ofs += len(up_act)
        zc_act = -v[ofs:]

        bad_l = zl_act < -dual_tol
        bad_u = zu_act < -dual_tol
        bad_c = zc_act < -dual_tol
        if bad_l.any() or bad_u.any() or bad_c.any():
            # release the offending rows and try again
            keep = np.nonzero(act_l)[0]
            act_l[keep[bad_l]] = False
            keep = np.nonzero(act_u)[0]
            act_u[keep[bad_u]] = False
            act_c[c_act_idx[bad_c]] = False
            continue

        feas_tol = 1e-7 * (1.0 + float(np.max(np.abs(xh), initial=0.0)))
        lo_all, up_all = pre.lo_idx, pre.up_idx
        if np.any(pre.lb[lo_all] - xh[lo_all] > feas_tol) or np.any(xh[up_all] - pre.ub[up_all] > feas_tol):
            return None
        if pre.coup.shape[0] and np.any(
            pre.coup @ xh - pre.coup_rhs > feas_tol * (1.0 + np.abs(pre.coup_rhs))
        ):
            return None

        # exact complementarity: snap active primals, keep inactive duals at zero
        xh = xh.copy()
        xh[lo_act] = pre.lb[lo_act]
        xh[up_act] = pre.ub[up_act]
        zl_full = np.zeros(len(lo_all))
        zu_full = np.zeros(len(up_all))
        zl_full[np.nonzero(act_l)[0]] = np.maximum(zl_act, 0.0)
        zu_full[np.nonzero(act_u)[0]] = np.maximum(zu_act, 0.0)
        zc_full = np.zeros(pre.coup.shape[0])
        zc_full[c_act_idx] = np.maximum(zc_act, 0.0)
        return _finalize(p, pre, xh, v_eq, zl_full, zu_full, zc_full, 0, s)

    return None


# ---------------------------------------------------------------------------
# Feasibility probes


def _feasibility_probe(p: QpProblem, drop_coupling: tuple[int, ...] = ()) -> str:
    keep = [k for k in range(p.coup.shape[0]) if k not in drop_coupling]
    a_ub = p.coup[keep, :] if keep else None
    b_ub = p.coup_rhs[keep] if keep else None
    res = linprog(
        c=np.zeros(p.n),
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=p.a_eq,
        b_eq=p.b_eq,
        bounds=np.column_stack([p.lb, p.ub]),
        method="highs",
    )
    if res.status == 2:
        return INFEASIBLE
    if res.status == 0:
        return "feasible"
    return "unknown"


def diagnose_infeasibility(p: QpProblem) -> str:
    """Name the constraint family that makes an infeasible problem so.

    Relaxation probes: if dropping the retirement-floor row restores
    feasibility the floor conflicts with the certificate supply; likewise
    for the quota ceiling; otherwise the balances and boxes already clash.
    """
    if _feasibility_probe(p) != INFEASIBLE:
        return "problem is feasible"
    if _feasibility_probe(p, drop_coupling=(0,)) == "feasible":
        return "infeasible: REC retirement floor conflicts with certificate supply and caps"
    if _feasibility_probe(p, drop_coupling=(1,)) == "feasible":
        return "infeasible: CER quota ceiling conflicts with emission needs and caps"
    if _feasibility_probe(p, drop_coupling=(0, 1)) == "feasible":
        return "infeasible: retirement floor and quota ceiling jointly conflict"
    return "infeasible: balance equations conflict with variable bounds"


# ---------------------------------------------------------------------------
# Small-instance oracle: primal active-set with explicit subproblem solves


def oracle_solve(p: QpProblem, max_iter: int = 2000) -> Solution:
    """Exact reference solver for tiny instances (13*T <= 40).

    Walks active sets directly: each candidate set yields an
    equality-constrained QP solved through a nullspace factorization, and
    sets are added or dropped one constraint at a time until the KKT point
    is reached.  Uses dense linear algebra throughout and shares no solve
    path with solve_qp, so it serves as an independent cross-check.
    """
    n = p.n
    if n > 40:
        raise ValueError(f"oracle_solve is restricted to 13*T <= 40 variables, got {n}")

    a_eq = p.a_eq.toarray()
    b_eq = p.b_eq
    q = -p.h_diag
    c = -p.f

    # inequality stack: finite bounds as one row per side, then coupling rows
    g_rows: list[np.ndarray] = []
    h_vals: list[float] = []
    kinds: list[tuple[str, int]] = []
    for j in range(n):
        if np.isfinite(p.lb[j]):
            row = np.zeros(n)
            row[j] = -1.0
            g_rows.append(row)
            h_vals.append(-p.lb[j])
            kinds.append(("lo", j))
    for j in range(n):
        if np.isfinite(p.ub[j]):
            row = np.zeros(n)
            row[j] = 1.0
            g_rows.append(row)
            h_vals.append(p.ub[j])
            kinds.append(("up", j))
    coup = p.coup.toarray()
    for k in range(coup.shape[0]):
        g_rows.append(coup[k])
        h_vals.append(p.coup_rhs[k])
        kinds.append(("coup", k))
    g_mat = np.array(g_rows) if g_rows else np.zeros((0, n))
    h_vec = np.array(h_vals)

    start = linprog(
        c=np.zeros(n),
        A_ub=g_mat if len(g_mat) else None,
        b_ub=h_vec if len(h_vec) else None,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=[(None, None)] * n,
        method="highs",
    )
    if start.status == 2:
        return _empty_solution(p, INFEASIBLE, message=diagnose_infeasibility(p))
    if start.status != 0:
        raise RuntimeError(f"feasible-point search failed with status {start.status}")
    x = np.asarray(start.x, dtype=float)

    work: list[int] = []
    bland = False
    no_progress = 0
    last_obj = np.inf
    grad_scale = 1.0 + float(np.max(np.abs(c), initial=0.0))

    it = 0
    for it in range(1, max_iter + 1):
        grad = q * x + c
        a_bar = np.vstack([a_eq] + [g_mat[i] for i in work]) if work else a_eq
        null = null_space(a_bar) if a_bar.size else np.eye(n)

        ray = False
        if null.shape[1] == 0:
            d = np.zeros(n)
        else:
            h_red = null.T @ (q[:, None] * null)
            g_red = null.T @ grad
            evals, evecs = np.linalg.eigh(h_red)
            comp = evecs.T @ g_red
            cut = 1e-10 * max(1.0, float(evals.max(initial=0.0)))
            sing = evals <= cut
            if np.any(sing & (np.abs(comp) > 1e-9 * grad_scale)):
                # linear descent direction: objective decreases without bound
                dz = -evecs[:, sing] @ comp[sing]
                d = null @ (dz / max(np.linalg.norm(dz), 1e-300))
                ray = True
            else:
                dz = np.zeros(len(evals))
                good = ~sing
                dz[good] = -comp[good] / evals[good]
                d = null @ (evecs @ dz)

        if not ray and np.max(np.abs(d), initial=0.0) <= 1e-10 * (1.0 + np.max(np.abs(x))):
            duals, *_ = np.linalg.lstsq(
                np.vstack([a_eq] + [g_mat[i] for i in work]).T if work else a_eq.T,
                -grad,
                rcond=None,
            )
            nu = duals[len(a_eq):]
            neg = np.nonzero(nu < -1e-8 * grad_scale)[0]
            if len(neg) == 0:
                return _oracle_solution(p, x, duals[: len(a_eq)], work, nu, kinds, g_mat, it)
            drop = int(neg[0]) if bland else int(np.argmin(nu))
            work.pop(drop)
            continue

        g_d = g_mat @ d if len(g_mat) else np.zeros(0)
        slack = np.maximum(h_vec - g_mat @ x, 0.0) if len(g_mat) else np.zeros(0)
        cand = [
            i for i in range(len(g_mat))
            if i not in work and g_d[i] > 1e-11 * (1.0 + np.abs(g_d).max())
        ]
        if cand:
            ratios = np.array([slack[i] / g_d[i] for i in cand])
            a_max = float(ratios.min())
            hit = min(c_i for c_i, r in zip(cand, ratios) if r <= a_max + 1e-12 * (1.0 + a_max))
        else:
            a_max, hit = np.inf, None
        if ray and hit is None:
            raise RuntimeError("objective is unbounded along a feasible ray")
        alpha = a_max if ray else min(1.0, a_max)
        x = x + alpha * d
        if hit is not None and (ray or a_max < 1.0 - 1e-12):
            work.append(hit)
            work.sort()

        obj = float(0.5 * (q * x) @ x + c @ x)
        if obj < last_obj - 1e-12 * (1.0 + abs(last_obj)):
            last_obj, no_progress = obj, 0
        else:
            no_progress += 1
            if no_progress > 50:
                bland = True

    raise RuntimeError(f"active-set iteration cap {max_iter} reached")


def _oracle_solution(p, x, y_ls, work, nu, kinds, g_mat, iterations) -> Solution:
    n = p.n
    zl = np.zeros(n)
    zu = np.zeros(n)
    zc = np.zeros(2)
    for w_idx, mult in zip(work, nu):
        kind, j = kinds[w_idx]
        mult = max(float(mult), 0.0)
        if kind == "lo":
            zl[j] = mult
        elif kind == "up":
            zu[j] = mult
        else:
            zc[j] = mult
    sol = Solution(
        status=OPTIMAL,
        x=x.copy(),
        objective=p.objective(x),
        eq_duals=np.asarray(y_ls, dtype=float),
        ineq_duals=IneqDuals(lower=zl, upper=zu, coupling=zc),
        iterations=iterations,
        residuals=None,
    )
    return replace(sol, residuals=kkt_residuals(p, sol))
