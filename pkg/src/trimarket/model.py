"""Problem data model and QP assembly for tri-market VPP self-scheduling.

A virtual power plant (VPP) aggregates a thermal generator (TG), renewable
sources (RES), an energy storage system (ESS) and inflexible load, and trades
hourly in three markets: electricity, renewable energy certificates (REC) and
carbon emission rights (CER).  Certificates can be banked in inventories and
withdrawn later.  The VPP must retire enough RECs to cover a renewable
portfolio standard (RPS) fraction ``r`` of its consumption, and may draw at
most a regulator-issued quota of CERs.

The schedule over ``T`` hours is the solution of a concave quadratic program
(maximize profit) with linear constraints.  Per hour the 13 decision roles
are::

    g    TG output (MW)            p_c  ESS charging power (MW)
    G    electricity trade (MWh)   p_d  ESS discharging power (MW)
    R    REC trade (certificates)  q    ESS state of charge (MWh)
    C    CER trade (allowances)    x_r  net REC withdrawal (withdraw - deposit)
    r0   RECs retired for RPS      i_r  REC inventory level
    c0   CERs drawn from quota     x_c  net CER withdrawal
                                   i_c  CER inventory level

Positive trade quantities are sales.  Withdraw/deposit pairs are encoded as a
single net flow ``x``; the sign split recovers the physical pair and makes the
"no simultaneous withdraw and deposit" restriction hold by construction.
Storage states are cyclic: the level before hour 1 equals the level at hour T.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ModelWarning",
    "TgParams",
    "EssParams",
    "InventoryParams",
    "PolicyParams",
    "TradeCaps",
    "VppConfig",
    "MarketData",
    "ValidatedModel",
    "VariableLayout",
    "QpProblem",
    "DispatchPlan",
    "ROLES",
    "default_config",
    "validate_config",
    "quota_cap",
    "variable_layout",
    "assemble_qp",
    "recover_plan",
    "plan_to_vector",
]

#: Canonical per-hour ordering of the 13 decision roles (time-major layout).
ROLES = ("g", "G", "R", "C", "p_c", "p_d", "q", "x_r", "i_r", "r0", "x_c", "i_c", "c0")
_ROLE_POS = {name: k for k, name in enumerate(ROLES)}

#: Per-hour ordering of the 6 equality-row kinds.
EQ_KINDS = ("ess_dyn", "rec_inv", "cer_inv", "elec_bal", "rec_bal", "cer_bal")
_EQ_POS = {name: k for k, name in enumerate(EQ_KINDS)}

COUPLING_ROWS = ("rps", "quota")


class ModelWarning(UserWarning):
    """Non-fatal model issues: unusual parameter values, non-daily prices."""


class ValidationError(ValueError):
    """Raised when configuration or market data violate a model invariant."""


@dataclass(frozen=True)
class TgParams:
    """Thermal generator: quadratic cost a*g^2 + b*g, box output, CE factor."""

    a: float          # $/MWh^2, must be > 0
    b: float          # $/MWh
    g_min: float      # MW
    g_max: float      # MW
    k: float          # tCO2 emitted per MWh generated


@dataclass(frozen=True)
class EssParams:
    """Energy storage: power ratings, energy capacity, efficiencies."""

    p_c_max: float    # MW
    p_d_max: float    # MW
    q_max: float      # MWh
    eta_c: float = 1.0
    eta_d: float = 1.0


@dataclass(frozen=True)
class InventoryParams:
    """Certificate inventory: hourly withdraw/deposit caps and level cap.

    A disabled inventory is the same thing as one with all caps at zero;
    ``validate_config`` normalises ``enabled=False`` to zero caps.
    """

    w_max: float      # units/h withdrawn
    d_max: float      # units/h deposited
    i_max: float      # units held
    enabled: bool = True

    @classmethod
    def disabled(cls) -> "InventoryParams":
        return cls(0.0, 0.0, 0.0, enabled=False)


@dataclass(frozen=True)
class PolicyParams:
    """Regulatory levels: RPS fraction r and quota strictness alpha."""

    r: float          # in [0, 1]; r = 0 is a degenerate no-RPS case
    alpha: float      # in [0, 1]; scales the CER quota


@dataclass(frozen=True)
class TradeCaps:
    """Symmetric per-hour trade caps |G|, |R|, |C|; ``inf`` means uncapped."""

    g_cap: float = math.inf
    r_cap: float = math.inf
    c_cap: float = math.inf


@dataclass(frozen=True)
class VppConfig:
    """Full device/policy parameter set for one scheduling problem."""

    horizon: int      # number of hourly steps T
    tg: TgParams
    ess: EssParams
    rec_inventory: InventoryParams
    cer_inventory: InventoryParams
    policy: PolicyParams
    caps: TradeCaps = field(default_factory=TradeCaps)

    def with_policy(self, *, r: float | None = None, alpha: float | None = None) -> "VppConfig":
        pol = PolicyParams(
            r=self.policy.r if r is None else r,
            alpha=self.policy.alpha if alpha is None else alpha,
        )
        return replace(self, policy=pol)

    def with_inventories(self, *, rec: bool, cer: bool) -> "VppConfig":
        """Copy with either inventory kept as-is or disabled."""
        return replace(
            self,
            rec_inventory=self.rec_inventory if rec else InventoryParams.disabled(),
            cer_inventory=self.cer_inventory if cer else InventoryParams.disabled(),
        )

    def with_caps(self, **kwargs) -> "VppConfig":
        return replace(self, caps=replace(self.caps, **kwargs))


@dataclass(frozen=True)
class MarketData:
    """Hourly price and forecast series, each of length T.

    pi_g, pi_r, pi_c: electricity / REC / CER prices ($ per unit).
    e: RES output forecast (MW).  l: inflexible load forecast (MW).
    """

    pi_g: np.ndarray
    pi_r: np.ndarray
    pi_c: np.ndarray
    e: np.ndarray
    l: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.pi_g)


def default_config(horizon: int = 168) -> VppConfig:
    """Standard demo parameter set used by the bundled config and tests.

    TG cost 1*g^2 + 80*g with 80 MW cap, 40/40/80 ESS, 400-unit certificate
    inventories, K = 0.9, r = 0.9, alpha = 0.2, 400-unit trade caps.
    """
    return VppConfig(
        horizon=horizon,
        tg=TgParams(a=1.0, b=80.0, g_min=0.0, g_max=80.0, k=0.9),
        ess=EssParams(p_c_max=40.0, p_d_max=40.0, q_max=80.0),
        rec_inventory=InventoryParams(w_max=400.0, d_max=400.0, i_max=400.0),
        cer_inventory=InventoryParams(w_max=400.0, d_max=400.0, i_max=400.0),
        policy=PolicyParams(r=0.9, alpha=0.2),
        caps=TradeCaps(g_cap=400.0, r_cap=400.0, c_cap=400.0),
    )


# ---------------------------------------------------------------------------
# Validation


def _as_series(name: str, values, horizon: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a 1-D series, got shape {arr.shape}")
    if len(arr) != horizon:
        raise ValidationError(f"{name} has length {len(arr)}, expected horizon T={horizon}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def _check_nonneg(name: str, value: float) -> None:
    if value < 0:
        raise ValidationError(f"{name} must be >= 0, got {value}")


def _daily_blocks_constant(series: np.ndarray) -> bool:
    n_full = len(series) // 24
    for d in range(n_full):
        block = series[24 * d : 24 * (d + 1)]
        if not np.all(block == block[0]):
            return False
    tail = series[24 * n_full :]
    return len(tail) == 0 or bool(np.all(tail == tail[0]))


@dataclass(frozen=True)
class ValidatedModel:
    """Config + market data known to satisfy every type invariant.

    Arrays are float64 copies marked read-only; all downstream assembly and
    analysis is pure, so validated models are safe to share across threads.
    """

    config: VppConfig
    data: MarketData

    @property
    def horizon(self) -> int:
        return self.config.horizon

    @property
    def quota(self) -> float:
        return quota_cap(self.config)


def validate_config(cfg: VppConfig, data: MarketData) -> ValidatedModel:
    """Check every invariant and return an immutable validated model.

    Raises ValidationError on dimension mismatches or out-of-domain
    parameters; emits ModelWarning for legal-but-unusual inputs (CE factor
    outside [0.8, 0.9], r = 0, certificate prices not constant within each
    24 h block).
    """
    T = cfg.horizon
    if not isinstance(T, int) or T < 1:
        raise ValidationError(f"horizon must be a positive integer, got {T!r}")

    tg = cfg.tg
    if tg.a <= 0:
        raise ValidationError(f"tg.a must be > 0 (strictly concave profit in g), got {tg.a}")
    if not (0 <= tg.g_min <= tg.g_max):
        raise ValidationError(f"need 0 <= g_min <= g_max, got [{tg.g_min}, {tg.g_max}]")
    if tg.k < 0:
        raise ValidationError(f"tg.k must be >= 0, got {tg.k}")
    if not (0.8 <= tg.k <= 0.9):
        warnings.warn(f"CE factor k={tg.k} outside the usual [0.8, 0.9] range", ModelWarning, stacklevel=2)

    ess = cfg.ess
    for name, v in (("ess.p_c_max", ess.p_c_max), ("ess.p_d_max", ess.p_d_max), ("ess.q_max", ess.q_max)):
        _check_nonneg(name, v)
    for name, eta in (("ess.eta_c", ess.eta_c), ("ess.eta_d", ess.eta_d)):
        if not (0 < eta <= 1):
            raise ValidationError(f"{name} must lie in (0, 1], got {eta}")

    inventories = {}
    for name, inv in (("rec_inventory", cfg.rec_inventory), ("cer_inventory", cfg.cer_inventory)):
        for cap_name, v in ((f"{name}.w_max", inv.w_max), (f"{name}.d_max", inv.d_max), (f"{name}.i_max", inv.i_max)):
            _check_nonneg(cap_name, v)
        # disabled <=> all caps zero
        inventories[name] = InventoryParams.disabled() if not inv.enabled else inv

    pol = cfg.policy
    if not (0 <= pol.r <= 1):
        raise ValidationError(f"policy.r must lie in [0, 1], got {pol.r}")
    if pol.r == 0:
        warnings.warn("policy.r = 0: RPS constraint is degenerate", ModelWarning, stacklevel=2)
    if not (0 <= pol.alpha <= 1):
        raise ValidationError(f"policy.alpha must lie in [0, 1], got {pol.alpha}")

    for name, v in (("caps.g_cap", cfg.caps.g_cap), ("caps.r_cap", cfg.caps.r_cap), ("caps.c_cap", cfg.caps.c_cap)):
        if math.isfinite(v):
            _check_nonneg(name, v)

    series = {
        name: _as_series(name, getattr(data, name), T)
        for name in ("pi_g", "pi_r", "pi_c", "e", "l")
    }
    for name in ("pi_g", "pi_r", "pi_c", "e", "l"):
        if np.any(series[name] < 0):
            raise ValidationError(f"{name} must be >= 0 everywhere")
    for name in ("pi_r", "pi_c"):
        if not _daily_blocks_constant(series[name]):
            warnings.warn(f"{name} is not constant within each 24 h block", ModelWarning, stacklevel=2)

    for arr in series.values():
        arr.setflags(write=False)

    clean_cfg = replace(
        cfg,
        rec_inventory=inventories["rec_inventory"],
        cer_inventory=inventories["cer_inventory"],
    )
    return ValidatedModel(config=clean_cfg, data=MarketData(**series))


def quota_cap(cfg: VppConfig) -> float:
    """Total CER quota over the horizon: g_max * k * T * alpha (tCO2)."""
    return cfg.tg.g_max * cfg.tg.k * cfg.horizon * cfg.policy.alpha


# ---------------------------------------------------------------------------
# Variable layout


@dataclass(frozen=True)
class VariableLayout:
    """Bijective time-major index map over the 13*T decision variables.

    Variable (role, t) lives at index 13*t + position(role); hours are
    0-based internally and 1-based in user-facing output.
    """

    horizon: int

    @property
    def n(self) -> int:
        return 13 * self.horizon

    def index(self, role: str, t: int) -> int:
        if not 0 <= t < self.horizon:
            raise IndexError(f"hour index {t} outside [0, {self.horizon})")
        return 13 * t + _ROLE_POS[role]

    def indices(self, role: str) -> np.ndarray:
        """All indices of one role, in hour order."""
        return np.arange(_ROLE_POS[role], self.n, 13)

    def gather(self, x: np.ndarray, role: str) -> np.ndarray:
        return np.asarray(x)[_ROLE_POS[role] :: 13].copy()

    def recover(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Split a flat vector into one array per role."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {x.shape}")
        return {role: x[k::13].copy() for k, role in enumerate(ROLES)}

    def flatten(self, per_role: dict[str, np.ndarray]) -> np.ndarray:
        x = np.empty(self.n)
        for k, role in enumerate(ROLES):
            arr = np.asarray(per_role[role], dtype=float)
            if arr.shape != (self.horizon,):
                raise ValueError(f"role {role!r} has shape {arr.shape}, expected ({self.horizon},)")
            x[k::13] = arr
        return x


def variable_layout(horizon: int) -> VariableLayout:
    if not isinstance(horizon, int) or horizon < 1:
        raise ValidationError(f"horizon must be a positive integer, got {horizon!r}")
    return VariableLayout(horizon)


# ---------------------------------------------------------------------------
# QP assembly


@dataclass(frozen=True)
class QpProblem:
    """Concave QP in maximization form.

        maximize   0.5 x' diag(h_diag) x + f' x
        subject to a_eq x = b_eq                     (6*T named rows)
                   lb <= x <= ub                     (per-variable boxes)
                   coup x <= coup_rhs                (RPS and quota rows)

    The only curvature is -2a on the TG-output diagonal.  Every equality row
    and the two coupling rows are named so dual multipliers can be recovered
    by constraint, not by position.
    """

    h_diag: np.ndarray
    f: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    coup: sp.csr_matrix
    coup_rhs: np.ndarray
    layout: VariableLayout

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def horizon(self) -> int:
        return self.layout.horizon

    @property
    def m_eq(self) -> int:
        return self.a_eq.shape[0]

    def eq_row_index(self, kind: str, t: int) -> int:
        """Row index of equality `kind` at 0-based hour t."""
        return 6 * t + _EQ_POS[kind]

    def eq_row_name(self, i: int) -> str:
        return f"{EQ_KINDS[i % 6]}[{i // 6 + 1}]"

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * np.dot(self.h_diag, x * x) + np.dot(self.f, x))


def assemble_qp(model: ValidatedModel, *, quota_override: float | None = None) -> QpProblem:
    """Build the concave QP from a validated model.

    Storage states wrap cyclically: hour t couples to hour t-1 with hour 1
    coupling back to hour T, which encodes the terminal conditions Q_0 = Q_T
    and likewise for both certificate inventories.  `quota_override` replaces
    the derived quota g_max*k*T*alpha (used by envelope checks).
    """
    cfg, data = model.config, model.data
    T = cfg.horizon
    layout = variable_layout(T)
    n = layout.n

    idx = {role: layout.indices(role) for role in ROLES}

    # objective
    h_diag = np.zeros(n)
    h_diag[idx["g"]] = -2.0 * cfg.tg.a
    f = np.zeros(n)
    f[idx["g"]] = -cfg.tg.b
    f[idx["G"]] = data.pi_g
    f[idx["R"]] = data.pi_r
    f[idx["C"]] = data.pi_c

    # equality rows, 6 per hour
    rows, cols, vals = [], [], []
    b_eq = np.zeros(6 * T)

    def put(row, col, val):
        rows.append(row)
        cols.append(col)
        vals.append(val)

    for t in range(T):
        tp = (t - 1) % T  # cyclic predecessor
        r_ess = 6 * t + _EQ_POS["ess_dyn"]
        put(r_ess, idx["p_c"][t], 1.0 / cfg.ess.eta_c)
        put(r_ess, idx["p_d"][t], -cfg.ess.eta_d)
        put(r_ess, idx["q"][t], -1.0)
        put(r_ess, idx["q"][tp], 1.0)

        r_rec = 6 * t + _EQ_POS["rec_inv"]
        put(r_rec, idx["x_r"][t], -1.0)
        put(r_rec, idx["i_r"][t], -1.0)
        put(r_rec, idx["i_r"][tp], 1.0)

        r_cer = 6 * t + _EQ_POS["cer_inv"]
        put(r_cer, idx["x_c"][t], -1.0)
        put(r_cer, idx["i_c"][t], -1.0)
        put(r_cer, idx["i_c"][tp], 1.0)

        r_bal = 6 * t + _EQ_POS["elec_bal"]
        put(r_bal, idx["g"][t], 1.0)
        put(r_bal, idx["p_d"][t], 1.0)
        put(r_bal, idx["p_c"][t], -1.0)
        put(r_bal, idx["G"][t], -1.0)
        b_eq[r_bal] = data.l[t] - data.e[t]

        r_rb = 6 * t + _EQ_POS["rec_bal"]
        put(r_rb, idx["x_r"][t], 1.0)
        put(r_rb, idx["R"][t], -1.0)
        put(r_rb, idx["r0"][t], -1.0)
        b_eq[r_rb] = -data.e[t]

        r_cb = 6 * t + _EQ_POS["cer_bal"]
        put(r_cb, idx["C"][t], 1.0)
        put(r_cb, idx["g"][t], cfg.tg.k)
        put(r_cb, idx["x_c"][t], -1.0)
        put(r_cb, idx["c0"][t], -1.0)

    a_eq = sp.coo_matrix((vals, (rows, cols)), shape=(6 * T, n)).tocsr()
    a_eq.sum_duplicates()

    # variable boxes
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)

    def box(role, lo, hi):
        lb[idx[role]] = lo
        ub[idx[role]] = hi

    box("g", cfg.tg.g_min, cfg.tg.g_max)
    box("G", -cfg.caps.g_cap, cfg.caps.g_cap)
    box("R", -cfg.caps.r_cap, cfg.caps.r_cap)
    box("C", -cfg.caps.c_cap, cfg.caps.c_cap)
    box("p_c", 0.0, cfg.ess.p_c_max)
    box("p_d", 0.0, cfg.ess.p_d_max)
    box("q", 0.0, cfg.ess.q_max)
    box("x_r", -cfg.rec_inventory.d_max, cfg.rec_inventory.w_max)
    box("i_r", 0.0, cfg.rec_inventory.i_max)
    box("r0", 0.0, np.inf)
    box("x_c", -cfg.cer_inventory.d_max, cfg.cer_inventory.w_max)
    box("i_c", 0.0, cfg.cer_inventory.i_max)
    box("c0", 0.0, np.inf)

    # coupling rows: RPS retirement floor and quota ceiling
    c_rows, c_cols, c_vals = [], [], []
    for t in range(T):
        c_rows.append(0)
        c_cols.append(idx["p_c"][t])
        c_vals.append(cfg.policy.r)
        c_rows.append(0)
        c_cols.append(idx["r0"][t])
        c_vals.append(-1.0)
        c_rows.append(1)
        c_cols.append(idx["c0"][t])
        c_vals.append(1.0)
    coup = sp.coo_matrix((c_vals, (c_rows, c_cols)), shape=(2, n)).tocsr()
    quota = model.quota if quota_override is None else float(quota_override)
    coup_rhs = np.array([-cfg.policy.r * float(np.sum(data.l)), quota])

    return QpProblem(
        h_diag=h_diag,
        f=f,
        a_eq=a_eq,
        b_eq=b_eq,
        lb=lb,
        ub=ub,
        coup=coup,
        coup_rhs=coup_rhs,
        layout=layout,
    )


# ---------------------------------------------------------------------------
# Plan recovery


@dataclass(frozen=True)
class DispatchPlan:
    """Per-hour physical schedule in natural units.

    Withdraw/deposit pairs come from the sign split of the net flows, so
    r_w*r_d = 0 and c_w*c_d = 0 hold exactly.  When both efficiencies are 1
    the ESS pair is netted (min(p_c, p_d) removed from both sides, leaving
    every balance row unchanged); otherwise netting is skipped and the
    simultaneous component is reported instead.
    """

    g: np.ndarray
    G: np.ndarray
    R: np.ndarray
    C: np.ndarray
    p_c: np.ndarray
    p_d: np.ndarray
    q: np.ndarray
    r_w: np.ndarray
    r_d: np.ndarray
    i_r: np.ndarray
    r0: np.ndarray
    c_w: np.ndarray
    c_d: np.ndarray
    i_c: np.ndarray
    c0: np.ndarray
    simultaneous_flow: np.ndarray
    netted: bool

    #: column order used by plan CSV files
    CSV_COLUMNS = ("g", "G", "R", "C", "p_c", "p_d", "q", "r_w", "r_d", "i_r", "r0", "c_w", "c_d", "i_c", "c0")

    @property
    def horizon(self) -> int:
        return len(self.g)


def recover_plan(x: np.ndarray, layout: VariableLayout, *, eta_c: float = 1.0, eta_d: float = 1.0) -> DispatchPlan:
    """Map a primal vector back to a physical dispatch plan."""
    parts = layout.recover(x)
    r_w = np.maximum(parts["x_r"], 0.0)
    r_d = np.maximum(-parts["x_r"], 0.0)
    c_w = np.maximum(parts["x_c"], 0.0)
    c_d = np.maximum(-parts["x_c"], 0.0)

    p_c, p_d = parts["p_c"].copy(), parts["p_d"].copy()
    overlap = np.minimum(p_c, p_d)
    lossless = eta_c == 1.0 and eta_d == 1.0
    if lossless:
        p_c -= overlap
        p_d -= overlap

    return DispatchPlan(
        g=parts["g"],
        G=parts["G"],
        R=parts["R"],
        C=parts["C"],
        p_c=p_c,
        p_d=p_d,
        q=parts["q"],
        r_w=r_w,
        r_d=r_d,
        i_r=parts["i_r"],
        r0=parts["r0"],
        c_w=c_w,
        c_d=c_d,
        i_c=parts["i_c"],
        c0=parts["c0"],
        simultaneous_flow=overlap,
        netted=lossless,
    )


def plan_to_vector(plan: DispatchPlan, layout: VariableLayout) -> np.ndarray:
    """Flatten a plan back into layout order (inverse of recover_plan)."""
    return layout.flatten(
        {
            "g": plan.g,
            "G": plan.G,
            "R": plan.R,
            "C": plan.C,
            "p_c": plan.p_c,
            "p_d": plan.p_d,
            "q": plan.q,
            "x_r": plan.r_w - plan.r_d,
            "i_r": plan.i_r,
            "r0": plan.r0,
            "x_c": plan.c_w - plan.c_d,
            "i_c": plan.i_c,
            "c0": plan.c0,
        }
    )
