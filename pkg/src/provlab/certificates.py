"""Bellman operator, sub-/super-solution certificates and certificate gaps."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .mdp import MdpModel, ValueTables, solve_exact
from .planners import ScoreFunction, per_depth, relevant_domain

CERT_TOL = 1e-12


def bellman_apply(model: MdpModel, v) -> np.ndarray:
    """(Tv)(x) = max(1[x in G], max_a sum_x' P(x'|x,a) v(x'))."""
    v = np.asarray(v, dtype=float)
    if v.shape != (model.n_states,):
        raise ValueError(f"v has shape {v.shape}, expected ({model.n_states},)")
    if not np.all(np.isfinite(v)) or np.any(v < -CERT_TOL) or np.any(v > 1 + CERT_TOL):
        raise ValueError("v must take values in [0, 1]")
    return np.maximum(model.goal.astype(float), model.backup(v).max(axis=1))


@dataclass(frozen=True)
class CertificateSequence:
    side: str  # "lower" | "upper"
    funcs: np.ndarray  # (B+1, S)
    valid: bool | None = None
    violations: tuple = ()  # (b, state, slack): slack = size of the violated inequality

    def __post_init__(self):
        if self.side not in ("lower", "upper"):
            raise ValueError(f"side must be 'lower' or 'upper', not {self.side!r}")
        f = np.asarray(self.funcs, dtype=float)
        if np.any(f < -CERT_TOL) or np.any(f > 1 + CERT_TOL):
            raise ValueError("certificate functions must take values in [0, 1]")
        object.__setattr__(self, "funcs", f)


def validate_certificate(model: MdpModel, cert: CertificateSequence, tol: float = CERT_TOL) -> CertificateSequence:
    """Check U_0 >= 1_G, U_{b+1} >= T U_b (or the reversed lower-side
    inequalities) pointwise; returns a copy with `valid` and `violations`."""
    B = model.horizon
    f = cert.funcs
    if f.shape != (B + 1, model.n_states):
        raise ValueError(f"funcs shape {f.shape} != {(B + 1, model.n_states)}")
    sign = 1.0 if cert.side == "upper" else -1.0
    viol = []
    targets = [model.goal.astype(float)] + [bellman_apply(model, f[b]) for b in range(B)]
    for b in range(B + 1):
        # upper: f[b] >= target; lower: f[b] <= target
        slack = sign * (targets[b] - f[b])
        for s in np.flatnonzero(slack > tol):
            viol.append((b, int(s), float(slack[s])))
    return replace(cert, valid=not viol, violations=tuple(viol))


@dataclass
class CertificateResult:
    state: int
    lower: float
    upper: float
    valid_lower: bool = True
    valid_upper: bool = True
    status: str = "ok"
    violations: list = field(default_factory=list)
    premise_violated: bool = False
    sandwich_checked: bool = False
    sandwich_holds: bool | None = None

    @property
    def gap(self) -> float:
        return self.upper - self.lower

    def csv_row(self, model_id: str) -> list:
        return [model_id, self.state, repr(self.lower), repr(self.upper), repr(self.gap),
                self.valid_lower, self.valid_upper]


CSV_HEADER = ["model_id", "x0", "lower", "upper", "gap", "valid_lower", "valid_upper"]


def results_to_csv(results: list[tuple[str, CertificateResult]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_HEADER)
    for model_id, res in results:
        w.writerow(res.csv_row(model_id))
    return buf.getvalue()


def certify_sandwich(model: MdpModel, cert_lower: CertificateSequence, cert_upper: CertificateSequence, x0) -> CertificateResult:
    """Read off (L_B(x0), U_B(x0)); any invalid side turns the result into an
    error status carrying the violations instead of a bound claim."""
    s = model.state_index(x0)
    lo = validate_certificate(model, cert_lower)
    up = validate_certificate(model, cert_upper)
    res = CertificateResult(s, float(lo.funcs[-1, s]), float(up.funcs[-1, s]), lo.valid, up.valid)
    if not (lo.valid and up.valid):
        res.status = "invalid_certificate"
        res.violations = [("lower",) + v for v in lo.violations] + [("upper",) + v for v in up.violations]
    return res


def score_certificate(model: MdpModel, scores: ScoreFunction, eps, x0, tables: ValueTables | None = None) -> CertificateResult:
    """U_b = 1_G v clip(max_a h_b + eps_b), L_b = 1_G v clip(max_a h_b - eps_b).

    The uniform-approximation premise is checked on the states relevant from
    x0; if it fails the numbers are still returned with `premise_violated`
    set and the sandwich against V^* is not asserted.
    """
    B = model.horizon
    e = per_depth(eps, B)
    s = model.state_index(x0)
    tables = tables or solve_exact(model)
    g = model.goal.astype(float)
    best = np.where(model.action_mask, scores.values, -np.inf).max(axis=2)  # (B+1, S)
    L = np.empty((B + 1, model.n_states))
    U = np.empty_like(L)
    L[0] = U[0] = g
    for b in range(1, B + 1):
        U[b] = np.maximum(g, np.clip(best[b] + e[b], 0.0, 1.0))
        L[b] = np.maximum(g, np.clip(best[b] - e[b], 0.0, 1.0))
    res = CertificateResult(s, float(L[B, s]), float(U[B, s]))
    dom = relevant_domain(model, [s])
    err = scores.sup_error(tables, dom)
    res.premise_violated = bool(np.any(err > e + CERT_TOL))
    if not res.premise_violated:
        res.sandwich_checked = True
        v = tables.v_star
        ok = True
        for b in range(1, B + 1):
            xs = dom[b]
            ok &= bool(np.all(L[b, xs] <= v[b, xs] + CERT_TOL) and np.all(v[b, xs] <= U[b, xs] + CERT_TOL))
        ok &= L[B, s] <= v[B, s] + CERT_TOL and v[B, s] <= U[B, s] + CERT_TOL
        res.sandwich_holds = bool(ok)
    return res


def trivial_certificates(model: MdpModel) -> tuple[CertificateSequence, CertificateSequence]:
    """(L = 0-sequence with L_0 = 0, U = 1-sequence)."""
    shape = (model.horizon + 1, model.n_states)
    return CertificateSequence("lower", np.zeros(shape)), CertificateSequence("upper", np.ones(shape))


def exact_certificates(tables: ValueTables) -> tuple[CertificateSequence, CertificateSequence]:
    return CertificateSequence("lower", tables.v_star), CertificateSequence("upper", tables.v_star)
