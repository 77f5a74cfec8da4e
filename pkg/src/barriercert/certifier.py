"""Integral-inequality certification via multipliers, dummy variables and
integration-by-parts slack.

The core service proves statements of the form

    integral of f(x, state) over (0,1)  >=  0
    for all states satisfying the boundary conditions
    and all states satisfying given integral constraints  integral s_i >= 0

by building the relaxation

    f - n's - (m-terms) + d/dx(mu' H mu)  is SOS on the strip,
    -[mu' H mu] boundary bracket is SOS in the free boundary traces,

with scalar multipliers n_i >= 0 (free for equality constraints), polynomial
multipliers m_i(t,x), one dummy derivative jet per constraint (the dummy
variable v_i(x) = integral of s_i from 0 to x, entering through its
x-derivative), and a symmetric polynomial matrix H creating zero-integral
slack.  Safety verification assembles two such inequalities — separation of
the unsafe/initial sets and dissipation of the barrier — sharing one set of
barrier decision symbols, and solves a single SDP.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import numeric, sdp
from .barrier import BarrierAnsatz, extended_space, lie_derivative, make_ansatz
from .pde_model import (
    FunctionSample,
    PdeProblem,
    admissible_basis,
    normalize_domain,
    rescale_into_set,
    sample_functions,
)
from .polyalg import (
    LinPoly,
    MonomialBasis,
    Poly,
    Symbol,
    VarSpace,
    jet_name,
    trace_name,
)


class CertifierError(Exception):
    pass


# ---------------------------------------------------------------------------
# options and results


@dataclass
class CertifyOptions:
    deg_m: int | None = None       # x-degree of constraint multipliers m_i
    deg_H: int | None = None       # x-degree of IBP slack entries; -1 disables
    deg_H_sep: int | None = None   # override for the separation inequality
    mu_deg: int | None = None      # monomial degree of the slack vector mu
    eps: float = 1e-6              # strictness margin on the separation side
    tol: float = 1e-8
    max_iter: int = 150
    pairing: str = "theorem"       # or "literal": swap which set binds which copy
    verbose: bool = False

    def to_dict(self):
        return {
            "deg_m": self.deg_m, "deg_H": self.deg_H, "deg_H_sep": self.deg_H_sep,
            "mu_deg": self.mu_deg, "eps": self.eps, "tol": self.tol,
            "max_iter": self.max_iter, "pairing": self.pairing,
        }


@dataclass
class Certificate:
    kind: str                     # "theorem" | "corollary" | "inequality"
    fingerprint: str
    ansatz_params: dict | None
    options: dict
    values: dict                  # decision symbol -> float
    barrier_basis: list | None    # printable jet monomials
    barrier_entries: list | None  # resolved matrix of (t,x) polynomial strings
    grams: dict                   # identity name -> list of Gram matrices
    residuals: dict
    meta: dict = field(default_factory=dict)

    def to_json(self, indent=2) -> str:
        def enc(o):
            if isinstance(o, np.ndarray):
                return [[repr(float(v)) for v in row] for row in o]
            if isinstance(o, float):
                return repr(o)
            raise TypeError(type(o).__name__)
        doc = {
            "format": "barriercert-certificate-v1",
            "kind": self.kind,
            "fingerprint": self.fingerprint,
            "ansatz": self.ansatz_params,
            "options": self.options,
            "values": {k: repr(float(v)) for k, v in sorted(self.values.items())},
            "barrier_basis": self.barrier_basis,
            "barrier_entries": self.barrier_entries,
            "grams": {
                k: [[[repr(float(v)) for v in row] for row in g] for g in gs]
                for k, gs in self.grams.items()
            },
            "residuals": {k: repr(float(v)) for k, v in self.residuals.items()},
            "meta": self.meta,
        }
        return json.dumps(doc, indent=indent)

    @staticmethod
    def from_json(text: str) -> "Certificate":
        doc = json.loads(text)
        if doc.get("format") != "barriercert-certificate-v1":
            raise CertifierError("not a certificate file")
        return Certificate(
            kind=doc["kind"],
            fingerprint=doc["fingerprint"],
            ansatz_params=doc["ansatz"],
            options=doc["options"],
            values={k: float(v) for k, v in doc["values"].items()},
            barrier_basis=doc["barrier_basis"],
            barrier_entries=doc["barrier_entries"],
            grams={
                k: [np.array([[float(v) for v in row] for row in g]) for g in gs]
                for k, gs in doc["grams"].items()
            },
            residuals={k: float(v) for k, v in doc["residuals"].items()},
            meta=doc.get("meta", {}),
        )


@dataclass
class CertifyResult:
    status: str  # "certified" | "no-certificate" | "numerical-failure"
    certificate: Certificate | None
    solver_status: str
    iterations: int
    residuals: dict
    sizes: dict

    @property
    def certified(self) -> bool:
        return self.status == "certified"


# ---------------------------------------------------------------------------
# joint copy spaces


def _copy_space(problem: PdeProblem, suffixes: Sequence[str], with_time: bool) -> VarSpace:
    syms = []
    if with_time:
        syms.append(Symbol("t", "time"))
    syms.append(Symbol("x", "space"))
    for suf in suffixes:
        for dep in problem.depvars:
            cdep = dep + suf
            for k in range(problem.alpha + 1):
                syms.append(Symbol(jet_name(cdep, k), "jet", dep=cdep, order=k))
    return VarSpace(syms)


def _copy_rename(problem: PdeProblem, suffix: str) -> dict[str, str]:
    ren = {}
    for dep in problem.depvars:
        for k in range(problem.alpha + 1):
            ren[jet_name(dep, k)] = jet_name(dep + suffix, k)
    return ren


def _merge_equalities(constraints: Sequence[Poly]) -> list[tuple[Poly, str]]:
    """Detect (g, -g) pairs and merge them into single equality constraints."""
    out: list[tuple[Poly, str]] = []
    used = [False] * len(constraints)
    for i, s in enumerate(constraints):
        if used[i]:
            continue
        mate = None
        for j in range(i + 1, len(constraints)):
            if not used[j] and (constraints[j] + s).is_zero():
                mate = j
                break
        if mate is None:
            out.append((s, "ineq"))
        else:
            used[mate] = True
            out.append((s, "eq"))
        used[i] = True
    return out


# ---------------------------------------------------------------------------
# boundary-condition elimination over trace symbols


def _with_traces(space: VarSpace) -> VarSpace:
    extra = []
    for s in space.symbols:
        if s.kind == "jet":
            for side in (0, 1):
                extra.append(
                    Symbol(trace_name(s.name, side), "trace", dep=s.dep, order=s.order, side=side)
                )
    return space.extend(extra)


def _bc_pivots(problem: PdeProblem, tspace: VarSpace, suffixes: Sequence[str],
               t_values: Sequence | None, derived: bool = False) -> dict[str, Poly]:
    """Solve the (linear, constant-coefficient) boundary conditions for pivot
    traces.  Each copy suffix gets its own instance of every condition; for
    fixed-instant copies a time value is substituted first.

    With `derived`, also add the time-differentiated (compatibility)
    conditions: trajectory states satisfy the boundary conditions for all
    time, so the time derivative of each condition vanishes as well, and
    substituting the dynamics for the time derivatives of the jets yields
    extra trace conditions (a Dirichlet wall of the heat equation also pins
    u_xx there).  These are sound only for inequalities quantified over
    trajectory states, not over arbitrary admissible functions.
    """
    pivots: dict[str, Poly] = {}
    for ci, suf in enumerate(suffixes):
        tv = None if t_values is None else t_values[ci]
        for bc in problem.boundary:
            terms = []
            for nm, coeff in bc.terms:
                base, side = nm.split("@")
                cname = trace_name(_suffix_jet(base, suf), int(side))
                c = _coeff_to(coeff, tspace, tv)
                terms.append((cname, c))
            rhs = _coeff_to(bc.rhs, tspace, tv)
            pivot = None
            for nm, c in terms:
                if nm in pivots or nm not in tspace:
                    continue
                if c.degree() == 0 and not c.is_zero():
                    pivot = (nm, c.coefficient((0,) * len(tspace)))
                    break
            if pivot is None:
                raise CertifierError(
                    "cannot eliminate boundary condition: no constant-coefficient pivot"
                )
            nm0, c0 = pivot
            expr = rhs
            for nm, c in terms:
                if nm != nm0:
                    expr = expr - c * Poly.var(tspace, nm)
            pivots[nm0] = expr * (Fraction(1) / c0)
    if derived:
        dyn = dict(zip(problem.depvars, problem.dynamics))
        for ci, suf in enumerate(suffixes):
            tv = None if t_values is None else t_values[ci]
            for bc in problem.boundary:
                eq = Poly.zero(tspace)
                usable = True
                for nm, coeff in bc.terms:
                    base, side = nm.split("@")
                    side = int(side)
                    sym = problem.space.symbol(base)
                    if "t" in coeff.space and not coeff.partial("t").is_zero():
                        cname = trace_name(_suffix_jet(base, suf), side)
                        eq = eq + _coeff_to(coeff.partial("t"), tspace, tv) \
                            * Poly.var(tspace, cname)
                    # d/dt of the order-k jet along trajectories is the k-th
                    # total x-derivative of the dynamics, traced at the wall
                    ext = extended_space(problem, sym.order + problem.alpha)
                    fk = dyn[sym.dep].map_symbols(ext)
                    for _ in range(sym.order):
                        fk = fk.total_x()
                    fk = fk.subs({"x": side})
                    if tv is not None and "t" in fk.space:
                        fk = fk.subs({"t": Fraction(tv)})
                    ren = {}
                    for jn in sorted(fk.support_symbols()):
                        js = ext.symbol(jn)
                        if js.kind != "jet":
                            continue
                        tn = trace_name(_suffix_jet(jn, suf), side)
                        if tn not in tspace:
                            usable = False
                            break
                        ren[jn] = tn
                    if not usable:
                        break
                    eq = eq + _coeff_to(coeff, tspace, tv) * fk.map_symbols(tspace, ren)
                if not usable:
                    continue
                if "t" in bc.rhs.space:
                    eq = eq - _coeff_to(bc.rhs.partial("t"), tspace, tv)
                eq = eq.subs(pivots)
                if eq.is_zero():
                    continue
                # pivot on the highest-order trace entering purely linearly
                cands = []
                n = len(tspace)
                for e, c in eq.terms.items():
                    if sum(e) == 1:
                        i = next(q for q, k in enumerate(e) if k)
                        s = tspace.symbols[i]
                        if s.kind == "trace" and s.name not in pivots:
                            cands.append((s.order, s.name, e, c))
                for _, zname, ze, c0 in sorted(cands, reverse=True):
                    rest = Poly(tspace)
                    zi = tspace.index(zname)
                    ok = True
                    for e, c in eq.terms.items():
                        if e == ze:
                            continue
                        if e[zi]:
                            ok = False
                            break
                        rest.terms[e] = c
                    if ok:
                        pivots[zname] = rest * (Fraction(-1) / c0)
                        break
    # fix-point substitution so pivots never reference other pivots
    for _ in range(len(pivots)):
        changed = False
        for nm in pivots:
            p = pivots[nm].subs({k: v for k, v in pivots.items() if k != nm})
            if p.terms != pivots[nm].terms:
                pivots[nm] = p
                changed = True
        if not changed:
            break
    return pivots


def _suffix_jet(base_jet: str, suffix: str) -> str:
    """u_x with suffix __T -> u__T_x."""
    if not suffix:
        return base_jet
    for sep in ("_x",):
        idx = base_jet.find(sep)
        if idx >= 0:
            return base_jet[:idx] + suffix + base_jet[idx:]
    return base_jet + suffix


def _coeff_to(p: Poly, tspace: VarSpace, t_value) -> Poly:
    if t_value is not None and "t" in p.space:
        p = p.subs({"t": Fraction(t_value)})
    return p.map_symbols(tspace)


# ---------------------------------------------------------------------------
# basis helpers


def _shift_powers(space: VarSpace, name: str, deg: int, scale=None) -> list[Poly]:
    """Chebyshev polynomials T_c(2x-1) for x on (0,1), or T_a(2t/T-1) for t
    on (0,T), built exactly by the three-term recurrence.  Raw monomials (and
    even shifted powers) of the variable are exponentially ill-conditioned on
    these intervals, which inflates decision values and Gram entries by the
    basis condition number; the Chebyshev basis stays O(1)-conditioned."""
    if name not in space:
        return [Poly.const(space, 1)]
    s = Poly.var(space, name) * (Fraction(2) if scale is None else Fraction(2) / Fraction(scale))
    s = s - Poly.const(space, 1)
    out = [Poly.const(space, 1)]
    if deg >= 1:
        out.append(s)
    for _ in range(deg - 1):
        out.append(out[-1] * s * 2 - out[-2])
    return out


def _product_basis(space: VarSpace, state_syms: Sequence[str], state_deg: int,
                   x_deg: int, t_deg: int, min_state_deg: int = 0,
                   t_scale=None) -> tuple:
    """state-monomials (min_state_deg <= deg <= state_deg) times shifted
    powers in x and t, as a tuple of Poly basis elements.

    Homogeneous targets (no constant- or linear-in-state terms) must exclude
    the constant state monomial: keeping it forces the pure-(x,t) part of the
    Gram decomposition onto a zero-measure face and stalls the interior-point
    solver.
    """
    n = len(space)
    state = MonomialBasis.make(space, tuple(state_syms), state_deg) if state_syms else None
    smonos = state.monos if state else ((0,) * n,)
    if min_state_deg:
        smonos = tuple(m for m in smonos if sum(m) >= min_state_deg)
    xp = _shift_powers(space, "x", x_deg)
    tp = _shift_powers(space, "t", t_deg, t_scale)
    basis = []
    for sm in smonos:
        mono = Poly.monomial(space, sm)
        for a in range(t_deg + 1):
            for c in range(x_deg + 1):
                basis.append(mono * tp[a] * xp[c])
    return tuple(basis)


def _lin_support(p: LinPoly) -> set[str]:
    out = set()
    for q in p.parts.values():
        out |= q.support_symbols()
    return out


def _lin_degree(p: LinPoly, names) -> int:
    names = [n for n in names if n in p.space]
    return max((q.degree(names) for q in p.parts.values()), default=0)


def _poly_matrix(space, prefix, dim, deg_x, deg_t, t_scale=None) -> list[list[LinPoly]]:
    """Symmetric matrix of fresh decision-coefficient (t,x)-polynomials,
    parametrized in the shifted powers of _shift_powers."""
    xp = _shift_powers(space, "x", deg_x)
    tp = _shift_powers(space, "t", deg_t, t_scale)
    mat = [[None] * dim for _ in range(dim)]
    for i in range(dim):
        for j in range(i, dim):
            e = LinPoly.zero(space)
            for a in range(deg_t + 1):
                for c in range(deg_x + 1):
                    e = e + LinPoly.decision(space, f"{prefix}[{i},{j}]t{a}x{c}", tp[a] * xp[c])
            mat[i][j] = e
            mat[j][i] = e
    return mat


# ---------------------------------------------------------------------------
# the core inequality builder


@dataclass
class _Inequality:
    """One embedded integral inequality added to a shared SOS program."""

    name: str
    space: VarSpace            # includes dummy jets
    integrand: LinPoly         # f - multiplier terms (before H slack)
    slack: LinPoly             # d/dx(mu' H mu), zero if disabled
    trace_expr: LinPoly | None # -bracket, over trace symbols
    constraints: list          # [(Poly on `space`, kind, n-name, v-name)]
    mu_names: list


def _add_inequality(
    prog: sdp.SosProgram,
    name: str,
    space0: VarSpace,
    expr: LinPoly,
    constraints: Sequence[tuple[Poly, str]],
    problem: PdeProblem,
    suffixes: Sequence[str],
    t_values: Sequence | None,
    time_interval: float | None,
    deg_m: int,
    deg_H: int,
    mu_deg: int | None,
    opts: CertifyOptions,
    derived_bc: bool = False,
    gram_margin: float = 0.0,
) -> _Inequality:
    """Embed constraints, add slack, cuts, and trace positivity for one
    integral inequality; registers everything on `prog`."""
    has_t = "t" in space0

    # Integral constraints enter through one dummy antiderivative pair
    # (v_i, v_i_x) each, with a polynomial multiplier m_i(t, x) against the
    # defining relation v_i_x = s_i.  A constant m_i multiplies a term of
    # identically zero integral, so with deg_m == 0 the dummy machinery adds
    # nothing over the plain scalar multiplier n_i s_i and is skipped, which
    # keeps the dummy state out of every Gram basis.
    use_dummies = deg_m > 0 and bool(constraints)
    vsyms = []
    if use_dummies:
        for i in range(len(constraints)):
            dep = f"{name}v{i}"
            vsyms.append(Symbol(jet_name(dep, 0), "jet", dep=dep, order=0))
            vsyms.append(Symbol(jet_name(dep, 1), "jet", dep=dep, order=1))
    space = space0.extend(vsyms)

    P = expr.map_symbols(space)
    con_meta = []
    for i, (s, kind) in enumerate(constraints):
        s = s.map_symbols(space)
        nname = f"{name}.n{i}"
        if kind == "ineq":
            prog.add_nonneg(nname)
        if not use_dummies:
            P = P - LinPoly.decision(space, nname, s)
            con_meta.append((s, kind, nname, None))
            continue
        vx = Poly.var(space, jet_name(f"{name}v{i}", 1))
        P = P - LinPoly.decision(space, nname, vx)
        # m_i(t,x) multiplier against (v_i_x - s_i)
        mterm = LinPoly.zero(space)
        m_tdeg = deg_m if has_t else 0
        xp = _shift_powers(space, "x", deg_m)
        tp = _shift_powers(space, "t", m_tdeg, time_interval)
        for a in range(m_tdeg + 1):
            for c in range(deg_m + 1):
                mterm = mterm + LinPoly.decision(space, f"{name}.m{i}t{a}x{c}", tp[a] * xp[c])
        P = P - mterm * (vx - s)
        con_meta.append((s, kind, nname, f"{name}v{i}"))

    # homogeneous targets (state degree >= 2 everywhere) drop the constant
    # state monomial from every basis; see _product_basis.  A strictness
    # margin needs the constant row to absorb its shift, so it forces the
    # row back in.
    jet_names = [s.name for s in space.symbols if s.kind == "jet"]
    levels = set()
    for q in P.parts.values():
        jidx = [q.space.index(nm) for nm in jet_names]
        for e in q.terms:
            levels.add(sum(e[i] for i in jidx))
    min_state = 1 if levels and min(levels) >= 2 and gram_margin <= 0 else 0

    # IBP slack over mu = monomials in low-order jets and dummy variables
    slack = LinPoly.zero(space)
    trace_expr = None
    mu_names: list[str] = []
    if deg_H >= 0:
        support = _lin_support(P)
        maxord = 0
        for nm in support:
            sym = space.symbol(nm)
            if sym.kind == "jet":
                maxord = max(maxord, sym.order)
        mu_vars = [
            s.name
            for s in space.symbols
            if s.kind == "jet"
            and (
                (s.dep.startswith(name + "v") and s.order == 0)
                or (not s.dep.startswith(name + "v") and s.order <= max(0, maxord - 1))
            )
        ]
        sdeg = _lin_degree(P, [s.name for s in space.symbols if s.kind == "jet"])
        mdeg = mu_deg if mu_deg is not None else max(1, (sdeg + 1) // 2)
        mu = MonomialBasis.make(space, tuple(mu_vars), mdeg)
        if min_state:
            mu = MonomialBasis(
                space, mu.var_names, mu.max_deg,
                tuple(m for m in mu.monos if sum(m) >= min_state),
            )
        mu_names = [str(Poly.monomial(space, m)) for m in mu.monos]
        Hdeg_t = (_lin_degree(P, ["t"]) + 1) if has_t else 0
        H = _poly_matrix(space, f"{name}.H", len(mu), deg_H, Hdeg_t, time_interval)
        Q = LinPoly.zero(space)
        for i in range(len(mu)):
            pi = Poly.monomial(space, mu.monos[i])
            for j in range(i, len(mu)):
                term = H[i][j] * (pi * Poly.monomial(space, mu.monos[j]))
                Q = Q + (term if i == j else term * 2)
        slack = Q.total_x()

        # boundary bracket [mu'Hmu] from 0 to 1, boundary conditions applied
        tspace = _with_traces(space)
        bracket = LinPoly.zero(tspace)
        for side, sign in ((1, 1), (0, -1)):
            ren = {
                s.name: trace_name(s.name, side)
                for s in space.symbols
                if s.kind == "jet"
            }
            Qs = Q.subs({"x": Poly.const(space, side)}).map_symbols(tspace, ren)
            bracket = bracket + Qs * sign
        pivots = _bc_pivots(problem, tspace, suffixes, t_values, derived=derived_bc)
        # dummy variables vanish at the left endpoint
        if use_dummies:
            for i in range(len(constraints)):
                pivots[trace_name(f"{name}v{i}", 0)] = Poly.zero(tspace)
        bracket = bracket.subs(pivots)
        trace_expr = -bracket

    target = P + slack

    # degree bookkeeping and Gram bases
    state_syms = sorted(
        nm for nm in _lin_support(target) if space.symbol(nm).kind == "jet"
    )
    sdeg = _lin_degree(target, state_syms)
    xdeg = _lin_degree(target, ["x"])
    tdeg = _lin_degree(target, ["t"]) if has_t else 0
    sh = (sdeg + 1) // 2
    xh = (xdeg + 1) // 2
    th = (tdeg + 1) // 2

    one = Poly.const(space, 1)
    gx = Poly.var(space, "x") * (one - Poly.var(space, "x"))
    T = time_interval
    blocks = [(one, _product_basis(space, state_syms, sh, xh, th, min_state, T))]
    blocks.append(
        (gx, _product_basis(space, state_syms, sh, max(0, (xdeg - 1) // 2), th, min_state, T))
    )
    if has_t and T is not None:
        gt = Poly.var(space, "t") * (Poly.const(space, T) - Poly.var(space, "t"))
        blocks.append(
            (gt, _product_basis(space, state_syms, sh, xh, max(0, (tdeg - 1) // 2), min_state, T))
        )
    if gram_margin > 0:
        # Strictness margin: require target >= gram_margin * (n - 1) + delta,
        # where n is the main Gram basis size (the shift is gram_margin times
        # the trace of the identity with the constant row excluded) and delta
        # is a nonnegative decision.  The constant shift is absorbed by the
        # constant Gram row, which is always representable; the free surplus
        # delta lets the achieved margin scale with the solution instead of
        # pinning it at the fixed floor, which keeps normalized programs
        # well-centred and makes sub-threshold instances miss the identity by
        # their full feasibility deficit rather than by O(gram_margin).
        shift = Fraction(gram_margin) * (len(blocks[0][1]) - 1)
        sname = f"{name}.margin"
        prog.add_nonneg(sname)
        target = (target - LinPoly.from_poly(Poly.const(space, shift))
                  - LinPoly.decision(space, sname, Poly.const(space, 1)))

    prog.add_identity(name, target, blocks)

    if trace_expr is not None and not trace_expr.is_zero():
        tspace = trace_expr.space
        tr_syms = sorted(
            nm for nm in _lin_support(trace_expr) if tspace.symbol(nm).kind == "trace"
        )
        trdeg = _lin_degree(trace_expr, tr_syms)
        trtdeg = _lin_degree(trace_expr, ["t"]) if "t" in tspace else 0
        trh = (trdeg + 1) // 2
        trth = (trtdeg + 1) // 2
        tone = Poly.const(tspace, 1)
        tblocks = [(tone, _product_basis(tspace, tr_syms, trh, 0, trth, min_state, T))]
        if "t" in tspace and T is not None:
            gtt = Poly.var(tspace, "t") * (Poly.const(tspace, T) - Poly.var(tspace, "t"))
            tblocks.append(
                (gtt, _product_basis(tspace, tr_syms, trh, 0, max(0, (trtdeg - 1) // 2),
                                     min_state, T))
            )
        prog.add_identity(name + ".trace", trace_expr, tblocks)

    return _Inequality(name, space, P, slack, trace_expr, con_meta, mu_names)


# ---------------------------------------------------------------------------
# program assembly for Theorem/Corollary verification


@dataclass
class _Assembled:
    prog: sdp.SosProgram
    problem: PdeProblem
    ansatz: BarrierAnsatz
    separation: tuple  # (_Inequality on the unsafe copy, _Inequality on the initial copy)
    dissipation: _Inequality
    mode: str


def assemble(problem: PdeProblem, ansatz: BarrierAnsatz, mode: str,
             opts: CertifyOptions) -> _Assembled:
    """Build the joint SOS program for Theorem (finite horizon) or Corollary
    (all-time) verification."""
    problem = normalize_domain(problem)
    if mode == "theorem":
        if problem.horizon is None:
            raise CertifierError("theorem mode needs a finite horizon")
        if not ansatz.time_dependent:
            raise CertifierError("theorem mode expects a time-dependent ansatz")
        T = Fraction(problem.horizon)
    else:
        if not (mode == "corollary"):
            raise CertifierError(f"unknown mode {mode!r}")
        if ansatz.time_dependent:
            raise CertifierError("corollary mode expects a time-independent ansatz")
        T = None

    deg_m = opts.deg_m if opts.deg_m is not None else ansatz.deg_x
    prog = sdp.SosProgram()
    if T is not None:
        prog.set_range("t", 0, T)

    # --- separation: B(T, y) - B(0, w) - eps*E(y,w) >= 0 on Y_u x U_0 -------
    # The expression is additively separable across the two function copies
    # and each set constrains only its own copy, so the product condition
    # factors exactly through one shared scalar level rho:
    #     B(T, u) - E(u) - rho >= 0  on the unsafe set, and
    #     rho - B(0, u) - E(u) >= 0  on the initial set.
    # Each side then lives in a single-copy state space, which keeps the SDP
    # an order of magnitude smaller than the joint product program.
    sspace = _copy_space(problem, ("",), with_time=False)
    b_T = ansatz.at_time(T if T is not None else 0).map_symbols(sspace)
    b_0 = ansatz.at_time(0).map_symbols(sspace)

    unsafe = _merge_equalities(
        [c.map_symbols(sspace) for c in problem.unsafe_set.constraints])
    initial = _merge_equalities(
        [c.map_symbols(sspace) for c in problem.initial_set.constraints])
    if opts.pairing == "literal":
        # literal subscript pairing swaps which set binds which barrier copy
        unsafe, initial = initial, unsafe

    # The program is jointly homogeneous in the barrier, level and Gram
    # variables, so the strictness margin enters as a Gram eigenvalue shift
    # (see _add_inequality) rather than a fixed functional: feasibility is
    # scale-invariant and the margin never competes with the barrier's own
    # magnitude near the feasibility frontier.
    rho = LinPoly.decision(sspace, "sep.rho", Poly.const(sspace, 1))

    deg_H_sep = opts.deg_H_sep
    if deg_H_sep is None:
        deg_H_sep = opts.deg_H if opts.deg_H is not None else ansatz.deg_x + 1
    sep_T = _add_inequality(
        prog, "sepT", sspace, b_T - rho, unsafe, problem,
        ("",), (T if T is not None else 0,),
        None, deg_m, deg_H_sep, opts.mu_deg, opts,
        gram_margin=opts.eps,
    )
    sep_0 = _add_inequality(
        prog, "sep0", sspace, rho - b_0, initial, problem,
        ("",), (0,),
        None, deg_m, deg_H_sep, opts.mu_deg, opts,
        gram_margin=opts.eps,
    )
    separation = (sep_T, sep_0)

    # Certificates are closed under positive scaling, and the unsafe-side
    # multipliers cannot all vanish (else the two constant rows of the
    # separation identities contradict through rho and the margins), so the
    # scale is pinned by normalizing their sum.  This keeps every decision at
    # O(1), which is what lets the interior-point method resolve probes near
    # the feasibility frontier.
    unsafe_n = [f"sepT.n{i}" for i, (_, kind) in enumerate(unsafe) if kind == "ineq"]
    if opts.eps > 0 and unsafe_n:
        prog.add_linear({nm: 1.0 for nm in unsafe_n}, 1.0)

    # --- dissipation: -dB/dt >= 0 on U_b ------------------------------------
    lie = lie_derivative(ansatz, problem)
    dspace = lie.space if mode == "theorem" else _strip_time(lie.space)
    dexpr = -(lie if mode == "theorem" else lie.map_symbols(dspace))
    deg_H_dis = opts.deg_H if opts.deg_H is not None else _lin_degree(dexpr, ["x"]) + 1
    dissipation = _add_inequality(
        prog, "dis", dspace, dexpr, (), problem,
        ("",), None, T, deg_m, deg_H_dis, opts.mu_deg, opts,
        derived_bc=True,  # sound: dissipation is quantified over trajectories
    )
    return _Assembled(prog, problem, ansatz, separation, dissipation, mode)


def _strip_time(space: VarSpace) -> VarSpace:
    return VarSpace([s for s in space.symbols if s.kind != "time"])


def _solution_ok(sol, eps: float = 0.0) -> bool:
    """A certificate only needs a primal-feasible PSD Gram assignment.

    The interior-point iteration can hit its numerical floor (MaxIter) with
    complementarity essentially closed; accept the iterate when the primal
    identity residual and the Gram eigenvalues are within audit tolerance.
    Infeasible instances miss the identity by their full feasibility deficit
    (the multiplier normalization pins the scale, so deficits never shrink
    with the strictness margin), which keeps them orders of magnitude above
    this tolerance.  The extracted certificate is still re-checked
    independently downstream.
    """
    if sol.status == "Optimal":
        return True
    if sol.status not in ("MaxIter", "NumericalFailure") or not sol.residuals:
        return False
    return (sol.residuals.get("primal", np.inf) <= 1e-6
            and sol.residuals.get("min_eig", -np.inf) >= -1e-7)


def _finish(problem, ansatz, mode, opts, asm, kind) -> CertifyResult:
    comp = asm.prog.compile()
    sizes = {
        "blocks": list(comp.data.block_dims),
        "constraints": comp.data.n_con,
        "free": comp.data.n_free,
    }
    sol = comp.solve(tol=opts.tol, max_iter=opts.max_iter, verbose=opts.verbose)
    if _solution_ok(sol, opts.eps):
        ext = comp.extract(sol)
        values = ext["values"]
        resolved = ansatz.resolve(values) if ansatz is not None else None
        residuals = dict(sol.residuals)
        residuals["identity"] = comp.identity_residual(sol)
        cert = Certificate(
            kind=kind,
            fingerprint=problem.fingerprint(),
            ansatz_params=None if ansatz is None else {
                "k": ansatz.k, "deg_t": ansatz.deg_t, "deg_x": ansatz.deg_x,
                "jet_order": ansatz.jet_order,
                "time_dependent": ansatz.time_dependent,
            },
            options=opts.to_dict(),
            values=values,
            barrier_basis=None if ansatz is None else [
                str(Poly.monomial(ansatz.space, m)) for m in ansatz.basis.monos
            ],
            barrier_entries=None if resolved is None else [
                [_poly_str(p) for p in row] for row in resolved
            ],
            grams={k: [np.asarray(g) for g in gs] for k, gs in ext["grams"].items()},
            residuals=residuals,
            meta={"mode": kind},
        )
        return CertifyResult("certified", cert, sol.status, sol.iterations,
                             residuals, sizes)
    status = "no-certificate" if sol.status in ("Infeasible", "MaxIter") else "numerical-failure"
    return CertifyResult(status, None, sol.status, sol.iterations,
                         sol.residuals or {}, sizes)


def _poly_str(p: Poly) -> str:
    parts = []
    for e, c in sorted(p.terms.items(), key=lambda t: (sum(t[0]), tuple(-v for v in t[0]))):
        mono = []
        for i, k in enumerate(e):
            nm = p.space.symbols[i].name
            mono.append(nm if k == 1 else f"{nm}^{k}" if k > 1 else "")
        mono = "*".join(m for m in mono if m)
        cs = repr(float(c))
        parts.append(f"{cs}*{mono}" if mono else cs)
    return " + ".join(parts) if parts else "0"


def verify_theorem31(problem: PdeProblem, ansatz: BarrierAnsatz,
                     opts: CertifyOptions | None = None) -> CertifyResult:
    """Safety at the final time over a finite horizon (time-dependent barrier)."""
    opts = opts or CertifyOptions()
    asm = assemble(problem, ansatz, "theorem", opts)
    return _finish(asm.problem, ansatz, "theorem", opts, asm, "theorem")


def verify_corollary31(problem: PdeProblem, ansatz: BarrierAnsatz,
                       opts: CertifyOptions | None = None) -> CertifyResult:
    """Safety for all time (time-independent barrier)."""
    opts = opts or CertifyOptions()
    asm = assemble(problem, ansatz, "corollary", opts)
    return _finish(asm.problem, ansatz, "corollary", opts, asm, "corollary")


def verify(problem: PdeProblem, ansatz: BarrierAnsatz,
           opts: CertifyOptions | None = None) -> CertifyResult:
    if problem.horizon is None:
        return verify_corollary31(problem, ansatz, opts)
    return verify_theorem31(problem, ansatz, opts)


# ---------------------------------------------------------------------------
# generic single-inequality certification


@dataclass
class IntegralInequality:
    """integral of `integrand` over (0,1) is nonnegative for all states
    satisfying the problem's boundary conditions and `constraints`."""

    problem: PdeProblem
    integrand: Poly | LinPoly
    constraints: tuple = ()   # sequence of Poly (>= 0 constraints; pair (g,-g) = equality)
    eps: float = 0.0


def certify(ineq: IntegralInequality, opts: CertifyOptions | None = None) -> CertifyResult:
    opts = opts or CertifyOptions()
    problem = normalize_domain(ineq.problem)
    space = _strip_time(problem.space)
    expr = ineq.integrand
    if isinstance(expr, Poly):
        expr = LinPoly.from_poly(expr)
    expr = expr.map_symbols(space)
    cons = _merge_equalities([c.map_symbols(space) for c in ineq.constraints])
    deg_m = opts.deg_m if opts.deg_m is not None else 2
    deg_H = opts.deg_H if opts.deg_H is not None else _lin_degree(expr, ["x"]) + 2
    prog = sdp.SosProgram()
    built = _add_inequality(prog, "ineq", space, expr, cons, problem,
                            ("",), None, None, deg_m, deg_H, opts.mu_deg, opts,
                            gram_margin=ineq.eps)
    comp = prog.compile()
    sizes = {"blocks": list(comp.data.block_dims), "constraints": comp.data.n_con,
             "free": comp.data.n_free}
    sol = comp.solve(tol=opts.tol, max_iter=opts.max_iter, verbose=opts.verbose)
    if not _solution_ok(sol, ineq.eps):
        status = "no-certificate" if sol.status in ("Infeasible", "MaxIter") else "numerical-failure"
        return CertifyResult(status, None, sol.status, sol.iterations,
                             sol.residuals or {}, sizes)
    ext = comp.extract(sol)
    residuals = dict(sol.residuals)
    residuals["identity"] = comp.identity_residual(sol)
    cert = Certificate(
        kind="inequality",
        fingerprint=problem.fingerprint(),
        ansatz_params=None,
        options=opts.to_dict(),
        values=ext["values"],
        barrier_basis=None,
        barrier_entries=None,
        grams={k: [np.asarray(g) for g in gs] for k, gs in ext["grams"].items()},
        residuals=residuals,
        meta={"mode": "inequality"},
    )
    return CertifyResult("certified", cert, sol.status, sol.iterations, residuals, sizes)


# ---------------------------------------------------------------------------
# independent certificate audit


@dataclass
class CheckReport:
    gram_psd: bool
    exact_match: bool
    sampling: bool
    details: dict

    @property
    def ok(self) -> bool:
        return self.gram_psd and self.exact_match and self.sampling


def _rebuild(problem: PdeProblem, cert: Certificate):
    """Deterministically reassemble the program a certificate came from."""
    opts = CertifyOptions(**{
        k: cert.options[k]
        for k in ("deg_m", "deg_H", "deg_H_sep", "mu_deg", "eps", "tol",
                  "max_iter", "pairing")
    })
    if cert.kind in ("theorem", "corollary"):
        ap = cert.ansatz_params
        ansatz = make_ansatz(
            normalize_domain(problem), k=ap["k"], deg_t=ap["deg_t"], deg_x=ap["deg_x"],
            time_dependent=ap["time_dependent"], jet_order=ap["jet_order"],
        )
        asm = assemble(problem, ansatz, cert.kind, opts)
        return asm.prog, ansatz, opts
    raise CertifierError(f"cannot rebuild programs of kind {cert.kind!r}")


def check_certificate(cert: Certificate, problem: PdeProblem,
                      n_samples: int = 300, seed: int = 0,
                      tol: float = 1e-6) -> CheckReport:
    """Three-part audit: Gram PSD, exact coefficient matching after rational
    rounding, and Monte-Carlo evaluation on admissible sampled functions."""
    problem_n = normalize_domain(problem)
    if cert.fingerprint not in (problem.fingerprint(), problem_n.fingerprint()):
        raise CertifierError("certificate fingerprint does not match the problem")

    details: dict = {}

    # (a) every Gram matrix PSD by eigendecomposition
    min_eig = np.inf
    for gs in cert.grams.values():
        for g in gs:
            if len(g):
                min_eig = min(min_eig, float(np.linalg.eigvalsh(np.asarray(g))[0]))
    gram_psd = min_eig >= -1e-7
    details["min_gram_eig"] = None if min_eig is np.inf else min_eig

    # (b) identity residual against an independently recompiled program.
    # Raw monomial coefficients of high-degree well-conditioned bases are
    # astronomically large with near-total cancellation, so the identities
    # are audited on the exact spanning evaluation grid instead (a degree-D
    # polynomial vanishing on D+1 distinct points vanishes identically).
    exact_match = True
    if cert.kind in ("theorem", "corollary"):
        prog, ansatz, opts = _rebuild(problem, cert)
        comp = prog.compile()
        worst = comp.residual_from(cert.values, cert.grams)
        details["identity_residual"] = worst
        exact_match = worst <= 1e-5
    else:
        details["identity_residual"] = None

    # (c) sampled-function evaluation of the certified inequalities
    sampling = True
    if cert.kind in ("theorem", "corollary"):
        viols = _sample_audit(cert, problem_n, n_samples, seed, tol)
        details.update(viols)
        sampling = viols["worst_violation"] >= -tol
    return CheckReport(gram_psd, exact_match, sampling, details)


def _sample_audit(cert: Certificate, problem: PdeProblem, n_samples, seed, tol) -> dict:
    ap = cert.ansatz_params
    ansatz = make_ansatz(problem, k=ap["k"], deg_t=ap["deg_t"], deg_x=ap["deg_x"],
                         time_dependent=ap["time_dependent"], jet_order=ap["jet_order"])
    values = cert.values
    T = problem.horizon

    x, w = numeric.gauss_rule(64)
    b_T = numeric.compile_poly(
        ansatz.at_time(Fraction(T) if T is not None else 0).resolve(values)
    )
    b_0 = numeric.compile_poly(ansatz.at_time(0).resolve(values))
    lie = lie_derivative(ansatz, problem).resolve(values)
    lie_ev = numeric.compile_poly(lie)
    lie_space = lie.space

    rng = np.random.default_rng(seed)
    worst_sep = np.inf
    worst_dis = np.inf
    n_done = 0
    n_dis = 0
    deg = 10
    for _ in range(n_samples):
        scale = float(rng.uniform(0.3, 6.0))
        fy = sample_functions(problem, 1, seed=int(rng.integers(2**31)), deg=deg,
                              scale=scale)[0]
        fw = sample_functions(problem, 1, seed=int(rng.integers(2**31)), deg=deg,
                              scale=scale)[0]
        gy = rescale_into_set(problem, problem.unsafe_set, fy, rng)
        gw = rescale_into_set(problem, problem.initial_set, fw, rng)
        if gy is not None and gw is not None:
            vy = gy.jet_values(problem.space, x)
            vw = gw.jet_values(problem.space, x)
            if T is not None:
                vy["t"] = np.full_like(x, float(T))
                vw["t"] = np.zeros_like(x)
            By = float(np.dot(w, b_T(vy)))
            Bw = float(np.dot(w, b_0(vw)))
            worst_sep = min(worst_sep, By - Bw)
            n_done += 1
        # dissipation is quantified over trajectory states, which satisfy the
        # time-differentiated (compatibility) boundary conditions as well as
        # the raw ones, so project the sample onto that manifold first
        tval = float(rng.uniform(0, T if T is not None else 1))
        fc = _compatible_state(problem, fy, deg, tval)
        if fc is not None:
            vv = fc.jet_values(lie_space, x)
            if "t" in lie_space:
                vv["t"] = np.full_like(x, tval)
            worst_dis = min(worst_dis, -float(np.dot(w, lie_ev(vv))))
            n_dis += 1
    worst = min(worst_sep, worst_dis)
    return {
        "n_separation_samples": n_done,
        "n_dissipation_samples": n_dis,
        "worst_separation": None if worst_sep is np.inf else worst_sep,
        "worst_dissipation": None if worst_dis is np.inf else worst_dis,
        "worst_violation": worst if worst is not np.inf else 0.0,
    }


def _compatible_state(problem: PdeProblem, f, deg: int,
                      tval: float) -> "FunctionSample | None":
    """Project a boundary-respecting polynomial snapshot onto the states that
    also satisfy the derived (time-differentiated) boundary conditions, which
    the dissipation inequality is allowed to assume.  Returns None when the
    fixed-point projection fails to converge (e.g. strongly nonlinear derived
    conditions)."""
    tspace = _with_traces(problem.space)
    try:
        pivots = _bc_pivots(problem, tspace, ("",), None, derived=True)
    except CertifierError:
        return None
    if not pivots:
        return f
    basis = admissible_basis(problem, deg=deg, t=tval)
    coeffs = {dep: np.array(f.coeffs[dep], dtype=float) for dep in f.coeffs}
    rows = []   # (dep, linear functional over that dep's coefficients)
    for name in pivots:
        s = tspace.symbol(name)
        L = np.array([
            (float(np.prod(range(j - s.order + 1, j + 1))) if j >= s.order else 0.0)
            * (float(s.side) ** (j - s.order) if j - s.order > 0 else 1.0)
            for j in range(deg + 1)
        ])
        rows.append((s.dep, L))
    deps = sorted(coeffs)
    null = {dep: np.column_stack(basis[dep][1]) if basis[dep][1] else
            np.zeros((deg + 1, 0)) for dep in deps}
    offs = {}
    pos = 0
    for dep in deps:
        offs[dep] = pos
        pos += null[dep].shape[1]
    M = np.zeros((len(rows), pos))
    for r, (dep, L) in enumerate(rows):
        M[r, offs[dep]:offs[dep] + null[dep].shape[1]] = L @ null[dep]

    def trace_vals(c):
        out = {"t": tval}
        for s in tspace.symbols:
            if s.kind == "trace" and s.dep in c:
                d = np.polynomial.polynomial.polyder(c[s.dep], s.order) \
                    if s.order else c[s.dep]
                out[s.name] = float(np.polynomial.polynomial.polyval(
                    float(s.side), d if len(d) else [0.0]))
        return out

    for _ in range(8):
        tv = trace_vals(coeffs)
        resid = np.array([
            float(pivots[name].evaluate(tv)) - tv[name] for name in pivots
        ])
        if np.abs(resid).max(initial=0.0) <= 1e-9 * (
                1.0 + max(abs(v) for v in tv.values())):
            return FunctionSample(coeffs)
        a, *_ = np.linalg.lstsq(M, resid, rcond=None)
        for dep in deps:
            na = null[dep]
            if na.shape[1]:
                coeffs[dep] = coeffs[dep] + na @ a[offs[dep]:offs[dep] + na.shape[1]]
    return None


# ---------------------------------------------------------------------------
# display


def format_certificate(cert: Certificate, trunc: float = 1e-4) -> str:
    """Pretty-print, suppressing coefficients below `trunc` (display only)."""
    out = [f"kind: {cert.kind}", f"fingerprint: {cert.fingerprint}"]
    if cert.barrier_basis:
        out.append(f"barrier basis: ({', '.join(cert.barrier_basis)})")
        out.append("barrier matrix (coefficients below "
                   f"{trunc:g} suppressed):")
        for i, row in enumerate(cert.barrier_entries):
            for j, entry in enumerate(row):
                if j < i:
                    continue
                shown = _truncate_poly_str(entry, trunc)
                out.append(f"  [{i},{j}] {shown}")
    res = ", ".join(f"{k}={v:.2e}" for k, v in cert.residuals.items())
    out.append(f"residuals: {res}")
    ng = sum(len(gs) for gs in cert.grams.values())
    out.append(f"gram blocks: {ng}")
    return "\n".join(out)


def _truncate_poly_str(entry: str, trunc: float) -> str:
    kept = []
    for term in entry.split(" + "):
        coeff = term.split("*")[0]
        try:
            if abs(float(coeff)) >= trunc:
                kept.append(term)
        except ValueError:
            kept.append(term)
    return " + ".join(kept) if kept else "0"
