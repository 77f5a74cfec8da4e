"""Barrier-functional ansatz over jet monomials and its time derivative.

A barrier functional B(t, u) = integral over (0,1) of eta' Bbar(t,x) eta,
with eta a vector of jet monomials and Bbar a symmetric matrix of (t,x)-
polynomials whose coefficients are free decision symbols.  The decision
symbols stay strictly linear throughout, so downstream programs remain
semidefinite.
"""

from __future__ import annotations

from dataclasses import dataclass

from .pde_model import PdeProblem
from .polyalg import (
    LinPoly,
    MonomialBasis,
    Poly,
    PolyError,
    Symbol,
    VarSpace,
    jet_name,
)


def extended_space(problem: PdeProblem, max_order: int) -> VarSpace:
    """Problem space with jets raised to `max_order` for every variable."""
    extra = []
    for dep in problem.depvars:
        for k in range(problem.alpha + 1, max_order + 1):
            extra.append(Symbol(jet_name(dep, k), "jet", dep=dep, order=k))
    return problem.space.extend(extra)


@dataclass(frozen=True)
class BarrierAnsatz:
    """Symmetric decision-matrix ansatz B = integral eta' Bbar(t,x) eta."""

    space: VarSpace
    basis: MonomialBasis  # jet-monomial vector eta (may exclude the constant)
    entries: tuple  # upper-triangular tuple of tuples of LinPoly in (t, x)
    time_dependent: bool
    deg_t: int
    deg_x: int
    jet_order: int
    k: int

    def entry(self, i: int, j: int) -> LinPoly:
        if i > j:
            i, j = j, i
        return self.entries[i][j - i]

    def dim(self) -> int:
        return len(self.basis)

    def decision_names(self) -> list[str]:
        names = []
        for row in self.entries:
            for e in row:
                names.extend(sorted(e.decision_names()))
        return names

    def integrand(self) -> LinPoly:
        """eta' Bbar eta as a decision-linear polynomial."""
        out = LinPoly.zero(self.space)
        n = self.dim()
        for i in range(n):
            pi = Poly.monomial(self.space, self.basis.monos[i])
            for j in range(i, n):
                pj = Poly.monomial(self.space, self.basis.monos[j])
                term = self.entry(i, j) * (pi * pj)
                out = out + (term if i == j else term * 2)
        return out

    def at_time(self, t_value) -> LinPoly:
        """Integrand with the time symbol frozen (for fixed-instant checks)."""
        if not self.time_dependent:
            return self.integrand()
        return self.integrand().subs({"t": Poly.const(self.space, t_value)})

    def resolve(self, values) -> list[list[Poly]]:
        n = self.dim()
        return [[self.entry(i, j).resolve(values) for j in range(n)] for i in range(n)]


def make_ansatz(
    problem: PdeProblem,
    k: int = 2,
    deg_t: int = 0,
    deg_x: int = 2,
    time_dependent: bool = False,
    jet_order: int | None = None,
    include_constant: bool = False,
    prefix: str = "B",
) -> BarrierAnsatz:
    """Fresh decision-coefficient ansatz of jet-degree k.

    The monomial vector eta ranges over monomials of degree <= ceil(k/2) in
    the jets of order <= jet_order (default: one below the problem's max
    order, matching integrands that integration by parts can handle).
    Decision symbols are named deterministically from `prefix` so a rebuild
    of the same program yields the same names.
    """
    if jet_order is None:
        jet_order = max(problem.alpha - 1, 0)
    if time_dependent and "t" not in problem.space:
        raise PolyError("problem space has no time symbol")
    space = problem.space
    jets = [
        s.name
        for s in space.symbols
        if s.kind == "jet" and s.order <= jet_order
    ]
    half = (k + 1) // 2
    basis = MonomialBasis.make(space, tuple(jets), half)
    if not include_constant:
        basis = MonomialBasis(space, basis.var_names, half, basis.monos[1:])

    dt = deg_t if time_dependent else 0
    n = len(basis)
    rows = []
    for i in range(n):
        row = []
        for j in range(i, n):
            e = LinPoly.zero(space)
            for a in range(dt + 1):
                for c in range(deg_x + 1):
                    mono = Poly.var(space, "x", c) if c else Poly.const(space, 1)
                    if a:
                        mono = mono * Poly.var(space, "t", a)
                    e = e + LinPoly.decision(space, f"{prefix}[{i},{j}]t{a}x{c}", mono)
            row.append(e)
        rows.append(tuple(row))
    return BarrierAnsatz(
        space, basis, tuple(rows), time_dependent, dt, deg_x, jet_order, k
    )


def lie_derivative(ansatz: BarrierAnsatz, problem: PdeProblem) -> LinPoly:
    """Integrand of dB/dt along the PDE dynamics.

    Time and space derivatives are commuted: each d/dt of a jet of order j
    is the j-th total x-derivative of that variable's dynamics polynomial.
    Returns a decision-linear polynomial on an extended jet space (orders up
    to jet-order of the ansatz integrand plus the dynamics' jet order).
    """
    integ = ansatz.integrand()
    # highest jet order appearing in the barrier integrand
    used = integ.known().support_symbols()
    for p in integ.parts.values():
        used |= p.support_symbols()
    max_b = 0
    for nm in used:
        s = ansatz.space.symbol(nm)
        if s.kind == "jet":
            max_b = max(max_b, s.order)
    need = max_b + problem.alpha
    ext = extended_space(problem, need)
    integ = integ.map_symbols(ext)

    out = integ.partial("t") if "t" in ext else LinPoly.zero(ext)
    # cache repeated total derivatives of each dynamics polynomial
    dyn_dx: dict[tuple[str, int], Poly] = {}
    for dep, f in zip(problem.depvars, problem.dynamics):
        dyn_dx[(dep, 0)] = f.map_symbols(ext)
        for j in range(1, max_b + 1):
            dyn_dx[(dep, j)] = dyn_dx[(dep, j - 1)].total_x()
    for s in ext.symbols:
        if s.kind != "jet" or s.dep not in problem.depvars or s.order > max_b:
            continue
        dpart = integ.partial(s.name)
        if not dpart.is_zero():
            out = out + dpart * dyn_dx[(s.dep, s.order)]
    return out
