"""Exact sparse multivariate polynomial arithmetic over jet coordinates.

Polynomials are kept with rational coefficients from construction until the
moment a semidefinite program is materialized; only there do floats appear.
Variables live in a shared ordered ``VarSpace`` whose symbols carry jet
metadata (dependent variable, spatial derivative order), so the total
x-derivative can do its chain-rule bookkeeping.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Iterable, Mapping, Sequence


class PolyError(Exception):
    """Structural error in polynomial construction or use."""


class JetOverflowError(PolyError):
    """A derivative would need a jet symbol beyond the space's capacity."""


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, int):
        return Fraction(c)
    if isinstance(c, float):
        return Fraction(c)  # exact binary value
    if isinstance(c, str):
        return Fraction(c)
    raise PolyError(f"cannot use {type(c).__name__} as a coefficient")


# ---------------------------------------------------------------------------
# symbols and variable spaces


@dataclass(frozen=True)
class Symbol:
    """A named variable slot.

    kind is one of 'time', 'space', 'jet', 'trace', 'aux'.  Jet symbols carry
    (dep, order); trace symbols additionally carry the endpoint they live on.
    """

    name: str
    kind: str
    dep: str = ""
    order: int = 0
    side: int = -1


def jet_name(dep: str, order: int) -> str:
    if order == 0:
        return dep
    if order <= 4:
        return f"{dep}_{'x' * order}"
    return f"{dep}_x{order}"


def trace_name(base: str, side: int) -> str:
    return f"{base}@{side}"


class VarSpace:
    """Ordered, immutable collection of distinct symbols."""

    def __init__(self, symbols: Iterable[Symbol]):
        self.symbols: tuple[Symbol, ...] = tuple(symbols)
        self._index = {s.name: i for i, s in enumerate(self.symbols)}
        if len(self._index) != len(self.symbols):
            raise PolyError("duplicate symbol names in VarSpace")

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, name: str):
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise PolyError(f"unknown symbol '{name}'") from None

    def symbol(self, name: str) -> Symbol:
        return self.symbols[self.index(name)]

    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.symbols)

    def extend(self, extra: Iterable[Symbol]) -> "VarSpace":
        extra = [s for s in extra if s.name not in self._index]
        return VarSpace(self.symbols + tuple(extra))

    def next_jet(self, name: str) -> str | None:
        """Name of the jet one spatial order above `name`, if present."""
        s = self.symbol(name)
        if s.kind != "jet":
            return None
        nxt = jet_name(s.dep, s.order + 1)
        return nxt if nxt in self._index else ("!" + nxt)

    def __eq__(self, other):
        return isinstance(other, VarSpace) and self.symbols == other.symbols

    def __hash__(self):
        return hash(self.symbols)

    def __repr__(self):
        return f"VarSpace({', '.join(self.names())})"


def jet_space(
    deps: Mapping[str, int],
    with_time: bool = True,
    extra: Iterable[Symbol] = (),
) -> VarSpace:
    """Space with t, x and jets of each dependent variable up to its order."""
    syms: list[Symbol] = []
    if with_time:
        syms.append(Symbol("t", "time"))
    syms.append(Symbol("x", "space"))
    for dep, alpha in deps.items():
        for k in range(alpha + 1):
            syms.append(Symbol(jet_name(dep, k), "jet", dep=dep, order=k))
    syms.extend(extra)
    return VarSpace(syms)


# ---------------------------------------------------------------------------
# polynomials


class Poly:
    """Sparse polynomial with exact rational coefficients.

    Terms map full-length exponent tuples to nonzero Fractions.
    """

    __slots__ = ("space", "terms")

    def __init__(self, space: VarSpace, terms: Mapping[tuple, Fraction] | None = None):
        self.space = space
        self.terms: dict[tuple, Fraction] = {}
        if terms:
            n = len(space)
            for e, c in terms.items():
                if len(e) != n:
                    raise PolyError("exponent tuple length mismatch")
                c = _as_fraction(c)
                if c != 0:
                    self.terms[e] = c

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero(space: VarSpace) -> "Poly":
        return Poly(space)

    @staticmethod
    def const(space: VarSpace, c) -> "Poly":
        c = _as_fraction(c)
        p = Poly(space)
        if c != 0:
            p.terms[(0,) * len(space)] = c
        return p

    @staticmethod
    def var(space: VarSpace, name: str, power: int = 1) -> "Poly":
        i = space.index(name)
        e = [0] * len(space)
        e[i] = power
        p = Poly(space)
        p.terms[tuple(e)] = Fraction(1)
        return p

    @staticmethod
    def monomial(space: VarSpace, exps: Sequence[int], c=1) -> "Poly":
        return Poly(space, {tuple(exps): _as_fraction(c)})

    def copy(self) -> "Poly":
        p = Poly(self.space)
        p.terms = dict(self.terms)
        return p

    # -- ring operations ---------------------------------------------------

    def _check_space(self, other: "Poly"):
        if self.space != other.space:
            raise PolyError("operands live in different VarSpaces")

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(self.space, other)
        self._check_space(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            s = out.get(e, Fraction(0)) + c
            if s == 0:
                out.pop(e, None)
            else:
                out[e] = s
        p = Poly(self.space)
        p.terms = out
        return p

    __radd__ = __add__

    def __neg__(self):
        p = Poly(self.space)
        p.terms = {e: -c for e, c in self.terms.items()}
        return p

    def __sub__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(self.space, other)
        return self + (-other)

    def __rsub__(self, other):
        return Poly.const(self.space, other) - self

    def __mul__(self, other):
        if not isinstance(other, Poly):
            c = _as_fraction(other)
            p = Poly(self.space)
            if c != 0:
                p.terms = {e: cc * c for e, cc in self.terms.items()}
            return p
        self._check_space(other)
        out: dict[tuple, Fraction] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                s = out.get(e, Fraction(0)) + c1 * c2
                if s == 0:
                    out.pop(e, None)
                else:
                    out[e] = s
        p = Poly(self.space)
        p.terms = out
        return p

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise PolyError("negative powers are not polynomials")
        out = Poly.const(self.space, 1)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base if k > 1 else base
            k >>= 1
        return out

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = Poly.const(self.space, other)
        return isinstance(other, Poly) and self.space == other.space and self.terms == other.terms

    def __hash__(self):
        return hash((self.space, frozenset(self.terms.items())))

    def is_zero(self) -> bool:
        return not self.terms

    # -- calculus ----------------------------------------------------------

    def partial(self, name: str) -> "Poly":
        """Formal partial derivative; every other symbol is a constant."""
        i = self.space.index(name)
        out: dict[tuple, Fraction] = {}
        for e, c in self.terms.items():
            if e[i] == 0:
                continue
            ne = list(e)
            ne[i] -= 1
            ne = tuple(ne)
            s = out.get(ne, Fraction(0)) + c * e[i]
            if s == 0:
                out.pop(ne, None)
            else:
                out[ne] = s
        p = Poly(self.space)
        p.terms = out
        return p

    def total_x(self) -> "Poly":
        """Total x-derivative: explicit x part plus jet chain rule."""
        out = self.partial("x") if "x" in self.space else Poly.zero(self.space)
        for s in self.space.symbols:
            if s.kind != "jet":
                continue
            d = self.partial(s.name)
            if d.is_zero():
                continue
            nxt = self.space.next_jet(s.name)
            if nxt is None or nxt.startswith("!"):
                raise JetOverflowError(
                    f"jet overflow: d/dx of '{s.name}' needs "
                    f"'{jet_name(s.dep, s.order + 1)}' which is not in the space"
                )
            out = out + d * Poly.var(self.space, nxt)
        return out

    # -- evaluation / substitution ------------------------------------------

    def evaluate(self, assignment: Mapping[str, object]):
        """Evaluate; exact when all inputs are rational, float otherwise."""
        vals = {}
        needed = set()
        for e in self.terms:
            for i, k in enumerate(e):
                if k:
                    needed.add(i)
        for i in needed:
            nm = self.space.symbols[i].name
            if nm not in assignment:
                raise PolyError(f"missing value for symbol '{nm}'")
            v = assignment[nm]
            vals[i] = v if isinstance(v, float) else _as_fraction(v)
        exact = all(not isinstance(v, float) for v in vals.values())
        total = Fraction(0) if exact else 0.0
        for e, c in self.terms.items():
            term = c if exact else float(c)
            for i in needed:
                if e[i]:
                    term = term * vals[i] ** e[i]
            total = total + term
        return total

    def subs(self, assignment: Mapping[str, "Poly | int | Fraction | float"]) -> "Poly":
        """Substitute polynomials (or scalars) for symbols."""
        idx = {self.space.index(k): v for k, v in assignment.items()}
        out = Poly.zero(self.space)
        for e, c in self.terms.items():
            term = Poly.const(self.space, c)
            for i, k in enumerate(e):
                if not k:
                    continue
                if i in idx:
                    v = idx[i]
                    if not isinstance(v, Poly):
                        v = Poly.const(self.space, v)
                    term = term * v ** k
                else:
                    term = term * Poly.monomial(
                        self.space, tuple(k if j == i else 0 for j in range(len(e)))
                    )
            out = out + term
        return out

    def map_symbols(self, target: VarSpace, rename: Mapping[str, str] | None = None) -> "Poly":
        """Re-express this polynomial on another space, optionally renaming."""
        rename = rename or {}
        used = self.support_symbols()
        mapping = []
        for s in self.space.symbols:
            nm = rename.get(s.name, s.name)
            # symbols absent from every term need not exist in the target
            mapping.append(target.index(nm) if s.name in used else None)
        out: dict[tuple, Fraction] = {}
        n = len(target)
        for e, c in self.terms.items():
            ne = [0] * n
            for i, k in enumerate(e):
                if k:
                    ne[mapping[i]] += k
            ne = tuple(ne)
            s = out.get(ne, Fraction(0)) + c
            if s == 0:
                out.pop(ne, None)
            else:
                out[ne] = s
        p = Poly(target)
        p.terms = out
        return p

    # -- inspection ----------------------------------------------------------

    def degree(self, names: Iterable[str] | None = None) -> int:
        """Max total degree, optionally restricted to a subset of symbols."""
        if not self.terms:
            return 0
        if names is None:
            return max(sum(e) for e in self.terms)
        idx = [self.space.index(n) for n in names]
        return max((sum(e[i] for i in idx) for e in self.terms), default=0)

    def coefficient(self, exps: Sequence[int]) -> Fraction:
        return self.terms.get(tuple(exps), Fraction(0))

    def support_symbols(self) -> set[str]:
        used = set()
        for e in self.terms:
            for i, k in enumerate(e):
                if k:
                    used.add(self.space.symbols[i].name)
        return used

    def __str__(self):
        if not self.terms:
            return "0"
        names = self.space.names()
        parts = []
        for e, c in sorted(self.terms.items(), key=lambda t: (sum(t[0]), tuple(-x for x in t[0]))):
            factors = [str(c)] if c != 1 or sum(e) == 0 else []
            for i, k in enumerate(e):
                if k == 1:
                    factors.append(names[i])
                elif k > 1:
                    factors.append(f"{names[i]}^{k}")
            parts.append("*".join(factors))
        return " + ".join(parts)

    __repr__ = __str__


# ---------------------------------------------------------------------------
# monomial bases


def monomial_exponents(n_vars: int, max_deg: int) -> list[tuple]:
    """All exponent tuples with total degree <= max_deg, graded-lex ordered.

    Constant first; within a degree, lexicographically by descending exponent
    of earlier variables, matching (1, x1, x2, x1^2, x1*x2, x2^2).
    """
    if n_vars < 1 or max_deg < 0:
        raise PolyError("need n_vars >= 1 and max_deg >= 0")
    out = []
    for d in range(max_deg + 1):
        level = [
            e
            for e in itertools.product(range(d + 1), repeat=n_vars)
            if sum(e) == d
        ]
        level.sort(key=lambda e: tuple(-k for k in e))
        out.extend(level)
    assert len(out) == comb(n_vars + max_deg, max_deg)
    return out


@dataclass(frozen=True)
class MonomialBasis:
    """Ordered monomials of total degree <= max_deg in a variable subset.

    `monos` holds full-space exponent tuples so entries multiply directly.
    """

    space: VarSpace
    var_names: tuple[str, ...]
    max_deg: int
    monos: tuple[tuple, ...] = field(default=())

    @staticmethod
    def make(space: VarSpace, var_names: Sequence[str], max_deg: int) -> "MonomialBasis":
        idx = [space.index(n) for n in var_names]
        n = len(space)
        monos = []
        for sub in monomial_exponents(len(var_names), max_deg):
            full = [0] * n
            for j, k in zip(idx, sub):
                full[j] = k
            monos.append(tuple(full))
        return MonomialBasis(space, tuple(var_names), max_deg, tuple(monos))

    def __len__(self):
        return len(self.monos)

    def poly(self, i: int) -> Poly:
        return Poly.monomial(self.space, self.monos[i])

    def index_of(self, mono: tuple) -> int:
        return self.monos.index(mono)


def monomial_basis(space: VarSpace, var_names: Sequence[str], max_deg: int) -> MonomialBasis:
    return MonomialBasis.make(space, var_names, max_deg)


# ---------------------------------------------------------------------------
# decision-symbol layer


_fresh_counter = itertools.count()


def fresh_decision(prefix: str) -> str:
    return f"{prefix}#{next(_fresh_counter)}"


class LinPoly:
    """Polynomial whose coefficients are affine in scalar decision symbols.

    Stored as {decision_name_or_None: Poly}; None keys the known part.  Any
    product that would make the expression quadratic in decision symbols is
    rejected, which is what guarantees the final program is an SDP.
    """

    __slots__ = ("space", "parts")

    def __init__(self, space: VarSpace, parts: Mapping[str | None, Poly] | None = None):
        self.space = space
        self.parts: dict[str | None, Poly] = {}
        if parts:
            for k, p in parts.items():
                if not p.is_zero():
                    self.parts[k] = p

    @staticmethod
    def from_poly(p: Poly) -> "LinPoly":
        return LinPoly(p.space, {None: p})

    @staticmethod
    def decision(space: VarSpace, name: str, coeff: Poly | None = None) -> "LinPoly":
        return LinPoly(space, {name: coeff if coeff is not None else Poly.const(space, 1)})

    @staticmethod
    def zero(space: VarSpace) -> "LinPoly":
        return LinPoly(space)

    def is_pure(self) -> bool:
        return set(self.parts) <= {None}

    def known(self) -> Poly:
        return self.parts.get(None, Poly.zero(self.space))

    def decision_names(self) -> set[str]:
        return {k for k in self.parts if k is not None}

    def _coerce(self, other) -> "LinPoly":
        if isinstance(other, LinPoly):
            return other
        if isinstance(other, Poly):
            return LinPoly.from_poly(other)
        return LinPoly.from_poly(Poly.const(self.space, other))

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.parts)
        for k, p in other.parts.items():
            s = out.get(k, Poly.zero(self.space)) + p
            if s.is_zero():
                out.pop(k, None)
            else:
                out[k] = s
        return LinPoly(self.space, out)

    __radd__ = __add__

    def __neg__(self):
        return LinPoly(self.space, {k: -p for k, p in self.parts.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, LinPoly):
            if other.is_pure():
                other = other.known()
            elif self.is_pure():
                return other * self.known()
            else:
                raise PolyError(
                    "product of two decision-dependent expressions is bilinear"
                )
        if not isinstance(other, Poly):
            other = Poly.const(self.space, other)
        return LinPoly(self.space, {k: p * other for k, p in self.parts.items()})

    __rmul__ = __mul__

    def partial(self, name: str) -> "LinPoly":
        return LinPoly(self.space, {k: p.partial(name) for k, p in self.parts.items()})

    def total_x(self) -> "LinPoly":
        return LinPoly(self.space, {k: p.total_x() for k, p in self.parts.items()})

    def subs(self, assignment) -> "LinPoly":
        return LinPoly(self.space, {k: p.subs(assignment) for k, p in self.parts.items()})

    def map_symbols(self, target: VarSpace, rename=None) -> "LinPoly":
        return LinPoly(target, {k: p.map_symbols(target, rename) for k, p in self.parts.items()})

    def resolve(self, values: Mapping[str, object]) -> Poly:
        """Substitute numeric values for every decision symbol."""
        out = self.known()
        for k, p in self.parts.items():
            if k is None:
                continue
            if k not in values:
                raise PolyError(f"missing value for decision symbol '{k}'")
            out = out + p * _as_fraction(values[k])
        return out

    def is_zero(self) -> bool:
        return not self.parts

    def degree(self, names=None) -> int:
        return max((p.degree(names) for p in self.parts.values()), default=0)

    def __str__(self):
        if not self.parts:
            return "0"
        bits = []
        for k, p in self.parts.items():
            bits.append(str(p) if k is None else f"({p})*<{k}>")
        return " + ".join(bits)

    __repr__ = __str__
