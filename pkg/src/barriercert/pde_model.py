"""Problem model: PDE dynamics, boundary conditions, integral sets.

The on-disk format is a sectioned UTF-8 text file; see docs/problem_format.md
for the grammar.  Problems are normalized to the unit interval before any
certification or simulation happens.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import numeric
from .polyalg import (
    JetOverflowError,
    Poly,
    PolyError,
    Symbol,
    VarSpace,
    jet_name,
    jet_space,
    trace_name,
)


class ProblemError(Exception):
    """Problem-file syntax or semantic error."""

    def __init__(self, msg: str, line: int | None = None):
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)
        self.line = line


# ---------------------------------------------------------------------------
# infix expression parsing


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|\^|[-+*/()=])|(?P<bad>\S))"
)


def _tokenize(text: str, line: int | None = None):
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        if m.group("bad"):
            raise ProblemError(f"unexpected character '{m.group('bad')}'", line)
        if m.group("num"):
            tokens.append(("num", m.group("num")))
        elif m.group("name"):
            tokens.append(("name", m.group("name")))
        else:
            op = m.group("op")
            tokens.append(("op", "^" if op == "**" else op))
    tokens.append(("end", ""))
    return tokens


class _ExprParser:
    """Recursive-descent parser for polynomial infix expressions.

    `atoms` maps names to Poly values (variables, numeric parameters).  Trace
    atoms like u_x(1) are enabled when `trace_space` is given.
    """

    def __init__(self, tokens, atoms: Mapping[str, Poly], space: VarSpace,
                 allow_traces: bool = False, line: int | None = None):
        self.toks = tokens
        self.pos = 0
        self.atoms = atoms
        self.space = space
        self.allow_traces = allow_traces
        self.line = line

    def peek(self):
        return self.toks[self.pos]

    def next(self):
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def fail(self, msg):
        raise ProblemError(msg, self.line)

    def parse(self) -> Poly:
        p = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"trailing input near '{self.peek()[1]}'")
        return p

    def expr(self) -> Poly:
        p = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.next()
            q = self.term()
            p = p + q if op == "+" else p - q
        return p

    def term(self) -> Poly:
        p = self.factor()
        while self.peek() in (("op", "*"), ("op", "/")):
            _, op = self.next()
            q = self.factor()
            if op == "*":
                p = p * q
            else:
                if q.degree() != 0:
                    self.fail("division by a non-constant expression")
                c = q.coefficient((0,) * len(self.space))
                if c == 0:
                    self.fail("division by zero")
                p = p * (Fraction(1) / c)
        return p

    def factor(self) -> Poly:
        # sign binds more loosely than the power: -x^2 is -(x^2)
        kind, val = self.peek()
        if kind == "op" and val in "+-":
            self.next()
            q = self.factor()
            return -q if val == "-" else q
        p = self.atom()
        if self.peek() == ("op", "^"):
            self.next()
            kind, val = self.next()
            if kind == "op" and val == "(":
                inner = self.expr()
                if self.next() != ("op", ")"):
                    self.fail("missing ')' in exponent")
                if inner.degree() != 0:
                    self.fail("exponent must be constant")
                c = inner.coefficient((0,) * len(self.space))
                if c.denominator != 1 or c < 0:
                    self.fail("exponent must be a non-negative integer")
                return p ** int(c)
            if kind != "num" or "." in val:
                self.fail("exponent must be a non-negative integer")
            p = p ** int(val)
        return p

    def atom(self) -> Poly:
        kind, val = self.next()
        if kind == "num":
            return Poly.const(self.space, Fraction(val) if "." not in val else Fraction(val))
        if kind == "op" and val == "(":
            p = self.expr()
            if self.next() != ("op", ")"):
                self.fail("missing ')'")
            return p
        if kind == "name":
            if self.allow_traces and self.peek() == ("op", "("):
                self.next()
                k, side = self.next()
                if k != "num" or side not in ("0", "1"):
                    self.fail(f"trace '{val}(..)' must be evaluated at 0 or 1")
                if self.next() != ("op", ")"):
                    self.fail("missing ')' after trace")
                tname = trace_name(val, int(side))
                if tname not in self.space:
                    self.fail(f"unknown trace symbol '{val}({side})'")
                return Poly.var(self.space, tname)
            if val in self.atoms:
                return self.atoms[val]
            if val in self.space:
                return Poly.var(self.space, val)
            self.fail(f"unknown symbol '{val}'")
        self.fail(f"unexpected token '{val}'")


def parse_expression(text: str, space: VarSpace, params: Mapping[str, Fraction] | None = None,
                     allow_traces: bool = False, line: int | None = None) -> Poly:
    params = params or {}
    atoms = {k: Poly.const(space, v) for k, v in params.items()}
    atoms.setdefault("pi", Poly.const(space, Fraction(math.pi)))
    return _ExprParser(_tokenize(text, line), atoms, space, allow_traces, line).parse()


def _eval_numeric(text: str, params: Mapping[str, Fraction], line=None) -> Fraction:
    space = VarSpace([Symbol("_", "aux")])
    p = parse_expression(text, space, params, line=line)
    if p.degree() != 0:
        raise ProblemError("expected a numeric expression", line)
    return p.coefficient((0,))


# ---------------------------------------------------------------------------
# model types


@dataclass(frozen=True)
class IntegralSet:
    """Set {u : integral of s_i over (0,1) >= 0 for every i}."""

    constraints: tuple[Poly, ...]

    def __len__(self):
        return len(self.constraints)


@dataclass(frozen=True)
class BoundaryCondition:
    """Linear trace equation sum_i coeff_i(t) * trace_i = rhs(t)."""

    terms: tuple[tuple[str, Poly], ...]  # (trace symbol name, Poly in t)
    rhs: Poly

    def trace_names(self):
        return [n for n, _ in self.terms]


@dataclass(frozen=True)
class PdeProblem:
    name: str
    depvars: tuple[str, ...]
    alpha: int
    space: VarSpace
    dynamics: tuple[Poly, ...]  # one per depvar, d/dt u_i = dynamics[i]
    boundary: tuple[BoundaryCondition, ...]
    initial_set: IntegralSet
    unsafe_set: IntegralSet
    horizon: float | None  # None = all-time
    domain: tuple[Fraction, Fraction]
    params: tuple[tuple[str, Fraction], ...] = ()
    from_terminal: bool = False

    def dynamics_of(self, dep: str) -> Poly:
        return self.dynamics[self.depvars.index(dep)]

    def is_normalized(self) -> bool:
        return self.domain == (Fraction(0), Fraction(1))

    def fingerprint(self) -> str:
        return hashlib.sha256(print_problem(self).encode()).hexdigest()[:16]


def trace_space(problem: PdeProblem, max_order: int | None = None) -> VarSpace:
    """Problem space extended with boundary-trace symbols."""
    mo = problem.alpha if max_order is None else max_order
    extra = []
    for dep in problem.depvars:
        for k in range(mo + 1):
            for side in (0, 1):
                base = jet_name(dep, k)
                extra.append(Symbol(trace_name(base, side), "trace", dep=dep, order=k, side=side))
    return problem.space.extend(extra)


# ---------------------------------------------------------------------------
# parsing problem files


_SECTIONS = ("variables", "parameters", "domain", "horizon", "dynamics",
             "boundary", "initial_set", "unsafe_set")


def parse_problem(text: str, name: str = "problem",
                  overrides: Mapping[str, float] | None = None) -> PdeProblem:
    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[([a-z_]+)\]", line)
        if m:
            current = m.group(1)
            if current not in _SECTIONS:
                raise ProblemError(f"unknown section [{current}]", lineno)
            sections.setdefault(current, [])
            continue
        if current is None:
            raise ProblemError("content before first section header", lineno)
        sections[current].append((lineno, line))

    for required in ("variables", "domain", "horizon", "dynamics", "initial_set", "unsafe_set"):
        if required not in sections:
            raise ProblemError(f"missing required section [{required}]")

    # variables: "name order"
    depvars: list[str] = []
    orders: dict[str, int] = {}
    for lineno, line in sections["variables"]:
        m = re.fullmatch(r"([A-Za-z_][A-Za-z_0-9]*)\s+(\d+)", line)
        if not m:
            raise ProblemError("expected '<name> <max spatial order>'", lineno)
        nm, order = m.group(1), int(m.group(2))
        if nm in orders:
            raise ProblemError(f"duplicate variable '{nm}'", lineno)
        depvars.append(nm)
        orders[nm] = order
    alpha = max(orders.values())

    # parameters
    params: dict[str, Fraction] = {}
    for lineno, line in sections.get("parameters", []):
        m = re.fullmatch(r"([A-Za-z_][A-Za-z_0-9]*)\s*=\s*(.+)", line)
        if not m:
            raise ProblemError("expected '<name> = <numeric expression>'", lineno)
        params[m.group(1)] = _eval_numeric(m.group(2), params, lineno)
    if overrides:
        for k, v in overrides.items():
            params[k] = Fraction(v) if not isinstance(v, Fraction) else v

    space = jet_space({d: alpha for d in depvars})

    # domain
    (lineno, line), = sections["domain"]
    parts = line.split()
    if len(parts) != 2:
        raise ProblemError("expected '<a> <b>'", lineno)
    a = _eval_numeric(parts[0], params, lineno)
    b = _eval_numeric(parts[1], params, lineno)
    if a >= b:
        raise ProblemError(f"domain requires a < b, got ({a}, {b})", lineno)

    # horizon
    (lineno, line), = sections["horizon"]
    from_terminal = False
    if line == "all":
        horizon = None
    else:
        m = re.fullmatch(r"(terminal\s+)?(.+)", line)
        from_terminal = bool(m.group(1))
        horizon = float(_eval_numeric(m.group(2), params, lineno))
        if horizon <= 0:
            raise ProblemError(f"horizon must be positive, got {horizon}", lineno)

    def parse_poly(txt, lineno, allow_traces=False, sp=None):
        try:
            return parse_expression(txt, sp or space, params, allow_traces, lineno)
        except JetOverflowError as e:
            raise ProblemError(str(e), lineno) from None

    # dynamics: "dep : expr" (or bare expr for a single variable)
    dynamics: dict[str, Poly] = {}
    for lineno, line in sections["dynamics"]:
        if ":" in line:
            dep, expr = (s.strip() for s in line.split(":", 1))
        elif len(depvars) == 1:
            dep, expr = depvars[0], line
        else:
            raise ProblemError("expected '<variable> : <expression>'", lineno)
        if dep not in orders:
            raise ProblemError(f"unknown dependent variable '{dep}'", lineno)
        if dep in dynamics:
            raise ProblemError(f"duplicate dynamics for '{dep}'", lineno)
        dynamics[dep] = parse_poly(expr, lineno)
    missing = [d for d in depvars if d not in dynamics]
    if missing:
        raise ProblemError(f"missing dynamics for {missing}")

    # boundary conditions: linear trace equations
    tspace = trace_space_raw(space, depvars, alpha)
    boundary: list[BoundaryCondition] = []
    for lineno, line in sections.get("boundary", []):
        if "=" not in line:
            raise ProblemError("boundary condition needs '='", lineno)
        lhs_txt, rhs_txt = line.split("=", 1)
        eq = parse_poly(lhs_txt, lineno, allow_traces=True, sp=tspace) - parse_poly(
            rhs_txt, lineno, allow_traces=True, sp=tspace
        )
        boundary.append(_linearize_bc(eq, tspace, lineno))

    def parse_set(key):
        cons = []
        for lineno, line in sections[key]:
            p = parse_poly(line, lineno)
            if "t" in p.support_symbols() and horizon is None:
                raise ProblemError("time-dependent set with all-time horizon", lineno)
            cons.append(p)
        if not cons:
            raise ProblemError(f"[{key}] must contain at least one constraint")
        return IntegralSet(tuple(cons))

    problem = PdeProblem(
        name=name,
        depvars=tuple(depvars),
        alpha=alpha,
        space=space,
        dynamics=tuple(dynamics[d] for d in depvars),
        boundary=tuple(boundary),
        initial_set=parse_set("initial_set"),
        unsafe_set=parse_set("unsafe_set"),
        horizon=horizon,
        domain=(a, b),
        params=tuple(sorted(params.items())),
        from_terminal=False,
    )
    if from_terminal:
        problem = reverse_time(problem)
    return problem


def trace_space_raw(space: VarSpace, depvars, alpha) -> VarSpace:
    extra = []
    for dep in depvars:
        for k in range(alpha + 1):
            for side in (0, 1):
                base = jet_name(dep, k)
                extra.append(Symbol(trace_name(base, side), "trace", dep=dep, order=k, side=side))
    return space.extend(extra)


def _linearize_bc(eq: Poly, tspace: VarSpace, lineno: int) -> BoundaryCondition:
    trace_syms = [s.name for s in tspace.symbols if s.kind == "trace"]
    terms: dict[str, Poly] = {}
    rhs = Poly.zero(tspace)
    for e, c in eq.terms.items():
        touched = [
            tspace.symbols[i].name
            for i, k in enumerate(e)
            if k and tspace.symbols[i].kind == "trace"
        ]
        deg = sum(k for i, k in enumerate(e) if tspace.symbols[i].kind == "trace")
        nonlinear = deg > 1 or any(
            k and tspace.symbols[i].kind not in ("trace", "time") for i, k in enumerate(e)
        )
        if nonlinear:
            raise ProblemError("boundary condition must be linear in boundary traces", lineno)
        if deg == 0:
            rhs = rhs - Poly.monomial(tspace, e, c)
            continue
        nm = touched[0]
        coeff_exp = tuple(0 if tspace.symbols[i].name == nm else k for i, k in enumerate(e))
        terms[nm] = terms.get(nm, Poly.zero(tspace)) + Poly.monomial(tspace, coeff_exp, c)
    if not terms:
        raise ProblemError("boundary condition references no trace", lineno)
    return BoundaryCondition(tuple(sorted(terms.items())), rhs)


def load_problem(path: str, overrides=None) -> PdeProblem:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    import os

    return parse_problem(text, name=os.path.splitext(os.path.basename(path))[0],
                         overrides=overrides)


# ---------------------------------------------------------------------------
# printing


def _fmt_fraction(c: Fraction) -> str:
    return str(c) if c.denominator != 1 else str(c.numerator)


def poly_to_text(p: Poly) -> str:
    if p.is_zero():
        return "0"
    names = p.space.names()
    parts = []
    for e, c in sorted(p.terms.items(), key=lambda t: (sum(t[0]), tuple(-x for x in t[0]))):
        factors = []
        if c != 1 or sum(e) == 0:
            factors.append(_fmt_fraction(c) if c > 0 else f"(-{_fmt_fraction(-c)})")
        for i, k in enumerate(e):
            nm = names[i].replace("@", "(") + (")" if "@" in names[i] else "")
            if k == 1:
                factors.append(nm)
            elif k > 1:
                factors.append(f"{nm}^{k}")
        parts.append("*".join(factors))
    return " + ".join(parts)


def print_problem(p: PdeProblem) -> str:
    out = ["[variables]"]
    for d in p.depvars:
        out.append(f"{d} {p.alpha}")
    out.append("")
    out.append("[domain]")
    out.append(f"{_fmt_fraction(p.domain[0])} {_fmt_fraction(p.domain[1])}")
    out.append("")
    out.append("[horizon]")
    out.append("all" if p.horizon is None else repr(p.horizon))
    out.append("")
    out.append("[dynamics]")
    for d, dyn in zip(p.depvars, p.dynamics):
        out.append(f"{d} : {poly_to_text(dyn)}")
    out.append("")
    out.append("[boundary]")
    for bc in p.boundary:
        lhs = " + ".join(
            f"({poly_to_text(c)})*{n.replace('@', '(')})" for n, c in bc.terms
        )
        out.append(f"{lhs} = {poly_to_text(bc.rhs)}")
    out.append("")
    out.append("[initial_set]")
    out.extend(poly_to_text(c) for c in p.initial_set.constraints)
    out.append("")
    out.append("[unsafe_set]")
    out.extend(poly_to_text(c) for c in p.unsafe_set.constraints)
    out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# transformations


def reverse_time(p: PdeProblem) -> PdeProblem:
    """Turn a terminal-value problem into a forward one via tau = T - t."""
    if p.horizon is None:
        raise ProblemError("cannot time-reverse an all-time problem")
    T = Fraction(p.horizon)
    tsub = Poly.const(p.space, T) - Poly.var(p.space, "t")

    def rev(q: Poly) -> Poly:
        return q.subs({"t": tsub})

    tsp = trace_space_raw(p.space, p.depvars, p.alpha)
    tsub_tr = Poly.const(tsp, T) - Poly.var(tsp, "t")
    boundary = tuple(
        BoundaryCondition(
            tuple((n, c.subs({"t": tsub_tr})) for n, c in bc.terms),
            bc.rhs.subs({"t": tsub_tr}),
        )
        for bc in p.boundary
    )
    return replace(
        p,
        dynamics=tuple(-rev(d) for d in p.dynamics),
        boundary=boundary,
        initial_set=IntegralSet(tuple(rev(c) for c in p.initial_set.constraints)),
        unsafe_set=IntegralSet(tuple(rev(c) for c in p.unsafe_set.constraints)),
        from_terminal=True,
    )


def normalize_domain(p: PdeProblem) -> PdeProblem:
    """Map the spatial interval (a, b) onto (0, 1).

    Each spatial derivative of order j picks up (b-a)^(-j); integral-set
    constraints are scaled by the Jacobian (b-a) so integral values are
    preserved.
    """
    a, b = p.domain
    if a >= b:
        raise ProblemError(f"domain requires a < b, got ({a}, {b})")
    if p.is_normalized():
        return p
    L = b - a
    sub: dict[str, Poly] = {
        "x": Poly.const(p.space, a) + Poly.var(p.space, "x") * L
    }
    for s in p.space.symbols:
        if s.kind == "jet" and s.order > 0:
            sub[s.name] = Poly.var(p.space, s.name) * (Fraction(1) / L ** s.order)

    def xf(q: Poly) -> Poly:
        return q.subs(sub)

    tsp = trace_space_raw(p.space, p.depvars, p.alpha)
    boundary = []
    for bc in p.boundary:
        terms = []
        for n, c in bc.terms:
            order = tsp.symbol(n).order
            terms.append((n, c * (Fraction(1) / L ** order)))
        boundary.append(BoundaryCondition(tuple(terms), bc.rhs))

    return replace(
        p,
        dynamics=tuple(xf(d) for d in p.dynamics),
        boundary=tuple(boundary),
        initial_set=IntegralSet(tuple(xf(c) * L for c in p.initial_set.constraints)),
        unsafe_set=IntegralSet(tuple(xf(c) * L for c in p.unsafe_set.constraints)),
        domain=(Fraction(0), Fraction(1)),
    )


# ---------------------------------------------------------------------------
# admissible-function sampling


class FunctionSample:
    """A polynomial-in-x snapshot u(x) with analytic spatial derivatives."""

    def __init__(self, coeffs: Mapping[str, np.ndarray]):
        # coeffs: dependent variable -> ascending power-basis coefficients
        self.coeffs = {k: np.asarray(v, dtype=float) for k, v in coeffs.items()}

    def value(self, dep: str, x: np.ndarray, order: int = 0) -> np.ndarray:
        c = self.coeffs[dep]
        d = np.polynomial.polynomial.polyder(c, order) if order else c
        return np.polynomial.polynomial.polyval(x, d if len(d) else [0.0])

    def jet_values(self, space: VarSpace, x: np.ndarray, rename=None) -> dict[str, np.ndarray]:
        """Values for every jet symbol of `space` (plus x itself)."""
        rename = rename or {}
        out = {"x": np.asarray(x, dtype=float)}
        for s in space.symbols:
            if s.kind == "jet" and s.dep in self.coeffs:
                out[rename.get(s.name, s.name)] = self.value(s.dep, x, s.order)
        return out


def _bc_instant(problem: PdeProblem, t: float):
    """Boundary conditions with t fixed: list of ({trace: coeff}, rhs)."""
    rows = []
    for bc in problem.boundary:
        row = {}
        for n, c in bc.terms:
            row[n] = float(c.evaluate({"t": t})) if "t" in c.support_symbols() else float(
                c.evaluate({})
            )
        rhs = float(bc.rhs.evaluate({"t": t}) if "t" in bc.rhs.support_symbols() else bc.rhs.evaluate({}))
        rows.append((row, rhs))
    return rows


def admissible_basis(problem: PdeProblem, deg: int = 10, t: float = 0.0):
    """Particular solution + null-space basis for the BC-respecting
    polynomials of degree <= deg (one dependent variable at a time).

    Returns {dep: (particular coeffs, [null basis coeff vectors])}.
    """
    if not problem.is_normalized():
        problem = normalize_domain(problem)
    rows = _bc_instant(problem, t)
    out = {}
    for dep in problem.depvars:
        # trace of x^j at side s for derivative order k
        def trace_val(j, k, side):
            if k > j:
                return 0.0
            coeff = math.perm(j, k)
            return coeff * (float(side) ** (j - k) if j - k > 0 else 1.0)

        A = []
        rhs = []
        for row, r in rows:
            arow = np.zeros(deg + 1)
            touched = False
            for n, c in row.items():
                s = trace_space(problem).symbol(n)
                if s.dep != dep:
                    continue
                touched = True
                for j in range(deg + 1):
                    arow[j] += c * trace_val(j, s.order, s.side)
            if touched:
                A.append(arow)
                rhs.append(r)
        if A:
            A = np.array(A)
            rhs = np.array(rhs)
            part, *_ = np.linalg.lstsq(A, rhs, rcond=None)
            if np.linalg.norm(A @ part - rhs) > 1e-8 * (1 + np.linalg.norm(rhs)):
                raise ProblemError(f"boundary conditions for '{dep}' are inconsistent")
            _, sv, vt = np.linalg.svd(A)
            rank = int(np.sum(sv > 1e-10 * max(1.0, sv[0] if len(sv) else 1.0)))
            null = vt[rank:].T
        else:
            part = np.zeros(deg + 1)
            null = np.eye(deg + 1)
        out[dep] = (part, [null[:, i] for i in range(null.shape[1])])
    return out


def sample_functions(problem: PdeProblem, n: int, seed: int, deg: int = 10,
                     t: float = 0.0, scale: float = 1.0) -> list[FunctionSample]:
    """Random BC-respecting polynomial snapshots with decaying coefficients."""
    basis = admissible_basis(problem, deg=deg, t=t)
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        coeffs = {}
        for dep, (part, null) in basis.items():
            c = part.copy()
            for k, psi in enumerate(null):
                c = c + scale * rng.normal() / (1.0 + k) * psi
            coeffs[dep] = c
        samples.append(FunctionSample(coeffs))
    return samples


def set_membership(problem: PdeProblem, s: IntegralSet, f: FunctionSample,
                   n_quad: int = 64) -> list[float]:
    """Quadrature values of every set integral for a sampled function."""
    x, w = numeric.gauss_rule(n_quad)
    vals = f.jet_values(problem.space, x)
    vals["t"] = np.zeros_like(x)
    out = []
    for c in s.constraints:
        ev = numeric.compile_poly(c)
        out.append(float(np.dot(w, ev(vals))))
    return out


def rescale_into_set(problem: PdeProblem, s: IntegralSet, f: FunctionSample,
                     rng, n_quad: int = 64, tries: int = 40) -> FunctionSample | None:
    """Radially rescale the null-space part of f into the set, boundary-biased."""
    basis = admissible_basis(problem)
    parts = {dep: basis[dep][0] for dep in f.coeffs}

    def scaled(rho):
        return FunctionSample({
            dep: parts[dep] + rho * (f.coeffs[dep] - _pad(parts[dep], len(f.coeffs[dep])))
            for dep in f.coeffs
        })

    def inside(rho):
        return all(v >= -1e-9 for v in set_membership(problem, s, scaled(rho), n_quad))

    rhos = np.concatenate([[1.0], rng.uniform(0.0, 1.5, tries)])
    feasible = [r for r in rhos if inside(r)]
    if not feasible:
        return None
    lo = max(feasible)
    # push toward the set boundary, where barrier inequalities are tight;
    # interior points are still produced via the caller's random scales
    hi = lo if inside(lo * 2 ** 8) else next(
        lo * 2 ** k for k in range(1, 9) if not inside(lo * 2 ** k)
    )
    if hi > lo:
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if inside(mid) else (lo, mid)
    # mix: mostly near-boundary, sometimes strictly interior
    rho = lo if rng.uniform() < 0.7 else lo * rng.uniform(0.2, 1.0)
    return scaled(rho)


def _pad(v, n):
    if len(v) == n:
        return v
    out = np.zeros(n)
    out[: len(v)] = v
    return out


@dataclass
class DisjointnessReport:
    n_checked: int
    overlaps: int
    note: str = ("advisory only: sampling cannot prove the initial and unsafe "
                 "sets are disjoint")

    @property
    def ok(self) -> bool:
        return self.overlaps == 0


def sample_disjointness(problem: PdeProblem, n: int, seed: int = 0) -> DisjointnessReport:
    """Monte-Carlo check that no sampled function is in both sets."""
    if n < 1:
        raise ProblemError("need n >= 1")
    p = normalize_domain(problem)
    rng = np.random.default_rng(seed)
    overlaps = 0
    checked = 0
    for f in sample_functions(p, n, seed=seed + 1, scale=float(rng.uniform(0.5, 8.0))):
        g = rescale_into_set(p, p.initial_set, f, rng)
        if g is None:
            continue
        checked += 1
        if all(v >= -1e-9 for v in set_membership(p, p.unsafe_set, g)):
            overlaps += 1
    return DisjointnessReport(n_checked=checked, overlaps=overlaps)
