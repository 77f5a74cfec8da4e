"""Quadratic-like representations p = eta' F(t,x) eta over jet monomials.

The Gram split is non-unique; we fix the canonical even split so that the
representation is a deterministic contract.  Matrix entries may be plain
polynomials in (t, x) or decision-affine expressions.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

from .polyalg import LinPoly, MonomialBasis, Poly, PolyError, VarSpace


class QuadForm:
    """Symmetric grid of (t, x)-entries indexed by a jet monomial basis."""

    def __init__(self, basis: MonomialBasis, mat: Sequence[Sequence]):
        n = len(basis)
        if len(mat) != n or any(len(row) != n for row in mat):
            raise PolyError("matrix dimension does not match basis size")
        self.basis = basis
        self.mat = [list(row) for row in mat]
        for i in range(n):
            for j in range(i + 1, n):
                a, b = self.mat[i][j], self.mat[j][i]
                if not (a - b).is_zero():
                    raise PolyError(f"matrix is not symmetric at ({i},{j})")

    @property
    def space(self) -> VarSpace:
        return self.basis.space

    @staticmethod
    def zeros(basis: MonomialBasis, lin: bool = False) -> "QuadForm":
        z = LinPoly.zero(basis.space) if lin else Poly.zero(basis.space)
        n = len(basis)
        return QuadForm(basis, [[z for _ in range(n)] for _ in range(n)])

    def expand(self):
        """Scalar polynomial eta' F eta."""
        out = None
        for i, mi in enumerate(self.basis.monos):
            for j, mj in enumerate(self.basis.monos):
                term = self.mat[i][j] * Poly.monomial(self.space, mi) * Poly.monomial(
                    self.space, mj
                )
                out = term if out is None else out + term
        return out if out is not None else Poly.zero(self.space)

    def __add__(self, other: "QuadForm") -> "QuadForm":
        a, b = self, other
        if a.basis != b.basis:
            if set(b.basis.monos) <= set(a.basis.monos):
                b = b.embed(a.basis)
            elif set(a.basis.monos) <= set(b.basis.monos):
                a = a.embed(b.basis)
            else:
                raise PolyError("incompatible bases with no common extension")
        n = len(a.basis)
        return QuadForm(
            a.basis, [[a.mat[i][j] + b.mat[i][j] for j in range(n)] for i in range(n)]
        )

    def scale(self, c) -> "QuadForm":
        return QuadForm(self.basis, [[e * c for e in row] for row in self.mat])

    def __mul__(self, c):
        return self.scale(c)

    __rmul__ = __mul__

    def embed(self, big: MonomialBasis) -> "QuadForm":
        """Re-index into a larger basis containing every monomial of ours."""
        idx = {m: i for i, m in enumerate(big.monos)}
        try:
            pos = [idx[m] for m in self.basis.monos]
        except KeyError:
            raise PolyError("target basis does not contain this one") from None
        out = QuadForm.zeros(big, lin=any(isinstance(e, LinPoly) for row in self.mat for e in row))
        for i, pi in enumerate(pos):
            for j, pj in enumerate(pos):
                out.mat[pi][pj] = out.mat[pi][pj] + self.mat[i][j]
        return out

    def resolve(self, values) -> "QuadForm":
        mat = [
            [e.resolve(values) if isinstance(e, LinPoly) else e for e in row]
            for row in self.mat
        ]
        return QuadForm(self.basis, mat)

    def __repr__(self):
        return f"QuadForm(dim={len(self.basis)})"


def _split_exponent(space: VarSpace, basis_idx: set[int], e: tuple):
    state = tuple(k if i in basis_idx else 0 for i, k in enumerate(e))
    rest = tuple(0 if i in basis_idx else k for i, k in enumerate(e))
    return state, rest


def _pair_table(basis: MonomialBasis) -> dict[tuple, list[tuple[int, int]]]:
    table: dict[tuple, list[tuple[int, int]]] = {}
    n = len(basis)
    for i in range(n):
        for j in range(i, n):
            prod = tuple(a + b for a, b in zip(basis.monos[i], basis.monos[j]))
            table.setdefault(prod, []).append((i, j))
    return table


def gram_split(p, basis: MonomialBasis) -> QuadForm:
    """Canonical even-split Gram representation of p over `basis`.

    Every jet monomial's coefficient is distributed uniformly over all
    unordered basis pairs whose product matches it.  expand(gram_split(p))
    reproduces p exactly.
    """
    if isinstance(p, LinPoly):
        out = QuadForm.zeros(basis, lin=True)
        for k, part in p.parts.items():
            q = gram_split(part, basis)
            for i in range(len(basis)):
                for j in range(len(basis)):
                    e = q.mat[i][j]
                    if not e.is_zero():
                        out.mat[i][j] = out.mat[i][j] + (
                            LinPoly.from_poly(e) if k is None else LinPoly.decision(p.space, k, e)
                        )
        return out

    space = basis.space
    basis_idx = {space.index(n) for n in basis.var_names}
    table = _pair_table(basis)
    n = len(basis)
    mat = [[Poly.zero(space) for _ in range(n)] for _ in range(n)]
    for e, c in p.terms.items():
        state, rest = _split_exponent(space, basis_idx, e)
        pairs = table.get(state)
        if not pairs:
            raise PolyError(
                f"basis too small: cannot represent monomial with jet part "
                f"{Poly.monomial(space, state)}"
            )
        share = Fraction(c, len(pairs))
        restp = Poly.monomial(space, rest)
        for (i, j) in pairs:
            if i == j:
                mat[i][i] = mat[i][i] + restp * share
            else:
                half = restp * (share / 2)
                mat[i][j] = mat[i][j] + half
                mat[j][i] = mat[j][i] + half
    return QuadForm(basis, mat)


def expand(q: QuadForm):
    return q.expand()
