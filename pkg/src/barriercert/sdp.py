"""Sum-of-squares compiler and embedded semidefinite-programming solver.

An `SosProgram` holds polynomial identities of the form

    expr(t, x, state; decisions) = sum_b  weight_b(t,x) * z_b' G_b z_b

where each z_b is a fixed monomial basis and each G_b must be positive
semidefinite.  Matching coefficients monomial-by-monomial yields a standard
primal SDP

    min <C, X> + c_f' f   s.t.   A(X) + B f = b,   X >= 0,   f free,

which is solved by a dense primal-dual path-following method (HKM search
direction, Mehrotra predictor-corrector, Schur complement with Cholesky).
Free variables are handled natively through an augmented Schur system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .polyalg import LinPoly, MonomialBasis, Poly, PolyError


class SdpError(Exception):
    pass


# ---------------------------------------------------------------------------
# SDP data


@dataclass
class SdpData:
    """Block-diagonal standard-form SDP.

    A_flat[k] is an (m x n_k^2) sparse matrix whose row i is the symmetric
    constraint matrix A_{i,k} flattened; B is the (m x nf) free-variable
    coefficient matrix; C[k] the objective block; c_free the objective on f.
    """

    block_dims: list[int]
    A_flat: list[sp.csr_matrix]
    B: np.ndarray
    b: np.ndarray
    C: list[np.ndarray]
    c_free: np.ndarray
    row_scale: np.ndarray | None = None
    trivially_infeasible: bool = False
    feasibility: bool = False  # pure feasibility: any primal-feasible X is a solution

    @property
    def n_con(self) -> int:
        return len(self.b)

    @property
    def n_free(self) -> int:
        return self.B.shape[1] if self.B.ndim == 2 else 0

    @staticmethod
    def from_dense(A: Sequence[Sequence[np.ndarray]], b, C, B=None, c_free=None) -> "SdpData":
        """Build from dense per-constraint symmetric blocks (tests, small uses).

        A[i][k] is the matrix of constraint i on block k.
        """
        m = len(A)
        nb = len(C)
        dims = [np.asarray(Ck).shape[0] for Ck in C]
        A_flat = []
        for k in range(nb):
            rows = np.vstack([np.asarray(A[i][k], dtype=float).reshape(-1) for i in range(m)])
            A_flat.append(sp.csr_matrix(rows))
        B = np.zeros((m, 0)) if B is None else np.asarray(B, dtype=float)
        c_free = np.zeros(B.shape[1]) if c_free is None else np.asarray(c_free, dtype=float)
        return SdpData(dims, A_flat, B, np.asarray(b, dtype=float),
                       [np.asarray(Ck, dtype=float) for Ck in C], c_free)

    def apply_A(self, X: list[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.n_con)
        for k, Ak in enumerate(self.A_flat):
            out += Ak @ X[k].reshape(-1)
        return out

    def apply_At(self, y: np.ndarray) -> list[np.ndarray]:
        out = []
        for k, Ak in enumerate(self.A_flat):
            n = self.block_dims[k]
            M = (Ak.T @ y).reshape(n, n)
            out.append(0.5 * (M + M.T))
        return out

    def scaled(self) -> "SdpData":
        """Row-scale constraints by their largest coefficient magnitude."""
        m = self.n_con
        s = np.ones(m)
        for Ak in self.A_flat:
            if Ak.nnz:
                mx = np.zeros(m)
                absA = abs(Ak)
                mx[: m] = np.asarray(absA.max(axis=1).todense()).ravel()
                s = np.maximum(s, mx)
        if self.n_free:
            s = np.maximum(s, np.abs(self.B).max(axis=1, initial=0.0))
        inv = 1.0 / s
        D = sp.diags(inv)
        return SdpData(
            self.block_dims,
            [sp.csr_matrix(D @ Ak) for Ak in self.A_flat],
            inv[:, None] * self.B if self.n_free else self.B,
            inv * self.b,
            self.C,
            self.c_free,
            row_scale=s,
            trivially_infeasible=self.trivially_infeasible,
            feasibility=self.feasibility,
        )


@dataclass
class SdpSolution:
    status: str  # Optimal | Infeasible | MaxIter | NumericalFailure
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    f: np.ndarray
    iterations: int
    primal_obj: float
    dual_obj: float
    residuals: dict  # primal, dual, gap, min_eig (recomputed independently)

    @property
    def optimal(self) -> bool:
        return self.status == "Optimal"


def _kkt_residuals(d: SdpData, X, y, S, f) -> dict:
    rp = d.b - d.apply_A(X) - (d.B @ f if d.n_free else 0.0)
    Aty = d.apply_At(y)
    rd = 0.0
    min_eig = np.inf
    for k in range(len(d.block_dims)):
        Rd = d.C[k] - Aty[k] - S[k]
        rd = max(rd, np.abs(Rd).max(initial=0.0))
        if d.block_dims[k]:
            min_eig = min(min_eig, la.eigvalsh(X[k])[0], la.eigvalsh(S[k])[0])
    rf = np.abs(d.c_free - d.B.T @ y).max(initial=0.0) if d.n_free else 0.0
    pobj = sum(np.vdot(d.C[k], X[k]) for k in range(len(X))) + (
        d.c_free @ f if d.n_free else 0.0
    )
    dobj = float(d.b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return {
        "primal": float(np.abs(rp).max(initial=0.0) / (1.0 + np.abs(d.b).max(initial=0.0))),
        "dual": float(rd / (1.0 + max(np.abs(Ck).max(initial=0.0) for Ck in d.C))),
        "free": float(rf),
        "gap": float(gap),
        "min_eig": float(min_eig),
        "primal_obj": float(pobj),
        "dual_obj": dobj,
    }


def _step_len(L: np.ndarray, D: np.ndarray) -> float:
    """Largest alpha with M + alpha*D psd, M = L L'."""
    W = la.solve_triangular(L, D, lower=True)
    W = la.solve_triangular(L, W.T, lower=True)
    lam = la.eigvalsh(0.5 * (W + W.T))[0]
    if lam >= -1e-14:
        return np.inf
    return -1.0 / lam


_CHUNK_ENTRIES = 4_000_000  # floats per dense constraint chunk
_ROW_RANK_CAP = 12          # constraint rows above this rank use the dense sweep


def _row_factors(d: SdpData):
    """Per-block low-rank factorizations of the constraint matrices.

    Grid-compiled SOS rows couple only the few basis pairs sharing one state
    monomial, so each A_{i,k} = W J W' with a handful of signed rank-one
    terms.  The Schur complement entries tr(A_i Sinv A_j X) then assemble
    from two thin Gram products per block instead of dense m x n^2 sweeps.
    Returns, per block, (W (n x K), signs (K,), R (m x K 0/1 csr)) or None
    when some row is too high-rank for the factorization to pay off.
    """
    out = []
    m = d.n_con
    for k, n in enumerate(d.block_dims):
        Ak = d.A_flat[k]
        if n == 0 or Ak.nnz == 0:
            out.append(None)
            continue
        cols: list[np.ndarray] = []
        signs: list[float] = []
        rows: list[int] = []
        ok = True
        Acsr = Ak.tocsr()
        for r in range(m):
            lo, hi = Acsr.indptr[r], Acsr.indptr[r + 1]
            if lo == hi:
                continue
            idx = Acsr.indices[lo:hi]
            sub = np.unique(idx // n)
            Ar = np.zeros((len(sub), len(sub)))
            pos = {int(s): t for t, s in enumerate(sub)}
            for p, v in zip(idx, Acsr.data[lo:hi]):
                i, j = divmod(int(p), n)
                Ar[pos[i], pos[j]] = v
            w, V = la.eigh(Ar)
            top = np.abs(w).max(initial=0.0)
            keep = [a for a in range(len(w)) if abs(w[a]) > 1e-14 * top]
            if len(keep) > _ROW_RANK_CAP:
                ok = False
                break
            for a in keep:
                col = np.zeros(n)
                col[sub] = V[:, a] * math.sqrt(abs(w[a]))
                cols.append(col)
                signs.append(1.0 if w[a] > 0 else -1.0)
                rows.append(r)
        if not ok or not cols:
            out.append(None)
            continue
        K = len(cols)
        W = np.column_stack(cols)
        R = sp.csr_matrix((np.ones(K), (np.array(rows), np.arange(K))), shape=(m, K))
        out.append((W, np.array(signs), R))
    return out


def solve(d: SdpData, tol: float = 1e-8, max_iter: int = 100,
          verbose: bool = False) -> SdpSolution:
    """Primal-dual interior-point solve with adaptive rescaling restarts.

    Problems whose solutions have strongly nonuniform magnitudes (thin
    feasibility margins force Gram entries spanning many orders) stall the
    path-following iteration.  After a stalled round the blocks are rescaled
    by the square root of the iterate's diagonal (a congruence X -> DXD) and
    the free variables by their magnitudes, and the solve restarts in the
    better-conditioned coordinates; the final iterate is mapped back.
    """
    nb = len(d.block_dims)
    Dk = [np.ones(n) for n in d.block_dims]
    Df = np.ones(d.n_free)
    cur = d
    total_it = 0
    sol = None
    for round_ in range(4):
        sol = _solve_once(cur, tol=tol, max_iter=max_iter, verbose=verbose)
        total_it += sol.iterations
        if sol.status != "MaxIter" or not sol.X:
            break
        rp1 = sol.residuals.get("primal", np.inf) if sol.residuals else np.inf
        # close enough that further rounds only polish constants
        if rp1 <= 100.0 * tol:
            break
        # a dual objective racing away from a stalled primal is an improving
        # (Farkas-like) ray: rescaling rounds cannot turn it into a certificate
        if abs(sol.dual_obj) > 10.0 * (1.0 + abs(sol.primal_obj)):
            break
        spread = 1.0
        dds = []
        for Xk in sol.X:
            dg = np.diag(Xk)
            top = dg.max(initial=1.0)
            dg = np.sqrt(np.maximum(dg, 1e-12 * max(top, 1.0)))
            dds.append(dg)
            if len(dg):
                spread = max(spread, float(dg.max() / dg.min()))
        dfs = np.maximum(np.abs(sol.f), 1.0) if d.n_free else Df
        if d.n_free and len(dfs):
            spread = max(spread, float(dfs.max() / dfs.min()))
        if round_ == 3 or spread < 1e2:
            break
        Dk = [Dk[k] * dds[k] for k in range(nb)]
        Df = Df * dfs
        cur = _congruence_scaled(d, Dk, Df)
    if sol is None or not sol.X:
        return sol
    # map the iterate back to the original coordinates
    X = [sol.X[k] * np.outer(Dk[k], Dk[k]) for k in range(nb)]
    S = [sol.S[k] / np.outer(Dk[k], Dk[k]) for k in range(nb)]
    f = sol.f * Df if d.n_free else sol.f
    res = dict(sol.residuals)
    status = sol.status
    if sol.residuals:
        chk = _kkt_residuals(d, X, sol.y, S, f)
        # the dual-side quantities live in the rescaled coordinates (the
        # feasibility objective C = I is re-centred each round); the primal
        # quantities are recomputed on the original data
        res["primal"] = chk["primal"]
        res["min_eig"] = min(la.eigvalsh(Xk)[0] for Xk in X) if X else 0.0
        # an Optimal verdict reached in rescaled coordinates only counts if
        # it survives the map back to the original data
        if status == "Optimal" and res["primal"] > 10.0 * tol:
            status = "MaxIter"
    return SdpSolution(status, X, sol.y, S, f, total_it,
                       sol.primal_obj, sol.dual_obj, res)


def _congruence_scaled(d: SdpData, Dk: list, Df: np.ndarray) -> SdpData:
    A_flat = []
    C = []
    for k, n in enumerate(d.block_dims):
        sc = np.outer(Dk[k], Dk[k]).reshape(-1)
        A_flat.append(d.A_flat[k].multiply(sc[None, :]).tocsr())
        Ck = d.C[k]
        if np.abs(Ck).max(initial=0.0) > 0:
            C.append(np.eye(n))  # feasibility objective: re-centre
        else:
            C.append(Ck)
    B = d.B * Df[None, :] if d.n_free else d.B
    c_free = d.c_free * Df if d.n_free else d.c_free
    return SdpData(d.block_dims, A_flat, B, d.b, C, c_free,
                   trivially_infeasible=d.trivially_infeasible,
                   feasibility=d.feasibility).scaled()


def _solve_once(d: SdpData, tol: float = 1e-8, max_iter: int = 100,
                verbose: bool = False) -> SdpSolution:
    """Primal-dual path-following interior-point solve."""
    if d.trivially_infeasible:
        return SdpSolution("Infeasible", [], np.zeros(d.n_con), [], np.zeros(d.n_free),
                           0, 0.0, 0.0, {})
    dims = d.block_dims
    nb = len(dims)
    m = d.n_con
    nf = d.n_free
    ntot = max(1, sum(dims))

    if m == 0:
        X = [np.eye(n) for n in dims]
        S = [Ck.copy() if np.abs(Ck).max(initial=0.0) > 0 else np.eye(n)
             for n, Ck in zip(dims, d.C)]
        f = np.zeros(nf)
        res = _kkt_residuals(d, X, np.zeros(0), S, f)
        return SdpSolution("Optimal", X, np.zeros(0), S, f, 0,
                           res["primal_obj"], res["dual_obj"], res)

    normA = max((abs(Ak).max() if Ak.nnz else 0.0) for Ak in d.A_flat)
    normA = max(normA, np.abs(d.B).max(initial=0.0) if nf else 0.0, 1.0)
    normb = np.abs(d.b).max(initial=0.0)
    normC = max(np.abs(Ck).max(initial=0.0) for Ck in d.C)

    zp = max(10.0, math.sqrt(ntot), ntot * (1.0 + normb) / (1.0 + normA))
    zd = max(10.0, math.sqrt(ntot), 1.0 + max(normA, normC))
    X = [zp * np.eye(n) for n in dims]
    S = [zd * np.eye(n) for n in dims]
    y = np.zeros(m)
    f = np.zeros(nf)

    status = "MaxIter"
    it = 0
    best = (X, y, S, f)
    best_merit = np.inf
    stall = 0
    factors = _row_factors(d)

    for it in range(1, max_iter + 1):
        try:
            Lx = [la.cholesky(Xk, lower=True) for Xk in X]
            Ls = [la.cholesky(Sk, lower=True) for Sk in S]
        except la.LinAlgError:
            status = "NumericalFailure"
            break
        Sinv = [la.cho_solve((Lk, True), np.eye(len(Lk))) for Lk in Ls]

        Rp = d.b - d.apply_A(X) - (d.B @ f if nf else 0.0)
        Aty = d.apply_At(y)
        Rd = [d.C[k] - Aty[k] - S[k] for k in range(nb)]
        rf = (d.c_free - d.B.T @ y) if nf else np.zeros(0)

        mu = sum(np.vdot(X[k], S[k]) for k in range(nb)) / ntot
        pobj = sum(np.vdot(d.C[k], X[k]) for k in range(nb)) + (d.c_free @ f if nf else 0.0)
        dobj = float(d.b @ y)
        rp_rel = np.abs(Rp).max(initial=0.0) / (1.0 + normb)
        rd_rel = max(np.abs(Rd[k]).max(initial=0.0) for k in range(nb)) / (1.0 + normC)
        rf_rel = np.abs(rf).max(initial=0.0) / (1.0 + normC)
        # complementarity-based gap: the objective difference pobj - dobj
        # double-counts primal infeasibility (through y' Rp) and stalls at
        # the residual floor long after <X, S> has converged
        gap_rel = (mu * ntot) / (1.0 + abs(pobj) + abs(dobj))
        merit = max(rp_rel, rd_rel, rf_rel, gap_rel)
        if verbose:
            print(f"  it {it:3d}  mu {mu:9.2e}  rp {rp_rel:8.1e} rd {rd_rel:8.1e} "
                  f"rf {rf_rel:8.1e} gap {gap_rel:8.1e}  p {pobj:+.6e} d {dobj:+.6e}")
        if merit <= tol:
            status = "Optimal"
            best = (X, y, S, f)
            break
        # pure feasibility programs are done as soon as the iterate (interior
        # of the cone by construction) satisfies the affine constraints: the
        # duality gap of the surrogate trace objective is irrelevant
        if d.feasibility and rp_rel <= max(tol, 1e-9):
            status = "Optimal"
            best = (X, y, S, f)
            break
        # stall detection ignores the gap: on thin feasible sets the iterate
        # must travel far (gap_rel inflates with |X|) while residuals still
        # make steady progress
        res_merit = max(rp_rel, rd_rel, rf_rel)
        if res_merit < 0.9 * best_merit:
            best_merit = res_merit
            best = (X, y, S, f)
            stall = 0
        else:
            stall += 1
            if stall >= 25:
                # residuals have hit their numerical floor; return the best
                # iterate and let the caller judge the achieved accuracy
                break

        # heuristic primal-infeasibility detection: diverging Farkas-like dual
        # ray.  Only a candidate when the primal residual is still large --
        # feasible problems with huge certificates also grow the dual
        # objective, but their residual shrinks along the way.
        ynorm = float(np.abs(y).max(initial=0.0))
        if dobj > 1e7 * (1.0 + normb) and ynorm > 0:
            yh = y / ynorm
            byh = float(d.b @ yh)
            fres = np.abs(d.B.T @ yh).max(initial=0.0) if nf else 0.0
            Atyh = d.apply_At(yh)
            lmax = max(
                la.eigvalsh(Atyh[k])[-1] if dims[k] else -np.inf
                for k in range(nb)
            )
            # with A'yh having top eigenvalue lmax > 0, the ray only rules out
            # feasible X of trace up to byh/lmax: demand that bound be huge
            denom = max(lmax, fres, 0.0)
            if verbose:
                print(f"  ray probe: byh {byh:.3e} lmax {lmax:.3e} "
                      f"fres {fres:.3e} ynorm {ynorm:.3e}")
            if byh > 1e-6 * (1.0 + normb) and byh > 1e12 * denom:
                status = "Infeasible"
                break

        # Schur complement M_ij = tr(A_i Sinv A_j X)
        M = np.zeros((m, m))
        for k in range(nb):
            n = dims[k]
            Ak = d.A_flat[k]
            if n == 0 or Ak.nnz == 0:
                continue
            if factors[k] is not None:
                # A_i = W_i J_i W_i' termwise:  M_ij = sum over rank-one
                # terms (a in i, b in j) of s_a s_b (w_a'Sinv w_b)(w_b'X w_a)
                Wk, sgn, Rk = factors[k]
                G1 = Wk.T @ (Sinv[k] @ Wk)
                G2 = Wk.T @ (X[k] @ Wk)
                E = (sgn[:, None] * sgn[None, :]) * G1 * G2.T
                tmp = Rk @ E            # segment-sum over terms of each row
                M += (Rk @ tmp.T).T
                continue
            chunk = max(1, min(m, _CHUNK_ENTRIES // max(1, n * n)))
            for j0 in range(0, m, chunk):
                j1 = min(m, j0 + chunk)
                Aq = np.asarray(Ak[j0:j1].todense()).reshape(j1 - j0, n, n)
                Tq = Sinv[k][None, :, :] @ Aq @ X[k][None, :, :]
                M[:, j0:j1] += (Ak @ Tq.reshape(j1 - j0, n * n).T)
        M = 0.5 * (M + M.T)
        reg = 1e-10  # static regularization; escalated only on failure

        if nf:
            # factor the augmented KKT system directly: eliminating the free
            # block through M loses too much accuracy when M is ill-conditioned
            K0 = np.zeros((m + nf, m + nf))
            K0[:m, :m] = M
            K0[:m, m:] = d.B
            K0[m:, :m] = d.B.T
            if not np.all(np.isfinite(K0)):
                status = "NumericalFailure"
                break
            lu = None
            for _ in range(6):
                K = K0 + reg * np.diag(np.r_[np.ones(m), -np.ones(nf)])
                try:
                    lu = la.lu_factor(K)
                    break
                except la.LinAlgError:
                    reg *= 1e3
            if lu is None:
                status = "NumericalFailure"
                break

            def aug_solve(g, rfree):
                rhs = np.r_[g, rfree]
                z = la.lu_solve(lu, rhs)
                # iterative refinement against the unregularized system, until
                # the residual hits its floor (the factored K is regularized)
                rnorm = np.inf
                for _ in range(12):
                    r_ = rhs - K0 @ z
                    rn = np.abs(r_).max(initial=0.0)
                    if rn >= 0.5 * rnorm or rn <= 1e-15 * (1.0 + np.abs(rhs).max()):
                        break
                    rnorm = rn
                    z = z + la.lu_solve(lu, r_)
                return z[:m], z[m:]
        else:
            Lm = None
            for _ in range(6):
                try:
                    Lm = la.cholesky(M + reg * np.eye(m), lower=True)
                    break
                except la.LinAlgError:
                    reg = max(reg * 1e3, 1e-10 * M.diagonal().max(initial=1.0))
            if Lm is None:
                status = "NumericalFailure"
                break

            def aug_solve(g, rfree):
                x0 = la.cho_solve((Lm, True), g)
                return x0 + la.cho_solve((Lm, True), g - M @ x0), np.zeros(0)

        def direction(Fcomp):
            g = Rp - d.apply_A(Fcomp)
            dy, df = aug_solve(g, rf)
            Atdy = d.apply_At(dy)
            dS = [Rd[k] - Atdy[k] for k in range(nb)]
            dX = []
            for k in range(nb):
                D = Fcomp[k] + Sinv[k] @ Atdy[k] @ X[k]
                dX.append(0.5 * (D + D.T))
            return dy, df, dX, dS

        # predictor
        F0 = [-X[k] - Sinv[k] @ Rd[k] @ X[k] for k in range(nb)]
        dy_a, df_a, dX_a, dS_a = direction(F0)
        ap = min(1.0, 0.98 * min(_step_len(Lx[k], dX_a[k]) for k in range(nb)))
        ad = min(1.0, 0.98 * min(_step_len(Ls[k], dS_a[k]) for k in range(nb)))
        gap_aff = sum(
            np.vdot(X[k] + ap * dX_a[k], S[k] + ad * dS_a[k]) for k in range(nb)
        )
        sigma = min(1.0, max(1e-8, (max(gap_aff, 0.0) / (mu * ntot)) ** 3))

        # corrector with second-order term
        F1 = [
            F0[k]
            + sigma * mu * Sinv[k]
            - Sinv[k] @ dS_a[k] @ dX_a[k]
            for k in range(nb)
        ]
        dy, df, dX, dS = direction(F1)
        ap = min(1.0, 0.98 * min(_step_len(Lx[k], dX[k]) for k in range(nb)))
        ad = min(1.0, 0.98 * min(_step_len(Ls[k], dS[k]) for k in range(nb)))

        # commit the step, backtracking if numerical PD is lost at the boundary
        stepped = False
        for _ in range(12):
            Xn = [X[k] + ap * dX[k] for k in range(nb)]
            Sn = [S[k] + ad * dS[k] for k in range(nb)]
            try:
                for k in range(nb):
                    la.cholesky(Xn[k], lower=True)
                    la.cholesky(Sn[k], lower=True)
                stepped = True
                break
            except la.LinAlgError:
                ap *= 0.8
                ad *= 0.8
        if not stepped or not all(np.all(np.isfinite(Xk)) for Xk in Xn):
            status = "NumericalFailure"
            break
        X, S = Xn, Sn
        y = y + ad * dy
        f = f + ap * df

    X, y, S, f = best if status in ("MaxIter", "NumericalFailure") else (X, y, S, f)
    res = _kkt_residuals(d, X, y, S, f) if status != "Infeasible" else {}
    return SdpSolution(
        status, X, y, S, f, it,
        res.get("primal_obj", 0.0), res.get("dual_obj", 0.0), res,
    )


# ---------------------------------------------------------------------------
# SOS program


@dataclass
class SosBlock:
    weight: Poly  # multiplier polynomial (e.g. x(1-x)); constant 1 for the main block
    basis: tuple  # tuple of Poly basis elements (arbitrary, e.g. shifted powers)


@dataclass
class SosIdentity:
    name: str
    expr: LinPoly
    blocks: list[SosBlock]


@dataclass
class _GridAxis:
    points: list  # dyadic-rational evaluation points (Fractions)
    ipow: list    # ipow[i][e] = num_i^e * den^(D - e), integers
    scale: int    # den^D


def _grid_axes(space, cont, degs, ranges) -> list:
    """Exact evaluation grids, one axis per continuous symbol."""
    axes = []
    for a, pos in enumerate(cont):
        lo, hi = ranges.get(space.symbols[pos].name, (0.0, 1.0))
        flo, fhi = Fraction(lo), Fraction(hi)
        D = degs[a]
        if D == 0:
            us = [Fraction(1, 2)]
        else:
            us = [
                Fraction(round((1.0 - math.cos(math.pi * i / D)) / 2.0 * (1 << 24)),
                        1 << 24)
                for i in range(D + 1)
            ]
            if len(set(us)) != len(us):  # exactness only needs distinct points
                us = [Fraction(i, D) for i in range(D + 1)]
        pts = [flo + (fhi - flo) * u for u in us]
        den = 1
        for p in pts:
            den = den * p.denominator // math.gcd(den, p.denominator)
        nums = [p.numerator * (den // p.denominator) for p in pts]
        ipow = []
        for nu in nums:
            row = [den ** D]
            for _ in range(D):
                row.append(row[-1] * nu // den)
            ipow.append(row)
        axes.append(_GridAxis(pts, ipow, den ** D))
    return axes


def _eval_on_grid(poly, cont, contset, axes, gshape) -> dict:
    """Exact grid values of a Poly, keyed by its state-monomial exponents.

    The (x, t)-coefficient attached to each state monomial is evaluated with
    integer arithmetic (coefficients can exceed 1e27 with near-total
    cancellation); only the final values are rounded to float.
    """
    groups: dict[tuple, list] = {}
    for mono, c in poly.terms.items():
        skey = tuple(0 if q in contset else k for q, k in enumerate(mono))
        groups.setdefault(skey, []).append((tuple(mono[pos] for pos in cont), c))
    out = {}
    if not cont:
        for skey, terms in groups.items():
            out[skey] = np.array([float(sum(c for _, c in terms))])
        return out
    for skey, terms in groups.items():
        L = 1
        for _, c in terms:
            L = L * c.denominator // math.gcd(L, c.denominator)
        ints = [(e, c.numerator * (L // c.denominator)) for e, c in terms]
        vals = np.empty(gshape)
        if len(cont) == 1:
            ax = axes[0]
            denom = L * ax.scale
            for i in range(gshape[0]):
                ip = ax.ipow[i]
                acc = 0
                for (e0,), cn in ints:
                    acc += cn * ip[e0]
                vals[i] = acc / denom
        else:
            ax0, ax1 = axes
            denom = L * ax0.scale * ax1.scale
            for i in range(gshape[0]):
                ip0 = ax0.ipow[i]
                for j in range(gshape[1]):
                    ip1 = ax1.ipow[j]
                    acc = 0
                    for (e0, e1), cn in ints:
                        acc += cn * ip0[e0] * ip1[e1]
                    vals[i, j] = acc / denom
        out[skey] = vals.ravel()
    return out


def _as_poly_basis(basis) -> tuple:
    if isinstance(basis, MonomialBasis):
        return tuple(Poly.monomial(basis.space, m) for m in basis.monos)
    return tuple(basis)


class SosProgram:
    """Collection of polynomial identities `expr = sum weight_b * z_b'G_b z_b`
    linear in scalar decision symbols, plus sign constraints on symbols."""

    def __init__(self):
        self.identities: list[SosIdentity] = []
        self.nonneg: list[str] = []
        self.linear_rows: list[tuple[dict[str, float], float]] = []
        self.objective: dict[str, float] = {}
        self._extra_decisions: list[str] = []
        self.ranges: dict[str, tuple[float, float]] = {}

    def set_range(self, name: str, lo, hi) -> None:
        """Domain of a continuous symbol (space/time), used to place the
        evaluation grid that enforces each identity.  Defaults to (0, 1)."""
        self.ranges[name] = (float(lo), float(hi))

    def add_identity(self, name: str, expr: LinPoly,
                     blocks: Sequence[tuple[Poly, object]]) -> None:
        if not blocks:
            raise SdpError(f"identity '{name}' needs at least one SOS block")
        self.identities.append(
            SosIdentity(name, expr, [SosBlock(w, _as_poly_basis(b)) for w, b in blocks])
        )

    def add_nonneg(self, name: str) -> None:
        self.nonneg.append(name)

    def add_linear(self, coeffs: Mapping[str, float], rhs: float) -> None:
        """Scalar linear equation `sum coeffs[n] * n = rhs` on decision symbols."""
        self.linear_rows.append((dict(coeffs), float(rhs)))

    def declare(self, name: str) -> None:
        """Register a decision symbol not (yet) appearing in any identity."""
        self._extra_decisions.append(name)

    def set_objective(self, coeffs: Mapping[str, float]) -> None:
        self.objective = dict(coeffs)

    def decision_names(self) -> list[str]:
        names = set(self._extra_decisions) | set(self.nonneg)
        for coeffs, _ in self.linear_rows:
            names |= set(coeffs)
        for ident in self.identities:
            names |= ident.expr.decision_names()
        return sorted(names)

    def compile(self) -> "CompiledSos":
        decisions = self.decision_names()
        dec_idx = {n: i for i, n in enumerate(decisions)}
        nonneg_set = set(self.nonneg)
        for n in self.objective:
            if n not in dec_idx:
                raise SdpError(f"objective references unknown symbol '{n}'")

        dims: list[int] = []
        block_of: dict[tuple[int, int], int] = {}
        for ii, ident in enumerate(self.identities):
            for bi, blk in enumerate(ident.blocks):
                block_of[(ii, bi)] = len(dims)
                dims.append(len(blk.basis))
        nonneg_block: dict[str, int] = {}
        for n in self.nonneg:
            nonneg_block[n] = len(dims)
            dims.append(1)

        coo = [([], [], []) for _ in dims]  # rows, flat positions, values
        b_list: list[float] = []
        B_rows: list[dict[int, float]] = []
        con_index: dict[tuple, int] = {}

        def con_id(key: tuple) -> int:
            if key not in con_index:
                con_index[key] = len(b_list)
                b_list.append(0.0)
                B_rows.append({})
            return con_index[key]

        # Each identity is a polynomial identity in the continuous symbols
        # (x, t) with coefficients that are polynomials in the remaining
        # symbols.  Matching raw monomial coefficients in x and t is hopelessly
        # ill-conditioned once bases of well-conditioned polynomials (shifted
        # powers) are expanded, so instead the identity is enforced by
        # evaluation on a grid of dyadic-rational near-Chebyshev points: a
        # polynomial of degree D_x in x and D_t in t vanishing on a
        # (D_x+1) x (D_t+1) grid of distinct points vanishes identically, and
        # all grid values are O(1) on the domain.  Evaluation is exact (big
        # integer arithmetic, floats only for the final values): the expanded
        # monomial coefficients of shifted-power products are astronomically
        # large with near-total cancellation, so float Horner is meaningless.
        for ii, ident in enumerate(self.identities):
            space = ident.expr.space
            cont = [i for i, s in enumerate(space.symbols)
                    if s.kind in ("space", "time")]
            if len(cont) > 2:
                raise SdpError("more than two continuous symbols in identity")
            contset = set(cont)

            degs = [0] * len(cont)

            def bump_degs(poly, mult=1):
                for mono in poly.terms:
                    for a, pos in enumerate(cont):
                        if mult * mono[pos] > degs[a]:
                            degs[a] = mult * mono[pos]

            basis_deg = [0] * len(cont)
            for blk in ident.blocks:
                wd = [0] * len(cont)
                for mono in blk.weight.terms:
                    for a, pos in enumerate(cont):
                        wd[a] = max(wd[a], mono[pos])
                bd = [0] * len(cont)
                for bpoly in blk.basis:
                    for mono in bpoly.terms:
                        for a, pos in enumerate(cont):
                            bd[a] = max(bd[a], mono[pos])
                for a in range(len(cont)):
                    degs[a] = max(degs[a], wd[a] + 2 * bd[a])
            for p in ident.expr.parts.values():
                bump_degs(p)

            axes = _grid_axes(space, cont, degs, self.ranges)
            gshape = tuple(len(ax.points) for ax in axes)

            def evaluate(poly):
                return _eval_on_grid(poly, cont, contset, axes, gshape)

            # Gram entries from factor values: the basis elements and weights
            # are single-state-monomial polynomials, so the grid value of
            # weight*b_i*b_j is the product of the factor values (no
            # cancellation); fall back to exact product evaluation otherwise.
            for bi_, blk in enumerate(ident.blocks):
                kb = block_of[(ii, bi_)]
                nbs = len(blk.basis)
                wvals = evaluate(blk.weight)
                bvals = [evaluate(bp) for bp in blk.basis]
                simple = len(wvals) == 1 and all(len(v) == 1 for v in bvals)
                for i in range(nbs):
                    for j in range(i, nbs):
                        if simple:
                            (wk, wv), = wvals.items()
                            (ik, iv), = bvals[i].items()
                            (jk, jv), = bvals[j].items()
                            skey = tuple(a + b + c for a, b, c in zip(wk, ik, jk))
                            vmaps = {skey: wv * iv * jv}
                        else:
                            vmaps = evaluate(blk.weight * blk.basis[i] * blk.basis[j])
                        for skey, flat in vmaps.items():
                            for g, v in enumerate(flat):
                                if v == 0.0:
                                    continue
                                r = con_id((ii, skey, g))
                                rr, pp, vv = coo[kb]
                                rr.append(r)
                                pp.append(i * nbs + j)
                                vv.append(v)
                                if i != j:
                                    rr.append(r)
                                    pp.append(j * nbs + i)
                                    vv.append(v)

            for dname, p in ident.expr.parts.items():
                for skey, flat in evaluate(p).items():
                    for g, v in enumerate(flat):
                        if v == 0.0:
                            continue
                        r = con_id((ii, skey, g))
                        if dname is None:
                            b_list[r] += v
                        else:
                            dj = dec_idx[dname]
                            B_rows[r][dj] = B_rows[r].get(dj, 0.0) - v

        row_keys: list = [None] * len(b_list)
        for key, r in con_index.items():
            row_keys[r] = key

        # scalar linear equations on decision symbols
        for li, (coeffs, rhs) in enumerate(self.linear_rows):
            b_list.append(rhs)
            B_rows.append({dec_idx[nm]: v for nm, v in coeffs.items()})
            row_keys.append(("linear", li))

        # sign constraints: g - n = 0 with g a 1x1 psd block
        for n, kb in nonneg_block.items():
            r = len(b_list)
            b_list.append(0.0)
            B_rows.append({dec_idx[n]: -1.0})
            row_keys.append(("sign", n))
            rr, pp, vv = coo[kb]
            rr.append(r)
            pp.append(0)
            vv.append(1.0)

        m = len(b_list)
        nf = len(decisions)
        A_flat = []
        for k, n in enumerate(dims):
            rr, pp, vv = coo[k]
            A_flat.append(
                sp.csr_matrix((vv, (rr, pp)), shape=(m, n * n))
            )
        B = np.zeros((m, nf))
        for r, row in enumerate(B_rows):
            for j, v in row.items():
                B[r, j] = v
        b = np.array(b_list)
        # pure feasibility problems get min sum-trace(X): with C = I the dual
        # slack is strictly feasible at y = 0, which keeps the interior-point
        # method on the central path (C = 0 has an empty dual interior)
        if self.objective:
            C = [np.zeros((n, n)) for n in dims]
        else:
            C = [np.eye(n) for n in dims]
        c_free = np.zeros(nf)
        for nme, v in self.objective.items():
            c_free[dec_idx[nme]] = float(v)

        # presolve: drop all-zero rows (or fail fast when b is nonzero there)
        nz = np.zeros(m, dtype=bool)
        for Ak in A_flat:
            counts = np.diff(Ak.indptr)
            nz |= counts > 0
        nz |= np.abs(B).sum(axis=1) > 0
        trivially_infeasible = bool(np.any(~nz & (np.abs(b) > 1e-12)))
        keep = np.flatnonzero(nz)
        data = SdpData(
            dims,
            [Ak[keep] for Ak in A_flat],
            B[keep],
            b[keep],
            C,
            c_free,
            trivially_infeasible=trivially_infeasible,
            feasibility=not self.objective,
        ).scaled()
        return CompiledSos(self, decisions, block_of, nonneg_block, data, keep,
                           row_keys=[row_keys[i] for i in keep])


@dataclass
class CompiledSos:
    program: SosProgram
    decisions: list[str]
    block_of: dict
    nonneg_block: dict
    data: SdpData
    kept_rows: np.ndarray
    row_keys: list | None = None  # (identity_index, state_key, grid_index) per kept row

    def solve(self, tol: float = 1e-8, max_iter: int = 100, verbose: bool = False) -> SdpSolution:
        return solve(self.data, tol=tol, max_iter=max_iter, verbose=verbose)

    def extract(self, sol: SdpSolution) -> dict:
        """Decision values and Gram blocks from a solved iterate."""
        if not sol.X:
            raise SdpError(f"no iterate to extract (status {sol.status})")
        values = {n: float(sol.f[i]) for i, n in enumerate(self.decisions)}
        grams = {}
        for ii, ident in enumerate(self.program.identities):
            blocks = []
            for bi, blk in enumerate(ident.blocks):
                blocks.append(sol.X[self.block_of[(ii, bi)]])
            grams[ident.name] = blocks
        return {"values": values, "grams": grams}

    def identity_residual(self, sol: SdpSolution) -> float:
        """Max coefficient mismatch of all identities at the returned iterate."""
        res = self.data.b - self.data.apply_A(sol.X) - (
            self.data.B @ sol.f if self.data.n_free else 0.0
        )
        return float(np.abs(res).max(initial=0.0))

    def residual_from(self, values, grams) -> float:
        """Identity residual at externally supplied decision values and Gram
        blocks (e.g. loaded from a certificate file).  The constraint data was
        compiled exactly, so this audits the algebraic identity itself rather
        than anything the solver reported."""
        X = [np.zeros((n, n)) for n in self.data.block_dims]
        for ii, ident in enumerate(self.program.identities):
            gs = grams[ident.name]
            for bi, _ in enumerate(ident.blocks):
                X[self.block_of[(ii, bi)]] = np.asarray(gs[bi], dtype=float)
        for n, kb in self.nonneg_block.items():
            X[kb][0, 0] = float(values.get(n, 0.0))
        f = np.array([float(values.get(nm, 0.0)) for nm in self.decisions])
        res = self.data.b - self.data.apply_A(X) - (
            self.data.B @ f if self.data.n_free else 0.0
        )
        return float(np.abs(res).max(initial=0.0))


# ---------------------------------------------------------------------------
# SDPA sparse export


def export_sdpa(d: SdpData, path: str, comment: str = "") -> None:
    """Write the problem in SDPA sparse format.

    The SDPA pair is  min c'x s.t. sum_i x_i F_i - F_0 >= 0  with dual
    max tr(F_0 Y) s.t. tr(F_i Y) = c_i, Y >= 0.  Our primal matches the
    SDPA dual under F_i = -A_i, c = -b, F_0 = -C; primal free variables
    are split into a diagonal block of nonnegative pairs f = f+ - f-.
    """
    nf = d.n_free
    dims = list(d.block_dims)
    sizes = [str(n) for n in dims]
    if nf:
        sizes.append(str(-2 * nf))
    fblk = len(sizes)
    m = d.n_con
    lines = []
    if comment:
        lines.append('"' + comment.replace('"', "'") + '"')
    lines.append(f"{m} = mDIM")
    lines.append(f"{len(sizes)} = nBLOCK")
    lines.append("(" + ", ".join(sizes) + ") = bLOCKsTRUCT")
    lines.append(" ".join(repr(float(-v)) for v in d.b))

    def emit(con, blk, i, j, v):
        if v != 0.0:
            lines.append(f"{con} {blk} {i} {j} {v!r}")

    for k, Ck in enumerate(d.C):
        n = d.block_dims[k]
        for i in range(n):
            for j in range(i, n):
                emit(0, k + 1, i + 1, j + 1, float(-Ck[i, j]))
    if nf:
        for j in range(nf):
            emit(0, fblk, j + 1, j + 1, float(-d.c_free[j]))
            emit(0, fblk, nf + j + 1, nf + j + 1, float(d.c_free[j]))
    for con in range(m):
        for k, Ak in enumerate(d.A_flat):
            n = d.block_dims[k]
            row = Ak.getrow(con)
            for pos, v in zip(row.indices, row.data):
                i, j = divmod(int(pos), n)
                if i > j:
                    continue
                emit(con + 1, k + 1, i + 1, j + 1, float(-v))
        if nf:
            for j in range(nf):
                v = float(d.B[con, j])
                emit(con + 1, fblk, j + 1, j + 1, -v)
                emit(con + 1, fblk, nf + j + 1, nf + j + 1, v)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
