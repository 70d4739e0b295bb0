"""Small dense semidefinite-program solver and LMI block builders.

Problems are stated in inequality form over a real decision vector x:

    minimize    c @ x
    subject to  F0[b] + sum_i x[i] * Fi[b]  PSD   for every block b,
                a_j @ x = b_j                      (optional equalities).

The solver is a primal-dual interior-point method with the HKM scaling,
Mehrotra predictor-corrector steps and a 0.98 fraction-to-boundary rule.
It only ever sees real symmetric matrices: complex LMIs are realified by the
builders below through the standard [[Re, -Im], [Im, Re]] embedding, and
complex decision scalars are encoded by the caller as real/imaginary pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidInputError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"

DEFAULT_GAP_TOL = 1e-7
DEFAULT_MAX_ITER = 100


@dataclass
class LmiBlock:
    """One affine constraint F0 + sum_i x[i] * Fi >= 0 (PSD).

    `terms` holds (variable index, coefficient matrix) pairs; matrices are
    real symmetric and share the dimension of `const`.
    """

    const: np.ndarray
    terms: list[tuple[int, np.ndarray]]


@dataclass
class SdpProblem:
    objective: np.ndarray
    blocks: list[LmiBlock]
    equalities: list[tuple[np.ndarray, float]] = field(default_factory=list)

    @property
    def num_vars(self):
        return int(np.asarray(self.objective).size)


@dataclass
class IterationRecord:
    """Per-iteration log entry with certified objective values.

    `primal_objective` is +inf until the iterate is verifiably feasible;
    `dual_objective` is -inf until a PSD dual-feasibility-corrected matrix
    certifies a lower bound.  Raw iterate values are kept alongside.
    """

    iteration: int
    primal_objective: float
    dual_objective: float
    raw_primal: float
    raw_dual: float
    mu: float
    primal_residual: float
    dual_residual: float


@dataclass
class SdpSolution:
    status: str
    x: np.ndarray
    primal_objective: float
    duality_gap: float
    iterations: int
    dual_objective: float = math.nan
    trace: list[IterationRecord] = field(default_factory=list)
    note: str = ""


def _check_symmetric(m, name):
    m = np.asarray(m)
    if np.iscomplexobj(m):
        if np.max(np.abs(m.imag)) > 1e-12 * max(1.0, np.max(np.abs(m.real))):
            raise InvalidInputError(
                f"{name} has complex entries; realify complex LMIs first")
        m = m.real
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {m.shape}")
    scale = max(1.0, np.max(np.abs(m)))
    if np.max(np.abs(m - m.T)) > 1e-9 * scale:
        raise InvalidInputError(f"{name} is not symmetric")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return 0.5 * (m + m.T)


class _Block:
    """Compact per-block data: F0, involved variable indices, stacked Fi."""

    __slots__ = ("dim", "f0", "idx", "mats", "flat", "flat_t", "scale")

    def __init__(self, block, n, label):
        self.f0 = _check_symmetric(block.const, f"{label} const")
        self.dim = self.f0.shape[0]
        by_idx = {}
        for i, mat in block.terms:
            i = int(i)
            if not 0 <= i < n:
                raise InvalidInputError(f"{label}: variable index {i} out of range")
            m = _check_symmetric(mat, f"{label} term {i}")
            if m.shape[0] != self.dim:
                raise InvalidInputError(f"{label}: term {i} dimension mismatch")
            by_idx[i] = by_idx.get(i, 0.0) + m
        self.idx = np.array(sorted(by_idx), dtype=int)
        if self.idx.size:
            self.mats = np.ascontiguousarray(
                np.stack([by_idx[i] for i in self.idx]))
        else:
            self.mats = np.zeros((0, self.dim, self.dim))
        self.scale = max(1.0, float(np.max(np.abs(self.f0))) if self.dim else 1.0,
                         float(np.max(np.abs(self.mats))) if self.idx.size else 1.0)
        self.f0 = self.f0 / self.scale
        self.mats = self.mats / self.scale
        m = self.idx.size
        self.flat = self.mats.reshape(m, -1)
        self.flat_t = np.ascontiguousarray(
            self.mats.transpose(0, 2, 1).reshape(m, -1))

    def affine(self, x):
        out = self.f0.copy()
        if self.idx.size:
            out += (x[self.idx] @ self.flat).reshape(self.dim, self.dim)
        return out


def _sym(m):
    return 0.5 * (m + m.T)


def _grouped_inv(mats):
    """Invert a list of square matrices, batching equal dimensions."""
    by_dim = {}
    for pos, m in enumerate(mats):
        by_dim.setdefault(m.shape[0], []).append(pos)
    out = [None] * len(mats)
    for positions in by_dim.values():
        inv = np.linalg.inv(np.stack([mats[p] for p in positions]))
        for p, m in zip(positions, inv):
            out[p] = m
    return out


def _max_step_grouped(s_list, d_list):
    """Largest t >= 0 with s + t*d PSD for every pair, batched over blocks of
    equal dimension.  Returns 0.0 when some s cannot be factored even with
    jitter (the solver treats that as a collapsed step)."""
    by_dim = {}
    for s, d in zip(s_list, d_list):
        by_dim.setdefault(s.shape[0], []).append((s, d))
    step = math.inf
    for dim, pairs in by_dim.items():
        s = np.stack([p[0] for p in pairs])
        d = np.stack([p[1] for p in pairs])
        try:
            ell = np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            jitter = 1e-13 * (np.abs(np.trace(s, axis1=1, axis2=2)) / dim
                              + 1.0)
            try:
                ell = np.linalg.cholesky(
                    s + jitter[:, None, None] * np.eye(dim))
            except np.linalg.LinAlgError:
                return 0.0
        w = np.linalg.solve(ell, d)
        w = np.linalg.solve(ell, w.transpose(0, 2, 1))
        w = 0.5 * (w + w.transpose(0, 2, 1))
        lam = float(np.min(np.linalg.eigvalsh(w)[:, 0]))
        if lam < -1e-14:
            step = min(step, 1.0 / (-lam))
    return step


def solve_sdp(problem, gap_tol=DEFAULT_GAP_TOL, max_iter=DEFAULT_MAX_ITER,
              feas_tol=None, keep_trace=False):
    """Solve an SdpProblem; see the module docstring for the problem form.

    Returns an SdpSolution whose status is "optimal" (feasibility within
    `feas_tol`, normalized duality gap within `gap_tol`), "infeasible"
    (certified by a dual improving ray) or "numerical-failure" (iteration
    budget exhausted without closing the gap).  The duality gap is reported
    normalized by 1 + |primal objective|.
    """
    c_raw = np.asarray(problem.objective, dtype=float).ravel()
    if not np.all(np.isfinite(c_raw)):
        raise InvalidInputError("objective contains NaN or Inf")
    n = c_raw.size
    if feas_tol is None:
        feas_tol = max(gap_tol, 1e-12)
    if not problem.blocks:
        raise InvalidInputError("problem has no LMI blocks")

    blocks = [_Block(b, n, f"block {k}") for k, b in enumerate(problem.blocks)]
    cscale = max(1.0, float(np.max(np.abs(c_raw))) if n else 1.0)
    c = c_raw / cscale

    neq = len(problem.equalities)
    if neq:
        amat = np.zeros((neq, n))
        rhs = np.zeros(neq)
        for j, (a_j, b_j) in enumerate(problem.equalities):
            a_j = np.asarray(a_j, dtype=float).ravel()
            if a_j.size != n:
                raise InvalidInputError(f"equality {j}: coefficient length mismatch")
            es = max(1.0, np.max(np.abs(a_j)), abs(float(b_j)))
            amat[j] = a_j / es
            rhs[j] = float(b_j) / es
    else:
        amat = np.zeros((0, n))
        rhs = np.zeros(0)

    total_dim = sum(b.dim for b in blocks)
    x = np.zeros(n)
    nu = np.zeros(neq)
    z_list, y_list = [], []
    for b in blocks:
        z0 = 1.0 + (float(np.max(np.abs(np.linalg.eigvalsh(b.f0)))) if b.dim else 0.0)
        z_list.append(z0 * np.eye(b.dim))
        y_list.append((1.0 + float(np.max(np.abs(c))) if n else 1.0) * np.eye(b.dim))

    gram_chol = None  # lazy; only needed for certified dual bounds

    def certified_bounds(fx_list, rd):
        nonlocal gram_chol
        pcert = math.inf
        ecert = np.max(np.abs(rhs - amat @ x)) if neq else 0.0
        feas = ecert <= 1e-12 * (1.0 + (np.max(np.abs(rhs)) if neq else 0.0))
        for b, fx in zip(blocks, fx_list):
            if b.dim and np.linalg.eigvalsh(fx)[0] < -1e-12 * (1.0 + np.max(np.abs(b.f0))):
                feas = False
                break
        if feas:
            pcert = cscale * float(c @ x)
        dcert = -math.inf
        if np.max(np.abs(rd), initial=0.0) < 1e-5:
            if gram_chol is None:
                gram = np.zeros((n, n))
                for b in blocks:
                    if b.idx.size:
                        fv = b.mats.reshape(b.idx.size, -1)
                        gram[np.ix_(b.idx, b.idx)] += fv @ fv.T
                try:
                    gram_chol = np.linalg.cholesky(gram + 1e-12 * np.eye(n))
                except np.linalg.LinAlgError:
                    gram_chol = False
            if gram_chol is not False:
                delta = np.linalg.solve(
                    gram_chol.T, np.linalg.solve(gram_chol, rd))
                ok = True
                bound = float(rhs @ nu) if neq else 0.0
                for b, y in zip(blocks, y_list):
                    yc = y.copy()
                    if b.idx.size:
                        yc += np.tensordot(delta[b.idx], b.mats, axes=(0, 0))
                    if b.dim and np.linalg.eigvalsh(yc)[0] < -1e-12 * (
                            1.0 + np.max(np.abs(yc))):
                        ok = False
                        break
                    bound -= float(np.tensordot(b.f0, yc))
                if ok:
                    dcert = cscale * bound
        return pcert, dcert

    status = NUMERICAL_FAILURE
    note = ""
    iters_done = 0
    trace = []
    gap_rep = math.inf
    pobj = math.nan

    for it in range(1, max_iter + 1):
        iters_done = it
        fx_list = [b.affine(x) for b in blocks]
        rp_list = [fx - z for fx, z in zip(fx_list, z_list)]
        g_dual = np.zeros(n)
        for b, y in zip(blocks, y_list):
            if b.idx.size:
                g_dual[b.idx] += b.flat @ y.ravel()
        rd = c - g_dual - (amat.T @ nu if neq else 0.0)
        re = rhs - amat @ x if neq else np.zeros(0)

        gap = sum(float(z.ravel() @ y.ravel())
                  for z, y in zip(z_list, y_list))
        mu = gap / max(total_dim, 1)
        pobj = cscale * float(c @ x)
        dobj_raw = cscale * (
            -sum(float(b.f0.ravel() @ y.ravel())
                 for b, y in zip(blocks, y_list))
            + (float(rhs @ nu) if neq else 0.0))
        gap_rep = cscale * gap / (1.0 + abs(pobj))

        perr = max((np.max(np.abs(rp)) / (1.0 + np.max(np.abs(b.f0)))
                    for b, rp in zip(blocks, rp_list)), default=0.0)
        eerr = float(np.max(np.abs(re))) if neq else 0.0
        derr = float(np.max(np.abs(rd))) / (1.0 + float(np.max(np.abs(c))) if n else 1.0)

        if keep_trace:
            pc, dc = certified_bounds(fx_list, rd)
            trace.append(IterationRecord(it, pc, dc, pobj, dobj_raw, mu,
                                         max(perr, eerr), derr))

        if perr <= feas_tol and eerr <= feas_tol and derr <= feas_tol \
                and gap_rep <= gap_tol:
            status = OPTIMAL
            break

        # Farkas-style certificate: a PSD dual ray annihilating every Fi with
        # a positive objective direction proves primal infeasibility.
        tau = sum(float(np.trace(y)) for y in y_list) + float(np.sum(np.abs(nu)))
        if it >= 3 and tau > 0:
            ray_feas = float(np.max(np.abs(g_dual + (amat.T @ nu if neq else 0.0)))) / tau
            ray_obj = (-sum(float(np.tensordot(b.f0, y))
                            for b, y in zip(blocks, y_list))
                       + (float(rhs @ nu) if neq else 0.0)) / tau
            if ray_feas <= 1e-7 * (1.0 + float(np.max(np.abs(c))) if n else 1.0) \
                    and ray_obj > 1e-7:
                status = INFEASIBLE
                note = "dual improving ray found"
                break

        # Schur complement assembly for the symmetrized HKM direction.
        try:
            zinv_list = _grouped_inv(z_list)
            m_mat = np.zeros((n, n))
            h_vec = np.zeros(n)
            sp_vec = np.zeros(n)
            for b, zinv, y, rp in zip(blocks, zinv_list, y_list, rp_list):
                if not b.idx.size:
                    continue
                g = np.matmul(np.matmul(zinv, b.mats), y)
                gv = g.transpose(0, 2, 1).reshape(b.idx.size, -1)
                m_raw = b.flat @ gv.T
                m_mat[np.ix_(b.idx, b.idx)] += 0.5 * (m_raw + m_raw.T)
                h_vec[b.idx] += b.flat @ zinv.ravel()
                sp_vec[b.idx] += b.flat_t @ (zinv @ rp @ y).ravel()

            def kkt_solve(rhs1):
                ridge = 0.0
                for _ in range(4):
                    try:
                        if neq:
                            kk = np.zeros((n + neq, n + neq))
                            kk[:n, :n] = m_mat + ridge * np.eye(n)
                            kk[:n, n:] = -amat.T
                            kk[n:, :n] = amat
                            kk[n:, n:] = -1e-13 * np.eye(neq)
                            sol = np.linalg.solve(kk,
                                                  np.concatenate([rhs1, re]))
                            return sol[:n], sol[n:]
                        ell = np.linalg.cholesky(m_mat + ridge * np.eye(n))
                        half = np.linalg.solve(ell, rhs1)
                        return np.linalg.solve(ell.T, half), np.zeros(0)
                    except np.linalg.LinAlgError:
                        ridge = max(ridge * 100.0,
                                    1e-12 * (np.trace(m_mat) / max(n, 1) + 1.0))
                raise np.linalg.LinAlgError("KKT system not factorizable")

            def direction(mu_t, sk_vec, k_list):
                dx, w = kkt_solve(mu_t * h_vec - sp_vec - sk_vec - c)
                dz_list, dy_list = [], []
                for b, zinv, y, rp, k in zip(blocks, zinv_list, y_list,
                                             rp_list,
                                             k_list or [None] * len(blocks)):
                    dz = rp.copy()
                    if b.idx.size:
                        dz = dz + (dx[b.idx] @ b.flat).reshape(b.dim, b.dim)
                    inner = dz @ y if k is None else dz @ y + k
                    dy = _sym(mu_t * zinv - zinv @ inner) - y
                    dz_list.append(dz)
                    dy_list.append(dy)
                return dx, w, dz_list, dy_list

            dxa, wa, dza, dya = direction(0.0, np.zeros(n), None)
            ap_aff = min(1.0, _max_step_grouped(z_list, dza))
            ad_aff = min(1.0, _max_step_grouped(y_list, dya))
            gap_aff = sum(float((z + ap_aff * dz).ravel()
                                @ (y + ad_aff * dy).ravel())
                          for z, dz, y, dy in zip(z_list, dza, y_list, dya))
            mu_aff = max(gap_aff / max(total_dim, 1), 0.0)
            sigma = min(max((mu_aff / mu) ** 3 if mu > 0 else 0.0, 1e-8), 0.99)

            k_list = [dz @ dy for dz, dy in zip(dza, dya)]
            sk_vec = np.zeros(n)
            for b, zinv, k in zip(blocks, zinv_list, k_list):
                if b.idx.size:
                    sk_vec[b.idx] += b.flat_t @ (zinv @ k).ravel()
            dx, w, dz_list, dy_list = direction(sigma * mu, sk_vec, k_list)

            ap = min(1.0, 0.98 * _max_step_grouped(z_list, dz_list))
            ad = min(1.0, 0.98 * _max_step_grouped(y_list, dy_list))
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            note = "Newton system factorization failed"
            break
        if ap < 1e-12 and ad < 1e-12:
            note = "step length collapsed"
            break
        x = x + ap * dx
        if neq:
            nu = nu + ad * (w - nu)
        z_list = [_sym(z + ap * dz) for z, dz in zip(z_list, dz_list)]
        y_list = [_sym(y + ad * dy) for y, dy in zip(y_list, dy_list)]

    if status == NUMERICAL_FAILURE and not note:
        note = "iteration budget exhausted before gap closure"
    dobj = cscale * (
        -sum(float(np.tensordot(b.f0, y)) for b, y in zip(blocks, y_list))
        + (float(rhs @ nu) if neq else 0.0))
    return SdpSolution(
        status=status,
        x=x.copy(),
        primal_objective=pobj if status == OPTIMAL else (math.nan if status == INFEASIBLE else pobj),
        duality_gap=gap_rep,
        iterations=iters_done,
        dual_objective=dobj,
        trace=trace,
        note=note,
    )


# ---------------------------------------------------------------------------
# Builders: complex LMIs -> real symmetric blocks


def real_embedding(h):
    """Realify a complex Hermitian matrix as [[Re, -Im], [Im, Re]].

    The embedding is symmetric and PSD exactly when the input is PSD.
    """
    h = np.asarray(h, dtype=complex)
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])


def hermitian_lmi(const, terms):
    """Realified block for a complex Hermitian affine LMI.

    `const` and each term matrix are complex Hermitian; `terms` is a list of
    (variable index, matrix) pairs.
    """
    return LmiBlock(real_embedding(const),
                    [(i, real_embedding(m)) for i, m in terms])


def schur_lmi(quad_factor, complex_vars, rhs_const=0.0, rhs_coeffs=None):
    """Encode the quadratic constraint ||quad_factor @ z||^2 <= s(x) as a
    realified PSD block via the Schur complement.

    quad_factor : complex (r, m) matrix applied to the complex sub-vector z.
    complex_vars : (re_idx, im_idx), the real decision indices holding the
        real and imaginary parts of z (each of length m).
    rhs_const, rhs_coeffs : the affine right-hand side s(x) = rhs_const +
        sum rhs_coeffs[i] * x[i] (rhs_coeffs maps real indices to floats).

    The block is PSD exactly when the quadratic constraint holds.
    """
    phi = np.asarray(quad_factor, dtype=complex)
    if phi.ndim != 2:
        raise InvalidInputError("quad_factor must be 2-D")
    r, m = phi.shape
    re_idx, im_idx = complex_vars
    re_idx = [int(i) for i in re_idx]
    im_idx = [int(i) for i in im_idx]
    if len(re_idx) != m or len(im_idx) != m:
        raise InvalidInputError(
            f"quad_factor has {m} columns but the complex variable map has "
            f"{len(re_idx)}/{len(im_idx)} entries")
    rhs_coeffs = dict(rhs_coeffs or {})

    dim = r + 1
    const = np.zeros((dim, dim), dtype=complex)
    const[:r, :r] = np.eye(r)
    const[r, r] = rhs_const

    contrib = {}

    def add(i, mat):
        if i in contrib:
            contrib[i] = contrib[i] + mat
        else:
            contrib[i] = mat

    for j in range(m):
        col = phi[:, j]
        if np.any(col):
            mat_re = np.zeros((dim, dim), dtype=complex)
            mat_re[:r, r] = col
            mat_re[r, :r] = col.conj()
            add(re_idx[j], mat_re)
            mat_im = np.zeros((dim, dim), dtype=complex)
            mat_im[:r, r] = 1j * col
            mat_im[r, :r] = (1j * col).conj()
            add(im_idx[j], mat_im)
    for i, coeff in rhs_coeffs.items():
        mat = np.zeros((dim, dim), dtype=complex)
        mat[r, r] = coeff
        add(int(i), mat)
    return hermitian_lmi(const, sorted(contrib.items()))


class HermitianVariable:
    """A d x d complex Hermitian decision matrix packed into real scalars.

    The packing is: d diagonal (real) entries first, then for every upper
    off-diagonal entry (row-major) its real and imaginary part.
    """

    def __init__(self, dim, offset):
        self.dim = int(dim)
        self.offset = int(offset)
        self.num_vars = self.dim * self.dim

    @property
    def diag_indices(self):
        return list(range(self.offset, self.offset + self.dim))

    def basis(self):
        """Yield (real variable index, complex Hermitian basis matrix)."""
        d = self.dim
        pos = self.offset
        for k in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[k, k] = 1.0
            yield pos, e
            pos += 1
        for k in range(d):
            for l in range(k + 1, d):
                e = np.zeros((d, d), dtype=complex)
                e[k, l] = 1.0
                e[l, k] = 1.0
                yield pos, e
                pos += 1
                e = np.zeros((d, d), dtype=complex)
                e[k, l] = 1j
                e[l, k] = -1j
                yield pos, e
                pos += 1

    def extract(self, x):
        """Reassemble the Hermitian matrix from the solution vector."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for i, e in self.basis():
            out += float(x[i]) * e
        return out


# ---------------------------------------------------------------------------
# Plain-text dump for external cross-checking


def dump_sdpa(problem):
    """Serialize a problem in a sparse SDPA-like plain-text format.

    Layout: a line with the variable count, a line with the number of blocks,
    a line of block dimensions, a line with the objective vector, then one
    line per nonzero upper-triangle entry: "mat block i j value" where mat 0
    is the constant matrix F0 and mat k >= 1 the coefficient of x_k; block,
    i and j are 1-based.
    """
    c = np.asarray(problem.objective, dtype=float).ravel()
    lines = [str(c.size), str(len(problem.blocks)),
             " ".join(str(np.asarray(b.const).shape[0]) for b in problem.blocks),
             " ".join(f"{v:.17g}" for v in c)]

    def emit(mat_no, blk_no, m):
        m = np.asarray(m, dtype=float)
        for i in range(m.shape[0]):
            for j in range(i, m.shape[1]):
                if m[i, j] != 0.0:
                    lines.append(f"{mat_no} {blk_no} {i + 1} {j + 1} {m[i, j]:.17g}")

    for bno, block in enumerate(problem.blocks, start=1):
        emit(0, bno, block.const)
        for i, mat in block.terms:
            emit(int(i) + 1, bno, mat)
    return "\n".join(lines) + "\n"


def write_sdpa(problem, path):
    """Write the dump_sdpa serialization to `path`."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dump_sdpa(problem))
