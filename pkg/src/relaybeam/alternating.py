"""Building blocks shared by the downlink and uplink alternating designs:
the MMSE equalizer step, the relay forwarding step with its power-multiplier
bisection, diagonal water-filling, and the quadratic precoder subproblem in
SDP form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalFailureError
from .linalg import herm, hermitianize, hermitian_eig, hermitian_sqrt
from .sdp import SdpProblem, schur_lmi, solve_sdp

# Solver settings for inner precoder subproblems; tight enough that the
# monotonicity guard in the outer loops almost never engages.  On a numerical
# failure the step is retried once at the relaxed tolerance.
STEP_GAP_TOL = 1e-8
STEP_GAP_TOL_RELAXED = 1e-6
STEP_MAX_ITER = 100

MULTIPLIER_RTOL = 1e-9
MAX_HALVINGS = 200


@dataclass
class IterationTrace:
    """Objective values recorded across an alternating design run.

    mse_per_iteration[0] is the initialization; one entry follows per
    completed iteration.  relaxation_gap is populated only by the uplink
    covariance design in the rank-relaxed regime.
    """

    mse_per_iteration: list
    iterations: int
    converged: bool
    note: str = ""
    relaxation_gap: list = field(default_factory=list)


def scaled_identity(rows, cols, power):
    """Truncated identity scaled so the squared Frobenius norm equals power."""
    mat = np.eye(rows, cols, dtype=complex)
    return mat * np.sqrt(power / min(rows, cols))


def mmse_equalizers(forwarding, input_map, input_cov, hop2_list, dest_covs,
                    stream_counts):
    """Per-user linear MMSE equalizers for a relay chain.

    The destination k receives hop2_list[k] @ forwarding @ (input_map @ s +
    relay noise) + local noise, where the relay input has covariance
    input_cov; stream_counts give each user's column block of input_map.
    """
    offsets = np.cumsum([0] + list(stream_counts))
    outs = []
    for k, (h2, rv) in enumerate(zip(hop2_list, dest_covs)):
        m = h2 @ forwarding
        cols = input_map[:, offsets[k]:offsets[k + 1]]
        cross = herm(m @ cols)
        cov = hermitianize(m @ input_cov @ herm(m) + rv)
        try:
            outs.append(np.linalg.solve(cov.conj().T, cross.conj().T).conj().T)
        except np.linalg.LinAlgError as exc:
            raise InvalidInputError(
                f"equalizer covariance for user {k} is singular") from exc
    return outs


def forwarding_for_multiplier(lam, gram, target, input_cov, regularize=False):
    """Relay transform (gram + lam I)^{-1} target input_cov^{-1} and its
    transmit power trace(W input_cov W^H)."""
    n = gram.shape[0]
    if not np.any(target):
        return np.zeros_like(target), 0.0
    lam_eff = float(lam)
    if lam_eff == 0.0 and regularize:
        lam_eff = 1e-12 * float(np.trace(gram).real) / n
    lhs = gram + lam_eff * np.eye(n)
    try:
        w = np.linalg.solve(lhs, target)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(
            "singular system at lambda=0; retry with a small positive lambda"
        ) from exc
    w = np.linalg.solve(input_cov.conj().T, w.conj().T).conj().T
    if not np.all(np.isfinite(w)):
        raise NumericalFailureError(
            "singular system at lambda=0; retry with a small positive lambda")
    power = float(np.trace(w @ input_cov @ herm(w)).real)
    return w, power


def relay_kkt_step(equalizer, hop2, input_map, input_cov, p_relay):
    """Forwarding matrix from the KKT conditions of the relay subproblem.

    Minimizes the MSE given the equalizer under trace(W R W^H) <= p_relay.
    Returns (W, lambda, power, lambda_bound).  The multiplier is zero when
    the unconstrained optimum already meets the budget, otherwise it solves
    power(lambda) = p_relay by bisection inside the provable bracket
    [0, sqrt(trace(E R^{-1} E^H) / p_relay)].
    """
    gram = hermitianize(herm(hop2) @ herm(equalizer) @ equalizer @ hop2)
    target = herm(input_map @ equalizer @ hop2)
    if not np.any(target):
        return np.zeros((gram.shape[0], input_cov.shape[0]), dtype=complex), \
            0.0, 0.0, 0.0

    e_rinv = np.linalg.solve(input_cov.conj().T, target.conj().T).conj().T
    lam_max = float(np.sqrt(max(np.trace(e_rinv @ herm(target)).real, 0.0)
                            / p_relay))

    w0, f0 = forwarding_for_multiplier(0.0, gram, target, input_cov,
                                       regularize=True)
    if f0 <= p_relay * (1.0 + 1e-12):
        return w0, 0.0, f0, lam_max

    w_hi, f_hi = forwarding_for_multiplier(lam_max, gram, target, input_cov)
    if f_hi > p_relay * (1.0 + 1e-9):
        raise NumericalFailureError(
            f"relay multiplier bracket failed: f({lam_max:.6g}) = {f_hi:.6g} "
            f"> budget {p_relay:.6g}")

    lo, hi = 0.0, lam_max
    w, lam, f_val = w_hi, lam_max, f_hi  # feasible side, power <= budget
    for _ in range(MAX_HALVINGS):
        mid = 0.5 * (lo + hi)
        w_mid, f_mid = forwarding_for_multiplier(mid, gram, target, input_cov,
                                                 regularize=True)
        if f_mid > p_relay:
            lo = mid
        else:
            hi = mid
            w, lam, f_val = w_mid, mid, f_mid
        resid = abs(f_mid - p_relay)
        if resid <= MULTIPLIER_RTOL * p_relay and \
                mid * resid <= 1e-7 * p_relay:
            w, lam, f_val = w_mid, mid, f_mid
            break
    if abs(f_val - p_relay) > 1e-8 * p_relay:
        raise NumericalFailureError(
            f"relay multiplier bisection stalled: residual "
            f"{abs(f_val - p_relay) / p_relay:.3e} relative")
    return w, lam, f_val, lam_max


def waterfill_diag(signal_gains, channel_gains, budget,
                   rel_floor=1e-12, rtol=1e-10):
    """Water-filling over diagonal modes.

    Minimizes sum_i signal_gains[i] / (1 + channel_gains[i] * p_i) subject to
    sum p_i <= budget, p >= 0.  Modes with negligible signal gain (below
    rel_floor of the largest) or non-positive channel gain get no power.
    Returns (allocation, water price mu); mu is +inf when nothing is
    allocated, and otherwise makes the allocation sum exactly to the budget.
    """
    theta = np.asarray(signal_gains, dtype=float)
    m = np.asarray(channel_gains, dtype=float)
    if theta.shape != m.shape:
        raise InvalidInputError("gain vectors must have equal length")
    p = np.zeros_like(theta)
    if theta.size == 0 or budget <= 0:
        return p, np.inf
    theta_max = float(np.max(theta))
    active = (theta > rel_floor * max(theta_max, 0.0)) & (m > 1e-14 * max(np.max(m), 1.0))
    if not np.any(active) or theta_max <= 0.0:
        return p, np.inf
    th, mm = theta[active], m[active]

    def alloc(mu):
        return np.maximum(np.sqrt(th / mm) / np.sqrt(mu) - 1.0 / mm, 0.0)

    mu_hi = float(np.max(th * mm)) * (1.0 + 1e-12)
    mu_lo = mu_hi
    while np.sum(alloc(mu_lo)) < budget:
        mu_lo /= 4.0
        if mu_lo < 1e-300:
            break
    for _ in range(300):
        mu_mid = np.sqrt(mu_lo * mu_hi)
        total = float(np.sum(alloc(mu_mid)))
        if total > budget:
            mu_lo = mu_mid
        else:
            mu_hi = mu_mid
        if abs(total - budget) <= rtol * budget:
            break
    mu = mu_mid
    a = alloc(mu)
    # exact budget: rescale the strictly positive allocation
    pos = a > 0
    if np.any(pos):
        a[pos] += (budget - np.sum(a)) / np.count_nonzero(pos)
        a = np.maximum(a, 0.0)
        a *= budget / np.sum(a)
    p[active] = a
    return p, float(mu)


@dataclass
class EigenmodeAllocation:
    """Output of paired eigen-mode water-filling: the top-mode bases of the
    channel and signal grams, the per-mode power and the water price."""

    channel_basis: np.ndarray  # top n_modes eigenvectors of the channel gram
    signal_basis: np.ndarray   # top n_modes eigenvectors of the signal gram
    allocation: np.ndarray
    mu: float

    def transform(self):
        """channel_basis diag(sqrt(p)) signal_basis^H (used for the relay)."""
        return (self.channel_basis * np.sqrt(self.allocation)) \
            @ herm(self.signal_basis)

    def precoder(self):
        """channel_basis diag(sqrt(p)), no right factor (used at a source)."""
        return self.channel_basis * np.sqrt(self.allocation)


def eigenmode_waterfill(signal_gram, channel_gram, n_modes, budget):
    """Water-filling for trace(Theta (X^H M X + I)^{-1}) minimization under
    trace(X X^H) <= budget, over the paired descending eigenvalues of the
    Hermitian PSD signal gram (Theta) and channel gram (M)."""
    e_t = hermitian_eig(signal_gram, name="signal gram")
    e_m = hermitian_eig(channel_gram, name="channel gram")
    if n_modes > min(e_t.values.size, e_m.values.size):
        raise InvalidInputError("requested more modes than available")
    theta = e_t.values[:n_modes]
    m = e_m.values[:n_modes]
    p, mu = waterfill_diag(theta, m, budget)
    return EigenmodeAllocation(e_m.vectors[:, :n_modes].copy(),
                               e_t.vectors[:, :n_modes].copy(), p, mu)


def point_to_point_precoder(channel, noise_cov, n_streams, power):
    """MMSE precoder for a single noisy hop: power-constrained water-filling
    over the eigenmodes of H^H R^{-1} H (unit signal gains)."""
    gram = hermitianize(herm(channel) @ np.linalg.solve(noise_cov, channel))
    e = hermitian_eig(gram, name="channel gram")
    if n_streams > e.values.size:
        raise InvalidInputError("more streams than transmit dimensions")
    p, _ = waterfill_diag(np.ones(n_streams), e.values[:n_streams], power)
    return e.vectors[:, :n_streams] * np.sqrt(p)


# ---------------------------------------------------------------------------
# Quadratic precoder subproblem as an SDP


@dataclass
class PrecoderSubproblem:
    """SDP encoding of: minimize trace(T^H A0 T) + 2 Re trace(B0^H T) over the
    free blocks of T, under per-block power limits and optionally a second
    quadratic constraint trace(T^H A2 T) + c2 <= 0.

    Decision vector: (epigraph scalar t, Re of free entries, Im of free
    entries), free entries taken column-major inside each block.
    """

    problem: SdpProblem
    shape: tuple
    blocks: list  # (row offset, col offset, rows, cols)
    num_complex: int

    def extract(self, x):
        m = self.num_complex
        z = np.asarray(x[1:1 + m]) + 1j * np.asarray(x[1 + m:1 + 2 * m])
        full = np.zeros(self.shape, dtype=complex)
        pos = 0
        for r0, c0, rows, cols in self.blocks:
            blk = z[pos:pos + rows * cols].reshape((rows, cols), order="F")
            full[r0:r0 + rows, c0:c0 + cols] = blk
            pos += rows * cols
        return full


def _free_factor(a_half, shape, blocks, num_complex):
    """Columns of (I_C kron A^{1/2}) restricted to the free entries."""
    rows_full, cols_full = shape
    phi = np.zeros((rows_full * cols_full, num_complex), dtype=complex)
    pos = 0
    for r0, c0, rows, cols in blocks:
        for j in range(cols):
            col_full = c0 + j
            base = col_full * rows_full
            for i in range(rows):
                phi[base:base + rows_full, pos] = a_half[:, r0 + i]
                pos += 1
    return phi


def build_precoder_subproblem(a0, b0, shape, blocks, budgets,
                              a2=None, c2=None):
    """Assemble the PrecoderSubproblem SDP.

    a0, a2: Hermitian PSD quadratic forms on the full matrix; b0: full-shape
    linear term matrix (objective's 2 Re trace(b0^H T)); budgets: one power
    limit per free block.
    """
    rows_full, cols_full = shape
    num_complex = sum(r * c for _, _, r, c in blocks)
    n = 1 + 2 * num_complex
    re_idx = list(range(1, 1 + num_complex))
    im_idx = list(range(1 + num_complex, 1 + 2 * num_complex))

    a0_half = hermitian_sqrt(hermitianize(a0), name="objective quadratic form")
    phi0 = _free_factor(a0_half, shape, blocks, num_complex)

    # linear objective coefficients from b0, restricted to free entries
    b_free = []
    for r0, c0, r, c in blocks:
        b_free.extend(np.asarray(b0)[r0:r0 + r, c0:c0 + c].flatten(order="F"))
    b_free = np.asarray(b_free, dtype=complex)
    coeffs = {0: 1.0}
    for q, b_q in enumerate(b_free):
        if b_q.real:
            coeffs[re_idx[q]] = -2.0 * b_q.real
        if b_q.imag:
            coeffs[im_idx[q]] = -2.0 * b_q.imag

    lmi_blocks = [schur_lmi(phi0, (re_idx, im_idx), 0.0, coeffs)]

    pos = 0
    for (r0, c0, r, c), budget in zip(blocks, budgets):
        mloc = r * c
        sel = np.zeros((mloc, num_complex))
        sel[:, pos:pos + mloc] = np.eye(mloc)
        lmi_blocks.append(schur_lmi(sel, (re_idx, im_idx), float(budget)))
        pos += mloc

    if a2 is not None:
        a2_half = hermitian_sqrt(hermitianize(a2), name="power quadratic form")
        phi2 = _free_factor(a2_half, shape, blocks, num_complex)
        lmi_blocks.append(schur_lmi(phi2, (re_idx, im_idx), -float(c2)))

    cvec = np.zeros(n)
    cvec[0] = 1.0
    return PrecoderSubproblem(SdpProblem(cvec, lmi_blocks), shape,
                              list(blocks), num_complex)


def solve_precoder_subproblem(sub, budgets=None, gap_tol=STEP_GAP_TOL,
                              max_iter=STEP_MAX_ITER):
    """Solve the subproblem and extract the precoder; raises on failure.

    When budgets are given, blocks that overshoot their power limit by
    round-off are rescaled onto the boundary.
    """
    sol = solve_sdp(sub.problem, gap_tol=gap_tol, max_iter=max_iter)
    if sol.status == "numerical-failure" and gap_tol < STEP_GAP_TOL_RELAXED:
        sol = solve_sdp(sub.problem, gap_tol=STEP_GAP_TOL_RELAXED,
                        max_iter=max_iter)
    if sol.status != "optimal":
        raise NumericalFailureError(
            f"precoder subproblem ended with status {sol.status}: {sol.note}")
    t = sub.extract(sol.x)
    if budgets is not None:
        for (r0, c0, r, c), budget in zip(sub.blocks, budgets):
            blk = t[r0:r0 + r, c0:c0 + c]
            used = float(np.sum(np.abs(blk) ** 2))
            if used > budget:
                t[r0:r0 + r, c0:c0 + c] = blk * np.sqrt(budget / used)
    return t, sol
