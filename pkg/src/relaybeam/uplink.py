"""Uplink designs: the general alternating equalizer/forwarding/precoder
loop, and the covariance-based design for fully loaded or overloaded systems
(closed-form eigen-mode forwarding matrix plus a covariance SDP, exact when
no user has more antennas than streams and a rank relaxation otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alternating import (IterationTrace, build_precoder_subproblem,
                          eigenmode_waterfill, relay_kkt_step,
                          scaled_identity, solve_precoder_subproblem,
                          waterfill_diag)
from .channel import UPLINK
from .errors import InvalidInputError, NumericalFailureError
from .linalg import (block_diag, herm, hermitian_eig, hermitian_inv_sqrt,
                     hermitian_sqrt, hermitianize)
from .sdp import (HermitianVariable, LmiBlock, SdpProblem, hermitian_lmi,
                  real_embedding, solve_sdp)


@dataclass
class UplinkDesign:
    """Designed uplink triple plus relay-step bookkeeping."""

    precoders: list                 # per user, (N_M_k, L_k)
    forwarding: np.ndarray          # (N_R, N_R)
    equalizer: np.ndarray           # (L, N_B)
    relay_multiplier: float = 0.0
    relay_step_power: float = 0.0
    relay_multiplier_bound: float = 0.0
    covariances: list = None        # Q_k from the covariance design, if used
    metadata: dict = field(default_factory=dict)

    def precoder_block(self):
        return block_diag(*self.precoders)


@dataclass
class PrecoderCovariances:
    """Per-user transmit covariances Q_k = P_k P_k^H."""

    matrices: list


def _check_direction(channels):
    if channels.dims.direction != UPLINK:
        raise InvalidInputError("uplink design requires uplink channels")


def relay_input_covariance(precoders, channels, noise):
    """Covariance of the relay's received vector (Hermitian form)."""
    h = channels.users_to_relay_stacked()
    p = block_diag(*precoders)
    return hermitianize(h @ p @ herm(p) @ herm(h) + noise.relay_cov)


def uplink_mse(equalizer, forwarding, precoders, channels, noise):
    """Total MSE of the detected uplink streams."""
    _check_direction(channels)
    p = block_diag(*precoders)
    h1 = channels.users_to_relay_stacked()
    h2 = channels.relay_to_base
    r_x = relay_input_covariance(precoders, channels, noise)
    m = h2 @ forwarding
    cross = equalizer @ m @ h1 @ p
    quad = equalizer @ (m @ r_x @ herm(m) + noise.destination_cov) \
        @ herm(equalizer)
    ell = channels.dims.total_streams
    return float((np.trace(quad) - 2 * np.trace(cross).real).real) + ell


def mmse_equalizer(forwarding, precoders, channels, noise):
    """MMSE equalizer at the base station for fixed precoders/forwarding."""
    _check_direction(channels)
    p = block_diag(*precoders)
    h1 = channels.users_to_relay_stacked()
    m = channels.relay_to_base @ forwarding
    r_x = relay_input_covariance(precoders, channels, noise)
    cross = herm(m @ h1 @ p)
    cov = hermitianize(m @ r_x @ herm(m) + noise.destination_cov)
    try:
        return np.linalg.solve(cov.conj().T, cross.conj().T).conj().T
    except np.linalg.LinAlgError as exc:
        raise InvalidInputError("equalizer covariance is singular") from exc


def mse_given_forwarding(forwarding, precoders, channels, noise):
    """Sum MSE with the MMSE equalizer substituted in closed form."""
    _check_direction(channels)
    p = block_diag(*precoders)
    h1 = channels.users_to_relay_stacked()
    m = channels.relay_to_base @ forwarding
    r_x = relay_input_covariance(precoders, channels, noise)
    z = m @ h1 @ p
    cov = hermitianize(m @ r_x @ herm(m) + noise.destination_cov)
    val = np.trace(herm(z) @ np.linalg.solve(cov, z)).real
    return float(channels.dims.total_streams - val)


def whitened_input_covariance(precoders, channels, noise):
    """Noise-whitened received-signal covariance at the relay; Hermitian and
    at least the identity."""
    _check_direction(channels)
    rn_isqrt = hermitian_inv_sqrt(noise.relay_cov, name="relay noise cov")
    h1 = channels.users_to_relay_stacked()
    p = block_diag(*precoders)
    a = rn_isqrt @ h1 @ p
    return hermitianize(a @ herm(a) + np.eye(a.shape[0]))


def whitened_mse(f_tilde, precoders, channels, noise):
    """Sum MSE as a function of the whitened forwarding matrix and precoders
    (two inverse-form terms; equals the closed-form MSE exactly)."""
    _check_direction(channels)
    rn_isqrt = hermitian_inv_sqrt(noise.relay_cov, name="relay noise cov")
    h1 = channels.users_to_relay_stacked()
    p = block_diag(*precoders)
    a = rn_isqrt @ h1 @ p
    xi = hermitianize(a @ herm(a) + np.eye(a.shape[0]))
    y = hermitian_inv_sqrt(xi) @ a
    theta = hermitianize(y @ herm(y))
    h2 = channels.relay_to_base
    m_gram = hermitianize(herm(h2) @ np.linalg.solve(noise.destination_cov,
                                                     h2))
    inner = hermitianize(herm(f_tilde) @ m_gram @ f_tilde
                         + np.eye(f_tilde.shape[1]))
    first = np.trace(theta @ np.linalg.inv(inner)).real
    second = np.trace(np.linalg.inv(
        hermitianize(herm(a) @ a + np.eye(a.shape[1])))).real
    return float(first + second)


def waterfill_forwarding(precoders, channels, noise, p_relay):
    """Closed-form relay transform for fixed precoders.

    Diagonalizes the whitened signal gram and the second-hop channel gram,
    water-fills the top-L paired modes to exactly the relay budget, and maps
    back.  Returns (whitened transform, forwarding matrix, water price).
    """
    _check_direction(channels)
    dims = channels.dims
    ell = dims.total_streams
    if ell > min(dims.n_base, dims.n_relay):
        raise InvalidInputError("stream count exceeds the second-hop rank bound")
    rn_isqrt = hermitian_inv_sqrt(noise.relay_cov, name="relay noise cov")
    h1 = channels.users_to_relay_stacked()
    p = block_diag(*precoders)
    a = rn_isqrt @ h1 @ p
    xi = hermitianize(a @ herm(a) + np.eye(dims.n_relay))
    xi_isqrt = hermitian_inv_sqrt(xi)
    y = xi_isqrt @ a
    theta = hermitianize(y @ herm(y))
    h2 = channels.relay_to_base
    m_gram = hermitianize(herm(h2) @ np.linalg.solve(noise.destination_cov, h2))
    alloc = eigenmode_waterfill(theta, m_gram, ell, p_relay)
    f_tilde = alloc.transform()
    forwarding = f_tilde @ xi_isqrt @ rn_isqrt
    return f_tilde, forwarding, alloc.mu


def _pi_matrix(f_tilde, channels, noise):
    """Second-hop quality gram of the whitened transform."""
    h2f = channels.relay_to_base @ f_tilde
    cov = hermitianize(h2f @ herm(h2f) + noise.destination_cov)
    return hermitianize(herm(h2f) @ np.linalg.solve(cov, h2f))


def build_covariance_sdp(f_tilde, channels, noise, budget):
    """SDP over per-user transmit covariances for a fixed whitened transform.

    minimize trace(X) subject to
      [[X, Pi^{1/2}], [Pi^{1/2}, S(Q) + I]] PSD,
      trace(Q_k) <= per-user power,  Q_k PSD,
    where S(Q) is the noise-whitened sum of the per-user channel-shaped
    covariances.  Returns (problem, X variable, per-user Q variables).
    """
    _check_direction(channels)
    dims = channels.dims
    nr = dims.n_relay
    pi = _pi_matrix(f_tilde, channels, noise)
    pi_half = hermitian_sqrt(pi)
    rn_isqrt = hermitian_inv_sqrt(noise.relay_cov, name="relay noise cov")

    x_var = HermitianVariable(nr, 0)
    q_vars = []
    offset = x_var.num_vars
    for nm in dims.mobile_antennas:
        q_vars.append(HermitianVariable(nm, offset))
        offset += nm * nm
    n = offset

    big = 2 * nr
    const = np.zeros((big, big), dtype=complex)
    const[:nr, nr:] = pi_half
    const[nr:, :nr] = pi_half
    const[nr:, nr:] = np.eye(nr)
    terms = []
    for i, e in x_var.basis():
        mat = np.zeros((big, big), dtype=complex)
        mat[:nr, :nr] = e
        terms.append((i, mat))
    shaped = [rn_isqrt @ h for h in channels.users_to_relay]
    for q_var, s in zip(q_vars, shaped):
        for i, e in q_var.basis():
            mat = np.zeros((big, big), dtype=complex)
            mat[nr:, nr:] = s @ e @ herm(s)
            terms.append((i, hermitianize(mat)))
    blocks = [hermitian_lmi(const, terms)]

    for q_var in q_vars:
        blocks.append(hermitian_lmi(np.zeros((q_var.dim, q_var.dim)),
                                    list(q_var.basis())))
    for q_var, ps in zip(q_vars, budget.source_per_user(dims.n_users)):
        c_mat = np.array([[ps]])
        t_list = [(i, np.array([[-1.0]])) for i in q_var.diag_indices]
        blocks.append(LmiBlock(c_mat, t_list))

    cvec = np.zeros(n)
    cvec[x_var.diag_indices] = 1.0
    return SdpProblem(cvec, blocks), x_var, q_vars


def precoder_covariance_step(f_tilde, channels, noise, budget,
                             gap_tol=1e-8, max_iter=100):
    """Solve the covariance SDP; returns (PrecoderCovariances, objective).

    Covariances are cleaned to exact PSD and clipped onto the power boundary
    when round-off overshoots it.
    """
    problem, _, q_vars = build_covariance_sdp(f_tilde, channels, noise, budget)
    sol = solve_sdp(problem, gap_tol=gap_tol, max_iter=max_iter)
    if sol.status == "numerical-failure" and gap_tol < 1e-6:
        sol = solve_sdp(problem, gap_tol=1e-6, max_iter=max_iter)
    if sol.status != "optimal":
        raise NumericalFailureError(
            f"covariance step ended with status {sol.status}: {sol.note}")
    shares = budget.source_per_user(channels.dims.n_users)
    mats = []
    for q_var, ps in zip(q_vars, shares):
        q = hermitianize(q_var.extract(sol.x))
        vals, vecs = np.linalg.eigh(q)
        q = hermitianize((vecs * np.maximum(vals, 0.0)) @ herm(vecs))
        tr = float(np.trace(q).real)
        if tr > ps:
            q *= ps / tr
        mats.append(q)
    return PrecoderCovariances(mats), float(sol.primal_objective)


def precoder_from_covariance(covariance, n_streams):
    """Factor a PSD covariance into a precoder with n_streams columns.

    Top eigencolumns scaled by the root eigenvalues, zero-padded when the
    antenna count is below n_streams; exact (P P^H = Q) when rank(Q) <=
    n_streams.
    """
    e = hermitian_eig(covariance, name="covariance")
    if e.values.size and e.values[-1] < 0:
        raise InvalidInputError("covariance must be positive semidefinite")
    d = e.values.size
    keep = min(d, n_streams)
    p = e.vectors[:, :keep] * np.sqrt(e.values[:keep])
    if keep < n_streams:
        p = np.hstack([p, np.zeros((d, n_streams - keep), dtype=complex)])
    return p


def identity_precoders(dims, budget):
    shares = budget.source_per_user(dims.n_users)
    return [scaled_identity(nm, lk, ps)
            for (nm, lk), ps in zip(dims.users, shares)]


def _identity_design(channels, noise, budget):
    dims = channels.dims
    precoders = identity_precoders(dims, budget)
    r_x = relay_input_covariance(precoders, channels, noise)
    f = np.sqrt(budget.relay / float(np.trace(r_x).real)) \
        * np.eye(dims.n_relay, dtype=complex)
    b = mmse_equalizer(f, precoders, channels, noise)
    return UplinkDesign(precoders, f, b, relay_step_power=budget.relay,
                        metadata={"init": "identity"})


def design_uplink_covariance(channels, noise, budget, threshold=1e-4,
                             max_iter=100):
    """Alternate the closed-form relay transform with the covariance SDP.

    Exact (monotone trace) when every user has at most as many antennas as
    streams; otherwise the rank constraint on the covariances is relaxed, the
    trace may wiggle, and the per-iteration relaxation gap (achieved MSE
    minus the relaxed-model MSE) is recorded.
    """
    _check_direction(channels)
    if threshold <= 0:
        raise InvalidInputError("threshold must be positive")
    dims = channels.dims
    relaxed = any(nm > lk for nm, lk in dims.users)
    design = _identity_design(channels, noise, budget)
    precoders = design.precoders
    mse_prev = mse_given_forwarding(design.forwarding, precoders, channels,
                                    noise)
    trace = [mse_prev]
    gaps = []
    converged = False
    note = ""
    f_tilde = None
    mu = 0.0
    covs = None

    for _ in range(max_iter):
        f_tilde, _, mu = waterfill_forwarding(precoders, channels, noise,
                                              budget.relay)
        try:
            covs, sdp_obj = precoder_covariance_step(f_tilde, channels, noise,
                                                     budget)
        except NumericalFailureError as exc:
            note = f"covariance step failed: {exc}"
            break
        candidates = [precoder_from_covariance(q, lk)
                      for q, lk in zip(covs.matrices, dims.streams)]
        if not relaxed:
            # round-off guard: keep the previous precoders on an uphill step
            if whitened_mse(f_tilde, candidates, channels, noise) <= \
                    whitened_mse(f_tilde, precoders, channels, noise):
                precoders = candidates
        else:
            precoders = candidates
            gaps.append(_pi_trace_term(f_tilde, precoders, channels, noise)
                        - sdp_obj)
        mse_now = whitened_mse(f_tilde, precoders, channels, noise)
        trace.append(mse_now)
        if abs(mse_prev - mse_now) <= threshold:
            converged = True
            break
        mse_prev = mse_now

    if f_tilde is not None:
        rn_isqrt = hermitian_inv_sqrt(noise.relay_cov)
        xi = whitened_input_covariance(precoders, channels, noise)
        forwarding = f_tilde @ hermitian_inv_sqrt(xi) @ rn_isqrt
        step_power = float(np.trace(f_tilde @ herm(f_tilde)).real)
    else:
        forwarding = design.forwarding
        step_power = design.relay_step_power
    b = mmse_equalizer(forwarding, precoders, channels, noise)
    result = UplinkDesign(precoders, forwarding, b, relay_multiplier=mu,
                          relay_step_power=step_power,
                          covariances=covs.matrices if covs else None,
                          metadata={"design": "covariance",
                                    "relaxed": relaxed})
    return result, IterationTrace(trace, len(trace) - 1, converged, note,
                                  relaxation_gap=gaps)


def _pi_trace_term(f_tilde, precoders, channels, noise):
    """The precoder-dependent term of the whitened MSE: trace of the quality
    gram against the inverse whitened covariance."""
    pi = _pi_matrix(f_tilde, channels, noise)
    xi = whitened_input_covariance(precoders, channels, noise)
    return float(np.trace(pi @ np.linalg.inv(xi)).real)


def design_uplink_alternating(channels, noise, budget, threshold=1e-4,
                              max_iter=100):
    """General uplink loop: MMSE equalizer, KKT forwarding matrix with a
    bisected multiplier, then the per-user precoder SDP with the per-user
    power limits and the relay power coupling constraint."""
    _check_direction(channels)
    if threshold <= 0:
        raise InvalidInputError("threshold must be positive")
    dims = channels.dims
    design = _identity_design(channels, noise, budget)
    precoders, f, b = design.precoders, design.forwarding, design.equalizer
    lam = 0.0
    step_power = design.relay_step_power
    lam_bound = 0.0
    mse_prev = uplink_mse(b, f, precoders, channels, noise)
    trace = [mse_prev]
    converged = False
    note = ""
    h1 = channels.users_to_relay_stacked()
    h2 = channels.relay_to_base
    shares = budget.source_per_user(dims.n_users)

    row_offs = np.cumsum([0] + dims.mobile_antennas)
    col_offs = np.cumsum([0] + dims.streams)
    blocks = [(int(row_offs[k]), int(col_offs[k]), nm, lk)
              for k, (nm, lk) in enumerate(dims.users)]
    shape = (int(row_offs[-1]), int(col_offs[-1]))

    for _ in range(max_iter):
        b = mmse_equalizer(f, precoders, channels, noise)
        r_x = relay_input_covariance(precoders, channels, noise)
        p_blk = block_diag(*precoders)
        f, lam, step_power, lam_bound = relay_kkt_step(
            b, h2, h1 @ p_blk, r_x, budget.relay)
        bf = b @ h2 @ f
        a0 = hermitianize(herm(h1) @ herm(bf) @ bf @ h1)
        b0 = -herm(bf @ h1)
        a2 = hermitianize(herm(h1) @ herm(f) @ f @ h1)
        c2 = float(np.trace(f @ noise.relay_cov @ herm(f)).real) - budget.relay
        try:
            sub = build_precoder_subproblem(a0, b0, shape, blocks, shares,
                                            a2=a2, c2=c2)
            p_full, _ = solve_precoder_subproblem(sub, budgets=shares)
        except NumericalFailureError as exc:
            note = f"precoder step failed: {exc}"
            mse_now = uplink_mse(b, f, precoders, channels, noise)
            trace.append(min(mse_now, trace[-1]))
            break
        candidates = [p_full[r0:r0 + r, c0:c0 + c]
                      for r0, c0, r, c in blocks]
        if uplink_mse(b, f, candidates, channels, noise) <= \
                uplink_mse(b, f, precoders, channels, noise):
            precoders = candidates
        mse_now = uplink_mse(b, f, precoders, channels, noise)
        trace.append(mse_now)
        if abs(mse_prev - mse_now) <= threshold:
            converged = True
            break
        mse_prev = mse_now

    result = UplinkDesign(precoders, f, b, relay_multiplier=lam,
                          relay_step_power=step_power,
                          relay_multiplier_bound=lam_bound,
                          metadata={"design": "alternating"})
    return result, IterationTrace(trace, len(trace) - 1, converged, note)


def waterfill_precoder_single_user(f_tilde, channels, noise, p_source):
    """Closed-form single-user precoder for a fixed whitened transform:
    water-filling over the paired modes of the user's whitened channel gram
    and the second-hop quality gram.  Power is exactly p_source unless the
    quality gram vanishes."""
    _check_direction(channels)
    dims = channels.dims
    if dims.n_users != 1:
        raise InvalidInputError("closed-form precoder requires a single user")
    ell = dims.total_streams
    nm = dims.mobile_antennas[0]
    if ell > nm:
        raise InvalidInputError("stream count exceeds the user antenna count")
    h1 = channels.users_to_relay[0]
    gram = hermitianize(herm(h1) @ np.linalg.solve(noise.relay_cov, h1))
    pi = _pi_matrix(f_tilde, channels, noise)
    e_g = hermitian_eig(gram)
    e_p = hermitian_eig(pi)
    alloc, _ = waterfill_diag(e_p.values[:ell], e_g.values[:ell], p_source)
    return e_g.vectors[:, :ell] * np.sqrt(alloc)
