"""Iterative joint downlink design: base-station precoder, relay forwarding
matrix and per-user equalizers minimizing the sum MSE under source and relay
power constraints.

The loop alternates three exact convex subproblem solutions: the closed-form
MMSE equalizers, the KKT forwarding matrix with a bisected power multiplier,
and the precoder via a small SDP.  Each step can only decrease the sum MSE,
so the recorded trace is non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alternating import (IterationTrace, build_precoder_subproblem,
                          forwarding_for_multiplier, mmse_equalizers,
                          point_to_point_precoder, relay_kkt_step,
                          scaled_identity, solve_precoder_subproblem)
from .channel import DOWNLINK
from .errors import InvalidInputError, NumericalFailureError
from .linalg import block_diag, herm, hermitianize

IDENTITY_INIT = "identity"
SEPARATE_LMMSE_INIT = "separate_lmmse"


@dataclass
class DownlinkDesign:
    """Designed downlink triple plus the relay-step KKT bookkeeping."""

    precoder: np.ndarray            # (N_B, L), per-user column blocks
    forwarding: np.ndarray          # (N_R, N_R)
    equalizers: list                # per user, (L_k, N_M_k)
    relay_multiplier: float = 0.0
    relay_step_power: float = 0.0   # trace(W R_r W^H) at the relay update
    relay_multiplier_bound: float = 0.0
    metadata: dict = field(default_factory=dict)

    def equalizer_block(self):
        return block_diag(*self.equalizers)


def _check_direction(channels):
    if channels.dims.direction != DOWNLINK:
        raise InvalidInputError("downlink design requires downlink channels")


def relay_input_covariance(precoder, channels, noise):
    """Covariance of the relay's received vector: H T T^H H^H + relay noise."""
    h = channels.base_to_relay
    return hermitianize(h @ precoder @ herm(precoder) @ herm(h)
                        + noise.relay_cov)


def sum_mse(equalizers, forwarding, precoder, channels, noise):
    """Total MSE over all streams for the given design."""
    return float(np.sum(per_user_mse(equalizers, forwarding, precoder,
                                     channels, noise)))


def per_user_mse(equalizers, forwarding, precoder, channels, noise):
    """Per-user detection MSEs."""
    _check_direction(channels)
    dims = channels.dims
    r_r = relay_input_covariance(precoder, channels, noise)
    offs = dims.stream_offsets
    out = []
    for k, (h2, g, rv) in enumerate(zip(channels.relay_to_users, equalizers,
                                        noise.destination_cov)):
        lk = dims.streams[k]
        t_k = precoder[:, offs[k]:offs[k] + lk]
        m = h2 @ forwarding
        cross = g @ m @ channels.base_to_relay @ t_k
        quad = g @ (m @ r_r @ herm(m) + rv) @ herm(g)
        out.append(float((np.trace(quad) - 2 * np.trace(cross).real).real) + lk)
    return out


def update_equalizers(forwarding, precoder, channels, noise):
    """Per-user MMSE equalizers for fixed precoder and forwarding matrix."""
    _check_direction(channels)
    r_r = relay_input_covariance(precoder, channels, noise)
    return mmse_equalizers(forwarding, channels.base_to_relay @ precoder, r_r,
                           channels.relay_to_users, noise.destination_cov,
                           channels.dims.streams)


def relay_mse_power(lam, equalizers, precoder, channels, noise):
    """Forwarding matrix for a fixed multiplier and its transmit power."""
    _check_direction(channels)
    if lam < 0:
        raise InvalidInputError("multiplier must be nonnegative")
    g = block_diag(*equalizers)
    hop2 = channels.relay_to_users_stacked()
    gram = hermitianize(herm(hop2) @ herm(g) @ g @ hop2)
    target = herm(channels.base_to_relay @ precoder @ g @ hop2)
    r_r = relay_input_covariance(precoder, channels, noise)
    return forwarding_for_multiplier(lam, gram, target, r_r)


def solve_relay_multiplier(equalizers, precoder, channels, noise, p_relay):
    """Forwarding matrix and multiplier meeting the relay power budget.

    Returns (W, lambda, power, lambda bound); lambda is 0 when the budget is
    slack, otherwise the bisection residual satisfies
    |power - p_relay| <= 1e-8 p_relay inside the provable bracket.
    """
    _check_direction(channels)
    if p_relay <= 0:
        raise InvalidInputError("relay power must be positive")
    g = block_diag(*equalizers)
    r_r = relay_input_covariance(precoder, channels, noise)
    return relay_kkt_step(g, channels.relay_to_users_stacked(),
                          channels.base_to_relay @ precoder, r_r, p_relay)


def build_precoder_sdp(forwarding, equalizers, channels, noise, p_source,
                       p_relay):
    """Precoder subproblem as an SDP over (t, realified vec of the precoder).

    The three PSD blocks encode the epigraph of the quadratic objective, the
    source power limit and the relay power limit.
    """
    _check_direction(channels)
    dims = channels.dims
    g = block_diag(*equalizers)
    h1 = channels.base_to_relay
    hop2 = channels.relay_to_users_stacked()
    gw = g @ hop2 @ forwarding          # (L, N_R)
    a0 = hermitianize(herm(h1) @ herm(gw) @ gw @ h1)
    b0 = -herm(gw @ h1)
    a2 = hermitianize(herm(h1) @ herm(forwarding) @ forwarding @ h1)
    c2 = float(np.trace(forwarding @ noise.relay_cov
                        @ herm(forwarding)).real) - p_relay
    shape = (dims.n_base, dims.total_streams)
    blocks = [(0, 0, dims.n_base, dims.total_streams)]
    return build_precoder_subproblem(a0, b0, shape, blocks, [p_source],
                                     a2=a2, c2=c2)


def mse_constant_term(forwarding, equalizers, channels, noise):
    """Precoder-independent part of the sum MSE (dropped inside the SDP)."""
    g = block_diag(*equalizers)
    gw = g @ channels.relay_to_users_stacked() @ forwarding
    r_v = block_diag(*noise.destination_cov)
    return float((np.trace(gw @ noise.relay_cov @ herm(gw))
                  + np.trace(g @ r_v @ herm(g))).real) \
        + channels.dims.total_streams


def identity_init(channels, noise, budget):
    """Power-feasible scaled-identity starting design."""
    _check_direction(channels)
    dims = channels.dims
    t = scaled_identity(dims.n_base, dims.total_streams, budget.source_total)
    r_r = relay_input_covariance(t, channels, noise)
    w = np.sqrt(budget.relay / float(np.trace(r_r).real)) \
        * np.eye(dims.n_relay, dtype=complex)
    g = update_equalizers(w, t, channels, noise)
    return DownlinkDesign(t, w, g, relay_step_power=budget.relay,
                          metadata={"init": "identity"})


def separate_lmmse_init(channels, noise, budget, inner_iterations=5):
    """Warm start from per-hop designs: a point-to-point MMSE precoder and
    relay equalizer on the first hop, then a short alternation designing the
    relay-side precoder and user equalizers on the second hop.  The relay
    matrix is the composition of the hop-1 equalizer and the hop-2 precoder.
    """
    _check_direction(channels)
    dims = channels.dims
    ell = dims.total_streams
    try:
        t = point_to_point_precoder(channels.base_to_relay, noise.relay_cov,
                                    ell, budget.source_total)
        r_r = relay_input_covariance(t, channels, noise)
        h1t = channels.base_to_relay @ t
        w1 = np.linalg.solve(r_r.conj().T, h1t).conj().T    # hop-1 MMSE, (L, N_R)
        a_eff = w1 @ h1t                                    # (L, L)
        r_mid = hermitianize(w1 @ r_r @ herm(w1))
        w2 = scaled_identity(dims.n_relay, ell, 1.0)
        w2 *= np.sqrt(budget.relay / float(np.trace(w2 @ r_mid @ herm(w2)).real))
        for _ in range(inner_iterations):
            g = mmse_equalizers(w2, a_eff, r_mid, channels.relay_to_users,
                                noise.destination_cov, dims.streams)
            gb = block_diag(*g)
            w2, _, _, _ = relay_kkt_step(gb, channels.relay_to_users_stacked(),
                                         a_eff, r_mid, budget.relay)
        w = w2 @ w1
        g = update_equalizers(w, t, channels, noise)
        return DownlinkDesign(t, w, g, relay_step_power=float(
            np.trace(w @ r_r @ herm(w)).real),
            metadata={"init": "separate_lmmse"})
    except (NumericalFailureError, np.linalg.LinAlgError):
        design = identity_init(channels, noise, budget)
        design.metadata["init"] = "separate_lmmse (fell back to identity)"
        return design


def design_downlink(channels, noise, budget, init=IDENTITY_INIT,
                    threshold=1e-4, max_iter=100, fixed_precoder=False):
    """Alternating downlink design.

    init is "identity", "separate_lmmse" or a ready DownlinkDesign.  The loop
    stops when the sum MSE changes by at most `threshold` between iterations;
    with fixed_precoder=True the precoder stays at its initialization and
    only the equalizers and forwarding matrix are updated.  A solver failure
    mid-iteration returns the best design so far with converged=False.
    """
    _check_direction(channels)
    if threshold <= 0:
        raise InvalidInputError("threshold must be positive")
    if init == IDENTITY_INIT:
        design = identity_init(channels, noise, budget)
    elif init == SEPARATE_LMMSE_INIT:
        design = separate_lmmse_init(channels, noise, budget)
    elif isinstance(init, DownlinkDesign):
        design = init
    else:
        raise InvalidInputError(f"unknown initialization {init!r}")

    t, w, g = design.precoder, design.forwarding, design.equalizers
    lam = design.relay_multiplier
    step_power = design.relay_step_power
    lam_bound = design.relay_multiplier_bound
    mse_prev = sum_mse(g, w, t, channels, noise)
    trace = [mse_prev]
    converged = False
    note = ""

    for _ in range(max_iter):
        g = update_equalizers(w, t, channels, noise)
        w, lam, step_power, lam_bound = solve_relay_multiplier(
            g, t, channels, noise, budget.relay)
        if not fixed_precoder:
            try:
                sub = build_precoder_sdp(w, g, channels, noise,
                                         budget.source_total, budget.relay)
                t_new, _ = solve_precoder_subproblem(
                    sub, budgets=[budget.source_total])
            except NumericalFailureError as exc:
                note = f"precoder step failed: {exc}"
                mse_now = sum_mse(g, w, t, channels, noise)
                trace.append(min(mse_now, trace[-1]))
                break
            # round-off guard: never accept an uphill precoder step
            if sum_mse(g, w, t_new, channels, noise) <= \
                    sum_mse(g, w, t, channels, noise):
                t = t_new
        mse_now = sum_mse(g, w, t, channels, noise)
        trace.append(mse_now)
        if abs(mse_prev - mse_now) <= threshold:
            converged = True
            break
        mse_prev = mse_now

    result = DownlinkDesign(t, w, g, relay_multiplier=lam,
                            relay_step_power=step_power,
                            relay_multiplier_bound=lam_bound,
                            metadata=dict(design.metadata))
    if fixed_precoder:
        result.metadata["fixed_precoder"] = True
    return result, IterationTrace(trace, len(trace) - 1, converged, note)
