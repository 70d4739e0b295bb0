"""Suboptimal comparison schemes: direct amplify-and-forward, per-hop
equalization, separate per-hop LMMSE design, and (uplink only) the joint
relay/equalizer design without source precoders.

All schemes are deterministic given the channel realization and return
power-feasible designs; the identity-scaled schemes saturate both budgets
exactly.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .alternating import (build_precoder_subproblem, point_to_point_precoder,
                          scaled_identity, solve_precoder_subproblem)
from .channel import DOWNLINK
from .downlink import (DownlinkDesign, identity_init, relay_input_covariance,
                       separate_lmmse_init, update_equalizers)
from .errors import InvalidInputError
from .linalg import block_diag, herm, hermitianize
from .uplink import (UplinkDesign, identity_precoders, mmse_equalizer,
                     relay_input_covariance as uplink_input_covariance,
                     waterfill_forwarding)


class BaselineKind(str, Enum):
    DIRECT_AF = "direct-af"
    PER_HOP = "per-hop"
    SEPARATE_LMMSE = "separate-lmmse"
    NO_SOURCE_PRECODER = "no-precoder"


def design_baseline(kind, channels, noise, budget, direction=None):
    """Dispatch to one baseline design for the channel's direction."""
    kind = BaselineKind(kind)
    chan_dir = channels.dims.direction
    if direction is not None and direction != chan_dir:
        raise InvalidInputError("direction does not match the channel set")
    if chan_dir == DOWNLINK:
        if kind == BaselineKind.DIRECT_AF:
            return _downlink_direct_af(channels, noise, budget)
        if kind == BaselineKind.PER_HOP:
            return _downlink_per_hop(channels, noise, budget)
        if kind == BaselineKind.SEPARATE_LMMSE:
            return separate_lmmse_init(channels, noise, budget)
        raise InvalidInputError(
            "the no-source-precoder scheme is defined for uplink only")
    if kind == BaselineKind.DIRECT_AF:
        return _uplink_direct_af(channels, noise, budget)
    if kind == BaselineKind.PER_HOP:
        return _uplink_per_hop(channels, noise, budget)
    if kind == BaselineKind.SEPARATE_LMMSE:
        return _uplink_separate_lmmse(channels, noise, budget)
    return _uplink_no_precoder(channels, noise, budget)


def _downlink_direct_af(channels, noise, budget):
    """Identity-scaled precoder and forwarding matrix, MMSE equalizers on the
    composite channel."""
    design = identity_init(channels, noise, budget)
    design.metadata = {"baseline": "direct-af",
                       "power_normalization": "identity scaled to saturate"}
    return design


def _downlink_per_hop(channels, noise, budget):
    """Hop-1 LMMSE equalizer embedded at the relay (truncated identity onto
    the antennas, rescaled to the relay budget); MMSE equalizers at the
    users."""
    dims = channels.dims
    ell = dims.total_streams
    t = scaled_identity(dims.n_base, ell, budget.source_total)
    r_r = relay_input_covariance(t, channels, noise)
    h1t = channels.base_to_relay @ t
    w1 = np.linalg.solve(r_r.conj().T, h1t).conj().T       # (L, N_R)
    w = np.eye(dims.n_relay, ell, dtype=complex) @ w1
    used = float(np.trace(w @ r_r @ herm(w)).real)
    w *= np.sqrt(budget.relay / used)
    g = update_equalizers(w, t, channels, noise)
    return DownlinkDesign(t, w, g, relay_step_power=budget.relay,
                          metadata={"baseline": "per-hop",
                                    "power_normalization":
                                        "relay matrix rescaled to the budget"})


def _uplink_direct_af(channels, noise, budget):
    dims = channels.dims
    precoders = identity_precoders(dims, budget)
    r_x = uplink_input_covariance(precoders, channels, noise)
    f = np.sqrt(budget.relay / float(np.trace(r_x).real)) \
        * np.eye(dims.n_relay, dtype=complex)
    b = mmse_equalizer(f, precoders, channels, noise)
    return UplinkDesign(precoders, f, b, relay_step_power=budget.relay,
                        metadata={"baseline": "direct-af",
                                  "power_normalization":
                                      "identity scaled to saturate"})


def _uplink_per_hop(channels, noise, budget):
    dims = channels.dims
    ell = dims.total_streams
    precoders = identity_precoders(dims, budget)
    r_x = uplink_input_covariance(precoders, channels, noise)
    h1p = channels.users_to_relay_stacked() @ block_diag(*precoders)
    w1 = np.linalg.solve(r_x.conj().T, h1p).conj().T       # (L, N_R)
    f = np.eye(dims.n_relay, ell, dtype=complex) @ w1
    used = float(np.trace(f @ r_x @ herm(f)).real)
    f *= np.sqrt(budget.relay / used)
    b = mmse_equalizer(f, precoders, channels, noise)
    return UplinkDesign(precoders, f, b, relay_step_power=budget.relay,
                        metadata={"baseline": "per-hop",
                                  "power_normalization":
                                      "relay matrix rescaled to the budget"})


def _uplink_separate_lmmse(channels, noise, budget, inner_iterations=5):
    """Hop 1 treated as a single-hop multiuser system (short alternation of
    the relay-side MMSE equalizer and the per-user precoder SDP), hop 2 as a
    point-to-point link (eigen-mode precoder at the relay); the relay matrix
    composes the two and is rescaled exactly onto the relay budget."""
    dims = channels.dims
    ell = dims.total_streams
    shares = budget.source_per_user(dims.n_users)
    precoders = identity_precoders(dims, budget)
    h1 = channels.users_to_relay_stacked()

    row_offs = np.cumsum([0] + dims.mobile_antennas)
    col_offs = np.cumsum([0] + dims.streams)
    blocks = [(int(row_offs[k]), int(col_offs[k]), nm, lk)
              for k, (nm, lk) in enumerate(dims.users)]
    shape = (int(row_offs[-1]), int(col_offs[-1]))

    w1 = None
    for _ in range(inner_iterations):
        r_x = uplink_input_covariance(precoders, channels, noise)
        h1p = h1 @ block_diag(*precoders)
        w1 = np.linalg.solve(r_x.conj().T, h1p).conj().T   # (L, N_R)
        a0 = hermitianize(herm(h1) @ herm(w1) @ w1 @ h1)
        b0 = -herm(w1 @ h1)
        try:
            sub = build_precoder_subproblem(a0, b0, shape, blocks, shares)
            p_full, _ = solve_precoder_subproblem(sub, budgets=shares)
            precoders = [p_full[r0:r0 + r, c0:c0 + c]
                         for r0, c0, r, c in blocks]
        except Exception:
            break
    r_x = uplink_input_covariance(precoders, channels, noise)
    h1p = h1 @ block_diag(*precoders)
    w1 = np.linalg.solve(r_x.conj().T, h1p).conj().T

    t2 = point_to_point_precoder(channels.relay_to_base, noise.destination_cov,
                                 ell, budget.relay)
    f = t2 @ w1
    used = float(np.trace(f @ r_x @ herm(f)).real)
    if used > 0:
        f *= np.sqrt(budget.relay / used)
    b = mmse_equalizer(f, precoders, channels, noise)
    return UplinkDesign(precoders, f, b, relay_step_power=budget.relay,
                        metadata={"baseline": "separate-lmmse",
                                  "power_normalization":
                                      "composed relay matrix rescaled to the "
                                      "budget"})


def _uplink_no_precoder(channels, noise, budget):
    """Identity-scaled precoders with the joint closed-form relay transform
    and MMSE equalizer."""
    precoders = identity_precoders(channels.dims, budget)
    f_tilde, f, mu = waterfill_forwarding(precoders, channels, noise,
                                          budget.relay)
    b = mmse_equalizer(f, precoders, channels, noise)
    return UplinkDesign(precoders, f, b, relay_multiplier=mu,
                        relay_step_power=float(
                            np.trace(f_tilde @ herm(f_tilde)).real),
                        metadata={"baseline": "no-precoder"})
