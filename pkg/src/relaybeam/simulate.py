"""Link-level Monte-Carlo harness: QPSK transmission through designed
systems, per-trial analytic/empirical MSE and SER, and order-insensitive
aggregation.

Per-trial randomness is drawn from three independent streams keyed by
(seed, trial index, purpose): channel, symbols, noise.  Trials are therefore
bit-reproducible and independent of execution order or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import baselines, downlink, uplink
from .alternating import IterationTrace
from .channel import (DOWNLINK, PURPOSE_NOISE, PURPOSE_SYMBOLS,
                      noise_for_snr, rng_stream, sample_noise, sample_rayleigh)
from .errors import EmptyAggregateError, InvalidInputError, \
    NumericalFailureError

QPSK_SCALE = 1.0 / np.sqrt(2.0)


def qpsk_modulate(bits):
    """Gray-mapped QPSK: bit pairs (b0, b1) -> ((1-2 b0) + 1j (1-2 b1))/sqrt(2).

    `bits` is a flat 0/1 array of even length; (0, 0) maps to (1+1j)/sqrt(2).
    """
    bits = np.asarray(bits)
    if bits.size % 2:
        raise InvalidInputError("bit count must be even")
    b = bits.reshape(-1, 2)
    return ((1.0 - 2.0 * b[:, 0]) + 1j * (1.0 - 2.0 * b[:, 1])) * QPSK_SCALE


def qpsk_detect(symbols):
    """Nearest-constellation-point detection; inverse of qpsk_modulate."""
    s = np.asarray(symbols)
    out = np.empty(s.size * 2, dtype=int)
    out[0::2] = (s.real < 0).astype(int).ravel()
    out[1::2] = (s.imag < 0).astype(int).ravel()
    return out


@dataclass
class TrialResult:
    trial: int
    algorithm: str
    analytic_mse: float = np.nan
    empirical_mse: float = np.nan
    ser: float = np.nan
    iterations: int = 0
    converged: bool = False
    flagged: bool = False
    note: str = ""
    mse_stderr: float = np.nan      # std of per-symbol squared error / sqrt(n)
    tx_power_design: float = np.nan
    tx_power_sample: float = np.nan
    trace: list = field(default_factory=list)


@dataclass
class AggregateResult:
    mean_mse_analytic: float
    mean_mse_empirical: float
    mean_ser: float
    mean_iterations: float
    trials_ok: int
    trials_flagged: int


def _wrap_baseline(kind):
    def run(channels, noise_model, budget, threshold, max_iter):
        design = baselines.design_baseline(kind, channels, noise_model, budget)
        if channels.dims.direction == DOWNLINK:
            mse = downlink.sum_mse(design.equalizers, design.forwarding,
                                   design.precoder, channels, noise_model)
        else:
            mse = uplink.uplink_mse(design.equalizer, design.forwarding,
                                    design.precoders, channels, noise_model)
        return design, IterationTrace([mse], 0, True)
    return run


DOWNLINK_DESIGNERS = {
    "joint": lambda ch, nz, bg, thr, mi: downlink.design_downlink(
        ch, nz, bg, init=downlink.IDENTITY_INIT, threshold=thr, max_iter=mi),
    "joint-warm": lambda ch, nz, bg, thr, mi: downlink.design_downlink(
        ch, nz, bg, init=downlink.SEPARATE_LMMSE_INIT, threshold=thr,
        max_iter=mi),
    "joint-fixed-precoder": lambda ch, nz, bg, thr, mi:
        downlink.design_downlink(ch, nz, bg, threshold=thr, max_iter=mi,
                                 fixed_precoder=True),
    "direct-af": _wrap_baseline(baselines.BaselineKind.DIRECT_AF),
    "per-hop": _wrap_baseline(baselines.BaselineKind.PER_HOP),
    "separate-lmmse": _wrap_baseline(baselines.BaselineKind.SEPARATE_LMMSE),
}

UPLINK_DESIGNERS = {
    "covariance": lambda ch, nz, bg, thr, mi: uplink.design_uplink_covariance(
        ch, nz, bg, threshold=thr, max_iter=mi),
    "joint": lambda ch, nz, bg, thr, mi: uplink.design_uplink_alternating(
        ch, nz, bg, threshold=thr, max_iter=mi),
    "direct-af": _wrap_baseline(baselines.BaselineKind.DIRECT_AF),
    "per-hop": _wrap_baseline(baselines.BaselineKind.PER_HOP),
    "separate-lmmse": _wrap_baseline(baselines.BaselineKind.SEPARATE_LMMSE),
    "no-precoder": _wrap_baseline(baselines.BaselineKind.NO_SOURCE_PRECODER),
}


def designer_table(direction):
    return DOWNLINK_DESIGNERS if direction == DOWNLINK else UPLINK_DESIGNERS


def transmit_downlink(design, channels, noise_model, symbols, rng):
    """Propagate a (L, n) symbol block through the designed downlink chain."""
    n = symbols.shape[1]
    relay_in = channels.base_to_relay @ design.precoder @ symbols \
        + sample_noise(noise_model.relay_cov, n, rng)
    relay_out = design.forwarding @ relay_in
    estimates = []
    for h2, g, rv in zip(channels.relay_to_users, design.equalizers,
                         noise_model.destination_cov):
        y = h2 @ relay_out + sample_noise(rv, n, rng)
        estimates.append(g @ y)
    return np.vstack(estimates)


def transmit_uplink(design, channels, noise_model, symbols, rng):
    """Propagate a (L, n) symbol block through the designed uplink chain."""
    n = symbols.shape[1]
    p = design.precoder_block()
    relay_in = channels.users_to_relay_stacked() @ p @ symbols \
        + sample_noise(noise_model.relay_cov, n, rng)
    y = channels.relay_to_base @ (design.forwarding @ relay_in) \
        + sample_noise(noise_model.destination_cov, n, rng)
    return design.equalizer @ y


def run_trial(algorithm, config, trial_index, sweep_index=0):
    """One independent trial: sample a channel, design, transmit, measure.

    Designer failures flag the trial instead of aborting the sweep.
    """
    dims = config.dims
    snr1, snr2 = config.sweep[sweep_index]
    budget = config.budget()
    channels = sample_rayleigh(dims, config.seed, index=trial_index)
    noise_model = noise_for_snr(dims, snr1, snr2, budget)
    designer = designer_table(dims.direction)[algorithm]
    try:
        design, trace = designer(channels, noise_model, budget,
                                 config.threshold, config.max_iter)
    except (NumericalFailureError, InvalidInputError,
            np.linalg.LinAlgError) as exc:
        return TrialResult(trial_index, algorithm, flagged=True,
                           note=f"designer failed: {exc}")

    if dims.direction == DOWNLINK:
        analytic = downlink.sum_mse(design.equalizers, design.forwarding,
                                    design.precoder, channels, noise_model)
        tx = design.precoder
    else:
        analytic = uplink.uplink_mse(design.equalizer, design.forwarding,
                                     design.precoders, channels, noise_model)
        tx = design.precoder_block()

    ell = dims.total_streams
    n_sym = config.symbols_per_stream
    bit_rng = rng_stream(config.seed, trial_index, PURPOSE_SYMBOLS)
    bits = bit_rng.integers(0, 2, size=2 * ell * n_sym)
    symbols = qpsk_modulate(bits).reshape(ell, n_sym)
    noise_rng = rng_stream(config.seed, trial_index, PURPOSE_NOISE)
    if dims.direction == DOWNLINK:
        estimates = transmit_downlink(design, channels, noise_model, symbols,
                                      noise_rng)
    else:
        estimates = transmit_uplink(design, channels, noise_model, symbols,
                                    noise_rng)

    sq_err = np.sum(np.abs(estimates - symbols) ** 2, axis=0)
    empirical = float(np.mean(sq_err))
    stderr = float(np.std(sq_err, ddof=1) / np.sqrt(n_sym)) if n_sym > 1 else 0.0
    wrong = ((estimates.real < 0) != (symbols.real < 0)) \
        | ((estimates.imag < 0) != (symbols.imag < 0))
    ser = float(np.mean(np.mean(wrong, axis=1)))
    tx_sample = float(np.mean(np.sum(np.abs(tx @ symbols) ** 2, axis=0)))
    tx_design = float(np.sum(np.abs(tx) ** 2))

    return TrialResult(trial_index, algorithm, analytic_mse=analytic,
                       empirical_mse=empirical, ser=ser,
                       iterations=trace.iterations, converged=trace.converged,
                       note=trace.note, mse_stderr=stderr,
                       tx_power_design=tx_design, tx_power_sample=tx_sample,
                       trace=list(trace.mse_per_iteration))


def aggregate(results):
    """Arithmetic means over unflagged trials; order-insensitive."""
    ok = [r for r in results if not r.flagged]
    flagged = len(results) - len(ok)
    if not ok:
        raise EmptyAggregateError(
            f"all {len(results)} trials were flagged; nothing to aggregate")
    return AggregateResult(
        mean_mse_analytic=float(np.mean([r.analytic_mse for r in ok])),
        mean_mse_empirical=float(np.mean([r.empirical_mse for r in ok])),
        mean_ser=float(np.mean([r.ser for r in ok])),
        mean_iterations=float(np.mean([r.iterations for r in ok])),
        trials_ok=len(ok),
        trials_flagged=flagged,
    )
