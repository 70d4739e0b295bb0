"""System dimensions, Rayleigh channel sampling, noise and power settings.

Channel matrix orientation is fixed as "output = H @ input" throughout:
the base-to-relay matrix is (N_R, N_B), relay-to-user matrices are
(N_M_k, N_R), user-to-relay matrices are (N_R, N_M_k) and the relay-to-base
matrix is (N_B, N_R).

Randomness comes from the Philox4x32-10 counter-based generator (numpy
implementation); every draw is keyed by (seed, index, purpose) so channel,
symbol and noise streams are independent and individually reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .linalg import as_matrix, check_hermitian, herm

DOWNLINK = "downlink"
UPLINK = "uplink"

PURPOSE_CHANNEL = 0
PURPOSE_SYMBOLS = 1
PURPOSE_NOISE = 2

_MASK64 = (1 << 64) - 1


def rng_stream(seed, index=0, purpose=PURPOSE_CHANNEL):
    """Deterministic Generator for the (seed, index, purpose) stream."""
    key = np.array([int(seed) & _MASK64,
                    ((int(index) & ((1 << 56) - 1)) << 8) | (int(purpose) & 0xFF)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def complex_gaussian(rng, rows, cols):
    """i.i.d. circularly-symmetric complex Gaussian entries, unit variance."""
    return (rng.standard_normal((rows, cols))
            + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2.0)


@dataclass(frozen=True)
class SystemDims:
    """Antenna and stream counts for one two-hop system."""

    n_base: int
    n_relay: int
    users: tuple[tuple[int, int], ...]  # (antennas, streams) per user
    direction: str = DOWNLINK

    def __post_init__(self):
        if self.direction not in (DOWNLINK, UPLINK):
            raise InvalidInputError(f"unknown direction {self.direction!r}")
        if self.n_base < 1 or self.n_relay < 1 or not self.users:
            raise InvalidInputError("antenna and user counts must be >= 1")
        for nm, lk in self.users:
            if nm < 1 or lk < 1:
                raise InvalidInputError("per-user antenna/stream counts must be >= 1")
        if self.total_streams > min(self.n_base, self.n_relay):
            raise InvalidInputError(
                f"total streams {self.total_streams} exceeds "
                f"min(n_base, n_relay) = {min(self.n_base, self.n_relay)}")

    @property
    def n_users(self):
        return len(self.users)

    @property
    def mobile_antennas(self):
        return [nm for nm, _ in self.users]

    @property
    def streams(self):
        return [lk for _, lk in self.users]

    @property
    def total_streams(self):
        return sum(lk for _, lk in self.users)

    @property
    def stream_offsets(self):
        offs = np.cumsum([0] + self.streams)
        return list(offs[:-1])


def uniform_dims(n_base=4, n_relay=4, n_users=2, n_mobile=2, streams=2,
                 direction=DOWNLINK):
    """Dims with identical per-user antenna and stream counts."""
    return SystemDims(n_base, n_relay,
                      tuple((n_mobile, streams) for _ in range(n_users)),
                      direction)


@dataclass
class ChannelSet:
    """One realization of both hops.

    Downlink: first_hop is the (N_R, N_B) base-to-relay matrix and second_hop
    a per-user list of (N_M_k, N_R) relay-to-user matrices.  Uplink:
    first_hop is a per-user list of (N_R, N_M_k) user-to-relay matrices and
    second_hop the (N_B, N_R) relay-to-base matrix.
    """

    dims: SystemDims
    first_hop: object
    second_hop: object

    def __post_init__(self):
        d = self.dims
        if d.direction == DOWNLINK:
            self.first_hop = as_matrix(self.first_hop, "first hop")
            if self.first_hop.shape != (d.n_relay, d.n_base):
                raise InvalidInputError("first hop shape mismatch")
            self.second_hop = [as_matrix(h, "second hop") for h in self.second_hop]
            for h, nm in zip(self.second_hop, d.mobile_antennas):
                if h.shape != (nm, d.n_relay):
                    raise InvalidInputError("second hop shape mismatch")
        else:
            self.first_hop = [as_matrix(h, "first hop") for h in self.first_hop]
            for h, nm in zip(self.first_hop, d.mobile_antennas):
                if h.shape != (d.n_relay, nm):
                    raise InvalidInputError("first hop shape mismatch")
            self.second_hop = as_matrix(self.second_hop, "second hop")
            if self.second_hop.shape != (d.n_base, d.n_relay):
                raise InvalidInputError("second hop shape mismatch")

    @property
    def base_to_relay(self):
        return self.first_hop if self.dims.direction == DOWNLINK else None

    @property
    def relay_to_users(self):
        return self.second_hop if self.dims.direction == DOWNLINK else None

    @property
    def users_to_relay(self):
        return self.first_hop if self.dims.direction == UPLINK else None

    @property
    def relay_to_base(self):
        return self.second_hop if self.dims.direction == UPLINK else None

    def relay_to_users_stacked(self):
        """Vertically stacked relay-to-user matrices (sum N_M, N_R)."""
        return np.vstack(self.relay_to_users)

    def users_to_relay_stacked(self):
        """Horizontally stacked user-to-relay matrices (N_R, sum N_M)."""
        return np.hstack(self.users_to_relay)


def sample_rayleigh(dims, seed, index=0):
    """One i.i.d. unit-variance Rayleigh channel realization.

    Deterministic given (seed, index); the draw order is first hop then the
    per-user second-hop matrices (or per-user first-hop then second for
    uplink).
    """
    rng = rng_stream(seed, index, PURPOSE_CHANNEL)
    if dims.direction == DOWNLINK:
        first = complex_gaussian(rng, dims.n_relay, dims.n_base)
        second = [complex_gaussian(rng, nm, dims.n_relay)
                  for nm in dims.mobile_antennas]
    else:
        first = [complex_gaussian(rng, dims.n_relay, nm)
                 for nm in dims.mobile_antennas]
        second = complex_gaussian(rng, dims.n_base, dims.n_relay)
    return ChannelSet(dims, first, second)


def snr_to_noise(snr_db, power, dim):
    """White noise covariance sigma^2 * I with sigma^2 = power / 10^(snr/10)."""
    if power <= 0:
        raise InvalidInputError("power must be positive")
    sigma2 = power / (10.0 ** (float(snr_db) / 10.0))
    return sigma2 * np.eye(int(dim), dtype=complex)


@dataclass
class NoiseModel:
    """Relay-side and destination-side noise covariances.

    destination_cov is a per-user list for downlink and a single matrix for
    uplink (noise at the base station).
    """

    relay_cov: np.ndarray
    destination_cov: object

    def __post_init__(self):
        self.relay_cov = check_hermitian(self.relay_cov, name="relay noise cov")
        if isinstance(self.destination_cov, (list, tuple)):
            self.destination_cov = [check_hermitian(c, name="destination noise cov")
                                    for c in self.destination_cov]
        else:
            self.destination_cov = check_hermitian(self.destination_cov,
                                                   name="destination noise cov")


@dataclass
class PowerBudget:
    """Transmit power limits: source (per-user tuple for uplink) and relay."""

    source: object
    relay: float

    def __post_init__(self):
        src = self.source
        vals = list(src) if isinstance(src, (list, tuple, np.ndarray)) else [src]
        if any(v <= 0 for v in vals) or self.relay <= 0:
            raise InvalidInputError("power budgets must be strictly positive")

    @property
    def source_total(self):
        if isinstance(self.source, (list, tuple, np.ndarray)):
            return float(np.sum(self.source))
        return float(self.source)

    def source_per_user(self, n_users):
        if isinstance(self.source, (list, tuple, np.ndarray)):
            if len(self.source) != n_users:
                raise InvalidInputError("per-user source budget length mismatch")
            return [float(p) for p in self.source]
        return [float(self.source) / n_users] * n_users


def default_budget(dims, source_power=None, relay_power=None):
    """Power budgets; defaults to total power L on each side, uplink source
    power split evenly across users."""
    total = dims.total_streams
    ps = float(source_power) if source_power is not None else float(total)
    pr = float(relay_power) if relay_power is not None else float(total)
    if dims.direction == UPLINK:
        share = ps / dims.n_users
        return PowerBudget(tuple(share for _ in range(dims.n_users)), pr)
    return PowerBudget(ps, pr)


def noise_for_snr(dims, first_hop_snr_db, second_hop_snr_db, budget):
    """Noise covariances realizing the two hop SNR definitions.

    The first hop SNR is source power over relay noise power; the second hop
    SNR is relay power over destination noise power.
    """
    relay_cov = snr_to_noise(first_hop_snr_db, budget.source_total, dims.n_relay)
    if dims.direction == DOWNLINK:
        dest = [snr_to_noise(second_hop_snr_db, budget.relay, nm)
                for nm in dims.mobile_antennas]
    else:
        dest = snr_to_noise(second_hop_snr_db, budget.relay, dims.n_base)
    return NoiseModel(relay_cov, dest)


def sample_noise(cov, n_cols, rng):
    """Draw n_cols complex Gaussian vectors with the given covariance."""
    cov = np.asarray(cov)
    d = cov.shape[0]
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (cov + herm(cov)))
        factor = vecs * np.sqrt(np.maximum(vals, 0.0))
    return factor @ complex_gaussian(rng, d, n_cols)


# ---------------------------------------------------------------------------
# Plain-text matrix import/export (regression fixtures)

def save_matrix_txt(path_or_file, matrix, name="matrix"):
    """Write a complex matrix as: a name line, a "rows cols" line, then one
    line of whitespace-separated "re im" pairs per matrix row."""
    m = as_matrix(matrix, name)
    own = isinstance(path_or_file, (str, bytes))
    fh = open(path_or_file, "w", encoding="ascii") if own else path_or_file
    try:
        fh.write(f"[matrix {name}]\n{m.shape[0]} {m.shape[1]}\n")
        for row in m:
            fh.write(" ".join(f"{v.real:.17g} {v.imag:.17g}" for v in row) + "\n")
    finally:
        if own:
            fh.close()


def load_matrix_txt(lines, pos=0):
    """Parse one matrix written by save_matrix_txt; returns (name, matrix,
    next position)."""
    header = lines[pos].strip()
    if not (header.startswith("[matrix ") and header.endswith("]")):
        raise InvalidInputError(f"line {pos + 1}: expected a matrix header")
    name = header[len("[matrix "):-1]
    rows, cols = (int(t) for t in lines[pos + 1].split())
    out = np.zeros((rows, cols), dtype=complex)
    for i in range(rows):
        parts = [float(t) for t in lines[pos + 2 + i].split()]
        if len(parts) != 2 * cols:
            raise InvalidInputError(f"line {pos + 3 + i}: expected {2 * cols} numbers")
        out[i] = np.array(parts[0::2]) + 1j * np.array(parts[1::2])
    return name, out, pos + 2 + rows


def save_channel_set(path, channels):
    """Write a ChannelSet to a plain-text file (header plus matrix sections)."""
    d = channels.dims
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"direction={d.direction}\n")
        fh.write(f"n_base={d.n_base}\nn_relay={d.n_relay}\n")
        fh.write("n_mobile=" + ",".join(str(v) for v in d.mobile_antennas) + "\n")
        fh.write("streams=" + ",".join(str(v) for v in d.streams) + "\n")
        if d.direction == DOWNLINK:
            save_matrix_txt(fh, channels.first_hop, "first_hop")
            for k, h in enumerate(channels.second_hop):
                save_matrix_txt(fh, h, f"second_hop_{k}")
        else:
            for k, h in enumerate(channels.first_hop):
                save_matrix_txt(fh, h, f"first_hop_{k}")
            save_matrix_txt(fh, channels.second_hop, "second_hop")


def load_channel_set(path):
    """Read a ChannelSet written by save_channel_set."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    head = {}
    pos = 0
    while pos < len(lines) and not lines[pos].startswith("[matrix"):
        key, _, value = lines[pos].partition("=")
        head[key.strip()] = value.strip()
        pos += 1
    users = tuple(zip((int(v) for v in head["n_mobile"].split(",")),
                      (int(v) for v in head["streams"].split(","))))
    dims = SystemDims(int(head["n_base"]), int(head["n_relay"]), users,
                      head["direction"])
    mats = {}
    while pos < len(lines) and lines[pos].strip():
        name, mat, pos = load_matrix_txt(lines, pos)
        mats[name] = mat
    if dims.direction == DOWNLINK:
        first = mats["first_hop"]
        second = [mats[f"second_hop_{k}"] for k in range(dims.n_users)]
    else:
        first = [mats[f"first_hop_{k}"] for k in range(dims.n_users)]
        second = mats["second_hop"]
    return ChannelSet(dims, first, second)
