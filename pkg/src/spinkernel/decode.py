"""Measurement decoding: encoded states -> real feature vectors.

Two layouts are produced:

* ``tomography``: the full generalized Bloch vector, i.e. Tr[O_i rho] for
  all 4^N Pauli words in lexicographic order.  Entry 0 is the identity
  measurement and equals 1 exactly.  With this convention the Gram matrix
  of the features equals 2^N Tr[rho rho'].
* ``time_multiplex``: local x/y/z expectations of every site recorded
  after each of n_rep free-evolution intervals of length dt_m, prefixed
  by a constant 1; length 1 + 3N * n_rep.

The channel-transfer matrix Xi reproduces the time-multiplexed features
linearly from the tomography features: Xi_kl = Tr[O_k C(O_l)] for the
free-evolution channel C over dt_m, so Xi/2^N propagates Bloch vectors by
one measurement interval and a 0/1 selection mask picks the local words.
"""

from dataclasses import dataclass, field

import numpy as np

from . import qcore
from .dynamics import PULSE_SPACING, free_evolve_raw

DEFAULT_DT_M = PULSE_SPACING  # keep measurement and encoding timescales equal

TOMOGRAPHY = "tomography"
TIME_MULTIPLEX = "time_multiplex"


@dataclass
class FeatureVector:
    """Real measurement vector with its layout tag."""

    values: np.ndarray
    layout: str
    n_sites: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values[0] != 1.0:
            raise ValueError("entry 0 must be the identity measurement (exactly 1)")


@dataclass
class MeasurementNoise:
    """Additive Gaussian error on every non-constant expectation value."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def tomography_features(state):
    """Full Pauli tomography of one state."""
    rho = state.data if isinstance(state, qcore.DensityMatrix) else np.asarray(state)
    n_sites = int(round(np.log2(rho.shape[-1])))
    values = qcore.pauli_traces(rho, n_sites)
    values[0] = 1.0
    return FeatureVector(values=values, layout=TOMOGRAPHY, n_sites=n_sites)


def tomography_features_batch(states, n_sites):
    """(B, 4^N) tomography features for a stack of states."""
    values = qcore.pauli_traces(np.asarray(states), n_sites)
    values[:, 0] = 1.0
    return values


@dataclass
class ChannelTransfer:
    """Transfer matrix of the free dissipative channel over one interval.

    ``xi`` is the raw (4^N, 4^N) matrix with Xi_kl = Tr[O_k C(O_l)]; the
    identity channel gives Xi = 2^N * I.  ``selection`` is the 0/1
    diagonal marking which Pauli words are measured (the 3N single-site
    words by default); measured entries are read out in site-major order
    via ``measured_indices``.
    """

    xi: np.ndarray
    dt_m: float
    n_sites: int
    selection: np.ndarray
    n_rep: int = 1
    measured_indices: np.ndarray = field(init=False)

    def __post_init__(self):
        order = qcore.single_site_word_indices(self.n_sites)
        self.measured_indices = order[self.selection[order] == 1]

    def normalized(self):
        """Xi / 2^N: propagates Bloch vectors by one interval."""
        return self.xi / 2**self.n_sites

    def propagate_features(self, values, steps=1):
        """Apply the normalised transfer ``steps`` times to a Bloch vector."""
        xi_n = self.normalized()
        out = np.asarray(values, dtype=float)
        for _ in range(steps):
            out = xi_n @ out
        return out

    def stacked_features(self, values, n_rep=None):
        """Time-multiplexed features predicted from a tomography vector.

        Equivalent to stacking D Xi_n^k for k = 1..n_rep and prepending
        the constant entry; must match direct sequential evolution.
        """
        n_rep = self.n_rep if n_rep is None else n_rep
        xi_n = self.normalized()
        out = [np.array([1.0])]
        cur = np.asarray(values, dtype=float)
        for _ in range(n_rep):
            cur = xi_n @ cur
            out.append(cur[self.measured_indices])
        return np.concatenate(out)


def channel_transfer(params, dt_m, n_rep=1, step_control=None):
    """Build Xi by pushing every Pauli word through the free channel.

    Columns are computed in the Schroedinger picture (the propagator is
    linear, so it extends to non-state Hermitian matrices); the adjoint
    identity Tr[C^dag(O_k) O_l] = Tr[O_k C(O_l)] makes this equal to the
    Heisenberg-picture definition.  Guarded to N <= 4: validation tool,
    not the production decoder.
    """
    n = params.n_sites
    if n > 4:
        raise ValueError("channel_transfer is built only for N <= 4")
    n_words = qcore.n_pauli_words(n)
    basis = np.stack(
        [
            qcore.pauli_string(qcore.pauli_word_from_index(i, n)).data
            for i in range(n_words)
        ]
    )
    if dt_m == 0.0:
        evolved = basis
    else:
        evolved = free_evolve_raw(basis, params, dt_m, step_control)
    # Row l of pauli_traces(evolved) is Tr[O_k C(O_l)] over k: transpose
    # to put the evolved word on the column index.
    xi = qcore.pauli_traces(evolved, n).T
    selection = np.zeros(n_words, dtype=int)
    selection[qcore.single_site_word_indices(n)] = 1
    return ChannelTransfer(
        xi=xi, dt_m=float(dt_m), n_sites=n, selection=selection, n_rep=n_rep
    )


def time_multiplex_features(state_at_tau, params, dt_m, n_rep):
    """Sequential local measurements after the encoding ends.

    Evolves freely (drive off) in n_rep intervals of dt_m, recording the
    3N single-site Pauli expectations after each; the result is prefixed
    by the constant entry.
    """
    if n_rep < 1:
        raise ValueError("n_rep must be >= 1")
    rho = (
        state_at_tau.data
        if isinstance(state_at_tau, qcore.DensityMatrix)
        else np.asarray(state_at_tau)
    )
    values = _time_multiplex_batch(rho[None], params, dt_m, n_rep)[0]
    return FeatureVector(
        values=values, layout=TIME_MULTIPLEX, n_sites=params.n_sites
    )


def _time_multiplex_batch(states, params, dt_m, n_rep, step_control=None):
    states = np.asarray(states, dtype=complex)
    n_inputs = states.shape[0]
    chunks = [np.ones((n_inputs, 1))]
    cur = states
    for _ in range(n_rep):
        cur = free_evolve_raw(cur, params, dt_m, step_control)
        chunks.append(qcore.single_site_expectations(cur, params.n_sites))
    return np.concatenate(chunks, axis=1)


def time_multiplex_features_batch(states, params, dt_m, n_rep, step_control=None):
    """(B, 1 + 3N n_rep) time-multiplexed features for a stack of states."""
    return _time_multiplex_batch(
        np.asarray(states), params, dt_m, n_rep, step_control
    )


def _noise_rng(noise, input_index):
    seq = np.random.SeedSequence(entropy=noise.seed, spawn_key=(int(input_index),))
    return np.random.default_rng(seq)


def apply_measurement_noise(features, noise, input_index=0):
    """Add i.i.d. N(0, sigma^2) to every entry except the constant one.

    The noise stream is derived from (seed, input_index) so batches are
    reproducible regardless of evaluation order or worker count.
    """
    if isinstance(features, FeatureVector):
        values = features.values
        if noise.sigma == 0.0:
            return FeatureVector(values.copy(), features.layout, features.n_sites)
        noisy = values.copy()
        noisy[1:] += _noise_rng(noise, input_index).normal(
            0.0, noise.sigma, size=values.size - 1
        )
        return FeatureVector(noisy, features.layout, features.n_sites)
    values = np.asarray(features, dtype=float)
    if noise.sigma == 0.0:
        return values.copy()
    noisy = values.copy()
    noisy[1:] += _noise_rng(noise, input_index).normal(
        0.0, noise.sigma, size=values.size - 1
    )
    return noisy


def apply_measurement_noise_batch(matrix, noise, start_index=0, constant_column=True):
    """Row-wise measurement noise; row i uses the (seed, start_index+i) stream."""
    matrix = np.asarray(matrix, dtype=float)
    if noise.sigma == 0.0:
        return matrix.copy()
    noisy = matrix.copy()
    first = 1 if constant_column else 0
    for i in range(matrix.shape[0]):
        noisy[i, first:] += _noise_rng(noise, start_index + i).normal(
            0.0, noise.sigma, size=matrix.shape[1] - first
        )
    return noisy
