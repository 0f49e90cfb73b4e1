"""Dense operator/state algebra for chains of spin-1/2 sites.

Conventions used across the package:

* Standard Pauli matrices ``sigma_x = [[0,1],[1,0]]``, ``sigma_y =
  [[0,-i],[i,0]]``, ``sigma_z = [[1,0],[0,-1]]``.
* The single-site "spin down" state is the ``sigma_z = -1`` eigenvector,
  i.e. the second computational basis vector ``(0, 1)``.  The all-down
  product state is therefore ``diag(0,...,0,1)``.
* Pauli words ``(i_1, ..., i_N)`` with ``i_k in {0,1,2,3}`` (0 = identity,
  1/2/3 = x/y/z) are ordered lexicographically with site 1 as the slowest
  digit, so word index = sum_k i_k * 4**(N-k).  This fixes feature-vector
  indexing everywhere downstream.
* Entropies are reported in nats (natural log); one convention, tested,
  not configurable.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalCorruptionError, StateValidationError

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-8
IMAG_RESIDUE_TOL = 1e-8
EIGENVALUE_CLAMP = 1e-14

SIGMA_0 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

# Stacked (4, 2, 2) for vectorised contractions, indexed by Pauli label.
PAULI_STACK = np.stack([SIGMA_0, SIGMA_X, SIGMA_Y, SIGMA_Z])

# Spin-down column vector: sigma_z |down> = -|down>.
DOWN = np.array([0.0, 1.0], dtype=complex)


def _check_real(value, context, tol=IMAG_RESIDUE_TOL):
    """Strip the imaginary residue of a should-be-real scalar or array."""
    residue = np.max(np.abs(np.imag(value)))
    if residue > tol:
        raise NumericalCorruptionError(
            f"{context}: imaginary residue {residue:.3e} exceeds {tol:.0e}"
        )
    return np.real(value)


@dataclass
class Observable:
    """Hermitian operator on an N-site chain.

    ``label`` is the Pauli-index word for basis strings and ``None`` for
    composite operators (Hamiltonians, eigenobservables).
    """

    dim: int
    data: np.ndarray
    label: tuple | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.shape != (self.dim, self.dim):
            raise ValueError(f"observable data must be {self.dim}x{self.dim}")
        asym = np.max(np.abs(self.data - self.data.conj().T))
        if asym > 1e-12:
            raise StateValidationError(
                f"observable is not Hermitian: max|O - O^dag| = {asym:.3e}"
            )


@dataclass
class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite state of the chain.

    Construction validates the three invariants (raw Hermiticity drift up
    to ``HERMITICITY_TOL``, trace drift up to ``TRACE_TOL``, eigenvalues
    above ``-POSITIVITY_TOL``) and then stores the exactly symmetrised,
    exactly unit-trace matrix.
    """

    dim: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        rho = np.asarray(self.data, dtype=complex)
        if rho.shape != (self.dim, self.dim):
            raise ValueError(f"state data must be {self.dim}x{self.dim}")
        asym = np.max(np.abs(rho - rho.conj().T))
        if asym > HERMITICITY_TOL:
            raise StateValidationError(
                f"state is not Hermitian: max|rho - rho^dag| = {asym:.3e}"
            )
        rho = 0.5 * (rho + rho.conj().T)
        tr = np.trace(rho).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise StateValidationError(f"state trace {tr!r} drifted beyond {TRACE_TOL}")
        rho = rho / tr
        lo = float(np.linalg.eigvalsh(rho)[0])
        if lo < -POSITIVITY_TOL:
            raise StateValidationError(f"state has negative eigenvalue {lo:.3e}")
        self.data = rho

    @property
    def n_sites(self):
        return int(round(np.log2(self.dim)))

    @classmethod
    def from_vector(cls, psi):
        """Pure state |psi><psi| from a normalised state vector."""
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(dim=psi.size, data=np.outer(psi, psi.conj()))

    @classmethod
    def all_down(cls, n_sites):
        """Product state with every spin in the sigma_z = -1 eigenstate."""
        psi = DOWN
        for _ in range(n_sites - 1):
            psi = np.kron(psi, DOWN)
        return cls.from_vector(psi)

    @classmethod
    def maximally_mixed(cls, n_sites):
        dim = 2**n_sites
        return cls(dim=dim, data=np.eye(dim, dtype=complex) / dim)


def n_pauli_words(n_sites):
    return 4**n_sites


def pauli_word_from_index(index, n_sites):
    """Base-4 digits of ``index``, site 1 as the most significant digit."""
    if not 0 <= index < 4**n_sites:
        raise ValueError(f"index {index} out of range for {n_sites} sites")
    word = []
    for k in range(n_sites - 1, -1, -1):
        word.append((index >> (2 * k)) & 3)
    return tuple(word)


def pauli_index_from_word(word):
    index = 0
    for w in word:
        index = 4 * index + w
    return index


def pauli_string(word, n_sites=None):
    """Tensor product of single-site Paulis for a Pauli-index word.

    ``word`` entries use 0 = identity, 1/2/3 = x/y/z; the all-zero word is
    the identity.  Satisfies Tr[O_i O_j] = 2^N delta_ij.
    """
    word = tuple(int(w) for w in np.atleast_1d(word))
    if n_sites is None:
        n_sites = len(word)
    if len(word) != n_sites:
        raise ValueError(f"word length {len(word)} != n_sites {n_sites}")
    for w in word:
        if w not in (0, 1, 2, 3):
            raise ValueError(f"invalid Pauli index {w}; must be in {{0,1,2,3}}")
    op = PAULI_STACK[word[0]]
    for w in word[1:]:
        op = np.kron(op, PAULI_STACK[w])
    return Observable(dim=2**n_sites, data=op, label=word)


def single_site_word_indices(n_sites):
    """Basis indices of the 3N weight-one words, site-major order.

    Order: site 1 x, y, z, site 2 x, y, z, ...; used both by the
    time-multiplexed decoder and by the channel-transfer selection mask.
    """
    idx = []
    for site in range(n_sites):
        for a in (1, 2, 3):
            idx.append(a * 4 ** (n_sites - 1 - site))
    return np.array(idx, dtype=int)


def expectation(state, obs):
    """Tr[O rho]; the imaginary residue is checked then discarded."""
    op = obs.data if isinstance(obs, Observable) else np.asarray(obs)
    rho = state.data if isinstance(state, DensityMatrix) else np.asarray(state)
    if op.shape != rho.shape:
        raise ValueError(f"dimension mismatch: {op.shape} vs {rho.shape}")
    value = np.einsum("ij,ji->", op, rho)
    return float(_check_real(value, "expectation"))


def pauli_traces(mat, n_sites):
    """Tr[O_i M] for every Pauli word i, in lexicographic order.

    Works on a single matrix or a stack ``(..., 2^N, 2^N)`` and returns
    ``(..., 4^N)``.  For a density matrix the result is the generalized
    Bloch vector (entry 0 equals Tr[M]).
    """
    mat = np.asarray(mat, dtype=complex)
    dim = 2**n_sites
    if mat.shape[-2:] != (dim, dim):
        raise ValueError(f"matrix shape {mat.shape} incompatible with {n_sites} sites")
    batch = mat.shape[:-2]
    # Axis -3 accumulates word prefixes; peel one site per iteration.
    out = mat.reshape(batch + (1, dim, dim))
    for site in range(n_sites):
        m = out.shape[-1] // 2
        t = out.reshape(batch + (-1, 2, m, 2, m))
        # T[w,a] = Tr_site[(sigma_a (x) 1) M_w]; index a appended after w
        # keeps site 1 as the slowest digit.
        out = np.einsum("aps,...wsrpc->...warc", PAULI_STACK, t)
        out = out.reshape(batch + (-1, m, m))
    values = out[..., 0, 0]
    return _check_real(values, "pauli_traces")


def matrix_from_pauli_traces(values, n_sites):
    """Inverse of :func:`pauli_traces`: M = 2^-N sum_i Tr[O_i M] O_i."""
    values = np.asarray(values, dtype=float)
    dim = 2**n_sites
    if values.shape != (4**n_sites,):
        raise ValueError("need one coefficient per Pauli word")
    mat = np.zeros((dim, dim), dtype=complex)
    for i, v in enumerate(values):
        if v != 0.0:
            mat += v * pauli_string(pauli_word_from_index(i, n_sites)).data
    return mat / dim


def purity(state):
    """Tr[rho^2], in [1/dim, 1] for a valid state."""
    rho = state.data if isinstance(state, DensityMatrix) else np.asarray(state)
    return float(np.sum(np.abs(rho) ** 2))


def von_neumann_entropy(state):
    """-sum lambda ln lambda over the spectrum, in nats.

    Eigenvalues below ``EIGENVALUE_CLAMP`` are treated as exact zeros;
    eigenvalues below ``-POSITIVITY_TOL`` raise.
    """
    rho = state.data if isinstance(state, DensityMatrix) else np.asarray(state)
    evals = np.linalg.eigvalsh(rho)
    if evals[0] < -POSITIVITY_TOL:
        raise StateValidationError(f"negative eigenvalue {evals[0]:.3e} in entropy")
    evals = np.where(evals < EIGENVALUE_CLAMP, 0.0, evals)
    nonzero = evals[evals > 0.0]
    return float(-np.sum(nonzero * np.log(nonzero)))


def partial_transpose(rho, site, n_sites):
    """Transpose the tensor factor of one site (0-based index)."""
    rho = np.asarray(rho)
    if not 0 <= site < n_sites:
        raise ValueError(f"site {site} out of range for {n_sites} sites")
    a = 2**site
    b = 2 ** (n_sites - site - 1)
    t = rho.reshape(a, 2, b, a, 2, b)
    t = np.swapaxes(t, 1, 4)
    return t.reshape(rho.shape)


def negativity(state, site):
    """Entanglement negativity of the bipartition {site} vs the rest.

    (||rho^{T_site}||_1 - 1) / 2 via the partial-transpose spectrum.
    """
    rho = state.data if isinstance(state, DensityMatrix) else np.asarray(state)
    n_sites = int(round(np.log2(rho.shape[-1])))
    pt = partial_transpose(rho, site, n_sites)
    evals = np.linalg.eigvalsh(pt)
    return float(0.5 * (np.sum(np.abs(evals)) - 1.0))


def mean_site_negativity(state):
    """Negativity averaged over all single-site bipartitions."""
    rho = state.data if isinstance(state, DensityMatrix) else np.asarray(state)
    n_sites = int(round(np.log2(rho.shape[-1])))
    return float(np.mean([negativity(rho, s) for s in range(n_sites)]))


def reduced_single_site(rho, n_sites):
    """All N single-site reduced density matrices, shape (..., N, 2, 2)."""
    rho = np.asarray(rho, dtype=complex)
    batch = rho.shape[:-2]
    out = np.empty(batch + (n_sites, 2, 2), dtype=complex)
    for site in range(n_sites):
        a = 2**site
        b = 2 ** (n_sites - site - 1)
        t = rho.reshape(batch + (a, 2, b, a, 2, b))
        out[..., site, :, :] = np.einsum("...isjitj->...st", t)
    return out


def single_site_expectations(rho, n_sites):
    """<sigma_a^i> for a in (x, y, z), site-major; shape (..., 3N).

    Matches the ordering of :func:`single_site_word_indices`.
    """
    reduced = reduced_single_site(rho, n_sites)
    vals = np.einsum("ast,...nts->...na", PAULI_STACK[1:], reduced)
    vals = _check_real(vals, "single_site_expectations")
    return vals.reshape(vals.shape[:-2] + (3 * n_sites,))
