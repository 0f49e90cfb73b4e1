"""Gram matrices, centering, spectra and the kernel diagnostics.

Conventions: empirical kernel eigenvalues are always eig(K)/n, so spectra
and effective ranks computed from different training-set sizes are
comparable.  Raw tomography features carry a 2^N factor relative to the
quantum kernel Tr[rho rho']; diagnostics that compare against purities
divide by 2^N at the point of comparison and nowhere else.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import qcore
from .errors import DegenerateDataError, StateValidationError

SYMMETRY_TOL = 1e-10
EIGENVALUE_FLOOR = 1e-10  # empirical eigenvalues below -floor are errors


@dataclass
class KernelMatrix:
    """Symmetric PSD Gram matrix, optionally centered."""

    data: np.ndarray
    centered: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        n = self.data.shape[0]
        if self.data.shape != (n, n):
            raise ValueError("kernel matrix must be square")
        scale = max(1.0, float(np.max(np.abs(self.data))))
        asym = np.max(np.abs(self.data - self.data.T))
        if asym > SYMMETRY_TOL * scale:
            raise ValueError(f"kernel asymmetry {asym:.3e} above tolerance")
        self.data = 0.5 * (self.data + self.data.T)
        if self.centered:
            worst = np.max(np.abs(self.data.sum(axis=1)))
            if worst > 1e-8 * n * scale:
                raise ValueError(
                    f"centered kernel has row sums up to {worst:.3e}"
                )

    @property
    def n(self):
        return self.data.shape[0]


@dataclass
class KernelSpectrum:
    """Empirical spectrum: eigenvalues of K/n, descending, clamped at 0."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass
class BoundInputs:
    """Ingredients of the margin-based generalization bound."""

    margin: float
    confidence: float
    norm_cap: float
    n_train: int
    kernel_trace_over_n: float

    def __post_init__(self):
        if self.margin <= 0 or self.norm_cap <= 0 or self.n_train <= 0:
            raise ValueError("margin, norm_cap and n_train must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")
        if self.kernel_trace_over_n < 0:
            raise ValueError("kernel trace must be >= 0")


def gram(features):
    """K = F F^T for row-per-input features."""
    f = np.asarray(features, dtype=float)
    if f.ndim != 2 or f.shape[0] < 1:
        raise ValueError("features must be a non-empty 2-d matrix")
    return KernelMatrix(data=f @ f.T)


def center_features(features):
    """Subtract column means (the delta-phi map)."""
    f = np.asarray(features, dtype=float)
    if f.shape[0] < 2:
        raise ValueError("centering needs at least 2 rows")
    return f - f.mean(axis=0, keepdims=True)


def center_kernel(k):
    """Double centering K_c = H K H with H = I - (1/n) 11^T."""
    mat = k.data if isinstance(k, KernelMatrix) else np.asarray(k, dtype=float)
    if mat.shape[0] < 2:
        raise ValueError("centering needs at least 2 rows")
    row = mat.mean(axis=1, keepdims=True)
    col = mat.mean(axis=0, keepdims=True)
    centered = mat - row - col + mat.mean()
    return KernelMatrix(data=centered, centered=True)


def center(obj):
    """Center a feature matrix (ndarray) or a KernelMatrix."""
    if isinstance(obj, KernelMatrix):
        return center_kernel(obj)
    return center_features(obj)


def spectrum(k):
    """Empirical eigendecomposition of a kernel matrix.

    Eigenvalues are divided by n and sorted descending; negatives within
    the floor are clamped to zero, anything worse raises (a PSD violation
    signals an upstream bug).
    """
    mat = k.data if isinstance(k, KernelMatrix) else np.asarray(k, dtype=float)
    n = mat.shape[0]
    evals, evecs = np.linalg.eigh(mat)
    evals = evals[::-1] / n
    evecs = evecs[:, ::-1]
    tol = max(EIGENVALUE_FLOOR, 1e-8 * max(evals[0], 0.0))
    if evals[-1] < -tol:
        raise StateValidationError(
            f"kernel eigenvalue {evals[-1]:.3e} below the PSD floor"
        )
    evals = np.where(evals < 0.0, 0.0, evals)
    return KernelSpectrum(eigenvalues=evals, eigenvectors=evecs)


def effective_rank(spec):
    """R_eff = (sum lambda)^2 / sum lambda^2 from a spectrum."""
    lam = np.asarray(spec.eigenvalues if isinstance(spec, KernelSpectrum) else spec)
    lam = np.where(lam < 0, 0.0, lam)
    total_sq = float(np.sum(lam**2))
    if total_sq == 0.0:
        raise DegenerateDataError("degenerate kernel: all eigenvalues are zero")
    return float(np.sum(lam)) ** 2 / total_sq


def effective_rank_empirical(k_c):
    """R_eff from traces alone: (Tr K_c)^2 / Tr[K_c^2]."""
    mat = k_c.data if isinstance(k_c, KernelMatrix) else np.asarray(k_c, dtype=float)
    tr = float(np.trace(mat))
    tr_sq = float(np.sum(mat * mat))  # Tr[K^2] for symmetric K
    if tr_sq == 0.0:
        raise DegenerateDataError("degenerate kernel: Tr[K_c^2] = 0")
    return tr**2 / tr_sq


def alignment(k_c, labels):
    """Empirical kernel-target alignment of a centered kernel.

    A = (y^T K_c y / n^2) / (sqrt(Tr[K_c^2]) / n * y^T y / n); lies in
    [-1, 1] and is invariant under positive rescaling of the kernel.
    """
    mat = k_c.data if isinstance(k_c, KernelMatrix) else np.asarray(k_c, dtype=float)
    y = np.asarray(labels, dtype=float)
    n = mat.shape[0]
    if y.shape != (n,):
        raise ValueError("labels length must match kernel size")
    norm = math.sqrt(float(np.sum(mat * mat)))
    if norm == 0.0:
        raise DegenerateDataError("degenerate kernel: zero Frobenius norm")
    y_norm = float(y @ y) / n
    if y_norm == 0.0:
        raise DegenerateDataError("all-zero labels")
    return float(y @ mat @ y) / n**2 / (norm / n * y_norm)


def purity_trace_identity(states):
    """Both sides of the kernel-trace/purity identity.

    lhs: Tr[K_c]/n of the tomography feature kernel divided by 2^N;
    rhs: mean purity minus the purity of the mean state.
    """
    if len(states) < 2:
        raise ValueError("need at least 2 states")
    mats = np.stack(
        [s.data if isinstance(s, qcore.DensityMatrix) else np.asarray(s) for s in states]
    )
    n_sites = int(round(np.log2(mats.shape[-1])))
    features = qcore.pauli_traces(mats, n_sites)
    centered = features - features.mean(axis=0, keepdims=True)
    lhs = float(np.sum(centered**2)) / len(states) / 2**n_sites
    mean_purity = float(np.mean([qcore.purity(m) for m in mats]))
    mean_state = mats.mean(axis=0)
    rhs = mean_purity - qcore.purity(mean_state)
    return lhs, rhs


def generalization_bound(inputs):
    """Margin bound on the generalization gap.

    (2/eta) sqrt(trace_term / (n Lambda)) + 3 sqrt(ln(2/delta) / (2n));
    monotone decreasing in n, margin, norm cap and confidence parameter.
    """
    first = (2.0 / inputs.margin) * math.sqrt(
        inputs.kernel_trace_over_n / (inputs.n_train * inputs.norm_cap)
    )
    second = 3.0 * math.sqrt(
        math.log(2.0 / inputs.confidence) / (2.0 * inputs.n_train)
    )
    return first + second


def eigenobservables(centered_features):
    """Principal directions of centered tomography features.

    Returns (coefficients, variances): column i of ``coefficients`` maps
    the Pauli-string basis to the unit-HS-norm eigenobservable E_i
    (Tr[E_i E_j] = delta_ij, Tr[E_i] = 0), and ``variances`` are the
    empirical kernel eigenvalues of the feature kernel (which carry the
    2^N factor of the raw Bloch convention).
    """
    f = np.asarray(centered_features, dtype=float)
    n, p = f.shape
    n_sites = int(round(math.log(p, 4)))
    if 4**n_sites != p:
        raise ValueError("tomography layout required (4^N columns)")
    _, svals, vt = np.linalg.svd(f, full_matrices=False)
    tol = max(n, p) * np.finfo(float).eps * (svals[0] if svals.size else 0.0)
    rank = int(np.sum(svals > tol))
    coefficients = vt[:rank].T / math.sqrt(2**n_sites)
    variances = svals[:rank] ** 2 / n
    return coefficients, variances


@dataclass
class KernelReport:
    """Diagnostics bundle for one (disorder seed, gamma) cell."""

    n_train: int
    n_sites: int
    layout: str
    eigenvalues: np.ndarray
    effective_rank: float
    alignments: dict
    kernel_trace_over_n: float
    purity_identity_residual: float | None
    bound_inputs: BoundInputs | None = None
    bound_value: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        payload = {
            "n_train": self.n_train,
            "n_sites": self.n_sites,
            "layout": self.layout,
            "eigenvalues": np.asarray(self.eigenvalues).tolist(),
            "effective_rank": self.effective_rank,
            "alignments": self.alignments,
            "kernel_trace_over_n": self.kernel_trace_over_n,
            "purity_identity_residual": self.purity_identity_residual,
            "bound_inputs": asdict(self.bound_inputs) if self.bound_inputs else None,
            "bound_value": self.bound_value,
        }
        payload.update(self.extra)
        return json.dumps(payload, indent=2, sort_keys=True)
