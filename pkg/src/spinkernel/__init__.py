"""Noisy quantum kernel machines on driven-dissipative spin chains.

Encode classical inputs into the Lindblad dynamics of a disordered XYZ
chain, decode measurement features, build centered quantum kernels, train
least-squares classifiers, and compute expressivity and generalization
diagnostics.  See the module docstrings of ``qcore``, ``dynamics``,
``encode``, ``decode``, ``kernel``, ``train`` and ``cli`` for the pieces.
"""

from . import decode, dynamics, encode, kernel, qcore, storage, train  # noqa: F401

__all__ = ["qcore", "dynamics", "encode", "decode", "kernel", "train", "storage"]
__version__ = "0.1.0"
