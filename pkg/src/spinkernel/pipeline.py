"""Batch encoding helpers shared by the CLI and the acceptance suite.

Work is split into fixed-size chunks of inputs; each chunk is encoded and
decoded with the batched propagator, optionally across a process pool.
Chunk boundaries depend only on ``batch_size``, never on the worker
count, so output files are bitwise identical for any parallelism level.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import decode, qcore
from .dynamics import StepControl, encode_batch
from .errors import IntegrationError


@dataclass
class EncodedCell:
    """Per-(disorder seed, gamma) encoding result for one input split."""

    features: np.ndarray  # (n, P) clean feature matrix
    purities: np.ndarray  # (n,) Tr[rho^2] per input
    mean_state_purity: float  # Tr[mean_rho^2] over the split
    layout: str


def _encode_chunk(args):
    params, mode, xs, decoding, step_scale = args
    sc = StepControl(scale=step_scale)
    states = encode_batch(xs, params, mode=mode, step_control=sc)
    purities = np.array([qcore.purity(s) for s in states])
    state_sum = states.sum(axis=0)
    if decoding["kind"] == decode.TOMOGRAPHY:
        feats = decode.tomography_features_batch(states, params.n_sites)
    elif decoding["kind"] == decode.TIME_MULTIPLEX:
        feats = decode.time_multiplex_features_batch(
            states, params, decoding["dt_m"], decoding["n_rep"], sc
        )
    else:
        raise ValueError(f"unknown decoding kind {decoding['kind']!r}")
    return feats, purities, state_sum


def encode_features(
    inputs,
    params,
    mode="bottleneck",
    decoding=None,
    batch_size=64,
    workers=1,
    step_scale=1.0,
):
    """Encode and decode a full input matrix for one (seed, gamma) cell.

    Raises IntegrationError annotated with the offending chunk so a sweep
    can abort this cell and continue with the others.
    """
    decoding = decoding or {"kind": decode.TOMOGRAPHY}
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    n = inputs.shape[0]
    chunks = [
        (params, mode, inputs[lo : lo + batch_size], decoding, step_scale)
        for lo in range(0, n, batch_size)
    ]
    results = []
    try:
        if workers > 1 and len(chunks) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_encode_chunk, chunks))
        else:
            results = [_encode_chunk(c) for c in chunks]
    except IntegrationError as exc:
        raise IntegrationError(
            f"encoding failed for a chunk of {n} inputs: {exc}", time=exc.time
        ) from exc
    feats = np.concatenate([r[0] for r in results])
    purities = np.concatenate([r[1] for r in results])
    mean_state = sum(r[2] for r in results) / n
    layout = decoding["kind"]
    return EncodedCell(
        features=feats,
        purities=purities,
        mean_state_purity=qcore.purity(mean_state),
        layout=layout,
    )
