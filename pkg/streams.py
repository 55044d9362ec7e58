"""
Named random streams derived from one master seed.

Every stream is a counter-based Philox generator keyed by
SeedSequence(master_seed, spawn_key=(stream, ...)), so streams never overlap
and any one of them can be rebuilt without replaying the others.
"""

from typing import Dict, List

import numpy as np

MATRIX_STREAM = 0
INPUT_STREAM = 1
NOISE_STREAM = 2
SHUFFLE_STREAM = 3
BOOTSTRAP_STREAM = 4
SWEEP_STREAM = 5

STREAM_NAMES = {
    MATRIX_STREAM: "matrix",
    INPUT_STREAM: "input",
    NOISE_STREAM: "noise",
    SHUFFLE_STREAM: "shuffle",
    BOOTSTRAP_STREAM: "bootstrap",
    SWEEP_STREAM: "sweep",
}


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for the stream addressed by (seed, *stream)"""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(sequence))


def derive_seed(seed: int, *stream: int) -> int:
    """63-bit integer seed for a child experiment (e.g. one sweep point)"""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    state = sequence.generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def stream_manifest(input_seed: int, noise_seed: int, realizations: int) -> Dict[str, List]:
    """Addresses of the input stream and every noise stream of an ensemble"""
    return {
        "input": [int(input_seed), INPUT_STREAM],
        "noise": [[int(noise_seed), NOISE_STREAM, r] for r in range(realizations)],
    }
