"""Counter-based random streams.

Every stochastic choice in the package draws from a Philox generator keyed
by a user seed and a (step, purpose) counter, so results are reproducible
and independent of call order. Distinct purposes never share a stream.
"""

import numpy as np

PIXEL_SAMPLING = 1
FAR_SAMPLING = 2
INIT_FEATURES = 3
DENSIFY = 4
SYNTH_SCENE = 5
SYNTH_PERMUTE = 6


def stream(seed: int, purpose: int, step: int = 0) -> np.random.Generator:
    key = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key, counter=[step, purpose, 0, 0]))
