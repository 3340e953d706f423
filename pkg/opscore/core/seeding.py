import numpy as np


def derive_seed(*keys: int) -> int:
    """Stable 32-bit seed for a (master seed, stream, index, ...) key."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def stream(*keys: int) -> np.random.Generator:
    """Independent generator for a (master seed, stream, index, ...) key."""
    return np.random.default_rng([int(k) for k in keys])


# stream ids under the master seed
TRUTH_STREAM = 1
REPLICATE_STREAM = 2
ESTIMATOR_STREAM = 3
BOOTSTRAP_STREAM = 4
CALIBRATION_STREAM = 5
