"""Deterministic random streams built on the Philox counter-based generator.

Every random draw in this package comes from numpy's Philox4x64 bit
generator, keyed by a user-supplied 64-bit seed. Independent uses of the
same seed are separated by placing each use at a distinct start position in
Philox's 256-bit counter space:

    counter = domain << 128 | step << 64

``domain`` tags the consumer (batch schedule, weight init, split, ...) and
``step`` indexes repeated uses inside a domain (the training iteration for
batch draws, the batch number for noise collection, ...). Each (domain,
step) pair owns 2**64 counter blocks, far more than any single draw
consumes, so streams never overlap and replaying any (seed, domain, step)
triple reproduces the exact same values on every platform.
"""

from __future__ import annotations

import numpy as np

DOMAIN_BATCH = 0
DOMAIN_INIT = 1
DOMAIN_SPLIT = 2
DOMAIN_NOISE = 3
DOMAIN_PROBE = 4
DOMAIN_BLOBS = 5


def stream(seed: int, domain: int, step: int = 0) -> np.random.Generator:
    """Fresh generator positioned at the (seed, domain, step) stream start."""
    if not 0 <= step < 1 << 64:
        raise ValueError(f"stream step out of range: {step}")
    counter = (domain << 128) | (step << 64)
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))
