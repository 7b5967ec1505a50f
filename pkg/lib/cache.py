"""
LRU-Cache of constant operators

DFT bases, temporal shift matrices, pooling matrices and timestep
embeddings depend only on their shape, so they are built once and
reused by every forward pass.
"""

import threading

import pylru

from globals import CACHE_SIZE

CACHE = pylru.lrucache(CACHE_SIZE)
# evaluation threads share the cache
LOCK = threading.RLock()


def get_signature(kind, *shape):
    """
    Get cache signature for an operator of `kind` with `shape`
    """

    return "%s:%s" % (kind, ":".join(str(x) for x in shape))


def get(signature):
    """
    Return the cached value for `signature` or None
    """

    if not signature:
        return None
    return CACHE.get(signature)


def store(signature, value):
    """
    Store `value` for `signature` and return it.
    Dense numpy arrays are frozen so that a caller cannot
    corrupt the shared copy.
    """

    if hasattr(value, "flags") and hasattr(value.flags, "writeable"):
        value.flags.writeable = False
    if signature:
        CACHE[signature] = value
    return value


def cached(kind, builder, *shape):
    """
    Return the operator of `kind` and `shape`, building it with
    `builder(*shape)` on a miss.
    """

    signature = get_signature(kind, *shape)
    with LOCK:
        value = get(signature)
        if value is None:
            value = store(signature, builder(*shape))
    return value


def clear():
    "Drop every cached operator"

    CACHE.clear()
