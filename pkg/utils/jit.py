"""Shared numba compilation options for the scalar-loop kernels"""

import numba as nb

JIT_OPTIONS = {
    "nogil": True,
    "cache": True,
}

# fastmath off: kernel LLRs must match the brute-force oracles to 1e-9
njit_serial = nb.njit(**JIT_OPTIONS)
