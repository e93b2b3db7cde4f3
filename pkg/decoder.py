"""
MAP decoding of the (133, 171) code and iterative detection-and-decoding
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from detectors import clip_llr, factorize, sphere_detect_batch
from transmitter import NEXT_STATE, OUTPUT_BITS, CodewordLayout, CONSTRAINT_LENGTH
from utils.complexity import ComplexityCounters, ComplexityModel
from utils.error_handler import DecoderError
from utils.jit import njit_serial

logger = logging.getLogger(__name__)

TAIL_BITS = CONSTRAINT_LENGTH - 1


@dataclass
class DecoderOutput:
    info_llr: np.ndarray
    coded_extrinsic: np.ndarray
    hard_bits: np.ndarray
    coded_posterior: np.ndarray = field(repr=False)


@njit_serial
def _bcjr_kernel(coded_llr, apriori, n_info, next_state, outputs):
    n_steps = coded_llr.shape[0] // 2
    n_states = next_state.shape[0]
    alpha = np.full((n_steps + 1, n_states), -np.inf)
    beta = np.full((n_steps + 1, n_states), -np.inf)
    alpha[0, 0] = 0.0
    beta[n_steps, 0] = 0.0

    # Branch metric 0.5·Σ(1−2c)L + 0.5·(1−2u)La; tail inputs are 0
    gamma = np.full((n_steps, n_states, 2), -np.inf)
    for t in range(n_steps):
        n_inputs = 2 if t < n_info else 1
        for s in range(n_states):
            for u in range(n_inputs):
                g = 0.5 * ((1 - 2 * outputs[s, u, 0]) * coded_llr[2 * t]
                           + (1 - 2 * outputs[s, u, 1]) * coded_llr[2 * t + 1])
                if t < n_info:
                    g += 0.5 * (1 - 2 * u) * apriori[t]
                gamma[t, s, u] = g

    for t in range(n_steps):
        for s in range(n_states):
            if alpha[t, s] == -np.inf:
                continue
            for u in range(2):
                if gamma[t, s, u] == -np.inf:
                    continue
                ns = next_state[s, u]
                value = alpha[t, s] + gamma[t, s, u]
                if value > alpha[t + 1, ns]:
                    alpha[t + 1, ns] = value

    for t in range(n_steps - 1, -1, -1):
        for s in range(n_states):
            for u in range(2):
                if gamma[t, s, u] == -np.inf:
                    continue
                value = gamma[t, s, u] + beta[t + 1, next_state[s, u]]
                if value > beta[t, s]:
                    beta[t, s] = value

    info_llr = np.zeros(n_info)
    coded_posterior = np.zeros(2 * n_steps)
    for t in range(n_steps):
        best_u = np.full(2, -np.inf)
        best_c = np.full((2, 2), -np.inf)
        for s in range(n_states):
            if alpha[t, s] == -np.inf:
                continue
            for u in range(2):
                if gamma[t, s, u] == -np.inf:
                    continue
                value = alpha[t, s] + gamma[t, s, u] + beta[t + 1, next_state[s, u]]
                if value > best_u[u]:
                    best_u[u] = value
                for j in range(2):
                    c = outputs[s, u, j]
                    if value > best_c[j, c]:
                        best_c[j, c] = value
        if t < n_info:
            info_llr[t] = best_u[0] - best_u[1]
        for j in range(2):
            if best_c[j, 0] == -np.inf and best_c[j, 1] == -np.inf:
                coded_posterior[2 * t + j] = 0.0
            else:
                coded_posterior[2 * t + j] = best_c[j, 0] - best_c[j, 1]
    return info_llr, coded_posterior


def bcjr_decode(coded_llr: np.ndarray, apriori_info: Optional[np.ndarray] = None,
                llr_clip: Optional[float] = None,
                counters: Optional[ComplexityCounters] = None) -> DecoderOutput:
    """Max-log BCJR over the 64-state zero-tail trellis; coded_llr is the depunctured mother stream"""
    coded_llr = np.asarray(coded_llr, dtype=float)
    if coded_llr.ndim != 1 or coded_llr.size % 2 or coded_llr.size < 2 * (TAIL_BITS + 1):
        raise DecoderError(
            f"coded LLR length {coded_llr.size} does not match a zero-tail rate-1/2 trellis",
            f"expected an even length ≥ {2 * (TAIL_BITS + 1)}")
    n_info = coded_llr.size // 2 - TAIL_BITS
    if apriori_info is None:
        apriori_info = np.zeros(n_info)
    apriori_info = np.asarray(apriori_info, dtype=float)
    if apriori_info.size != n_info:
        raise DecoderError(f"a priori length {apriori_info.size} does not match {n_info} information bits")

    info_llr, coded_posterior = _bcjr_kernel(coded_llr, apriori_info, n_info, NEXT_STATE, OUTPUT_BITS)
    if counters is not None:
        counters.decoder_ops += ComplexityModel.bcjr_ops(coded_llr.size // 2)
    coded_extrinsic = coded_posterior - coded_llr
    info_llr = clip_llr(info_llr, llr_clip)
    return DecoderOutput(
        info_llr=info_llr,
        coded_extrinsic=clip_llr(coded_extrinsic, llr_clip),
        hard_bits=(info_llr < 0).astype(np.int64),
        coded_posterior=coded_posterior,
    )


def decode_codeword(llr_rx: np.ndarray, layout: CodewordLayout, llr_clip: Optional[float] = None,
                    counters: Optional[ComplexityCounters] = None) -> DecoderOutput:
    """Deinterleave, combine repeated copies, decode"""
    return bcjr_decode(layout.recover(llr_rx), llr_clip=llr_clip, counters=counters)


@dataclass
class IddResult:
    """Decoder outputs per iteration (outer list) and user (inner list)"""
    iterations: List[List[DecoderOutput]]
    truncated: np.ndarray

    @property
    def final(self) -> List[DecoderOutput]:
        return self.iterations[-1]


def idd_decode(Y: np.ndarray, Hs: np.ndarray, sigma2: float, layouts: Sequence[CodewordLayout],
               modulation_order: int, idd_iterations: int = 3, llr_clip: float = 16.0,
               node_budget: int = 0, counters: Optional[ComplexityCounters] = None) -> IddResult:
    """Sphere detector and per-user BCJR exchanging extrinsic LLRs for a fixed number of iterations.
    The channel factorization is computed once; only the tree search repeats per pass."""
    n_re, _, n_users = Hs.shape
    m = int(np.log2(modulation_order))
    for k, layout in enumerate(layouts):
        if layout.n_coded != n_re * m:
            raise DecoderError(f"user {k} codeword has {layout.n_coded} bits but {n_re * m} are detected")

    apriori = np.zeros((n_re, n_users, m))
    pass_counters = ComplexityCounters()
    truncated = np.zeros(n_re, dtype=bool)
    iterations: List[List[DecoderOutput]] = []
    factorization = factorize(Y, Hs, sigma2, modulation_order, pass_counters)

    for iteration in range(idd_iterations):
        detection = sphere_detect_batch(Y, Hs, sigma2, apriori, modulation_order, node_budget, pass_counters,
                                        factorization)
        truncated |= detection.truncated
        extrinsic = clip_llr(detection.llr - apriori, llr_clip)

        outputs = []
        for k, layout in enumerate(layouts):
            stream = extrinsic[:, k, :].reshape(-1)
            decoded = decode_codeword(stream, layout, llr_clip, pass_counters)
            outputs.append(decoded)
            apriori[:, k, :] = clip_llr(layout.spread(decoded.coded_posterior, stream), llr_clip).reshape(n_re, m)
        iterations.append(outputs)
        logger.debug(f"🔍 IDD iteration {iteration + 1}/{idd_iterations} done")

    # Every pass is charged; each RE is one detected RE
    pass_counters.detected_res = n_re
    pass_counters.truncated_res = int(truncated.sum())
    if counters is not None:
        counters.merge(pass_counters)
    return IddResult(iterations=iterations, truncated=truncated)
