"""Exact reference computations used to check every approximate path.

Everything here is independent of the region-graph / GBP code: counts come
from enumeration or a transfer-matrix sweep with Python integers, and the
channel likelihoods are evaluated with scipy directly.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .constraint_model import INF, RllSpec, admissible_mask

MAX_BRUTE_FORCE_CELLS = 24
DEFAULT_STATE_BUDGET = 100_000


class CountMethod(enum.Enum):
    BRUTE_FORCE = "brute"
    TRANSFER_MATRIX = "transfer"


class OracleLimitError(ValueError):
    """Raised when an exact computation would exceed its size budget."""


def log2_int(n: int) -> float:
    """log2 of a nonnegative integer of any size, from its bit length and top bits."""
    if n < 0:
        raise ValueError("log2 of a negative count")
    if n == 0:
        return -math.inf
    shift = max(n.bit_length() - 62, 0)
    return math.log2(n >> shift) + shift


@dataclass(frozen=True)
class ExactCount:
    value: int
    method: CountMethod

    @property
    def log2(self) -> float:
        return log2_int(self.value)

    def capacity(self, n_cells: int) -> float:
        return self.log2 / n_cells


def _check_shape(spec: RllSpec, shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != spec.ndim:
        raise ValueError(f"shape {shape} does not match a {spec.ndim}-D constraint")
    if any(s < 1 for s in shape):
        raise ValueError(f"extents must be >= 1, got {shape}")
    return shape


def _all_arrays(shape, chunk: int = 1 << 16):
    n = int(np.prod(shape))
    if n > MAX_BRUTE_FORCE_CELLS:
        raise OracleLimitError(f"{n} cells exceeds the brute-force limit of {MAX_BRUTE_FORCE_CELLS}")
    shifts = np.arange(n, dtype=np.int64)
    total = 1 << n
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        bits = ((idx[:, None] >> shifts) & 1).astype(np.uint8)
        yield bits.reshape((-1,) + tuple(shape))


def admissible_arrays(spec: RllSpec, shape) -> np.ndarray:
    """Every admissible array of ``shape``, stacked on a leading axis."""
    shape = _check_shape(spec, shape)
    parts = [b[admissible_mask(b, spec)] for b in _all_arrays(shape)]
    return np.concatenate(parts, axis=0)


def brute_force_count(spec: RllSpec, shape) -> ExactCount:
    shape = _check_shape(spec, shape)
    total = sum(int(admissible_mask(b, spec).sum()) for b in _all_arrays(shape))
    return ExactCount(total, CountMethod.BRUTE_FORCE)


def _effective(d: int, k: float, length: int) -> tuple[int, float]:
    # kernels longer than the line place no windows
    if length < d + 1:
        d = 0
    if k != INF and length < k + 1:
        k = INF
    return d, k


def transfer_matrix_count(spec: RllSpec, m: int, n: int,
                          max_states: int = DEFAULT_STATE_BUDGET) -> ExactCount:
    """Exact count of admissible ``m x n`` arrays by a line-by-line transfer sweep.

    Lines run along the shorter axis.  Each column of the line state carries
    the number of zeros since the last 1 across lines (capped at ``d``) and,
    for finite ``k``, the current zero run (capped at ``k``).  The line
    transition is applied cell by cell, which factors the transfer matrix
    without ever forming it.
    """
    if spec.ndim != 2:
        raise ValueError("transfer-matrix counting needs a 2-D constraint")
    shape = _check_shape(spec, (m, n))
    line_axis = 0 if shape[0] <= shape[1] else 1
    cross_axis = 1 - line_axis
    L, T = shape[line_axis], shape[cross_axis]
    dl, kl = _effective(*spec.axes[line_axis], L)
    dt, kt = _effective(*spec.axes[cross_axis], T)

    Kt = 1 if kt == INF else kt + 1
    Kl = 1 if kl == INF else kl + 1
    V = (dt + 1) * Kt
    H = (dl + 1) * Kl
    if H * V ** L >= 2 ** 62:
        raise OracleLimitError(f"line state of width {L} does not fit the packed encoding")

    col_init = dt * Kt
    h_init = dl * Kl
    keys = np.array([h_init + H * sum(col_init * V ** j for j in range(L))], dtype=np.int64)
    counts = np.array([1], dtype=object)

    def step_col(code, bit):
        td, tk = code // Kt, code % Kt
        if bit:
            return np.zeros_like(code), td == dt
        ok = np.ones(code.shape, dtype=bool) if kt == INF else tk < kt
        new_tk = tk if kt == INF else np.minimum(tk + 1, kt)
        return np.minimum(td + 1, dt) * Kt + new_tk, ok

    def step_line(code, bit):
        hd, hk = code // Kl, code % Kl
        if bit:
            return np.zeros_like(code), hd == dl
        ok = np.ones(code.shape, dtype=bool) if kl == INF else hk < kl
        new_hk = hk if kl == INF else np.minimum(hk + 1, kl)
        return np.minimum(hd + 1, dl) * Kl + new_hk, ok

    for _ in range(T):
        for j in range(L):
            place = H * V ** j
            col = (keys // place) % V
            h = keys % H
            rest = keys - col * place - h
            new_keys, new_counts = [], []
            for bit in (0, 1):
                ncol, ok_c = step_col(col, bit)
                nh, ok_h = step_line(h, bit)
                ok = ok_c & ok_h
                if j == L - 1:
                    nh = np.full_like(nh, h_init)
                new_keys.append((rest + ncol * place + nh)[ok])
                new_counts.append(counts[ok])
            keys = np.concatenate(new_keys)
            counts = np.concatenate(new_counts)
            order = np.argsort(keys, kind="stable")
            keys = keys[order]
            uniq, first = np.unique(keys, return_index=True)
            counts = np.add.reduceat(counts[order], first) if len(first) else counts[:0]
            keys = uniq
            if len(keys) > max_states:
                raise OracleLimitError(f"{len(keys)} transfer states exceed the budget of {max_states}")
    return ExactCount(int(sum(counts)), CountMethod.TRANSFER_MATRIX)


def exact_count(spec: RllSpec, shape) -> ExactCount:
    """Brute force when small enough, otherwise the transfer sweep (2-D only)."""
    shape = _check_shape(spec, shape)
    if int(np.prod(shape)) <= 16:
        return brute_force_count(spec, shape)
    if spec.ndim == 2:
        return transfer_matrix_count(spec, *shape)
    return brute_force_count(spec, shape)


def exact_marginal_fraction(spec: RllSpec, shape, variable) -> Fraction:
    shape = _check_shape(spec, shape)
    arrays = admissible_arrays(spec, shape)
    flat = arrays.reshape(len(arrays), -1)
    var = variable if isinstance(variable, (int, np.integer)) else np.ravel_multi_index(tuple(variable), shape)
    return Fraction(int(flat[:, int(var)].sum()), len(arrays))


def exact_marginal(spec: RllSpec, shape, variable) -> float:
    """P(x_variable = 1) under the uniform law on admissible arrays."""
    return float(exact_marginal_fraction(spec, shape, variable))


def exact_output_log_probability(spec: RllSpec, shape, y, sigma: float) -> float:
    """ln p(y) for BPSK inputs uniform over admissible arrays and AWGN of std ``sigma``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    shape = _check_shape(spec, shape)
    arrays = admissible_arrays(spec, shape).reshape(-1, int(np.prod(shape))).astype(float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != arrays.shape[1]:
        raise ValueError("output y does not match the grid")
    loglik = norm.logpdf(y[None, :], loc=2.0 * arrays - 1.0, scale=sigma).sum(axis=1)
    return float(logsumexp(loglik) - math.log(len(arrays)))


def exact_output_probability(spec: RllSpec, shape, y, sigma: float) -> float:
    return math.exp(exact_output_log_probability(spec, shape, y, sigma))
