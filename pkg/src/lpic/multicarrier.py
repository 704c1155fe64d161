"""Multicarrier reception: per-subcarrier cancellation and combined-domain filters.

Two receiver arrangements for M subcarriers carrying the same symbol:

  * Type I: run a single-carrier matrix filter independently on every
    subcarrier's matched filter bank, then maximal-ratio combine the filtered
    outputs with the conjugate channel.
  * Type II: maximal-ratio combine the matched filter banks first, then run
    one filter in the combined domain.  The combined output obeys
    y_c = R_c (A b) + z with R_c = sum_i H_i^H R_i H_i, noise covariance
    sigma2 R_c, and the cancellation series is driven by the effective matrix
    R_eff = R_c D^-1 where D = diag(sum_i |h_{k,i}|^2).  R_eff is complex and
    non-Hermitian in general but is similar to a Hermitian PSD matrix, so its
    eigenvalues are real and the usual lambda_max < 2 condition applies.

Decisions in both arrangements are sign(Re(.)) on the combined statistic; no
further channel conjugation is applied after combining.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .filters import MatrixFilter, WeightSchedule, build_filter, zero_diagonal

# filter kinds with a defined combined-domain (Type II) form
TYPE2_KINDS = ("mf", "conventional", "proposed", "decorrelator", "mmse")


@dataclass(frozen=True)
class McEffectiveModel:
    """Combined-domain matrices for one fading realization."""

    combined_correlation: np.ndarray  # R_c, complex K x K, Hermitian
    branch_power: np.ndarray          # diag of D, real (K,)
    effective_correlation: np.ndarray  # R_eff = R_c D^-1, complex K x K

    @property
    def users(self) -> int:
        return self.branch_power.shape[0]


def _check_mc_shapes(outputs, correlations, channel):
    y = np.asarray(outputs)
    r = np.asarray(correlations, dtype=float)
    h = np.asarray(channel)
    if h.ndim != 2:
        raise ValueError("channel must be (M, K)")
    m, k = h.shape
    if y.shape != (m, k):
        raise ValueError(f"outputs must have shape {(m, k)}, got {y.shape}")
    if r.shape != (m, k, k):
        raise ValueError(f"correlations must have shape {(m, k, k)}, got {r.shape}")
    return y, r, h


def mcc_combine(outputs: np.ndarray, channel: np.ndarray) -> np.ndarray:
    """Maximal-ratio combine per-subcarrier statistics: sum_i conj(h_i) y_i."""
    y = np.asarray(outputs)
    h = np.asarray(channel)
    if y.shape != h.shape or y.ndim != 2:
        raise ValueError("outputs and channel must both be (M, K)")
    return np.sum(np.conj(h) * y, axis=0)


def effective_matrices(correlations: np.ndarray, channel: np.ndarray) -> McEffectiveModel:
    """Combined correlation R_c, branch power D, and R_eff for one realization."""
    r = np.asarray(correlations, dtype=float)
    h = np.asarray(channel)
    if h.ndim != 2 or r.shape != (h.shape[0], h.shape[1], h.shape[1]):
        raise ValueError("need channel (M, K) and correlations (M, K, K)")
    combined = np.zeros((h.shape[1], h.shape[1]), dtype=complex)
    for i in range(h.shape[0]):
        combined += np.conj(h[i])[:, None] * r[i] * h[i][None, :]
    power = np.sum(np.abs(h) ** 2, axis=0)
    if np.any(power == 0):
        raise ValueError("branch power vanished for some user (all-zero channel)")
    effective = combined / power[None, :]
    return McEffectiveModel(
        combined_correlation=combined,
        branch_power=power,
        effective_correlation=effective,
    )


def build_conventional_mcc(model: McEffectiveModel, stage: int) -> MatrixFilter:
    """Combined-domain truncated series I + (I - R_eff) + ... + (I - R_eff)^(m-1)."""
    if stage < 1:
        raise ValueError("stage must be >= 1")
    r = model.effective_correlation
    eye = np.eye(model.users, dtype=complex)
    g = eye.copy()
    for _ in range(stage - 1):
        g = eye + (eye - r) @ g
    return MatrixFilter(g, kind="conventional", stage=stage)


def build_proposed_mcc(model: McEffectiveModel, stage: int) -> MatrixFilter:
    """Combined-domain zero-diagonal filter: sum of B_j over R_eff."""
    if stage < 1:
        raise ValueError("stage must be >= 1")
    r = model.effective_correlation
    eye = np.eye(model.users, dtype=complex)
    part = eye.copy()
    total = eye.copy()
    for _ in range(stage - 1):
        part = zero_diagonal(part @ (eye - r))
        total = total + part
    return MatrixFilter(total, kind="proposed", stage=stage)


def type1_receive(
    kind: str,
    stage: int,
    outputs: np.ndarray,
    correlations: np.ndarray,
    channel: np.ndarray,
    sigma2: float | None = None,
    schedules: Sequence[WeightSchedule] | None = None,
) -> np.ndarray:
    """Per-subcarrier filtering, then combining, then decisions.

    Any single-carrier filter kind works here; the mmse family needs sigma2
    and weighted_proposed needs one schedule per subcarrier.
    """
    y, r, h = _check_mc_shapes(outputs, correlations, channel)
    m = h.shape[0]
    if schedules is not None and len(schedules) != m:
        raise ValueError("need one weight schedule per subcarrier")
    filtered = np.empty_like(y)
    for i in range(m):
        filt = build_filter(
            kind,
            r[i],
            stage,
            sigma2=sigma2,
            schedule=None if schedules is None else schedules[i],
        )
        filtered[i] = filt.apply(y[i])
    combined = mcc_combine(filtered, h)
    return np.where(np.real(combined) < 0, -1, 1).astype(np.int8)


def type2_receive(
    kind: str,
    stage: int,
    outputs: np.ndarray,
    correlations: np.ndarray,
    channel: np.ndarray,
    sigma2: float | None = None,
) -> np.ndarray:
    """Combining first, then one filter in the combined domain, then decisions.

    Supported kinds: mf, conventional, proposed, decorrelator (exact R_eff
    inverse; noiseless it returns D A b), and mmse.  The mmse baseline here is
    defined as per-subcarrier single-carrier MMSE filters followed by
    combining, since the combined-domain noise covariance sigma2 R_c admits no
    single whitened (R + sigma2 I) form.  The stage-weighted and
    eigenvalue-weighted kinds have no combined-domain definition and are
    rejected.
    """
    if kind not in TYPE2_KINDS:
        raise ValueError(f"kind {kind!r} has no combined-domain (Type II) form")
    y, r, h = _check_mc_shapes(outputs, correlations, channel)
    if kind == "mmse":
        if sigma2 is None:
            raise ValueError("mmse requires sigma2")
        return type1_receive("mmse", stage, y, r, h, sigma2=sigma2)
    combined = mcc_combine(y, h)
    if kind == "mf":
        stat = combined
    elif kind == "decorrelator":
        model = effective_matrices(r, h)
        stat = np.linalg.solve(model.effective_correlation, combined)
    else:
        model = effective_matrices(r, h)
        builder = build_conventional_mcc if kind == "conventional" else build_proposed_mcc
        stat = builder(model, stage).apply(combined)
    return np.where(np.real(stat) < 0, -1, 1).astype(np.int8)
