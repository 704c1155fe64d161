"""Output SINR analysis and optimal weights for the zero-diagonal filter family.

The weighted filter's stage-m output for user k collapses to

    y_k^(m) = y_k^(1) - w_k^(m) * sum_{i != k} q_ki y_i^(1)

where the combining coefficients q_ki depend only on R and on the weights of
stages below m.  With unit-power Rayleigh fading and noise covariance
sigma2 * R, the per-user output SINR is an exact rational function of the
stage weight w, so the optimal weight is available in closed form.  All of
Fig.-1-style weight sweeps, per-stage optimal schedules, and the third-stage
equicorrelated SIR comparison live here.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from .filters import WeightSchedule, zero_diagonal

# relative threshold below which the optimum denominator counts as degenerate
_DEGENERATE_RTOL = 1e-13


@dataclass(frozen=True)
class QCoefficients:
    """Combining coefficients q_ki of one user's stage-m cancellation term."""

    user: int
    stage: int
    values: np.ndarray  # length K-1, interferers in ascending index order

    def full(self) -> np.ndarray:
        """The length-K vector with a zero inserted at the user's own index."""
        out = np.insert(self.values, self.user, 0.0)
        return out


@dataclass(frozen=True)
class SinrBreakdown:
    """Coefficients of the stage-m SINR as a function of the stage weight w.

    sinr(w) = A_k^2 (1 - a w)^2 / (sigma_I^2(w) + sigma_N^2(w)) with
    sigma_I^2 = b - 2 w d + w^2 c   (residual multiple-access interference)
    sigma_N^2 = sigma2 (1 - 2 w a + w^2 e)   (filtered noise, covariance R)

    w_opt is None when the optimum denominator vanishes (no unique optimum;
    happens for orthogonal sequences, R = I, where the curve is flat).
    """

    user: int
    stage: int
    amplitude: float
    sigma2: float
    a: float
    b: float
    c: float
    d: float
    e: float
    w_opt: float | None
    degenerate: bool

    def interference_power(self, w):
        w = np.asarray(w, dtype=float)
        return self.b - 2.0 * w * self.d + w**2 * self.c

    def noise_power(self, w):
        w = np.asarray(w, dtype=float)
        return self.sigma2 * (1.0 - 2.0 * w * self.a + w**2 * self.e)

    def sinr(self, w):
        w = np.asarray(w, dtype=float)
        num = self.amplitude**2 * (1.0 - self.a * w) ** 2
        return num / (self.interference_power(w) + self.noise_power(w))


def q_matrix(
    correlation: np.ndarray,
    prior_weights: WeightSchedule | None,
    stage: int,
) -> np.ndarray:
    """Full K x K matrix of combining coefficients q_ki at a given stage.

    Row k holds user k's coefficients (zero diagonal).  Computed by the
    matrix recursion equivalent of the weighted stage expansion:
    Q = -(C_1 + ... + C_{m-1}) with C_1 = I - R and
    C_n = zero_diagonal(C_{n-1} W_{m-n+1} (I - R)), which costs O(K^3) per
    stage instead of the nested interference sums' O(K^m).

    prior_weights must cover stages 2..m-1 (None means unit weights).  At
    m = 2 the coefficients are just the cross-correlations.
    """
    r = np.asarray(correlation, dtype=float)
    k = r.shape[0]
    if r.shape != (k, k):
        raise ValueError("correlation must be square")
    if stage < 2:
        raise ValueError("combining coefficients are defined for stages >= 2")
    if prior_weights is None:
        prior_weights = WeightSchedule.unit(k, max(stage - 1, 1))
    if stage > 2 and prior_weights.max_stage < stage - 1:
        raise ValueError(
            f"prior weights cover stages up to {prior_weights.max_stage}, "
            f"stage {stage} needs 2..{stage - 1}"
        )
    eye = np.eye(k)
    c_part = eye - r
    total = c_part.copy()
    for n in range(2, stage):
        w = prior_weights.stage(stage - n + 1)
        c_part = zero_diagonal(c_part @ (w[:, None] * (eye - r)))
        total += c_part
    return -total


def q_coefficients(
    correlation: np.ndarray,
    prior_weights: WeightSchedule | None,
    user: int,
    stage: int,
) -> QCoefficients:
    """One user's stage-m combining coefficients (interferers only, K-1 values)."""
    q_full = q_matrix(correlation, prior_weights, stage)
    k = q_full.shape[0]
    if not 0 <= user < k:
        raise ValueError(f"user {user} out of range for K={k}")
    row = q_full[user]
    return QCoefficients(user=user, stage=stage, values=np.delete(row, user))


def _breakdown_from_q(
    correlation: np.ndarray,
    q_row: np.ndarray,
    amplitudes: np.ndarray,
    sigma2: float,
    user: int,
    stage: int,
) -> SinrBreakdown:
    r = correlation
    k = r.shape[0]
    a2 = amplitudes**2
    mask = np.arange(k) != user
    rho_k = r[user]

    a = float(q_row @ rho_k)  # q_row[user] = 0 excludes the diagonal term
    b = float(np.sum(rho_k[mask] ** 2 * a2[mask]))
    g = r @ q_row  # g_i = q_i + sum_{l != i,k} q_l rho_li
    c = float(np.sum(g[mask] ** 2 * a2[mask]))
    d = float(np.sum(rho_k[mask] * g[mask] * a2[mask]))
    e = float(q_row @ r @ q_row)  # includes i = j terms; exact for noise cov sigma2 R

    num = d - a * b
    den = c - a * d + sigma2 * (e - a * a)
    scale = max(abs(c), abs(a * d), sigma2 * abs(e), sigma2 * a * a, 1.0)
    degenerate = abs(den) <= _DEGENERATE_RTOL * scale
    w_opt = None if degenerate else num / den
    return SinrBreakdown(
        user=user,
        stage=stage,
        amplitude=float(amplitudes[user]),
        sigma2=float(sigma2),
        a=a,
        b=b,
        c=c,
        d=d,
        e=e,
        w_opt=w_opt,
        degenerate=degenerate,
    )


def sinr_breakdown(
    correlation: np.ndarray,
    amplitudes: np.ndarray,
    sigma2: float,
    prior_weights: WeightSchedule | None,
    user: int,
    stage: int,
) -> SinrBreakdown:
    """Closed-form stage-m SINR coefficients and optimal weight for one user.

    The optimum w_opt = (d - ab) / (c - ad + sigma2 (e - a^2)) is the
    stationary point of sinr(w); for K = 2 and equal amplitudes it reduces to
    A^2 / (A^2 + sigma2) independent of the cross-correlation.
    """
    r = np.asarray(correlation, dtype=float)
    amps = np.asarray(amplitudes, dtype=float)
    k = r.shape[0]
    if amps.shape != (k,):
        raise ValueError("amplitudes must have length K")
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    if not 0 <= user < k:
        raise ValueError(f"user {user} out of range for K={k}")
    q_full = q_matrix(r, prior_weights, stage)
    return _breakdown_from_q(r, q_full[user], amps, sigma2, user, stage)


def sinr_sweep(
    correlation: np.ndarray,
    amplitudes: np.ndarray,
    sigma2: float,
    prior_weights: WeightSchedule | None,
    user: int,
    stage: int,
    weights: np.ndarray,
) -> np.ndarray:
    """Evaluate the stage-m SINR over a grid of weights.

    Returns an (n, 2) array of (w, sinr) pairs, sinr in linear units.
    """
    bd = sinr_breakdown(correlation, amplitudes, sigma2, prior_weights, user, stage)
    w = np.asarray(weights, dtype=float)
    return np.column_stack([w, bd.sinr(w)])


def compute_weight_schedule(
    correlation: np.ndarray,
    amplitudes: np.ndarray,
    sigma2: float,
    max_stage: int,
) -> WeightSchedule:
    """Per-stage optimal weights for all users, stages 2..max_stage.

    Stage m's coefficients are computed with all lower stages already at
    their optimal weights, so the schedule is built bottom-up and is
    deterministic.  A degenerate optimum (flat SINR, e.g. R = I) falls back
    to weight 1 for that user and is marked in the schedule's degenerate
    mask.
    """
    r = np.asarray(correlation, dtype=float)
    amps = np.asarray(amplitudes, dtype=float)
    k = r.shape[0]
    if max_stage < 2:
        raise ValueError("max_stage must be >= 2")
    rows = np.zeros((0, k))
    degen = np.zeros((0, k), dtype=bool)
    for m in range(2, max_stage + 1):
        prior = WeightSchedule(rows) if m > 2 else None
        q_full = q_matrix(r, prior, m)
        w_row = np.empty(k)
        d_row = np.empty(k, dtype=bool)
        for user in range(k):
            bd = _breakdown_from_q(r, q_full[user], amps, sigma2, user, m)
            d_row[user] = bd.degenerate
            w_row[user] = 1.0 if bd.degenerate else bd.w_opt
        rows = np.vstack([rows, w_row])
        degen = np.vstack([degen, d_row])
    return WeightSchedule(rows, degenerate=degen)


@dataclass(frozen=True)
class EquicorrSirReport:
    """Third-stage output SIR comparison for an equicorrelated channel.

    sir_gain is the amplitude-domain improvement factor of the zero-diagonal
    filter over the conventional one, i.e. sqrt(sir_proposed /
    sir_conventional); it exceeds 1 exactly when (K-1) rho < 1 (for rho > 0).
    """

    users: int
    rho: float
    sir_conventional: float
    sir_proposed: float
    sir_gain: float
    converges: bool


def equicorr_sir_report(users: int, rho: float) -> EquicorrSirReport:
    """Closed-form third-stage SIRs and their ratio for R equicorrelated.

    Noiseless, unit amplitudes.  The conventional filter's interference
    carries an extra (K-1) rho^3 per-interferer term that the zero-diagonal
    filter does not regenerate, which is the entire gap.
    """
    k = users
    if k < 3:
        raise ValueError("the third-stage comparison needs K >= 3")
    if rho == 0:
        raise ValueError("rho must be nonzero (both SIRs are infinite at rho = 0)")
    if not -1.0 / (k - 1) <= rho <= 1.0:
        raise ValueError(f"rho={rho} outside the PSD range for K={k}")

    sig_conv = 1.0 + (k - 1) * (k - 2) * rho**3
    per_interferer_conv = (k - 1) * rho**3 + (k - 2) ** 2 * rho**3
    sir_conv = sig_conv**2 / ((k - 1) * per_interferer_conv**2)

    sig_prop = 1.0 - (k - 1) * rho**2 + (k - 1) * (k - 2) * rho**3
    per_interferer_prop = (k - 2) ** 2 * rho**3
    sir_prop = sig_prop**2 / ((k - 1) * per_interferer_prop**2)

    gain = 1.0 + (k - 1) * (1.0 - (k - 2) * rho) * (1.0 + (k - 2) * rho - (k - 1) * rho**2) / (
        (k - 2) ** 2 * (1.0 + (k - 1) * (k - 2) * rho**3)
    )
    return EquicorrSirReport(
        users=k,
        rho=float(rho),
        sir_conventional=sir_conv,
        sir_proposed=sir_prop,
        sir_gain=gain,
        converges=(k - 1) * rho < 1.0,
    )
