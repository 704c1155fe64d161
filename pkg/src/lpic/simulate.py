"""Monte Carlo BER harness and SINR sweep runner.

Determinism contract: a (config, seed) pair fully determines every record.
Trials are partitioned into fixed-size blocks, each block gets its own
SeedSequence child, and worker threads (LPIC_THREADS) only distribute whole
blocks, so results are bit-identical for any worker count.  Near-far profiles
scale amplitudes after the draws, so bit/fading/noise streams are shared
between profiles at the same seed.

Error counting uses the desired user 0 only unless count_all_users is set,
in which case the detector label gains an "[all-users]" suffix and the
trials field counts bits (trials x K).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import ceil, log10, sqrt

import numpy as np

from .config import ConfigError, ExperimentConfig
from .filters import build_filter
from .model import (
    NotPositiveSemidefiniteError,
    convergence_check,
    correlation_matrix,
    generate_spreading_set,
    noise_transform,
)
from .sinr import compute_weight_schedule, sinr_sweep

THREADS_ENV = "LPIC_THREADS"

_BLOCK_TRIALS = 8192   # fixed: part of the deterministic draw structure
_MAX_REDRAWS = 1000    # sequence redraw attempts before giving up
_Z95 = 1.959963984540054

BER_CSV_HEADER = "detector,stage,receiver,snr_db,trials,bit_errors,ber,ci_low,ci_high,nonconv"
SINR_CSV_HEADER = "user,stage,weight,sinr_db"


@dataclass(frozen=True)
class BerRecord:
    detector: str
    stage: int
    receiver: str
    snr_db: float
    trials: int        # bits counted; 0 flags a failed detector
    bit_errors: int
    ber: float
    ci_low: float
    ci_high: float
    nonconv: int = 0   # draws with lambda_max(R_eff) >= 2; combined-domain runs only


@dataclass(frozen=True)
class SinrPoint:
    user: int
    stage: int
    weight: float
    sinr_db: float


def default_threads() -> int:
    value = os.environ.get(THREADS_ENV, "").strip()
    if not value:
        return 1
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return threads


def wilson_interval(errors: int, trials: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion (95% by default).

    Always contains errors/trials; collapses sensibly at 0 and trials.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= errors <= trials:
        raise ValueError("errors must be in 0..trials")
    p = errors / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2.0 * trials)) / denom
    half = z * sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)) / denom
    # the score endpoints are exactly 0 / 1 at the boundary counts; rounding
    # in center - half can leave ~1e-18 residue there, breaking containment
    lo = 0.0 if errors == 0 else max(0.0, center - half)
    hi = 1.0 if errors == trials else min(1.0, center + half)
    return (lo, hi)


# --- CSV ------------------------------------------------------------------

def _fmt(value: float) -> str:
    return f"{value:.17g}"


def render_ber_csv(records: list[BerRecord]) -> str:
    lines = [BER_CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.detector},{r.stage},{r.receiver},{_fmt(r.snr_db)},{r.trials},"
            f"{r.bit_errors},{_fmt(r.ber)},{_fmt(r.ci_low)},{_fmt(r.ci_high)},{r.nonconv}"
        )
    return "\n".join(lines) + "\n"


def emit_csv(records: list[BerRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_ber_csv(records))


def parse_records(text: str) -> list[BerRecord]:
    """Inverse of render_ber_csv; floats round-trip exactly at 17 digits."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != BER_CSV_HEADER:
        raise ValueError("not a BER record CSV (bad header)")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 10:
            raise ValueError(f"bad record line: {ln!r}")
        out.append(
            BerRecord(
                detector=parts[0],
                stage=int(parts[1]),
                receiver=parts[2],
                snr_db=float(parts[3]),
                trials=int(parts[4]),
                bit_errors=int(parts[5]),
                ber=float(parts[6]),
                ci_low=float(parts[7]),
                ci_high=float(parts[8]),
                nonconv=int(parts[9]),
            )
        )
    return out


def render_sinr_csv(points: list[SinrPoint]) -> str:
    lines = [SINR_CSV_HEADER]
    for p in points:
        lines.append(f"{p.user},{p.stage},{_fmt(p.weight)},{_fmt(p.sinr_db)}")
    return "\n".join(lines) + "\n"


# --- experiment setup -----------------------------------------------------

@dataclass
class _Context:
    """Everything fixed across trials of one experiment."""

    cfg: ExperimentConfig
    correlations: np.ndarray   # (M, K, K)
    factors: np.ndarray        # (M, K, K) noise shaping
    amplitudes: np.ndarray
    sigma2: float
    live: list                 # [(DetectorSpec, kind context)]
    failed: dict               # DetectorSpec -> reason


def _draw_correlations(cfg: ExperimentConfig, rng: np.random.Generator):
    """Spreading draw with the documented redraw policy.

    Redraws on a non-factorizable correlation matrix, and (when
    require_convergent is set) until every subcarrier satisfies
    lambda_max < 2.  Deterministic given the rng state.
    """
    draws = 1 if cfg.subcarrier_sequences == "identical" else cfg.subcarriers
    for _ in range(_MAX_REDRAWS):
        mats = [
            correlation_matrix(generate_spreading_set(cfg.users, cfg.chips, rng))
            for _ in range(draws)
        ]
        if draws == 1 and cfg.subcarriers > 1:
            mats = mats * cfg.subcarriers
        try:
            factors = [noise_transform(r) for r in mats]
        except NotPositiveSemidefiniteError:
            continue
        if cfg.require_convergent and not all(
            convergence_check(r).converges for r in mats
        ):
            continue
        return np.stack(mats), np.stack(factors)
    raise RuntimeError(f"no acceptable spreading draw in {_MAX_REDRAWS} attempts")


def _prepare_detectors(cfg: ExperimentConfig, correlations, sigma2, amplitudes):
    """Build per-detector contexts; construction failures are isolated."""
    live, failed = [], {}
    weighted_stages = [d.stage for d in cfg.detectors if d.kind == "weighted_proposed"]
    schedules = None
    if weighted_stages:
        top = max(max(weighted_stages), 2)
        try:
            schedules = [
                compute_weight_schedule(r, amplitudes, sigma2, top) for r in correlations
            ]
        except Exception as exc:  # schedule failure downs only the weighted detectors
            schedules = exc

    for spec in cfg.detectors:
        try:
            if spec.kind == "weighted_proposed" and isinstance(schedules, Exception):
                raise schedules
            if cfg.receiver == "single":
                filt = build_filter(
                    spec.kind,
                    correlations[0],
                    spec.stage,
                    sigma2=sigma2,
                    schedule=schedules[0] if spec.kind == "weighted_proposed" else None,
                )
                live.append((spec, ("matrix", filt.matrix)))
            elif cfg.receiver == "type1":
                stack = np.stack(
                    [
                        build_filter(
                            spec.kind,
                            correlations[i],
                            spec.stage,
                            sigma2=sigma2,
                            schedule=schedules[i] if spec.kind == "weighted_proposed" else None,
                        ).matrix
                        for i in range(cfg.subcarriers)
                    ]
                )
                live.append((spec, ("stack", stack)))
            else:  # type2: combined-domain filters are per-realization
                if spec.kind == "mf":
                    live.append((spec, ("t2_mf", None)))
                elif spec.kind == "conventional":
                    live.append((spec, ("t2_conv", spec.stage)))
                elif spec.kind == "proposed":
                    live.append((spec, ("t2_prop", spec.stage)))
                elif spec.kind == "decorrelator":
                    live.append((spec, ("t2_dc", None)))
                elif spec.kind == "mmse":
                    stack = np.stack(
                        [
                            build_filter("mmse", correlations[i], 1, sigma2=sigma2).matrix
                            for i in range(cfg.subcarriers)
                        ]
                    )
                    live.append((spec, ("t2_stack", stack)))
                else:
                    raise ConfigError(
                        f"{spec.kind} has no combined-domain form (receiver=type2)"
                    )
        except Exception as exc:
            failed[spec] = f"{type(exc).__name__}: {exc}"
    return live, failed


# --- block simulation -----------------------------------------------------

def _draw_block(rng: np.random.Generator, ctx: _Context, size: int):
    """Draw one block of trials; fixed draw order (bits, channel, noise)."""
    k, m = ctx.cfg.users, ctx.cfg.subcarriers
    bits = (rng.integers(0, 2, size=(size, k)) * 2 - 1).astype(np.float64)
    h = sqrt(0.5) * (
        rng.standard_normal((size, m, k)) + 1j * rng.standard_normal((size, m, k))
    )
    w = sqrt(ctx.sigma2 / 2.0) * (
        rng.standard_normal((size, m, k)) + 1j * rng.standard_normal((size, m, k))
    )
    noise = np.einsum("ikl,bil->bik", ctx.factors, w)
    x = (ctx.amplitudes * bits)[:, None, :] * h
    y = np.einsum("ikl,bil->bik", ctx.correlations, x) + noise
    return bits, h, y


def _count_errors(decisions, bits, all_users: bool) -> int:
    if all_users:
        return int(np.count_nonzero(decisions != bits))
    return int(np.count_nonzero(decisions[:, 0] != bits[:, 0]))


def _decide(stat: np.ndarray) -> np.ndarray:
    return np.where(np.real(stat) < 0, -1.0, 1.0)


def _detect_block(ctx: _Context, bits, h, y):
    """Evaluate every live detector on one drawn block; returns counts."""
    cfg = ctx.cfg
    counts = {}
    nonconv = 0
    if cfg.receiver == "single":
        y1, h1 = y[:, 0, :], h[:, 0, :]
        for spec, (tag, matrix) in ctx.live:
            stat = np.conj(h1) * (y1 @ matrix.T)
            counts[spec] = _count_errors(_decide(stat), bits, cfg.count_all_users)
        return counts, nonconv

    if cfg.receiver == "type1":
        for spec, (tag, stack) in ctx.live:
            filtered = np.einsum("ikl,bil->bik", stack, y)
            stat = np.sum(np.conj(h) * filtered, axis=1)
            counts[spec] = _count_errors(_decide(stat), bits, cfg.count_all_users)
        return counts, nonconv

    # type2: combine first, then per-realization combined-domain filters
    k = cfg.users
    y_c = np.sum(np.conj(h) * y, axis=1)
    power = np.sum(np.abs(h) ** 2, axis=1)                       # (B, K)
    r_c = np.zeros((y.shape[0], k, k), dtype=complex)
    for i in range(cfg.subcarriers):
        r_c += np.conj(h[:, i, :])[:, :, None] * ctx.correlations[i][None] * h[:, i, :][:, None, :]
    r_eff = r_c / power[:, None, :]

    # R_eff is similar to the Hermitian s^-1 R_c s^-1 (s = sqrt of power), so
    # its eigenvalues are real; count draws outside the convergence region.
    s = np.sqrt(power)
    herm = r_c / (s[:, :, None] * s[:, None, :])
    lam_max = np.linalg.eigvalsh(herm)[:, -1]
    nonconv = int(np.count_nonzero(lam_max >= 2.0))

    eye = np.eye(k)
    for spec, (tag, payload) in ctx.live:
        if tag == "t2_mf":
            stat = y_c
        elif tag == "t2_conv":
            stat = y_c.copy()
            for _ in range(payload - 1):
                stat = y_c + stat - np.einsum("bkl,bl->bk", r_eff, stat)
        elif tag == "t2_prop":
            step = eye[None] - r_eff
            part = None
            stat = y_c.copy()
            for _ in range(payload - 1):
                part = step.copy() if part is None else part @ step
                part[:, np.arange(k), np.arange(k)] = 0.0
                stat = stat + np.einsum("bkl,bl->bk", part, y_c)
        elif tag == "t2_dc":
            stat = np.linalg.solve(r_eff, y_c[:, :, None])[:, :, 0]
        else:  # t2_stack: per-subcarrier filters, then combine
            filtered = np.einsum("ikl,bil->bik", payload, y)
            stat = np.sum(np.conj(h) * filtered, axis=1)
        counts[spec] = _count_errors(_decide(stat), bits, cfg.count_all_users)
    return counts, nonconv


def _block_fixed(ctx: _Context, seed_seq, size: int):
    rng = np.random.default_rng(seed_seq)
    bits, h, y = _draw_block(rng, ctx, size)
    counts, nonconv = _detect_block(ctx, bits, h, y)
    return counts, nonconv, {}


def _block_per_trial(cfg: ExperimentConfig, seed_seq, size: int):
    """Per-trial spreading redraw: sequences, bits, channel, noise per trial.

    Orders of magnitude slower than fixed mode (filters are rebuilt every
    trial); intended for small desk checks of sequence-averaged behavior.
    """
    rng = np.random.default_rng(seed_seq)
    amplitudes = cfg.amplitudes()
    sigma2 = cfg.sigma2()
    counts: dict = {}
    failed: dict = {}
    nonconv = 0
    for _ in range(size):
        correlations, factors = _draw_correlations(cfg, rng)
        live, fail_now = _prepare_detectors(cfg, correlations, sigma2, amplitudes)
        failed.update(fail_now)
        trial_ctx = _Context(
            cfg=cfg,
            correlations=correlations,
            factors=factors,
            amplitudes=amplitudes,
            sigma2=sigma2,
            live=live,
            failed=failed,
        )
        bits, h, y = _draw_block(rng, trial_ctx, 1)
        got, nc = _detect_block(trial_ctx, bits, h, y)
        nonconv += nc
        for spec, errs in got.items():
            counts[spec] = counts.get(spec, 0) + errs
    return counts, nonconv, failed


def run_ber_experiment(cfg: ExperimentConfig, threads: int | None = None) -> list[BerRecord]:
    """Run the configured Monte Carlo BER experiment.

    Returns one record per detector in (kind, stage) order.  A detector whose
    filters cannot be constructed yields a flagged row (trials=0, ber=nan)
    while the others proceed.
    """
    threads = default_threads() if threads is None else threads
    if threads < 1:
        raise ConfigError("threads must be >= 1")

    root = np.random.SeedSequence(cfg.seed)
    seq_ss, blocks_parent = root.spawn(2)
    amplitudes = cfg.amplitudes()
    sigma2 = cfg.sigma2()

    ctx = None
    failed_fixed: dict = {}
    if cfg.sequence_mode == "fixed":
        correlations, factors = _draw_correlations(cfg, np.random.default_rng(seq_ss))
        live, failed_fixed = _prepare_detectors(cfg, correlations, sigma2, amplitudes)
        ctx = _Context(
            cfg=cfg,
            correlations=correlations,
            factors=factors,
            amplitudes=amplitudes,
            sigma2=sigma2,
            live=live,
            failed=failed_fixed,
        )

    n_blocks = ceil(cfg.trials / _BLOCK_TRIALS)
    sizes = [
        min(_BLOCK_TRIALS, cfg.trials - i * _BLOCK_TRIALS) for i in range(n_blocks)
    ]
    block_seeds = blocks_parent.spawn(n_blocks)

    if cfg.sequence_mode == "fixed":
        work = lambda args: _block_fixed(ctx, args[0], args[1])
    else:
        work = lambda args: _block_per_trial(cfg, args[0], args[1])

    totals: dict = {}
    nonconv_total = 0
    failed = dict(failed_fixed)
    jobs = list(zip(block_seeds, sizes))
    if threads == 1:
        results = map(work, jobs)
    else:
        pool = ThreadPoolExecutor(max_workers=threads)
        results = pool.map(work, jobs)
    for counts, nonconv, fail_now in results:
        nonconv_total += nonconv
        failed.update(fail_now)
        for spec, errs in counts.items():
            totals[spec] = totals.get(spec, 0) + errs
    if threads > 1:
        pool.shutdown()

    suffix = "[all-users]" if cfg.count_all_users else ""
    records = []
    for spec in cfg.detectors:
        label = spec.kind + suffix
        if spec in failed:
            records.append(
                BerRecord(
                    detector=label,
                    stage=spec.stage,
                    receiver=cfg.receiver,
                    snr_db=cfg.snr_db,
                    trials=0,
                    bit_errors=0,
                    ber=float("nan"),
                    ci_low=float("nan"),
                    ci_high=float("nan"),
                    nonconv=0,
                )
            )
            continue
        bits_counted = cfg.trials * (cfg.users if cfg.count_all_users else 1)
        errs = totals.get(spec, 0)
        lo, hi = wilson_interval(errs, bits_counted)
        records.append(
            BerRecord(
                detector=label,
                stage=spec.stage,
                receiver=cfg.receiver,
                snr_db=cfg.snr_db,
                trials=bits_counted,
                bit_errors=errs,
                ber=errs / bits_counted,
                ci_low=lo,
                ci_high=hi,
                nonconv=nonconv_total if cfg.receiver == "type2" else 0,
            )
        )
    return records


def run_sinr_experiment(cfg: ExperimentConfig) -> list[SinrPoint]:
    """Closed-form SINR-vs-weight sweep for the configured user and stages.

    Single carrier only.  Lower stages sit at their closed-form optimal
    weights while the swept stage's weight runs over the grid, so each curve
    is the one the weight optimizer sees.
    """
    if cfg.subcarriers != 1:
        raise ConfigError("SINR sweeps are defined for the single-carrier model (M=1)")
    root = np.random.SeedSequence(cfg.seed)
    seq_ss, _ = root.spawn(2)
    correlations, _factors = _draw_correlations(cfg, np.random.default_rng(seq_ss))
    r = correlations[0]
    amplitudes = cfg.amplitudes()
    sigma2 = cfg.sigma2()
    schedule = compute_weight_schedule(r, amplitudes, sigma2, max(cfg.sweep_stages))
    grid = cfg.weight_grid()
    points = []
    for stage in cfg.sweep_stages:
        for weight, value in sinr_sweep(
            r, amplitudes, sigma2, schedule, cfg.sweep_user, stage, grid
        ):
            points.append(
                SinrPoint(
                    user=cfg.sweep_user,
                    stage=stage,
                    weight=float(weight),
                    sinr_db=10.0 * log10(value),
                )
            )
    return points
