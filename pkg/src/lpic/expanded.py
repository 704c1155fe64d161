"""Brute-force stage-output expansions used as oracles for the matrix filters.

Everything here evaluates the multistage cancellation outputs as literal
nested interference sums (chains of cross-correlation factors), exactly as
they fall out of expanding the stage recursions term by term.  These
functions are deliberately naive: their value is that they share no code
path with the matrix-filter constructions, so agreement between the two is
meaningful.  Costs grow like K^m and are guarded accordingly.

A chain (k_1, ..., k_L) contributes rho_{k,k_L} rho_{k_L,k_{L-1}} ...
rho_{k_2,k_1} times the payload at k_1.  The conventional expansion
constrains k_L != k plus adjacent indices distinct; the zero-diagonal
expansion additionally forbids every index from equalling k, which is the
whole difference between the two filters at the term level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_COST_LIMIT = 10**7  # refuse enumerations with K^m beyond this


def _guard_cost(users: int, stage: int):
    if users**stage > _COST_LIMIT:
        raise ValueError(
            f"K^m = {users}^{stage} exceeds the expansion cost limit {_COST_LIMIT}"
        )


def _chain_sum(
    r: np.ndarray,
    k: int,
    length: int,
    payload: np.ndarray,
    exclude_all: bool,
    exclude_payload_end: bool = False,
):
    """Sum of rho-factor chains of a given length ending in payload[k_1].

    Chains satisfy k_L != k and adjacent-distinct; exclude_all additionally
    forbids k (the zero-diagonal constraint), exclude_payload_end forbids
    only k_1 = k.
    """
    users = r.shape[0]
    total = 0.0 + 0.0j

    def descend(remaining: int, prev: int, prod: complex):
        nonlocal total
        for c in range(users):
            if c == prev:
                continue
            if c == k and (exclude_all or (exclude_payload_end and remaining == 1)):
                continue
            p = prod * r[prev, c]
            if remaining == 1:
                total += p * payload[c]
            else:
                descend(remaining - 1, c, p)

    descend(length, k, 1.0)
    return total


@dataclass(frozen=True)
class Stage2Groups:
    """Second-stage output of user k split into its expansion groups.

    total = signal - signal_loss - new_interference + noise - cancelled_noise;
    the first-stage direct interference is fully cancelled and does not appear.
    """

    signal: complex
    signal_loss: complex
    new_interference: complex
    noise: complex
    cancelled_noise: complex

    def total(self) -> complex:
        return (
            self.signal
            - self.signal_loss
            - self.new_interference
            + self.noise
            - self.cancelled_noise
        )


def stage2_expanded(
    correlation: np.ndarray, symbols: np.ndarray, noise: np.ndarray, user: int
) -> Stage2Groups:
    """Literal second-stage expansion for effective symbols x and noise n."""
    r = np.asarray(correlation, dtype=float)
    x = np.asarray(symbols)
    n = np.asarray(noise)
    k = user
    users = r.shape[0]
    signal_loss = sum(r[k, j] * r[j, k] * x[k] for j in range(users) if j != k)
    new_interference = sum(
        r[k, j] * r[j, l] * x[l]
        for j in range(users)
        if j != k
        for l in range(users)
        if l != k and l != j
    )
    cancelled_noise = sum(r[k, j] * n[j] for j in range(users) if j != k)
    return Stage2Groups(
        signal=x[k],
        signal_loss=signal_loss,
        new_interference=new_interference,
        noise=n[k],
        cancelled_noise=cancelled_noise,
    )


@dataclass(frozen=True)
class Stage3Terms:
    """Third-stage output groups, kept as separately signed literal sums.

    The stage-3 correction re-adds what stage 2 took away: loss_restored
    cancels loss_outgoing exactly, carried_removed cancels
    carried_interference exactly, and what remains beyond the matched-filter
    terms is the regenerated direct interference/noise (conventional filter
    only) plus the third-order residual groups.
    """

    signal: complex
    noise: complex
    mf_noise_cancelled: complex       # sum_j rho_kj n_j, subtracted
    loss_outgoing: complex            # (sum_j rho_kj rho_jk) x_k, subtracted
    loss_restored: complex            # same sum re-added by the stage-3 correction
    carried_interference: complex     # stage-2 new interference, subtracted
    carried_removed: complex          # identical sum re-added (different nesting)
    direct_regenerated_interference: complex  # (sum_i rho_ki rho_ik)(sum_j rho_kj x_j)
    direct_regenerated_noise: complex         # (sum_i rho_ki rho_ik) n_k
    signal_expansion: complex         # third-order x_k term
    residual_interference: complex    # third-order interference survivors
    residual_noise: complex           # second-order noise survivors

    def total(self) -> complex:
        return (
            self.signal
            + self.noise
            - self.mf_noise_cancelled
            - self.loss_outgoing
            + self.loss_restored
            - self.carried_interference
            + self.carried_removed
            + self.direct_regenerated_interference
            + self.direct_regenerated_noise
            + self.signal_expansion
            + self.residual_interference
            + self.residual_noise
        )

    def zero_diag_total(self) -> complex:
        """Third-stage output of the zero-diagonal filter.

        Zeroing the diagonal drops the entire restored diagonal term at this
        stage: the re-added own-signal loss together with the regenerated
        direct interference and noise.  Everything else is unchanged, so the
        own-signal loss stays subtracted instead of being cancelled.
        """
        return (
            self.total()
            - self.loss_restored
            - self.direct_regenerated_interference
            - self.direct_regenerated_noise
        )


def stage3_terms(
    correlation: np.ndarray, symbols: np.ndarray, noise: np.ndarray, user: int
) -> Stage3Terms:
    """All third-stage groups as literal sums (no matrix algebra)."""
    r = np.asarray(correlation, dtype=float)
    x = np.asarray(symbols)
    n = np.asarray(noise)
    k = user
    users = r.shape[0]
    others = [j for j in range(users) if j != k]

    loss = sum(r[k, j] * r[j, k] for j in others) * x[k]
    carried = sum(
        r[k, j] * r[j, l] * x[l] for j in others for l in others if l != j
    )
    ring = sum(r[k, i] * r[i, k] for i in others)
    direct_int = ring * sum(r[k, j] * x[j] for j in others)
    direct_noise = ring * n[k]
    signal_exp = sum(
        r[k, i] * r[i, j] * r[j, k] for i in others for j in others if j != i
    ) * x[k]
    resid_int = sum(
        r[k, i] * r[i, j] * r[j, l] * x[l]
        for i in others
        for j in others
        if j != i
        for l in others
        if l != j
    )
    resid_noise = sum(r[k, i] * r[i, j] * n[j] for i in others for j in others if j != i)
    return Stage3Terms(
        signal=x[k],
        noise=n[k],
        mf_noise_cancelled=sum(r[k, j] * n[j] for j in others),
        loss_outgoing=loss,
        loss_restored=sum(r[k, i] * r[i, k] for i in others) * x[k],
        carried_interference=carried,
        carried_removed=sum(
            r[k, i] * r[i, j] * x[j] for i in others for j in others if j != i
        ),
        direct_regenerated_interference=direct_int,
        direct_regenerated_noise=direct_noise,
        signal_expansion=signal_exp,
        residual_interference=resid_int,
        residual_noise=resid_noise,
    )


def stagem_expanded_conventional(
    correlation: np.ndarray, first_stage: np.ndarray, user: int, stage: int
):
    """Stage-m conventional output of one user as nested chain sums.

    total = y_k + sum_{s=2..m} (-1)^(s+1) * [chains of length s-1 over the
    first-stage outputs], chains constrained to k_L != k and adjacent
    distinct only (interior indices may revisit k).
    """
    r = np.asarray(correlation, dtype=float)
    y1 = np.asarray(first_stage)
    users = r.shape[0]
    if stage < 1:
        raise ValueError("stage must be >= 1")
    _guard_cost(users, stage)
    total = y1[user] + 0.0j
    for s in range(2, stage + 1):
        total += (-1.0) ** (s + 1) * _chain_sum(r, user, s - 1, y1, exclude_all=False)
    return total


def stagem_expanded_proposed(
    correlation: np.ndarray, first_stage: np.ndarray, user: int, stage: int
):
    """Stage-m zero-diagonal output: same chains but no index may equal k."""
    r = np.asarray(correlation, dtype=float)
    y1 = np.asarray(first_stage)
    users = r.shape[0]
    if stage < 1:
        raise ValueError("stage must be >= 1")
    _guard_cost(users, stage)
    total = y1[user] + 0.0j
    for s in range(2, stage + 1):
        total += (-1.0) ** (s + 1) * _chain_sum(r, user, s - 1, y1, exclude_all=True)
    return total


@dataclass(frozen=True)
class StageMDecomposition:
    """Stage-m correction of the conventional filter split by what it acts on.

    The stage-(m-1) output is x_k + signal_shrinkage + prior_interference +
    prior_noise.  The stage-m correction splits by its innermost index: chains
    returning to user k's own first-stage output (own_*) and chains ending
    on an interferer's output (peer_*).  own_output_recovery cancels
    signal_shrinkage exactly and peer_output_removal cancels
    prior_interference exactly; the residues are the new, one-order-smaller
    interference and noise groups.
    """

    stage: int
    signal: complex
    signal_shrinkage: complex        # prior-stage x_k deficit
    prior_interference: complex      # prior-stage leftover interference
    prior_noise: complex             # prior-stage filtered noise
    own_output_recovery: complex     # x_k content of chains rooted at k_1 = k
    own_output_interference: complex
    own_output_noise: complex
    peer_output_removal: complex     # x_{k_1} content of chains with k_1 != k
    peer_output_interference: complex
    peer_output_noise: complex

    def previous_stage_output(self) -> complex:
        return self.signal + self.signal_shrinkage + self.prior_interference + self.prior_noise

    def stage_output(self) -> complex:
        return (
            self.previous_stage_output()
            + self.own_output_recovery
            + self.own_output_interference
            + self.own_output_noise
            + self.peer_output_removal
            + self.peer_output_interference
            + self.peer_output_noise
        )


def stagem_decomposition(
    correlation: np.ndarray,
    symbols: np.ndarray,
    noise: np.ndarray,
    user: int,
    stage: int,
) -> StageMDecomposition:
    """Split the conventional stage-m correction into cancelling pairs.

    Requires stage >= 4 (below that the split degenerates into the explicit
    third-stage groups).  All parts are literal chain sums.
    """
    r = np.asarray(correlation, dtype=float)
    x = np.asarray(symbols)
    n = np.asarray(noise)
    k = user
    users = r.shape[0]
    if stage < 4:
        raise ValueError("stagem_decomposition needs stage >= 4")
    _guard_cost(users, stage)

    sign_prev = (-1.0) ** stage       # sign of the stage-(m-1) leftover terms
    sign_corr = (-1.0) ** (stage + 1)  # sign of the stage-m correction

    # closed chains k -> c_{m-2} -> ... -> c_1 -> k (both ends away from k)
    ring_payload = r[:, k].astype(complex)
    ring = _chain_sum(r, k, stage - 2, ring_payload, exclude_all=False, exclude_payload_end=True)
    signal_shrinkage = sign_prev * ring * x[k]

    # open chains of length m-1 ending on an interferer index
    open_x = _chain_sum(r, k, stage - 1, x, exclude_all=False, exclude_payload_end=True)
    prior_interference = sign_prev * open_x

    mai = r @ x - np.diag(r) * x  # first-stage direct interference per user
    y1 = x + mai + n

    own_output_recovery = sign_corr * ring * x[k]
    own_output_interference = sign_corr * ring * mai[k]
    own_output_noise = sign_corr * ring * n[k]

    peer_output_removal = sign_corr * open_x
    peer_output_interference = sign_corr * _chain_sum(
        r, k, stage - 1, mai, exclude_all=False, exclude_payload_end=True
    )
    peer_output_noise = sign_corr * _chain_sum(
        r, k, stage - 1, n, exclude_all=False, exclude_payload_end=True
    )

    prior_noise = n[k] + 0.0j
    for s in range(2, stage):
        prior_noise += (-1.0) ** (s + 1) * _chain_sum(r, k, s - 1, n, exclude_all=False)

    return StageMDecomposition(
        stage=stage,
        signal=x[k] + 0.0j,
        signal_shrinkage=signal_shrinkage,
        prior_interference=prior_interference,
        prior_noise=prior_noise,
        own_output_recovery=own_output_recovery,
        own_output_interference=own_output_interference,
        own_output_noise=own_output_noise,
        peer_output_removal=peer_output_removal,
        peer_output_interference=peer_output_interference,
        peer_output_noise=peer_output_noise,
    )


# --- exact symbolic bookkeeping -------------------------------------------
#
# Monomial keys are (pairs, payload): pairs is the sorted multiset of
# cross-correlation index pairs (a, b) with a < b, payload is ("x", j) or
# ("n", j).  Coefficients are exact integers; zero coefficients are dropped,
# so "term present" means present after all cancellations.

MonomialKey = tuple[tuple[tuple[int, int], ...], tuple[str, int]]


def _sym_eye(users):
    return [[{(): 1} if i == j else {} for j in range(users)] for i in range(users)]


def _sym_eye_minus_r(users):
    out = [[{} for _ in range(users)] for _ in range(users)]
    for i in range(users):
        for j in range(users):
            if i != j:
                out[i][j] = {((min(i, j), max(i, j)),): -1}
    return out


def _sym_matmul(a, b):
    users = len(a)
    out = [[{} for _ in range(users)] for _ in range(users)]
    for i in range(users):
        for j in range(users):
            acc = {}
            for l in range(users):
                for t1, c1 in a[i][l].items():
                    for t2, c2 in b[l][j].items():
                        key = tuple(sorted(t1 + t2))
                        acc[key] = acc.get(key, 0) + c1 * c2
            out[i][j] = {key: c for key, c in acc.items() if c != 0}
    return out


def _sym_add(a, b):
    users = len(a)
    out = [[{} for _ in range(users)] for _ in range(users)]
    for i in range(users):
        for j in range(users):
            acc = dict(a[i][j])
            for key, c in b[i][j].items():
                acc[key] = acc.get(key, 0) + c
            out[i][j] = {key: c for key, c in acc.items() if c != 0}
    return out


def _sym_zero_diag(a):
    users = len(a)
    return [
        [dict(a[i][j]) if i != j else {} for j in range(users)] for i in range(users)
    ]


def _sym_filter(kind: str, users: int, stage: int):
    eye = _sym_eye(users)
    step = _sym_eye_minus_r(users)
    if kind == "conventional":
        g = eye
        for _ in range(stage - 1):
            g = _sym_add(eye, _sym_matmul(step, g))
        return g
    if kind == "proposed":
        part = eye
        total = eye
        for _ in range(stage - 1):
            part = _sym_zero_diag(_sym_matmul(part, step))
            total = _sym_add(total, part)
        return total
    raise ValueError(f"no symbolic expansion for kind {kind!r}")


def output_monomials(kind: str, users: int, user: int, stage: int) -> dict:
    """Exact symbolic stage-m output of one user as {monomial key: int coeff}.

    The first-stage input is expanded as y_j = x_j + sum_{l != j} rho_jl x_l
    + n_j, so every key carries an ("x", j) or ("n", j) payload together with
    the multiset of rho factors that multiply it.  Keys whose integer
    coefficients cancel to zero are absent, which makes subset comparisons
    between filter kinds exact.
    """
    if not 0 <= user < users:
        raise ValueError(f"user {user} out of range for K={users}")
    _guard_cost(users, stage)
    g = _sym_filter(kind, users, stage)
    out = {}
    for j in range(users):
        row_entry = g[user][j]
        if not row_entry:
            continue
        # first-stage output of user j, monomials with payloads
        y1 = [((), ("x", j), 1), ((), ("n", j), 1)]
        for l in range(users):
            if l != j:
                y1.append((((min(j, l), max(j, l)),), ("x", l), 1))
        for t1, c1 in row_entry.items():
            for t2, payload, c2 in y1:
                key = (tuple(sorted(t1 + t2)), payload)
                out[key] = out.get(key, 0) + c1 * c2
    return {key: c for key, c in out.items() if c != 0}


def classify_monomial(key: MonomialKey, user: int) -> str:
    """Bucket a monomial as 'signal', 'interference', or 'noise'."""
    _, (which, j) = key
    if which == "n":
        return "noise"
    return "signal" if j == user else "interference"
