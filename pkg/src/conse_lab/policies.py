"""Adaptive allocation designs: ConSE, DP-ConSE, and the RCT baseline.

ConSE splits the horizon in two.  During the first half every bin of a fine
grid runs its own two-armed successive elimination in epochs of geometrically
growing length.  During the second half a coarser grid (controlled by the
exploration parameter ``alpha``) receives a fixed randomized-trial budget per
bin, after which each unit gets the arm that survived elimination in its fine
bin.  The treatment-effect estimate is the per-coarse-bin difference of trial
means.

DP-ConSE adds Laplace noise to the epoch means and the final estimates, and
replaces every batch length and trial budget by a ``Lap+`` draw.

A single run is strictly sequential; the per-step loop is compiled with numba
and everything random is drawn up front from the caller's generator in a
fixed order (covariates, reward noise, allocation coins, then privacy noise),
so a private and a non-private run with the same seed see identical data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .binning import Grid, bin_index, floor_power, make_grid
from .dp import lap_plus_from_uniform, laplace_from_uniform
from .env import EnvironmentSpec, InvalidParameter, potential_outcomes, sample_covariate
from .metrics import CateEstimate, DeploymentPolicy, instantaneous_regret

ALPHA_TOL = 1e-12
SURVIVOR_CODES = {1: frozenset({0}), 2: frozenset({1}), 3: frozenset({0, 1})}
THIN_LEVELS = ("full", "curve", "final")


# --- epoch schedule ----------------------------------------------------------

def epoch_delta(e: int) -> float:
    if e < 1:
        raise ValueError(f"epoch must be >= 1, got {e}")
    return 2.0**-e


def epoch_batch_len(e: int, n: int, epsilon: float | None = None) -> int:
    """ceil(max(32 ln(16 n e^2) / D_e^2, 8 ln(8 n e^2) / (eps D_e))) + 1.

    Without ``epsilon`` the second branch has no privacy factor.
    """
    if e < 1:
        raise ValueError(f"epoch must be >= 1, got {e}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    delta = epoch_delta(e)
    first = 32.0 * math.log(16.0 * n * e * e) / delta**2
    second = 8.0 * math.log(8.0 * n * e * e) / delta
    if epsilon is not None:
        second /= epsilon
    return math.ceil(max(first, second)) + 1


def epoch_halfwidth(e: int, n: int, epsilon: float | None = None) -> float:
    return math.sqrt(math.log(16.0 * n * e * e) / (2.0 * epoch_batch_len(e, n, epsilon)))


def epoch_dp_slack(e: int, n: int, epsilon: float) -> float:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return 2.0 * math.log(8.0 * n * e * e) / (epoch_batch_len(e, n, epsilon) * epsilon)


def elimination_threshold(e: int, n: int, epsilon: float | None = None) -> float:
    """2 h_e, plus 2 c_e for the private variant."""
    thr = 2.0 * epoch_halfwidth(e, n, epsilon)
    if epsilon is not None:
        thr += 2.0 * epoch_dp_slack(e, n, epsilon)
    return thr


def _schedule(n: int, epsilon: float | None):
    """Per-epoch arrays indexed from 0 (epoch 0 has batch length 0).

    Stops at the first epoch whose batch cannot complete within n pulls;
    the loop treats any later epoch as never ending.
    """
    lengths, thresholds, scales = [0.0], [0.0], [0.0]
    e = 0
    while lengths[-1] <= n:
        e += 1
        R = epoch_batch_len(e, n, epsilon)
        lengths.append(float(R))
        thresholds.append(elimination_threshold(e, n, epsilon))
        scales.append(2.0 / (epsilon * R) if epsilon is not None else 0.0)
    return np.array(lengths), np.array(thresholds), np.array(scales)


# --- configuration and state ---------------------------------------------------

def max_alpha(beta: float, d: int) -> float:
    return beta / (2.0 * beta + d)


def trial_budget(n: int, beta: float, d: int, alpha: float) -> int:
    """T* = floor(n ** (2 beta (1 - alpha) / (2 beta + d)))."""
    return floor_power(n, 2.0 * beta * (1.0 - alpha) / (2.0 * beta + d))


@dataclass(frozen=True)
class ConseConfig:
    alpha: float
    n: int
    beta: float
    d: int
    epsilon: float | None = None
    dp_enabled: bool = False

    def __post_init__(self):
        upper = max_alpha(self.beta, self.d)
        if not 0.0 <= self.alpha <= upper + ALPHA_TOL:
            raise InvalidParameter("alpha", f"must lie in [0, {upper:.6g}], got {self.alpha}")
        if self.n < 4:
            raise InvalidParameter("n", f"must be at least 4, got {self.n}")
        if self.dp_enabled and not (self.epsilon is not None and self.epsilon > 0):
            raise InvalidParameter("epsilon", f"must be positive when private, got {self.epsilon}")

    @property
    def private_epsilon(self) -> float | None:
        return self.epsilon if self.dp_enabled else None


@dataclass(frozen=True)
class SEBinState:
    survivors: frozenset
    epoch: int
    batch_count: int
    visit_count: int
    mean0: float
    mean1: float
    count0: int
    count1: int
    randomized_batch_len: float


@dataclass(eq=False)
class PolicyTrace:
    policy: str
    n: int
    fine_grid: Grid
    coarse_grid: Grid
    estimate: CateEstimate
    cumulative_regret: float
    t_star: int
    # per-step columns (t, bin_fine, bin_coarse, arm, reward, regret) when thin="full"
    steps: dict | None = None
    regret_curve: np.ndarray | None = None
    survivors: np.ndarray | None = None       # survivor code per fine bin: 1={0}, 2={1}, 3={0,1}
    decision_means: np.ndarray | None = None  # (M, 2) means at the last completed comparison
    has_decision: np.ndarray | None = None
    bin_arrays: dict = field(default_factory=dict)
    eliminations: dict = field(default_factory=dict)  # t, bin, arm (removed)
    batch_log: dict = field(default_factory=dict)     # bin, epoch, length
    coarse_budgets: np.ndarray | None = None          # realized T_j
    deployment: DeploymentPolicy | None = None

    def survivor_set(self, j: int) -> frozenset:
        return SURVIVOR_CODES[int(self.survivors[j])]

    def bin_state(self, j: int) -> SEBinState:
        b = self.bin_arrays
        c0, c1 = int(b["count0"][j]), int(b["count1"][j])
        return SEBinState(
            survivors=self.survivor_set(j),
            epoch=int(b["epoch"][j]),
            batch_count=int(b["batch_count"][j]),
            visit_count=int(b["visits"][j]),
            mean0=b["sum0"][j] / c0 if c0 else 0.0,
            mean1=b["sum1"][j] / c1 if c1 else 0.0,
            count0=c0,
            count1=c1,
            randomized_batch_len=float(b["batch_len"][j]),
        )


# --- compiled loop ---------------------------------------------------------------

@njit(cache=True, nogil=True)
def _conse_loop(fine_idx, coarse_idx, y0, y1, coin, half, n_fine, n_coarse,
                lengths, thresholds, scales, dp, eps, t_star, pool):
    n = len(fine_idx)
    arms = np.zeros(n, np.int8)
    n_epochs = len(lengths)
    # fine-bin elimination state
    surv = np.full(n_fine, 3, np.int8)
    epoch = np.zeros(n_fine, np.int64)
    r = np.zeros(n_fine, np.int64)
    visits = np.zeros(n_fine, np.int64)
    s0 = np.zeros(n_fine)
    s1 = np.zeros(n_fine)
    c0 = np.zeros(n_fine, np.int64)
    c1 = np.zeros(n_fine, np.int64)
    batch = np.zeros(n_fine)
    dec = np.zeros((n_fine, 2))
    has_dec = np.zeros(n_fine, np.bool_)
    elim_t = np.full(n_fine, -1, np.int64)
    elim_arm = np.full(n_fine, -1, np.int8)
    log_cap = len(pool) // 3 + n_fine + 1
    log_bin = np.zeros(log_cap, np.int64)
    log_epoch = np.zeros(log_cap, np.int64)
    log_len = np.zeros(log_cap)
    n_log = 0
    u = 0  # next unused entry of the privacy-noise pool

    for t in range(half):
        j = fine_idx[t]
        visits[j] += 1
        if surv[j] != 3:
            arms[t] = 0 if surv[j] == 1 else 1
            continue
        a = 1 if coin[t] < 0.5 else 0
        arms[t] = a
        if a == 1:
            s1[j] += y1[t]
            c1[j] += 1
        else:
            s0[j] += y0[t]
            c0[j] += 1
        r[j] += 1
        if r[j] < batch[j]:
            continue
        e = epoch[j]
        if e >= 1:
            m0 = s0[j] / c0[j] if c0[j] > 0 else 0.0
            m1 = s1[j] / c1[j] if c1[j] > 0 else 0.0
            if dp:
                m0 += laplace_from_uniform(scales[e], pool[u])
                m1 += laplace_from_uniform(scales[e], pool[u + 1])
                u += 2
            dec[j, 0] = m0
            dec[j, 1] = m1
            has_dec[j] = True
            if c0[j] > 0 and c1[j] > 0:
                top = max(m0, m1)
                if top - m0 > thresholds[e]:
                    surv[j] = 2
                    elim_t[j] = t
                    elim_arm[j] = 0
                elif top - m1 > thresholds[e]:
                    surv[j] = 1
                    elim_t[j] = t
                    elim_arm[j] = 1
        e += 1
        epoch[j] = e
        r[j] = 0
        if e >= n_epochs:
            batch[j] = np.inf
        elif dp:
            batch[j] = lap_plus_from_uniform(lengths[e], eps, pool[u])
            u += 1
        else:
            batch[j] = lengths[e]
        if n_log < log_cap:
            log_bin[n_log] = j
            log_epoch[n_log] = e
            log_len[n_log] = batch[j]
            n_log += 1
        s0[j] = 0.0
        s1[j] = 0.0
        c0[j] = 0
        c1[j] = 0

    # second half: per-coarse-bin trial budget, then exploit the fine survivor
    budget = np.empty(n_coarse)
    for k in range(n_coarse):
        if dp:
            budget[k] = lap_plus_from_uniform(t_star, eps, pool[u])
            u += 1
        else:
            budget[k] = t_star
    cvis = np.zeros(n_coarse, np.int64)
    cs0 = np.zeros(n_coarse)
    cs1 = np.zeros(n_coarse)
    cc0 = np.zeros(n_coarse, np.int64)
    cc1 = np.zeros(n_coarse, np.int64)
    for t in range(half, n):
        k = coarse_idx[t]
        cvis[k] += 1
        if cvis[k] <= budget[k]:
            a = 1 if coin[t] < 0.5 else 0
            if a == 1:
                cs1[k] += y1[t]
                cc1[k] += 1
            else:
                cs0[k] += y0[t]
                cc0[k] += 1
            arms[t] = a
        else:
            j = fine_idx[t]
            if surv[j] == 1:
                arms[t] = 0
            elif surv[j] == 2:
                arms[t] = 1
            elif has_dec[j] and dec[j, 1] > dec[j, 0]:
                arms[t] = 1
            else:
                arms[t] = 0

    est = np.zeros(n_coarse)
    degenerate = np.zeros(n_coarse, np.bool_)
    for k in range(n_coarse):
        if cc0[k] > 0 and cc1[k] > 0:
            est[k] = cs1[k] / cc1[k] - cs0[k] / cc0[k]
        else:
            degenerate[k] = True
        if dp:
            if budget[k] < 1.0:
                degenerate[k] = True
            est[k] += laplace_from_uniform(2.0 / (eps * max(budget[k], 1.0)), pool[u])
            u += 1

    return (arms, surv, epoch, r, visits, s0, s1, c0, c1, batch, dec, has_dec,
            elim_t, elim_arm, log_bin[:n_log], log_epoch[:n_log], log_len[:n_log],
            budget, est, degenerate, cc0, cc1)


# --- drivers ----------------------------------------------------------------------

def _draw_data(spec: EnvironmentSpec, n: int, rng: np.random.Generator):
    X = sample_covariate(spec, rng, n)
    y0, y1 = potential_outcomes(spec, X, rng)
    coin = rng.random(n)
    return X, y0, y1, coin


def _finish_trace(policy, spec, n, X, arms, y0, y1, fine_idx, coarse_idx, thin, **kw):
    if thin not in THIN_LEVELS:
        raise InvalidParameter("thin", f"must be one of {THIN_LEVELS}, got {thin!r}")
    regret = instantaneous_regret(spec, X, arms)
    trace = PolicyTrace(policy=policy, n=n, cumulative_regret=float(regret.sum()), **kw)
    if thin in ("full", "curve"):
        trace.regret_curve = np.cumsum(regret)
    if thin == "full":
        trace.steps = dict(
            t=np.arange(1, n + 1), bin_fine=fine_idx, bin_coarse=coarse_idx, arm=arms,
            reward=np.where(arms == 1, y1, y0), regret=regret)
    return trace


def run_conse(config: ConseConfig, spec: EnvironmentSpec, rng: np.random.Generator,
              thin: str = "final", policy_name: str | None = None) -> PolicyTrace:
    """Run ConSE (or DP-ConSE when ``config.dp_enabled``) for ``config.n`` steps."""
    if spec.d != config.d:
        raise InvalidParameter("d", f"config has d={config.d} but environment has d={spec.d}")
    n = config.n
    eps = config.private_epsilon
    fine = make_grid(n, config.d, config.beta, 0.0)
    coarse = make_grid(n, config.d, config.beta, config.alpha)
    t_star = trial_budget(n, config.beta, config.d, config.alpha)
    half = n // 2

    X, y0, y1, coin = _draw_data(spec, n, rng)
    fine_idx = bin_index(fine, X).astype(np.int64)
    coarse_idx = bin_index(coarse, X).astype(np.int64)
    lengths, thresholds, scales = _schedule(n, eps)
    if eps is not None:
        # epoch ends per bin are bounded by visits and by the schedule length;
        # each consumes at most three draws
        first_half_visits = np.bincount(fine_idx[:half], minlength=fine.total)
        ends = int(np.minimum(first_half_visits, len(lengths)).sum())
        pool = rng.random(3 * ends + 2 * coarse.total)
    else:
        pool = np.zeros(0)

    out = _conse_loop(fine_idx, coarse_idx, y0, y1, coin, half, fine.total, coarse.total,
                      lengths, thresholds, scales, eps is not None,
                      float(eps) if eps is not None else 0.0, float(t_star), pool)
    (arms, surv, epoch, r, visits, s0, s1, c0, c1, batch, dec, has_dec, elim_t, elim_arm,
     log_bin, log_epoch, log_len, budget, est, degenerate, cc0, cc1) = out

    estimate = CateEstimate(grid=coarse, values=est, degenerate=degenerate)
    eliminated = elim_t >= 0
    trace = _finish_trace(
        policy_name or ("dp_conse" if eps is not None else "conse"), spec, n, X, arms, y0, y1,
        fine_idx, coarse_idx, thin,
        fine_grid=fine, coarse_grid=coarse, estimate=estimate, t_star=t_star,
        survivors=surv, decision_means=dec, has_decision=has_dec,
        bin_arrays=dict(epoch=epoch, batch_count=r, visits=visits, sum0=s0, sum1=s1,
                        count0=c0, count1=c1, batch_len=batch,
                        trial_count0=cc0, trial_count1=cc1),
        eliminations=dict(t=elim_t[eliminated] + 1, bin=np.flatnonzero(eliminated),
                          arm=elim_arm[eliminated]),
        batch_log=dict(bin=log_bin, epoch=log_epoch, length=log_len),
        coarse_budgets=budget,
    )
    trace.deployment = extract_policy(trace)
    return trace


def run_dp_conse(config: ConseConfig, spec: EnvironmentSpec, rng: np.random.Generator,
                 thin: str = "final") -> PolicyTrace:
    if not config.dp_enabled:
        raise InvalidParameter("dp_enabled", "run_dp_conse needs a private config")
    return run_conse(config, spec, rng, thin=thin)


def run_regret_min(n: int, spec: EnvironmentSpec, rng: np.random.Generator,
                   thin: str = "final") -> PolicyTrace:
    """ConSE pinned to the least-exploring end, alpha = beta / (2 beta + d)."""
    config = ConseConfig(alpha=max_alpha(spec.beta, spec.d), n=n, beta=spec.beta, d=spec.d)
    return run_conse(config, spec, rng, thin=thin, policy_name="regret_min")


def run_rct(n: int, spec: EnvironmentSpec, grid: Grid, rng: np.random.Generator,
            thin: str = "final") -> PolicyTrace:
    """Uniform 1/2-1/2 allocation throughout; per-bin difference of means on ``grid``.

    The deployment policy plays the arm favoured by the estimate sign in each
    bin (arm 0 on ties and in degenerate bins).
    """
    if n < 2:
        raise InvalidParameter("n", f"must be at least 2, got {n}")
    X, y0, y1, coin = _draw_data(spec, n, rng)
    idx = bin_index(grid, X).astype(np.int64)
    arms = (coin < 0.5).astype(np.int8)
    reward = np.where(arms == 1, y1, y0)
    is1 = arms == 1
    n1 = np.bincount(idx[is1], minlength=grid.total)
    n0 = np.bincount(idx[~is1], minlength=grid.total)
    s1 = np.bincount(idx[is1], weights=reward[is1], minlength=grid.total)
    s0 = np.bincount(idx[~is1], weights=reward[~is1], minlength=grid.total)
    ok = (n0 > 0) & (n1 > 0)
    values = np.zeros(grid.total)
    values[ok] = s1[ok] / n1[ok] - s0[ok] / n0[ok]
    estimate = CateEstimate(grid=grid, values=values, degenerate=~ok)
    trace = _finish_trace("rct", spec, n, X, arms, y0, y1, idx, idx, thin,
                          fine_grid=grid, coarse_grid=grid, estimate=estimate, t_star=n,
                          bin_arrays=dict(trial_count0=n0, trial_count1=n1))
    trace.deployment = DeploymentPolicy(grid=grid, arms=(values > 0).astype(np.int8))
    return trace


def extract_policy(trace: PolicyTrace) -> DeploymentPolicy:
    """Per fine bin, the surviving arm; with both alive, the arm with the larger
    mean at the last completed comparison (arm 0 on ties or if none happened)."""
    if trace.survivors is None:
        if trace.deployment is None:
            raise ValueError(f"trace of policy {trace.policy!r} carries no survivors")
        return trace.deployment
    surv = trace.survivors
    dec = trace.decision_means
    prefer1 = trace.has_decision & (dec[:, 1] > dec[:, 0])
    arms = np.where(surv == 2, 1, np.where(surv == 1, 0, prefer1.astype(np.int8)))
    return DeploymentPolicy(grid=trace.fine_grid, arms=arms.astype(np.int8))


def run_policy(name: str, n: int, spec: EnvironmentSpec, rng: np.random.Generator,
               alpha: float | None = None, epsilon: float | None = None,
               thin: str = "final") -> PolicyTrace:
    """Dispatch by policy name: conse, dp_conse, rct, regret_min."""
    if name == "conse":
        cfg = ConseConfig(alpha=_need(alpha, "alpha"), n=n, beta=spec.beta, d=spec.d)
        return run_conse(cfg, spec, rng, thin=thin)
    if name == "dp_conse":
        cfg = ConseConfig(alpha=_need(alpha, "alpha"), n=n, beta=spec.beta, d=spec.d,
                          epsilon=_need(epsilon, "epsilon"), dp_enabled=True)
        return run_conse(cfg, spec, rng, thin=thin)
    if name == "regret_min":
        return run_regret_min(n, spec, rng, thin=thin)
    if name == "rct":
        # estimate on the same grid ConSE uses for alpha = 0
        return run_rct(n, spec, make_grid(n, spec.d, spec.beta, 0.0), rng, thin=thin)
    raise InvalidParameter("policy", f"unknown policy {name!r}")


def _need(value, param):
    if value is None:
        raise InvalidParameter(param, "required for this policy")
    return value


POLICY_NAMES = ("conse", "dp_conse", "rct", "regret_min")
