"""The Yaglom limit: the law of Z_t conditioned on {Z_t > 0} as t grows.

Primary solver: the stationary balance equations

    b_{k-1} pi(k-1) + d_{k+1} pi(k+1) = (b_k + d_k - a) pi(k),  a = d*pi(1),

iterated as a three-term recursion and closed by bisecting on pi(1):
too large a trial value eventually drives some pi(k) negative, too
small leaves total mass below one.  The recursion is run in high-
precision arithmetic because the wanted solution decays
superexponentially while the complementary solution grows, so double
precision loses it after a few dozen states.

Cross-checks: a Feynman-Kac representation of the generating function,
G(theta) = 1 - E_theta[exp(a T_0); T_0 < T_1] for an auxiliary diffusion
on (0,1), and the empirical law of Z_T | Z_T > 0 from forward
simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np

from . import io
from .errors import BracketFailure, ImpracticalRate, KTooSmall, NumericalFailure, UnsupportedRegime
from .model import ModelParams, simulate_endpoints
from .rng import derive, stream

__all__ = [
    "YaglomSolution",
    "EmpiricalPMF",
    "yaglom_recursion",
    "yaglom_feynman_kac",
    "yaglom_empirical",
]

_TRUNCATE_BELOW = 1e-40


@dataclass
class YaglomSolution:
    """Yaglom law up to a state cap plus its extinction rate a = d*pi(1)."""

    params: ModelParams
    a: float
    pmf: np.ndarray              # index k-1 <-> state k
    tail: float
    method: str = "recursion"

    @property
    def K(self) -> int:
        return len(self.pmf)

    def prob(self, k: int) -> float:
        return float(self.pmf[k - 1])

    def pgf(self, theta) -> np.ndarray:
        """G(theta) = sum_k pi(k) theta^k, vectorized in theta."""
        theta = np.asarray(theta, dtype=float)
        ks = np.arange(1, self.K + 1)
        return (theta[..., None] ** ks) @ self.pmf

    def mean(self) -> float:
        return float(np.dot(np.arange(1, self.K + 1), self.pmf))

    def recursion_residuals(self) -> np.ndarray:
        """Relative residual of the balance equation at k = 2..K-1.

        Scaled by the largest term entering each equation.  Equations
        touching the truncated (zeroed) part of the pmf are excluded:
        their imbalance is exactly the discarded tail, reported via
        ``tail``.
        """
        b, c, d = self.params.b, self.params.c, self.params.d
        ks = np.arange(2, self.K)
        bk = b * ks
        dk = d * ks + c * ks * (ks - 1)
        lhs = b * (ks - 1) * self.pmf[ks - 2] + (d * (ks + 1) + c * (ks + 1) * ks) * self.pmf[ks]
        rhs = (bk + dk - self.a) * self.pmf[ks - 1]
        scale = np.maximum.reduce(
            [np.abs(lhs), np.abs(rhs), np.full(ks.shape, 1e-290)]
        )
        res = np.abs(lhs - rhs) / scale
        untruncated = (self.pmf[ks - 2] > 0) & (self.pmf[ks - 1] > 0) & (self.pmf[ks] > 0)
        res[~untruncated] = 0.0
        return res

    def to_json_dict(self) -> dict:
        return {
            "params": {"b": self.params.b, "c": self.params.c, "d": self.params.d},
            "a": self.a,
            "K": self.K,
            "pmf": [float(v) for v in self.pmf],
            "tail": self.tail,
            "method": self.method,
        }


def _recursion_scan(b, c, d, pi1, K):
    """Run the three-term recursion at trial pi(1).

    Returns ('negative', None) the moment a negative term appears,
    ('oversum', None) once the partial mass exceeds one, and otherwise
    ('ok', values).
    """
    a = d * pi1
    values = [pi1]
    prev, cur = mp.mpf(0), pi1
    total = pi1
    one = mp.mpf(1)
    for k in range(1, K):
        bk = b * k
        dk = d * k + c * k * (k - 1)
        dk1 = d * (k + 1) + c * (k + 1) * k
        nxt = ((bk + dk - a) * cur - b * (k - 1) * prev) / dk1
        if nxt < 0:
            return "negative", None
        total += nxt
        if total > one + mp.mpf("1e-30"):
            return "oversum", None
        values.append(nxt)
        prev, cur = cur, nxt
    return "ok", (values, total)


def yaglom_recursion(
    p: ModelParams, K: int = 400, tol: float = 1e-10, bracket=None
) -> YaglomSolution:
    """Solve the Yaglom balance equations by bisection on pi(1).

    Requires c > 0: the quadratic death rate is what makes the tail
    summable.  Raises :class:`KTooSmall` if the solution has not decayed
    below ``tol`` by the cap K, and :class:`BracketFailure` if the
    bracket (default [0, min(1, (b+d)/d)]) does not straddle the
    solution.
    """
    if p.c <= 0:
        raise UnsupportedRegime(
            "the Yaglom solver needs c > 0; without competition the tail "
            "is not controlled and this expansion does not terminate"
        )
    b, c, d = mp.mpf(p.b), mp.mpf(p.c), mp.mpf(p.d)
    with mp.workdps(60):
        if bracket is None:
            lo = mp.mpf(0)
            hi = min(mp.mpf(1), (b + d) / d)
        else:
            lo, hi = mp.mpf(bracket[0]), mp.mpf(bracket[1])
            if lo > 0:
                status_lo, _ = _recursion_scan(b, c, d, lo, K)
                if status_lo != "ok":
                    raise BracketFailure(
                        "lower bracket endpoint already overshoots",
                        diagnostics={"pi1_lo": float(lo)},
                    )
        status_hi, payload_hi = _recursion_scan(b, c, d, hi, K)
        if status_hi == "ok":
            # upper endpoint already summing to <= 1: either it is the
            # exact solution or the bracket fails
            _, total = payload_hi
            if abs(total - 1) < tol:
                lo = hi
            else:
                raise BracketFailure(
                    "upper bracket endpoint does not overshoot",
                    diagnostics={"pi1_hi": float(hi), "mass": float(total)},
                )
        for _ in range(200):
            mid = (lo + hi) / 2
            if mid == lo or mid == hi:
                break
            status, _ = _recursion_scan(b, c, d, mid, K)
            if status == "ok":
                lo = mid
            else:
                hi = mid
            if hi - lo < mp.mpf("1e-45"):
                break
        pi1 = lo if lo > 0 else hi
        status, payload = _recursion_scan(b, c, d, pi1, K)
        if status != "ok":
            pi1 = (lo + hi) / 2
            status, payload = _recursion_scan(b, c, d, lo, K)
        if status != "ok":
            raise BracketFailure(
                "bisection did not isolate a nonnegative solution",
                diagnostics={"pi1": float(pi1)},
            )
        values, total = payload
        if abs(total - 1) > tol:
            raise KTooSmall(
                f"mass {float(total):.12f} within cap K={K} misses 1 by more "
                f"than tol={tol:g}; increase K",
                diagnostics={"mass": float(total), "K": K},
            )
    pmf = np.zeros(K)
    peak = 0.0
    truncated = False
    for k, v in enumerate(values):
        fv = float(v)
        peak = max(peak, fv)
        if fv < _TRUNCATE_BELOW * peak and fv < peak:
            truncated = True
            break
        pmf[k] = fv
    if not truncated:
        # the cap was reached before the superexponential decay set in;
        # a truncated system can still balance to total mass one, so
        # demand genuine decay at the boundary before trusting it
        ratio = pmf[-1] / pmf[-2] if pmf[-2] > 0 else 1.0
        tail_bound = pmf[-1] * ratio / (1.0 - ratio) if ratio < 1.0 else math.inf
        if not tail_bound < tol:
            raise KTooSmall(
                f"solution has not decayed by the cap K={K} "
                f"(geometric tail bound {tail_bound:.3e}); increase K",
                diagnostics={"K": K, "tail_bound": tail_bound},
            )
    tail = max(0.0, 1.0 - float(pmf.sum()))
    return YaglomSolution(p, a=p.d * float(pmf[0]), pmf=pmf, tail=tail)


# ---------------------------------------------------------------------------
# Feynman-Kac cross-check
# ---------------------------------------------------------------------------

def yaglom_feynman_kac(
    p: ModelParams, a: float, thetas, M: int = 20000, dt: float = 1e-3,
    seed: int = 0, se_target: float = 0.01, max_batches: int = 6,
) -> dict:
    """Estimate G(theta) = 1 - E_theta[exp(a T_0); T_0 < T_1].

    The auxiliary diffusion is dX = (d - bX)(1 - X) dt
    + sqrt(2 c X (1-X)) dW run until it leaves (0,1).  The exp(a T_0)
    weight inflates the variance, so batches of M paths are added until
    the standard error reaches ``se_target`` (or ``max_batches`` is
    hit).  Paths still inside (0,1) after the 1e7*dt time budget are
    censored: counted, excluded and reported.
    """
    if p.c <= 0:
        raise UnsupportedRegime("the auxiliary diffusion needs c > 0")
    results = {}
    max_steps = int(1e7)
    for idx, theta in enumerate(np.atleast_1d(np.asarray(thetas, dtype=float))):
        if not 0.0 < theta < 1.0:
            raise ValueError(f"theta must be in (0,1), got {theta}")
        weights = []
        censored = 0
        for batch in range(max_batches):
            rng = stream(seed, idx, batch)
            x = np.full(M, theta)
            t = np.zeros(M)
            w = np.zeros(M)          # contribution: e^{a T0} if T0 first, else 0
            active = np.ones(M, dtype=bool)
            sqdt = math.sqrt(dt)
            for _ in range(max_steps):
                live = np.flatnonzero(active)
                if live.size == 0:
                    break
                xl = x[live]
                drift = (p.d - p.b * xl) * (1.0 - xl)
                sig = np.sqrt(np.maximum(2.0 * p.c * xl * (1.0 - xl), 0.0))
                xl = xl + drift * dt + sig * sqdt * rng.standard_normal(live.size)
                t[live] += dt
                hit0 = xl <= 0.0
                hit1 = xl >= 1.0
                w[live[hit0]] = np.exp(a * t[live[hit0]])
                active[live[hit0 | hit1]] = False
                x[live] = xl
            censored += int(active.sum())
            weights.append(w[~active])
            allw = np.concatenate(weights)
            est = 1.0 - allw.mean()
            se = allw.std(ddof=1) / math.sqrt(len(allw))
            if se <= se_target:
                break
        results[float(theta)] = {
            "estimate": float(est),
            "se": float(se),
            "n_paths": int(len(allw)),
            "n_censored": int(censored),
        }
    return results


# ---------------------------------------------------------------------------
# Empirical conditioned distribution
# ---------------------------------------------------------------------------

@dataclass
class EmpiricalPMF:
    """Empirical law of Z_T | Z_T > 0 with per-state standard errors."""

    probs: np.ndarray            # index k-1 <-> state k
    se: np.ndarray
    n_accepted: int
    acceptance_rate: float | None
    method: str
    samples: np.ndarray = field(repr=False, default=None)

    def to_csv(self, path) -> None:
        rows = [
            (k, self.probs[k - 1], self.se[k - 1])
            for k in range(1, len(self.probs) + 1)
        ]
        io.write_csv(path, ["k", "prob", "se"], rows)


def _pmf_from_samples(samples, n_accepted, acceptance, method):
    kmax = int(samples.max())
    counts = np.bincount(samples, minlength=kmax + 1)[1:]
    probs = counts / n_accepted
    se = np.sqrt(probs * (1.0 - probs) / n_accepted)
    return EmpiricalPMF(probs, se, n_accepted, acceptance, method, samples=samples)


def yaglom_empirical(
    p: ModelParams, T: float, z0: int, replicates: int, seed: int = 0,
    method: str = "rejection",
) -> EmpiricalPMF:
    """Sample Z_T | Z_T > 0 until ``replicates`` accepted draws.

    method="rejection" simulates fresh runs and keeps the survivors;
    if a pilot batch suggests an acceptance rate below 1e-4 it raises
    :class:`ImpracticalRate` (for subcritical parameter sets at large T
    the survival probability decays exponentially).  method
    "fleming_viot" instead evolves a fixed ensemble in which every
    extinct walker is restarted at the state of a random survivor,
    which samples the same conditioned law at a cost independent of the
    survival probability (small O(1/ensemble) coupling bias).
    """
    if method == "fleming_viot":
        samples = _fleming_viot_samples(p, T, z0, replicates, seed)
        return _pmf_from_samples(samples, len(samples), None, method)
    if method != "rejection":
        raise ValueError(f"unknown method {method!r}")
    accepted: list[np.ndarray] = []
    n_acc = 0
    n_tot = 0
    chunk = max(4 * replicates // 10, 2000)
    for batch in range(200):
        z, _ = simulate_endpoints(p, z0, T, chunk, seed=derive(seed, batch))
        n_tot += chunk
        good = z[z > 0]
        n_acc += good.size
        accepted.append(good)
        if batch == 1 and n_acc == 0 and 3.0 / n_tot < 1e-4:
            raise ImpracticalRate(
                f"no survivors in {n_tot} runs; acceptance rate below 1e-4",
                acceptance_rate=0.0,
            )
        if n_acc and (n_acc / n_tot) < 1e-4:
            raise ImpracticalRate(
                f"acceptance rate {n_acc / n_tot:.2e} below 1e-4",
                acceptance_rate=n_acc / n_tot,
            )
        if n_acc >= replicates:
            break
    else:
        raise ImpracticalRate(
            f"only {n_acc} accepted of {n_tot}", acceptance_rate=n_acc / n_tot
        )
    samples = np.concatenate(accepted)[:replicates]
    return _pmf_from_samples(samples, replicates, n_acc / n_tot, "rejection")


def _fleming_viot_samples(p, T, z0, walkers, seed):
    """States at time T of a survivor-restarted ensemble of CTMC walkers.

    Bookkeeping is per state count (walkers are exchangeable), so each
    event costs O(max state) regardless of the ensemble size.
    """
    rng = stream(seed)
    kmax = max(4 * z0, 64)
    counts = np.zeros(kmax + 1, dtype=np.int64)
    counts[z0] = walkers
    b, c, d = p.b, p.c, p.d
    t = 0.0
    while True:
        ks = np.flatnonzero(counts)
        occ = counts[ks]
        up_rates = occ * b * ks
        down_rates = occ * (d * ks + c * ks * (ks - 1))
        total = up_rates.sum() + down_rates.sum()
        t += rng.exponential(1.0 / total)
        if t >= T:
            break
        u = rng.random() * total
        cum = np.cumsum(np.concatenate([up_rates, down_rates]))
        j = int(np.searchsorted(cum, u, side="right"))
        if j < len(ks):                       # birth in state ks[j]
            k = int(ks[j])
            counts[k] -= 1
            if k + 1 > kmax:
                counts = np.concatenate([counts, np.zeros(kmax + 1, dtype=np.int64)])
                kmax *= 2
            counts[k + 1] += 1
        else:                                 # death in state ks[j - len(ks)]
            k = int(ks[j - len(ks)])
            counts[k] -= 1
            if k == 1:
                # extinction: restart at the state of a random survivor
                ks2 = np.flatnonzero(counts[1:]) + 1
                if ks2.size == 0:
                    raise NumericalFailure(
                        "entire ensemble extinct simultaneously",
                        diagnostics={"T": T, "walkers": walkers},
                    )
                donor = rng.choice(np.repeat(ks2, counts[ks2]))
                counts[donor] += 1
            else:
                counts[k - 1] += 1
    return np.repeat(np.arange(kmax + 1), counts)
