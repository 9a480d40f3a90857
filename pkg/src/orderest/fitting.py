"""Maximum-likelihood fitting per family and the per-K profile curve.

- LM: multi-start EM with known sigma.  E-step computes posterior
  responsibilities; M-step sets weights to responsibility averages and means
  to responsibility-weighted means clipped to [m_lo, m_hi] (the constrained
  argmax, so the usual EM ascent property survives the clipping).
- VR: maximizing the likelihood is a box-constrained least-squares problem;
  cyclic coordinate descent with exact clipped coordinate updates converges
  to the global optimum of the convex quadratic.
- AC: exact dynamic programming over guillotine trees (see guillotine.py).

profile() fits K = 1..K_top, warm-starting each level from the embedded
previous solution, and enforces the nestedness property that the maximized
log-likelihood never decreases in K.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from . import guillotine
from .models import (
    LOG_2PI, Family, ModelConfig, Sample, Theta, ThetaAC, ThetaLM, ThetaVR,
    UsageError, embed, fmt, log_likelihood, rng_for, vr_basis_matrix,
)

K_HARD_CAP = 64  # mixture sizes past this are a usage error, not a model

_EM_STREAM = 101  # rng_for sub-stream tags
_PROFILE_STREAM = 102


@dataclass(frozen=True)
class FitOptions:
    starts: int = 10
    tol: float = 1e-8
    max_iter: int = 500
    vr_tol: float = 1e-10
    track_paths: bool = False


@dataclass(frozen=True)
class FitResult:
    theta: Theta
    loglik: float
    iterations: int
    converged: bool
    starts_used: int
    loglik_paths: tuple[tuple[float, ...], ...] | None = None


@dataclass(frozen=True)
class ProfileCurve:
    """Per-K maximized log-likelihood and maximizer, K = 1..k_top."""

    n: int
    family: Family
    entries: tuple[FitResult, ...]

    @property
    def k_top(self) -> int:
        return len(self.entries)

    def result(self, k: int) -> FitResult:
        if not 1 <= k <= self.k_top:
            raise UsageError(f"profile covers K=1..{self.k_top}, asked for {k}")
        return self.entries[k - 1]

    def loglik(self, k: int) -> float:
        return self.result(k).loglik

    def theta(self, k: int) -> Theta:
        return self.result(k).theta

    def logliks(self) -> dict[int, float]:
        return {k: r.loglik for k, r in enumerate(self.entries, start=1)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("K,loglik,converged,iterations\n")
        for k, r in enumerate(self.entries, start=1):
            buf.write(f"{k},{fmt(r.loglik)},{int(r.converged)},{r.iterations}\n")
        return buf.getvalue()


# ---------------------------------------------------------------------------
# LM: EM
# ---------------------------------------------------------------------------

def _em_run(z: np.ndarray, config: ModelConfig, w0: np.ndarray, m0: np.ndarray,
            tol: float, max_iter: int) -> tuple[np.ndarray, np.ndarray, float, int, bool, tuple]:
    sigma = config.sigma
    norm_const = -0.5 * LOG_2PI - math.log(sigma)
    w = np.asarray(w0, dtype=float).copy()
    m = np.asarray(m0, dtype=float).copy()
    n = z.shape[0]
    if n == 0:
        return w, m, 0.0, 0, True, (0.0,)
    path = []
    prev = -np.inf
    converged = False
    iters = 0
    def eval_ll(w, m):
        with np.errstate(divide="ignore"):
            log_w = np.log(w)
        comp = norm_const - 0.5 * ((z[:, None] - m[None, :]) / sigma) ** 2 + log_w[None, :]
        per_obs = logsumexp(comp, axis=1)
        return comp, per_obs, float(per_obs.sum())

    for iters in range(1, max_iter + 1):
        comp, per_obs, ll = eval_ll(w, m)
        path.append(ll)
        if ll - prev < tol:
            converged = True
            break
        prev = ll
        resp = np.exp(comp - per_obs[:, None])
        nk = resp.sum(axis=0)
        w = nk / n
        with np.errstate(invalid="ignore"):
            new_m = resp.T @ z / nk
        m = np.where(nk > 0.0, np.clip(new_m, config.m_lo, config.m_hi), m)
    if not converged:
        path.append(eval_ll(w, m)[2])  # loglik of the params actually returned
    return w, m, path[-1], iters, converged, tuple(path)


def _lm_start_list(z: np.ndarray, k: int, config: ModelConfig, starts: int,
                   seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Quantile-spread means (first start exact, the rest jittered), uniform weights."""
    qs = np.quantile(z, (np.arange(k) + 0.5) / k) if z.size else np.zeros(k)
    qs = np.clip(qs, config.m_lo, config.m_hi)
    uniform = np.full(k, 1.0 / k)
    out = [(uniform.copy(), qs.copy())]
    rng = rng_for(seed, _EM_STREAM, k)
    scale = max(float(np.std(z)) if z.size else 0.0, 1e-3)
    for _ in range(starts - 1):
        jitter = 0.5 * scale * rng.standard_normal(k)
        out.append((uniform.copy(), np.clip(qs + jitter, config.m_lo, config.m_hi)))
    return out


def fit_lm_em(sample: Sample, k: int, config: ModelConfig, starts: int = 10,
              tol: float = 1e-8, max_iter: int = 500,
              extra_inits: list[tuple] | None = None,
              track_paths: bool = False) -> FitResult:
    """Best of `starts` EM runs; ties within 1e-12 go to the earliest start."""
    if config.family is not Family.LM or sample.family is not Family.LM:
        raise UsageError("fit_lm_em needs an LM config and sample")
    if k < 1 or starts < 1 or tol <= 0.0:
        raise UsageError("need K >= 1, starts >= 1, tol > 0")
    if k > K_HARD_CAP:
        raise UsageError(f"K={k} exceeds the hard cap {K_HARD_CAP}")
    z = sample.z
    inits = _lm_start_list(z, k, config, starts, sample.seed)
    if extra_inits:
        inits = [(np.asarray(w, dtype=float), np.asarray(m, dtype=float))
                 for w, m in extra_inits] + inits
    best = None
    paths = []
    for w0, m0 in inits:
        w, m, ll, iters, conv, path = _em_run(z, config, w0, m0, tol, max_iter)
        paths.append(path)
        if best is None or ll > best[2] + 1e-12:
            best = (w, m, ll, iters, conv)
    w, m, _, iters, conv = best
    theta = ThetaLM(tuple(w / w.sum()), tuple(m))
    return FitResult(theta=theta, loglik=log_likelihood(config, theta, sample),
                     iterations=iters, converged=conv, starts_used=len(inits),
                     loglik_paths=tuple(paths) if track_paths else None)


# ---------------------------------------------------------------------------
# VR: box-constrained least squares by coordinate descent
# ---------------------------------------------------------------------------

def fit_vr(sample: Sample, k: int, config: ModelConfig, tol: float = 1e-10,
           max_sweeps: int = 10000, warm: ThetaVR | None = None) -> FitResult:
    """Global optimum of the convex box-constrained quadratic, to tolerance tol."""
    if config.family is not Family.VR or sample.family is not Family.VR:
        raise UsageError("fit_vr needs a VR config and sample")
    if k < 1:
        raise UsageError("K must be >= 1")
    x, y = sample.x, sample.y
    basis = vr_basis_matrix(x, k)
    gram = basis.T @ basis
    b = basis.T @ y
    theta = np.zeros(k)
    if warm is not None:
        m = min(k, warm.k)
        theta[:m] = warm.coeffs[:m]
    lo, hi = config.m_lo, config.m_hi
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        delta = 0.0
        for j in range(k):
            gjj = gram[j, j]
            if gjj <= 0.0:
                new = 0.0  # basis column vanishes on the data; coefficient is free
            else:
                resid_j = b[j] - (gram[j] @ theta - gjj * theta[j])
                new = min(max(resid_j / gjj, lo), hi)
            delta = max(delta, abs(new - theta[j]))
            theta[j] = new
        if delta < tol:
            converged = True
            break
    result = ThetaVR(tuple(theta))
    return FitResult(theta=result, loglik=log_likelihood(config, result, sample),
                     iterations=sweeps, converged=converged, starts_used=1)


# ---------------------------------------------------------------------------
# AC: guillotine DP
# ---------------------------------------------------------------------------

def fit_ac(sample: Sample, k: int, config: ModelConfig) -> FitResult:
    """Exact best <=K-leaf tree by dynamic programming."""
    if config.family is not Family.AC or sample.family is not Family.AC:
        raise UsageError("fit_ac needs an AC config and sample")
    if k < 1:
        raise UsageError("K must be >= 1")
    if k > 2 ** config.ac_depth_max:
        raise UsageError(f"K={k} exceeds 2**ac_depth_max = {2 ** config.ac_depth_max}")
    tree, _ = guillotine.fit_tree_empirical(sample.x, sample.y, k, config.ac_depth_max,
                                            config.sigma, config.m_lo, config.m_hi)
    theta = ThetaAC(tree)
    return FitResult(theta=theta, loglik=log_likelihood(config, theta, sample),
                     iterations=1, converged=True, starts_used=1)


def fit_k(sample: Sample, k: int, config: ModelConfig,
          options: FitOptions | None = None,
          extra_inits: list | None = None) -> FitResult:
    """Family dispatch for a single-K fit."""
    opts = options or FitOptions()
    if config.family is Family.LM:
        return fit_lm_em(sample, k, config, starts=opts.starts, tol=opts.tol,
                         max_iter=opts.max_iter, extra_inits=extra_inits,
                         track_paths=opts.track_paths)
    if config.family is Family.VR:
        return fit_vr(sample, k, config, tol=opts.vr_tol)
    return fit_ac(sample, k, config)


# ---------------------------------------------------------------------------
# Profile curve
# ---------------------------------------------------------------------------

def profile(sample: Sample, config: ModelConfig, k_top: int,
            options: FitOptions | None = None,
            extra_inits_k: dict[int, list] | None = None) -> ProfileCurve:
    """Fit K = 1..k_top with warm starts; enforce monotone loglik via embedding.

    extra_inits_k maps K to extra LM starts ((weights, means) pairs), used by
    callers that can supply a known-good parameter (e.g. the true theta).
    """
    if k_top < 1:
        raise UsageError("k_top must be >= 1")
    opts = options or FitOptions()
    entries: list[FitResult] = []

    if config.family is Family.VR:
        # one basis/Gram build at k_top, coordinate descent on leading blocks
        x, y = sample.x, sample.y
        basis = vr_basis_matrix(x, k_top)
        gram_full = basis.T @ basis
        b_full = basis.T @ y
        lo, hi = config.m_lo, config.m_hi
        theta_prev = np.zeros(0)
        for k in range(1, k_top + 1):
            gram = gram_full[:k, :k]
            b = b_full[:k]
            theta = np.zeros(k)
            theta[:k - 1] = theta_prev
            converged = False
            sweeps = 0
            for sweeps in range(1, 10001):
                delta = 0.0
                for j in range(k):
                    gjj = gram[j, j]
                    if gjj <= 0.0:
                        new = 0.0
                    else:
                        resid_j = b[j] - (gram[j] @ theta - gjj * theta[j])
                        new = min(max(resid_j / gjj, lo), hi)
                    delta = max(delta, abs(new - theta[j]))
                    theta[j] = new
                if delta < opts.vr_tol:
                    converged = True
                    break
            th = ThetaVR(tuple(theta))
            res = FitResult(th, log_likelihood(config, th, sample), sweeps, converged, 1)
            entries.append(res)
            theta_prev = theta
    else:
        prev: FitResult | None = None
        for k in range(1, k_top + 1):
            extra = list((extra_inits_k or {}).get(k, []))
            if config.family is Family.LM and prev is not None:
                emb = embed(config, prev.theta, k)
                extra.append((emb.weights, emb.means))
            res = fit_k(sample, k, config, opts, extra_inits=extra or None)
            entries.append(res)
            prev = res

    # nestedness: replace any dip with the embedded previous solution
    for i in range(1, len(entries)):
        if entries[i].loglik < entries[i - 1].loglik:
            emb = embed(config, entries[i - 1].theta, i + 1)
            entries[i] = replace(entries[i - 1], theta=emb, iterations=0,
                                 converged=True, starts_used=0,
                                 loglik=entries[i - 1].loglik)
    return ProfileCurve(n=sample.n, family=config.family, entries=tuple(entries))
