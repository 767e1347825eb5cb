"""Expectation Propagation over half-space-constrained Gaussians.

Approximates the mass, mean and covariance of N(mu, Sigma) restricted to an
intersection of half-spaces by replacing each indicator with a univariate
Gaussian "soft indicator" site along the constraint direction.  Sites are
moment-matched against the exact truncated-Gaussian tilted distribution and
updated with damping; the site sweep is vectorised, and `expected_min`
batches the EP solves for all of its subregions in one pass (they are
independent subproblems).

`expected_min` assembles E[min(y, eta)] for y ~ N(mu, Sigma) from the mass
of the "nothing beats eta" orthant plus, for each coordinate j, the mass and
conditional mean of the region where y_j is the winner and beats eta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfcx, log_ndtr, ndtr

from .acquisitions import expected_loss_1

_LOG_2PI = float(np.log(2.0 * np.pi))
_SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))
_UNDERFLOW_Z = 37.0  # one-sided standardised bound beyond which mass < 1e-300
MAX_DIMENSION = 64


@dataclass(frozen=True)
class HalfSpace:
    """Indicator constraint { y : normal . y - offset >= 0 }."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float).reshape(-1)
        if not np.all(np.isfinite(normal)) or np.linalg.norm(normal) <= 0.0:
            raise ValueError("normal must be finite with positive norm")
        normal.setflags(write=False)
        object.__setattr__(self, "normal", normal)

    @property
    def dim(self) -> int:
        return self.normal.shape[0]


@dataclass(frozen=True)
class PolyhedralRegion:
    """Intersection of half-spaces over a common dimension."""

    constraints: tuple

    def __post_init__(self):
        constraints = tuple(self.constraints)
        dims = {c.dim for c in constraints}
        if len(dims) > 1:
            raise ValueError("all constraints must share the same dimension")
        object.__setattr__(self, "constraints", constraints)

    @property
    def dim(self) -> int | None:
        return self.constraints[0].dim if self.constraints else None


@dataclass(frozen=True)
class EpOptions:
    # site-parameter tolerance; tight enough that the stopping residue in
    # assembled values stays below 1e-8 (the monotonicity guarantee)
    tol: float = 1e-8
    max_iters: int = 60
    damping: float = 0.5


@dataclass
class EpResult:
    log_mass: float
    mean: np.ndarray
    covariance: np.ndarray
    converged: bool
    iterations: int
    flags: list = field(default_factory=list)

    @property
    def mass(self) -> float:
        return float(np.exp(self.log_mass))


def truncated_moments_1d(mean: float, var: float, lower: float, upper: float):
    """Mass, mean and variance of N(mean, var) truncated to [lower, upper].

    Stable in far tails: the mass is assembled from log-CDF differences and
    the moment ratios from log-density minus log-mass, so e.g. N(0,1) on
    [10, 11] evaluates correctly.  If the mass underflows below 1e-300 the
    result is flagged by returning mass 0.0 with the mean clamped to the
    bound nearest the bulk of the distribution and variance 0.0.
    """
    if var <= 0.0:
        raise ValueError("var must be positive")
    if not lower < upper:
        raise ValueError("lower must be strictly below upper")
    sigma = float(np.sqrt(var))
    a = (lower - mean) / sigma if np.isfinite(lower) else -np.inf
    b = (upper - mean) / sigma if np.isfinite(upper) else np.inf

    flip = False
    if b <= 0.0:  # mirror into the right tail
        a, b = -b, -a
        flip = True

    if a <= 0.0:
        mass = float(ndtr(b) - ndtr(a))
        log_mass = np.log(mass) if mass > 0.0 else -np.inf
    else:
        la = float(log_ndtr(-a))
        lb = float(log_ndtr(-b)) if np.isfinite(b) else -np.inf
        with np.errstate(divide="ignore"):
            log_mass = la + float(np.log1p(-np.exp(lb - la))) if lb > -np.inf else la
        mass = float(np.exp(log_mass))

    if mass < 1e-300:
        # flagged underflow: clamp to the bound nearest the untruncated bulk
        edge = lower if not flip else upper
        return 0.0, float(edge), 0.0

    def ratio(t):
        if not np.isfinite(t):
            return 0.0
        return float(np.exp(-0.5 * t * t - 0.5 * _LOG_2PI - log_mass))

    alpha, beta = ratio(a), ratio(b)
    offset = alpha - beta
    a_term = a * alpha if np.isfinite(a) else 0.0
    b_term = b * beta if np.isfinite(b) else 0.0
    t_var = var * max(1.0 + a_term - b_term - offset**2, 0.0)
    if flip:
        offset = -offset
    t_mean = mean + sigma * offset
    t_mean = min(max(t_mean, lower), upper)
    return mass, float(t_mean), float(t_var)


def _one_sided_tail(a: np.ndarray):
    """Vectorised moments of a standard normal truncated to [a, inf).

    Returns (log_mass, hazard, var_factor) where hazard = phi(a)/Phi(-a),
    the truncated mean offset, and var_factor = 1 - hazard*(hazard - a),
    the truncated variance relative to the cavity variance.
    """
    a = np.asarray(a, dtype=float)
    log_mass = log_ndtr(-a)
    hazard = np.empty_like(a)
    big = a > -25.0
    # erfcx-based hazard is stable for moderate and large a
    hazard[big] = _SQRT_2_OVER_PI / erfcx(a[big] / np.sqrt(2.0))
    small = ~big  # deep left tail: Phi(-a) ~ 1, hazard ~ phi(a)
    hazard[small] = np.exp(-0.5 * a[small] ** 2 - 0.5 * _LOG_2PI)
    var_factor = np.clip(1.0 - hazard * (hazard - a), 1e-14, 1.0)
    return log_mass, hazard, var_factor


class _BatchedEp:
    """EP for R regions sharing one Gaussian prior; K half-spaces each.

    C has shape (R, K, n) with unit-norm rows, b has shape (R, K); the
    constraints read C[r, k] . y >= b[r, k].  Internally the prior is
    whitened to N(0, I) (y = mu + L z), which makes the log-normaliser of
    a vacuous region exactly zero and keeps the site algebra well scaled
    even for nearly singular priors.
    """

    def __init__(self, mu, Sigma, C, b, opts: EpOptions):
        n = mu.shape[0]
        self.n = n
        self.mu = mu
        self.opts = opts
        jitter = 1e-10 * float(np.trace(Sigma)) / n
        Sj = Sigma + jitter * np.eye(n)
        try:
            self.L = np.linalg.cholesky(Sj)
        except np.linalg.LinAlgError:
            raise ValueError("Sigma must be symmetric positive definite (after jitter)")
        # constraint c.y >= b becomes chat.z >= bhat with chat along L^T c
        Cz = C @ self.L
        norms = np.linalg.norm(Cz, axis=2)
        norms = np.maximum(norms, 1e-150)
        self.C = Cz / norms[:, :, None]
        self.b = (b - C @ mu) / norms
        R, K = b.shape
        self.R, self.K = R, K
        self.tau = np.zeros((R, K))
        self.nu = np.zeros((R, K))
        self.dead = np.zeros(R, dtype=bool)
        self.converged = np.zeros(R, dtype=bool)
        self.skipped_sites = 0
        self.iterations = 0
        self._eye = np.eye(n)

    def _posterior(self):
        Ct = np.transpose(self.C, (0, 2, 1))
        Lam = self._eye[None, :, :] + Ct @ (self.tau[:, :, None] * self.C)
        V = np.linalg.inv(Lam)
        V = 0.5 * (V + np.transpose(V, (0, 2, 1)))
        h = (self.nu[:, None, :] @ self.C)[:, 0, :]
        m = (V @ h[:, :, None])[:, :, 0]
        return Lam, V, h, m

    def _cavities(self, V, m):
        mk = (self.C @ m[:, :, None])[:, :, 0]
        CV = self.C @ V
        vk = np.sum(CV * self.C, axis=2)
        ok = vk > 0.0
        safe_vk = np.where(ok, vk, 1.0)
        tau_cav = 1.0 / safe_vk - self.tau
        nu_cav = mk / safe_vk - self.nu
        ok &= tau_cav > 0.0
        return tau_cav, nu_cav, ok

    def run(self):
        if self.K == 0:
            self.converged[:] = True
            return
        for sweep in range(self.opts.max_iters):
            self.iterations = sweep + 1
            _, V, _, m = self._posterior()
            tau_cav, nu_cav, ok = self._cavities(V, m)
            self.skipped_sites += int(np.sum(~ok))

            safe_tc = np.where(ok, tau_cav, 1.0)
            v_c = 1.0 / safe_tc
            m_c = nu_cav * v_c
            a = (self.b - m_c) / np.sqrt(v_c)
            self.dead |= np.any(ok & (a > _UNDERFLOW_Z), axis=1)

            _, hazard, var_factor = _one_sided_tail(np.where(ok, a, 0.0))
            t_mean = m_c + np.sqrt(v_c) * hazard
            t_var = v_c * var_factor
            tau_target = np.maximum(1.0 / t_var - tau_cav, 0.0)
            nu_target = t_mean / t_var - nu_cav

            update = ok & ~self.dead[:, None] & ~self.converged[:, None]
            d_tau = np.where(update, self.opts.damping * (tau_target - self.tau), 0.0)
            d_nu = np.where(update, self.opts.damping * (nu_target - self.nu), 0.0)
            change = np.maximum(
                np.abs(d_tau) / (1.0 + np.abs(self.tau)),
                np.abs(d_nu) / (1.0 + np.abs(self.nu)),
            )
            self.tau += d_tau
            self.nu += d_nu

            region_change = np.max(np.where(update, change, 0.0), axis=1)
            newly = region_change < self.opts.tol
            self.converged |= newly & ~self.dead
            if np.all(self.converged | self.dead):
                break

    def finalize(self):
        """Log-normaliser, mean and covariance per region from the final sites."""
        Lam, V, h, m = self._posterior()
        sign, log_det_lam = np.linalg.slogdet(Lam)
        log_det_lam = np.where(sign > 0, log_det_lam, np.inf)
        log_zq = 0.5 * np.einsum("ri,ri->r", h, m) - 0.5 * log_det_lam

        if self.K > 0:
            tau_cav, nu_cav, ok = self._cavities(V, m)
            if not np.all(ok | self.dead[:, None]):
                self.converged &= ~np.any(~ok & ~self.dead[:, None], axis=1)
            safe_tc = np.where(ok, tau_cav, 1e-12)
            v_c = 1.0 / safe_tc
            m_c = np.where(ok, nu_cav * v_c, 0.0)
            a = (self.b - m_c) / np.sqrt(v_c)
            log_tilt_mass, _, _ = _one_sided_tail(a)
            A = 1.0 / v_c + self.tau
            mu_z = m_c / v_c + self.nu
            log_gauss_int = (
                -0.5 * np.log1p(self.tau * v_c) + mu_z**2 / (2.0 * A) - m_c**2 / (2.0 * v_c)
            )
            log_site_const = log_tilt_mass - log_gauss_int
            log_mass = log_zq + np.sum(log_site_const, axis=1)
        else:
            log_mass = log_zq
        log_mass = np.where(self.dead, -np.inf, log_mass)
        # map the whitened posterior back: y = mu + L z
        mean = self.mu[None, :] + np.einsum("ij,rj->ri", self.L, m)
        cov = np.einsum("ij,rjk,lk->ril", self.L, V, self.L)
        cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))
        return log_mass, mean, cov


def _region_arrays(region: PolyhedralRegion, n: int):
    K = len(region.constraints)
    C = np.zeros((1, K, n))
    b = np.zeros((1, K))
    for k, hs in enumerate(region.constraints):
        if hs.dim != n:
            raise ValueError("constraint dimension mismatch")
        norm = float(np.linalg.norm(hs.normal))
        C[0, k] = hs.normal / norm
        b[0, k] = hs.offset / norm
    return C, b


def _validate_gaussian(mu, Sigma):
    mu = np.asarray(mu, dtype=float).reshape(-1)
    Sigma = np.asarray(Sigma, dtype=float)
    n = mu.shape[0]
    if Sigma.shape != (n, n):
        raise ValueError("Sigma must be n x n")
    if n > MAX_DIMENSION:
        raise ValueError(f"dimension capped at {MAX_DIMENSION}")
    scale = max(float(np.max(np.abs(Sigma))), 1.0)
    if not np.allclose(Sigma, Sigma.T, atol=1e-8 * scale):
        raise ValueError("Sigma must be symmetric")
    return mu, 0.5 * (Sigma + Sigma.T)


def ep_region_moments(mu, Sigma, region: PolyhedralRegion, opts: EpOptions | None = None) -> EpResult:
    """EP approximation of the Gaussian mass and moments over ``region``."""
    mu, Sigma = _validate_gaussian(mu, Sigma)
    opts = opts or EpOptions()
    C, b = _region_arrays(region, mu.shape[0])
    ep = _BatchedEp(mu, Sigma, C, b, opts)
    ep.run()
    log_mass, mean, cov = ep.finalize()
    flags = []
    if ep.skipped_sites:
        flags.append(f"skipped_sites={ep.skipped_sites}")
    if ep.dead[0]:
        flags.append("mass_underflow")
    return EpResult(
        log_mass=float(log_mass[0]),
        mean=mean[0],
        covariance=cov[0],
        converged=bool(ep.converged[0] or ep.dead[0]),
        iterations=ep.iterations,
        flags=flags,
    )


@dataclass
class ExpectedMinResult:
    value: float
    log_mass_upper: float  # region where every coordinate exceeds eta
    region_log_masses: np.ndarray  # one per winner coordinate
    region_means: np.ndarray  # conditional mean of the winner coordinate
    converged: bool
    iterations: int
    flags: list = field(default_factory=list)

    @property
    def total_mass(self) -> float:
        return float(np.exp(self.log_mass_upper) + np.sum(np.exp(self.region_log_masses)))


def expected_min_full(mu, Sigma, eta: float, opts: EpOptions | None = None) -> ExpectedMinResult:
    """E[min(y, eta)] for y ~ N(mu, Sigma), with per-region diagnostics.

    Decomposes the expectation as eta * Z_h + sum_j Z_j * E[y_j | P_j]
    where Z_h is the mass of {y_i > eta for all i} and P_j is the event
    that y_j <= eta and y_j is the smallest coordinate; each term is an
    EP solve, batched over the n + 1 regions.
    """
    mu, Sigma = _validate_gaussian(mu, Sigma)
    opts = opts or EpOptions()
    n = mu.shape[0]
    if n == 1:
        value = expected_loss_1(float(mu[0]), max(float(Sigma[0, 0]), 0.0), eta)
        below = float(ndtr((eta - mu[0]) / np.sqrt(max(float(Sigma[0, 0]), 1e-300))))
        return ExpectedMinResult(
            value=float(value),
            log_mass_upper=float(np.log(max(1.0 - below, 1e-300))),
            region_log_masses=np.array([np.log(max(below, 1e-300))]),
            region_means=mu.copy(),
            converged=True,
            iterations=0,
        )

    R = n + 1
    C = np.zeros((R, n, n))
    b = np.zeros((R, n))
    # region 0: every coordinate exceeds eta
    C[0] = np.eye(n)
    b[0] = eta
    # region j+1: coordinate j wins and beats eta
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for j in range(n):
        C[j + 1, 0, j] = -1.0
        b[j + 1, 0] = -eta
        row = 1
        for i in range(n):
            if i == j:
                continue
            C[j + 1, row, i] = inv_sqrt2
            C[j + 1, row, j] = -inv_sqrt2
            b[j + 1, row] = 0.0
            row += 1

    ep = _BatchedEp(mu, Sigma, C, b, opts)
    ep.run()
    log_mass, mean, _ = ep.finalize()

    masses = np.exp(log_mass)
    winner_means = np.array([mean[j + 1, j] for j in range(n)])
    # The exact region masses partition unity; project the EP masses onto
    # that constraint (scale the winner regions to 1 - Z_h) before
    # assembling.  Raw masses are still reported below.
    winner_total = float(np.sum(masses[1:]))
    scale = max(1.0 - masses[0], 0.0) / winner_total if winner_total > 0.0 else 1.0
    value = eta * masses[0] + scale * float(np.sum(masses[1:] * winner_means))

    flags = []
    all_converged = bool(np.all(ep.converged | ep.dead))
    if not all_converged:
        flags.append("ep_not_converged")
    if ep.skipped_sites:
        flags.append(f"skipped_sites={ep.skipped_sites}")
    return ExpectedMinResult(
        value=float(value),
        log_mass_upper=float(log_mass[0]),
        region_log_masses=log_mass[1:].copy(),
        region_means=winner_means,
        converged=all_converged,
        iterations=ep.iterations,
        flags=flags,
    )


def expected_min(mu, Sigma, eta: float, opts: EpOptions | None = None) -> float:
    """E[min(y, eta)] for y ~ N(mu, Sigma); see :func:`expected_min_full`."""
    return expected_min_full(mu, Sigma, eta, opts).value
