"""Analytic Gaussian-mixture world and its exact noise-prediction models.

The world is a mixture of isotropic Gaussians over flat or image-shaped
tensors, observed through block-average pooling plus Gaussian noise. Both
the prior and the conditional posterior stay Gaussian mixtures in closed
form, so the exact score (and hence an exact eps-prediction "denoiser") is
available at every noise level. Everything here is pure and immutable after
construction, which is what lets projections run on any number of workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import NonConvergenceError, ShapeMismatchError, ValidationError
from .rng import generator
from .schedule import DiscreteSchedule

# Exponent floor: exp(-745) is the smallest positive normal-ish double.
_LOG_FLOOR = -745.0


class _Blank:
    """Marker for the unconditional branch (the dropped condition)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "BLANK"


BLANK = _Blank()


def block_pool_matrix(height: int, width: int, channels: int, block: int) -> np.ndarray:
    """Block-average pooling as a dense (m, d) matrix, row-major layout."""
    if height % block or width % block:
        raise ValidationError("block must divide both spatial axes")
    d = height * width * channels
    lh, lw = height // block, width // block
    m = lh * lw * channels
    op = np.zeros((m, d))
    inv = 1.0 / (block * block)
    for bi in range(lh):
        for bj in range(lw):
            for ch in range(channels):
                row = (bi * lw + bj) * channels + ch
                for di in range(block):
                    for dj in range(block):
                        col = ((bi * block + di) * width + (bj * block + dj)) * channels + ch
                        op[row, col] = inv
    return op


@dataclass(frozen=True, eq=False)
class GmmWorld:
    """Isotropic Gaussian mixture prior with a linear degradation channel.

    y = D x_0 + eta, eta ~ N(0, tau^2 I), where D block-averages an
    image-shaped x_0 (or is the identity for flat worlds with block=1).
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    tau: float
    block: int = 1
    shape: tuple[int, int, int] | None = None
    degradation: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.stds, dtype=np.float64)
        if mu.ndim != 2 or w.shape != (mu.shape[0],) or s.shape != (mu.shape[0],):
            raise ShapeMismatchError("weights, means, stds must agree on J")
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w <= 0):
            raise ValidationError("weights must be positive and sum to 1")
        if np.any(s <= 0) or self.tau <= 0:
            raise ValidationError("stds and tau must be positive")
        if self.shape is not None:
            h, wd, c = self.shape
            if h * wd * c != mu.shape[1]:
                raise ShapeMismatchError("shape product != mean dimension")
            op = block_pool_matrix(h, wd, c, self.block)
        else:
            if self.block != 1:
                raise ValidationError("flat worlds require block=1")
            op = np.eye(mu.shape[1])
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", s)
        object.__setattr__(self, "degradation", op)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.degradation.shape[0]

    def degrade(self, x: np.ndarray) -> np.ndarray:
        return x @ self.degradation.T


@dataclass(frozen=True, eq=False)
class Mixture:
    """Gaussian mixture with per-component eigendecomposed covariances.

    eigvecs is None for diagonal-in-the-standard-basis covariances (the
    prior); otherwise eigvecs[j] columns are the eigenvectors of C_j.
    """

    log_w: np.ndarray
    means: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def diffused(self, alpha: float, sigma: float) -> "Mixture":
        """Mixture of alpha-scaled components convolved with sigma^2 noise."""
        return Mixture(
            log_w=self.log_w,
            means=alpha * self.means,
            eigvals=alpha * alpha * self.eigvals + sigma * sigma,
            eigvecs=self.eigvecs,
        )


def _as_batch(x: np.ndarray, dim: int):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == (dim,):
        return x[None, :], True
    if x.ndim == 2 and x.shape[1] == dim:
        return x, False
    raise ShapeMismatchError(f"expected shape ({dim},) or (n, {dim}), got {x.shape}")


def _component_logpdfs(mix: Mixture, x: np.ndarray):
    """Per-component log N(x; m_j, C_j) plus the eigenbasis residuals."""
    dim = mix.means.shape[1]
    diff = x[None, :, :] - mix.means[:, None, :]
    coords = diff if mix.eigvecs is None else diff @ mix.eigvecs
    quad = np.einsum("jbd,jd->jb", coords**2, 1.0 / mix.eigvals)
    logdet = np.sum(np.log(mix.eigvals), axis=1)
    logpdf = -0.5 * (dim * np.log(2 * np.pi) + logdet[:, None] + quad)
    return logpdf, coords


def _logsumexp0(joint: np.ndarray) -> np.ndarray:
    """log-sum-exp over axis 0; the max term keeps the log argument >= 1."""
    peak = joint.max(axis=0)
    return peak + np.log(np.exp(joint - peak).sum(axis=0))


def mixture_log_density(mix: Mixture, x: np.ndarray):
    xb, single = _as_batch(x, mix.dim)
    logpdf, _ = _component_logpdfs(mix, xb)
    out = _logsumexp0(mix.log_w[:, None] + logpdf)
    return float(out[0]) if single else out


def mixture_score(mix: Mixture, x: np.ndarray):
    """Gradient of log density; log-sum-exp responsibilities, floored."""
    xb, single = _as_batch(x, mix.dim)
    logpdf, coords = _component_logpdfs(mix, xb)
    joint = mix.log_w[:, None] + logpdf
    resp = np.exp(np.maximum(joint - _logsumexp0(joint), _LOG_FLOOR))
    scaled = coords / mix.eigvals[:, None, :]
    if mix.eigvecs is not None:
        scaled = scaled @ mix.eigvecs.transpose(0, 2, 1)
    out = -np.einsum("jb,jbd->bd", resp, scaled)
    return out[0] if single else out


def mixture_sample(mix: Mixture, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws: component by weight, then Gaussian in the eigenbasis."""
    comps = rng.choice(mix.log_w.size, size=n, p=np.exp(mix.log_w))
    gauss = rng.standard_normal((n, mix.dim))
    out = np.empty((n, mix.dim))
    for j in range(mix.log_w.size):
        mask = comps == j
        z = gauss[mask] * np.sqrt(mix.eigvals[j])
        if mix.eigvecs is not None:
            z = z @ mix.eigvecs[j].T
        out[mask] = mix.means[j] + z
    return out


def prior_mixture(world: GmmWorld) -> Mixture:
    return Mixture(
        log_w=np.log(world.weights),
        means=world.means,
        eigvals=np.broadcast_to(
            world.stds[:, None] ** 2, world.means.shape
        ).copy(),
        eigvecs=None,
    )


def conditional_posterior(world: GmmWorld, y: np.ndarray) -> Mixture:
    """Exact posterior mixture over x_0 given the degraded observation y.

    Linear-Gaussian conjugacy per component:
      m_j = mu_j + s^2 D^T (s^2 D D^T + tau^2 I)^-1 (y - D mu_j)
      C_j = s^2 I - s^4 D^T (s^2 D D^T + tau^2 I)^-1 D
    and component weights reweighted by the evidence N(y; D mu_j, G_j).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (world.obs_dim,):
        raise ShapeMismatchError(
            f"y must have shape ({world.obs_dim},), got {y.shape}"
        )
    op = world.degradation
    m_obs = world.obs_dim
    n_comp, dim = world.means.shape
    means = np.empty((n_comp, dim))
    eigvals = np.empty((n_comp, dim))
    eigvecs = np.empty((n_comp, dim, dim))
    log_ev = np.empty(n_comp)
    gram = op @ op.T
    for j in range(n_comp):
        s2 = world.stds[j] ** 2
        g = s2 * gram + world.tau**2 * np.eye(m_obs)
        factor = cho_factor(g)
        resid = y - op @ world.means[j]
        means[j] = world.means[j] + s2 * (op.T @ cho_solve(factor, resid))
        cov = s2 * np.eye(dim) - s2 * s2 * (op.T @ cho_solve(factor, op))
        vals, vecs = np.linalg.eigh(cov)
        eigvals[j] = np.maximum(vals, 1e-300)
        eigvecs[j] = vecs
        _, logdet = np.linalg.slogdet(g)
        log_ev[j] = -0.5 * (
            m_obs * np.log(2 * np.pi) + logdet + resid @ cho_solve(factor, resid)
        )
    log_w = np.log(world.weights) + log_ev
    log_w = log_w - logsumexp(log_w)
    return Mixture(log_w=log_w, means=means, eigvals=eigvals, eigvecs=eigvecs)


@lru_cache(maxsize=100_000)
def _alpha_sigma(s: DiscreteSchedule, t: float) -> tuple[float, float]:
    return float(s.alpha(t)), float(s.sigma(t))


def _eps_from_mixture(mix: Mixture, x, t, s: DiscreteSchedule):
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValidationError("t must lie in [0, 1]")
    alpha, sigma = _alpha_sigma(s, t)
    return -sigma * mixture_score(mix.diffused(alpha, sigma), x)


def eps_conditional(world: GmmWorld, x_t, y, t, s: DiscreteSchedule):
    """Exact eps-prediction -sigma(t) grad log q_t(x_t | y)."""
    return _eps_from_mixture(conditional_posterior(world, y), x_t, t, s)


def eps_unconditional(world: GmmWorld, x_t, t, s: DiscreteSchedule):
    """Exact eps-prediction under the prior mixture (blank condition)."""
    return _eps_from_mixture(prior_mixture(world), x_t, t, s)


def log_density_x0_given_y(world: GmmWorld, x_0, y):
    return mixture_log_density(conditional_posterior(world, y), x_0)


def mode_oracle(world: GmmWorld, y, n_starts: int = 8, seed: int = 0) -> np.ndarray:
    """Approximate argmax of log q(x_0 | y) by multi-start gradient ascent."""
    post = conditional_posterior(world, y)

    def neg_logd(x):
        return -mixture_log_density(post, x)

    def neg_grad(x):
        return -mixture_score(post, x)

    starts = [post.means[j] for j in range(post.means.shape[0])]
    rng = generator(seed, 0)
    for i in range(n_starts):
        j = i % post.means.shape[0]
        scale = 0.5 * float(np.sqrt(post.eigvals[j].max()))
        starts.append(post.means[j] + scale * rng.standard_normal(world.dim))
    best_x, best_val = None, np.inf
    for x0 in starts:
        res = minimize(
            neg_logd, x0, jac=neg_grad, method="L-BFGS-B",
            options={"maxiter": 500, "gtol": 1e-12},
        )
        if res.fun < best_val:
            best_x, best_val = res.x, res.fun
    if float(np.linalg.norm(neg_grad(best_x))) > 1e-6:
        raise NonConvergenceError("mode search gradient norm above 1e-6")
    return best_x


class AnalyticDenoiser:
    """eps(x_t, condition, t) backed by the exact world score.

    Pure given (world, schedule): the per-condition posterior is cached by
    value, so repeated calls from any thread return identical results.
    """

    def __init__(self, world: GmmWorld, s: DiscreteSchedule):
        self.world = world
        self.schedule = s
        self._prior = prior_mixture(world)
        self._posteriors: dict[bytes, Mixture] = {}

    def _mixture(self, condition) -> Mixture:
        if condition is BLANK:
            return self._prior
        y = np.ascontiguousarray(np.asarray(condition, dtype=np.float64))
        key = y.tobytes()
        mix = self._posteriors.get(key)
        if mix is None:
            mix = conditional_posterior(self.world, y)
            self._posteriors[key] = mix
        return mix

    def eps(self, x_t, condition, t):
        return _eps_from_mixture(self._mixture(condition), x_t, t, self.schedule)


class _ZeroDenoiser:
    def eps(self, x_t, condition, t):
        return np.zeros_like(np.asarray(x_t, dtype=np.float64))


class _LinearDenoiser:
    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=np.float64)

    def eps(self, x_t, condition, t):
        return np.asarray(x_t, dtype=np.float64) @ self.matrix.T


def zero_denoiser():
    return _ZeroDenoiser()


def linear_denoiser(matrix: np.ndarray):
    return _LinearDenoiser(matrix)
