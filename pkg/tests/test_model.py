"""Posterior algebra, exact scores, and the analytic denoiser."""

import numpy as np
import pytest
from scipy.integrate import simpson
from scipy.stats import multivariate_normal

from helpers import flat_world, image_world
from odebc.errors import ShapeMismatchError, ValidationError
from odebc.model import (
    BLANK,
    AnalyticDenoiser,
    GmmWorld,
    block_pool_matrix,
    conditional_posterior,
    eps_conditional,
    eps_unconditional,
    linear_denoiser,
    log_density_x0_given_y,
    mixture_log_density,
    mixture_sample,
    mixture_score,
    mode_oracle,
    prior_mixture,
    zero_denoiser,
)
from odebc.rng import generator
from odebc.schedule import make_linear_vp_schedule


def single_block_world(tau=0.1, s=1.0):
    return GmmWorld(
        weights=np.array([1.0]),
        means=np.zeros((1, 4)),
        stds=np.array([s]),
        tau=tau,
        block=2,
        shape=(2, 2, 1),
    )


def test_pooling_matrix_structure():
    op = block_pool_matrix(4, 4, 1, 2)
    assert op.shape == (4, 16)
    np.testing.assert_allclose(op.sum(axis=1), 1.0)
    # Orthogonal rows with squared norm 1/b^2.
    np.testing.assert_allclose(op @ op.T, np.eye(4) / 4, atol=1e-15)
    # Linearity (up to one rounding of each expression).
    rng = generator(1, 0)
    a, b = rng.standard_normal(16), rng.standard_normal(16)
    np.testing.assert_allclose(op @ (2.0 * a + b), 2.0 * (op @ a) + op @ b,
                               rtol=1e-14)


def test_world_validation():
    with pytest.raises(ValidationError):
        GmmWorld(np.array([0.5, 0.4]), np.zeros((2, 4)), np.ones(2), tau=0.1)
    with pytest.raises(ValidationError):
        GmmWorld(np.array([1.0]), np.zeros((1, 4)), np.array([-1.0]), tau=0.1)
    with pytest.raises(ValidationError):
        GmmWorld(np.array([1.0]), np.zeros((1, 4)), np.ones(1), tau=0.1, block=2)
    with pytest.raises(ShapeMismatchError):
        GmmWorld(np.array([1.0]), np.zeros((1, 4)), np.ones(1), tau=0.1,
                 block=2, shape=(2, 4, 1))


def test_posterior_uninformative_observation():
    world = flat_world(dim=6, n_comp=1, tau=1e3)
    y = np.full(6, 0.3)
    post = conditional_posterior(world, y)
    np.testing.assert_allclose(post.means[0], world.means[0], atol=1e-4)
    assert post.log_w[0] == pytest.approx(0.0, abs=1e-12)


def test_posterior_single_block_by_hand():
    # One 2x2 block, mu=0, s=1, tau=0.1: D D^T = 1/4, so each pixel of the
    # posterior mean is y * 0.25 / 0.26.
    world = single_block_world()
    post = conditional_posterior(world, np.array([1.0]))
    np.testing.assert_allclose(post.means[0], 0.25 / 0.26, rtol=1e-12)
    # Covariance: block-mean direction shrinks to tau^2/(1/4+tau^2), the
    # three orthogonal directions keep the prior variance.
    vals = np.sort(post.eigvals[0])
    np.testing.assert_allclose(vals, [0.01 / 0.26, 1.0, 1.0, 1.0], rtol=1e-10)


def test_posterior_zero_residual_dominates():
    means = np.array([[2.0, 2.0, 2.0, 2.0], [-3.0, -3.0, -3.0, -3.0],
                      [0.0, 4.0, -4.0, 0.0]])
    world = GmmWorld(np.full(3, 1 / 3), means, np.full(3, 0.5), tau=0.05,
                     block=2, shape=(2, 2, 1))
    for j in range(3):
        y = world.degrade(means[j])
        post = conditional_posterior(world, y)
        assert np.argmax(post.log_w) == j


def test_log_density_single_component_matches_scipy():
    world = flat_world(dim=5, n_comp=1, tau=0.3)
    y = world.degrade(world.means[0]) + 0.1
    post = conditional_posterior(world, y)
    cov = (post.eigvecs[0] * post.eigvals[0]) @ post.eigvecs[0].T
    ref = multivariate_normal(mean=post.means[0], cov=cov)
    x = generator(3, 0).standard_normal((20, 5))
    np.testing.assert_allclose(
        log_density_x0_given_y(world, x, y), ref.logpdf(x), rtol=1e-10
    )
    # Gaussian mode: any perturbation lowers the density.
    at_mode = log_density_x0_given_y(world, post.means[0], y)
    assert at_mode > log_density_x0_given_y(world, post.means[0] + 0.1, y)


def test_log_density_matches_grid_quadrature():
    world = flat_world(dim=2, n_comp=2, tau=0.4, spread=1.0)
    y = np.array([0.4, -0.2])
    grid = np.linspace(-6.0, 6.0, 801)
    xx, yy = np.meshgrid(grid, grid, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    prior = prior_mixture(world)
    log_prior = mixture_log_density(prior, pts)
    resid = pts - y  # D = I for flat block=1 worlds
    log_lik = -0.5 * (np.sum(resid**2, axis=1) / world.tau**2
                      + 2 * np.log(2 * np.pi * world.tau**2))
    joint = np.exp(log_prior + log_lik).reshape(xx.shape)
    norm = simpson(simpson(joint, x=grid, axis=1), x=grid)
    brute = joint / norm
    ours = np.exp(log_density_x0_given_y(world, pts, y)).reshape(xx.shape)
    bulk = brute > 1e-4
    np.testing.assert_allclose(ours[bulk], brute[bulk], rtol=1e-6)


def fd_score(mix, x, h):
    out = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        out[i] = (mixture_log_density(mix, x + step)
                  - mixture_log_density(mix, x - step)) / (2 * h)
    return out


@pytest.mark.parametrize("world_fn", [flat_world, image_world])
def test_score_matches_finite_difference(world_fn):
    world = world_fn()
    s = make_linear_vp_schedule(1000, 1e-4, 0.02)
    rng = generator(5, 0)
    y = world.degrade(world.means[0]) + world.tau * rng.standard_normal(world.obs_dim)
    for mix0 in [prior_mixture(world), conditional_posterior(world, y)]:
        for _ in range(12):
            t = rng.uniform(0.0, 1.0)
            alpha, sigma = float(s.alpha(t)), float(s.sigma(t))
            mix = mix0.diffused(alpha, sigma)
            x = mixture_sample(mix, 1, rng)[0]
            h = 4e-5 * np.sqrt(mix.eigvals.min())
            got = mixture_score(mix, x)
            want = fd_score(mix, x, h)
            assert np.linalg.norm(got - want) <= 1e-5 * np.linalg.norm(want)


def test_eps_single_gaussian_closed_form():
    world = flat_world(dim=6, n_comp=1, tau=0.25)
    s = make_linear_vp_schedule(1000, 1e-4, 0.02)
    y = world.degrade(world.means[0]) + 0.2
    post = conditional_posterior(world, y)
    rng = generator(9, 0)
    x = rng.standard_normal(6)
    for t in [0.05, 0.4, 0.9]:
        alpha, sigma = float(s.alpha(t)), float(s.sigma(t))
        cov = (post.eigvecs[0] * (alpha**2 * post.eigvals[0] + sigma**2)) \
            @ post.eigvecs[0].T
        want = sigma * np.linalg.solve(cov, x - alpha * post.means[0])
        np.testing.assert_allclose(eps_conditional(world, x, y, t, s), want,
                                   rtol=1e-9)


def test_eps_unconditional_standard_normal_world():
    world = GmmWorld(np.array([1.0]), np.zeros((1, 4)), np.ones(1), tau=0.1)
    s = make_linear_vp_schedule(1000, 1e-4, 0.02)
    x = np.array([0.3, -1.2, 2.0, 0.0])
    for t in [0.0, 0.5, 1.0]:
        sigma = float(s.sigma(t))
        np.testing.assert_allclose(eps_unconditional(world, x, t, s),
                                   sigma * x, rtol=1e-12, atol=1e-15)


def test_eps_approaches_identity_at_noise_boundary():
    world = flat_world()
    s = make_linear_vp_schedule(1000, 1e-4, 0.02)
    x = generator(13, 0).standard_normal(8)
    eps = eps_unconditional(world, x, 1.0, s)
    assert np.linalg.norm(eps - x) <= 0.05 * np.linalg.norm(x)


def test_mode_oracle_single_component():
    world = flat_world(dim=6, n_comp=1, tau=0.2)
    y = world.degrade(world.means[0]) + 0.1
    post = conditional_posterior(world, y)
    np.testing.assert_allclose(mode_oracle(world, y), post.means[0], atol=1e-8)


def test_mode_oracle_picks_dominant_component():
    means = 8.0 * np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 1.0, 0]])
    world = GmmWorld(np.full(3, 1 / 3), means, np.full(3, 0.4), tau=0.1)
    y = world.degrade(means[1])
    post = conditional_posterior(world, y)
    dens = [mixture_log_density(post, post.means[j]) for j in range(3)]
    best = int(np.argmax(dens))
    np.testing.assert_allclose(mode_oracle(world, y), post.means[best],
                               atol=1e-6)


def test_mode_oracle_matches_grid_argmax():
    world = flat_world(dim=2, n_comp=2, tau=0.3, spread=1.5)
    y = np.array([0.5, 0.5])
    grid = np.linspace(-5.0, 5.0, 501)
    xx, yy = np.meshgrid(grid, grid, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    dens = log_density_x0_given_y(world, pts, y)
    grid_best = pts[np.argmax(dens)]
    found = mode_oracle(world, y)
    assert np.max(np.abs(found - grid_best)) <= 0.03


def test_posterior_samples_match_rejection_sampling():
    from odebc.metrics import energy_distance_test

    world = flat_world(dim=2, n_comp=2, tau=0.5, spread=1.0)
    y = np.array([0.2, -0.1])
    rng = generator(21, 0)
    # Rejection sampling from prior * likelihood, vectorized proposals.
    target = 1500
    kept = []
    log_peak = -np.log(2 * np.pi * world.tau**2)
    prior = prior_mixture(world)
    while sum(len(k) for k in kept) < target:
        z = mixture_sample(prior, 200_000, rng)
        resid = z - y
        log_acc = (-0.5 * np.sum(resid**2, axis=1) / world.tau**2
                   - np.log(2 * np.pi * world.tau**2)) - log_peak
        accept = np.log(rng.uniform(size=z.shape[0])) < log_acc
        kept.append(z[accept])
    reject = np.concatenate(kept)[:target]
    exact = mixture_sample(conditional_posterior(world, y), target,
                           generator(22, 0))
    result = energy_distance_test(exact, reject, n_permutations=200, seed=0)
    assert result.p_value > 0.01


def test_analytic_denoiser_caches_and_matches():
    world = image_world()
    s = make_linear_vp_schedule(1000, 1e-4, 0.02)
    den = AnalyticDenoiser(world, s)
    rng = generator(30, 0)
    y = world.degrade(world.means[0])
    x = rng.standard_normal(world.dim)
    np.testing.assert_array_equal(den.eps(x, y, 0.3),
                                  eps_conditional(world, x, y, 0.3, s))
    np.testing.assert_array_equal(den.eps(x, BLANK, 0.3),
                                  eps_unconditional(world, x, 0.3, s))
    den.eps(x, y, 0.5)
    assert len(den._posteriors) == 1  # same condition, one cache entry


def test_trivial_denoisers():
    x = np.array([2.0, -2.0])
    assert np.all(zero_denoiser().eps(x, BLANK, 0.5) == 0.0)
    np.testing.assert_array_equal(linear_denoiser(np.eye(2)).eps(x, BLANK, 0.1), x)
    np.testing.assert_array_equal(
        linear_denoiser(0.5 * np.eye(2)).eps(x, BLANK, 0.1), [1.0, -1.0]
    )


def test_batched_and_single_agree():
    world = flat_world()
    s = make_linear_vp_schedule(1000, 1e-4, 0.02)
    y = world.degrade(world.means[1])
    x = generator(40, 0).standard_normal((5, 8))
    batched = eps_conditional(world, x, y, 0.7, s)
    for i in range(5):
        np.testing.assert_allclose(
            eps_conditional(world, x[i], y, 0.7, s), batched[i], rtol=1e-12
        )
