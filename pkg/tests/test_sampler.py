import math
import numpy as np
import pytest
from scipy import integrate, stats
from armcmc.core import PosteriorEnsemble
from armcmc.exceptions import (ConvergenceError, ParameterError, ProposalError,
                               UnreachableReliabilityError, ZeroDensityError)
from armcmc.sampler import (Branch, PrecisionReliability, ProposalSpec, acceptance_probability,
                            armcmc_min_samples, chernoff_min_samples, mh_chain, variable_jump_log_density,
                            variable_jump_log_density_many, variable_jump_sample, variable_jump_sample_many)


def test_chernoff():
    assert chernoff_min_samples(PrecisionReliability(0.01, 0.9)) == 14979
    assert chernoff_min_samples(PrecisionReliability(0.1, 0.9)) == 150
    assert chernoff_min_samples(PrecisionReliability(1.0, 0.0)) == 1


def test_precision_reliability():
    with pytest.raises(UnreachableReliabilityError):
        PrecisionReliability(0.01, 1.0)
    with pytest.raises(ValueError):
        PrecisionReliability(0.01, 1.5)
    with pytest.raises(ParameterError):
        PrecisionReliability(0.0, 0.9)
    with pytest.raises(ParameterError):
        PrecisionReliability(0.01, -0.1)


def test_min_samples_limits():
    rng = np.random.default_rng(12)
    for _ in range(20):
        pr = PrecisionReliability(rng.uniform(0.005, 0.5), rng.uniform(0.0, 0.99))
        assert armcmc_min_samples(pr, 1.0) == chernoff_min_samples(pr)
        assert armcmc_min_samples(pr, 0.0) == chernoff_min_samples(pr)


def test_min_samples_curve():
    pr = PrecisionReliability(0.01, 0.9)
    chernoff = chernoff_min_samples(pr)
    curve = [armcmc_min_samples(pr, round(0.05 * i, 2)) for i in range(1, 20)]
    assert all(1 <= k <= chernoff for k in curve)
    assert all(a <= b for a, b in zip(curve, curve[1:]))
    # fixed point of the bound at lambda = 0.7 is about 7406.5
    assert 7400 <= armcmc_min_samples(pr, 0.7) <= 7415
    with pytest.raises(ParameterError):
        armcmc_min_samples(pr, 1.5)


def test_min_samples_no_convergence():
    pr = PrecisionReliability(0.01, 0.9)
    with pytest.raises(ConvergenceError) as excinfo:
        armcmc_min_samples(pr, 0.7, max_iter=1)
    assert 7406 < excinfo.value.last_iterate < chernoff_min_samples(pr)


def test_acceptance_probability():
    assert acceptance_probability(0.0, 0.0, 0.0, 0.0) == 1.0
    assert acceptance_probability(-1.0, 0.0, 0.0, 0.0) == pytest.approx(math.exp(-1))
    # proposal densities enter the ratio
    assert acceptance_probability(0.0, 0.0, -1.0, 0.0) == pytest.approx(math.exp(-1))
    assert acceptance_probability(-math.inf, 0.0, 0.0, 0.0) == 0.0
    with pytest.raises(ZeroDensityError):
        acceptance_probability(0.0, -math.inf, 0.0, 0.0)
    with pytest.raises(ProposalError):
        acceptance_probability(math.nan, 0.0, 0.0, 0.0)


def make_ensemble(seed=0, k=400, dim=1):
    rng = np.random.default_rng(seed)
    return PosteriorEnsemble(rng.normal(3.0, 0.2, size=(k, dim)))


def test_proposal_spec():
    with pytest.raises(ProposalError):
        ProposalSpec(0.5, None, [0.0], [1.0])
    with pytest.raises(ProposalError):
        ProposalSpec(0.0, None, [0.0], [0.0])
    with pytest.raises(ProposalError):
        ProposalSpec(1.5, make_ensemble(), [0.0], [1.0])
    with pytest.raises(ProposalError):
        ProposalSpec(0.5, make_ensemble(dim=2), [0.0], [1.0])
    spec = ProposalSpec(0.5, make_ensemble(k=4000), [0.0], [1.0], kde_max_points=100)
    assert len(spec.support) == 2000
    assert len(spec.kde_points) == 100
    # a single-point ensemble still has a usable density
    single = ProposalSpec(1.0, PosteriorEnsemble([[1.0]]), [0.0], [1.0])
    assert np.isfinite(variable_jump_log_density([1.0], single))


def test_variable_jump_sample():
    rng = np.random.default_rng(1)
    ens = make_ensemble()
    theta, branch = variable_jump_sample(ProposalSpec(0.0, None, [0.0], [1.0]), rng)
    assert branch is Branch.gaussian
    theta, branch = variable_jump_sample(ProposalSpec(1.0, ens, [0.0], [1.0]), rng)
    assert branch is Branch.previous_posterior
    assert theta[0] in ens.post_burn_in[:, 0]
    thetas, previous = variable_jump_sample_many(ProposalSpec(0.3, ens, [0.0], [1.0]), rng, 5000)
    assert thetas.shape == (5000, 1)
    assert 0.27 < previous.mean() < 0.33
    assert np.all(np.isin(thetas[previous, 0], ens.post_burn_in[:, 0]))


def test_variable_jump_density():
    spec = ProposalSpec(0.0, None, [0.5], [2.0])
    assert variable_jump_log_density([1.0], spec) == pytest.approx(stats.norm.logpdf(1.0, 0.5, 2.0))

    spec = ProposalSpec(0.4, make_ensemble(), [0.0], [1.0])
    grid = np.linspace(-10.0, 10.0, 40001)
    density = np.exp(variable_jump_log_density_many(grid[:, None], spec))
    assert integrate.trapezoid(density, grid) == pytest.approx(1.0, abs=1e-3)
    # mass near the previous posterior is mostly the KDE branch
    near = (grid > 2.0) & (grid < 4.0)
    assert integrate.trapezoid(density[near], grid[near]) > 0.4


def test_mh_standard_normal():
    rng = np.random.default_rng(42)
    spec = ProposalSpec(0.0, None, [0.0], [1.5])
    ens = mh_chain([0.0], lambda th: float(stats.norm.logpdf(th[0])), spec, 20000, rng)
    post = ens.post_burn_in[:, 0]
    assert len(ens) == 20000
    assert -0.05 <= post.mean() <= 0.05
    assert 0.9 <= post.var() <= 1.1
    assert 0 < ens.acceptance_rate <= 1


def test_mh_vectorized_matches_scalar():
    spec = ProposalSpec(0.5, make_ensemble(), [2.0], [1.0])
    target = lambda th: float(stats.norm.logpdf(th[0], 3.0, 0.5))
    target_many = lambda ths: stats.norm.logpdf(ths[:, 0], 3.0, 0.5)
    a = mh_chain([2.5], target, spec, 500, np.random.default_rng(3))
    b = mh_chain([2.5], target_many, spec, 500, np.random.default_rng(3), vectorized=True)
    assert np.array_equal(a.samples, b.samples)
    assert a.accepted == b.accepted


def test_mh_edge_cases():
    spec = ProposalSpec(0.0, None, [0.0], [1.0])
    ens = mh_chain([0.3], lambda th: 0.0, spec, 1, np.random.default_rng(0), pack_index=4)
    assert len(ens) == 1
    assert ens.acceptance_rate == 1.0
    assert ens.pack_index == 4
    with pytest.raises(ZeroDensityError):
        mh_chain([0.0], lambda th: -math.inf, spec, 10, np.random.default_rng(0))
    with pytest.raises(ParameterError):
        mh_chain([0.0], lambda th: 0.0, spec, 0, np.random.default_rng(0))
    # a target that is zero outside [0, 1] keeps the chain inside
    ens = mh_chain([0.5], lambda th: 0.0 if 0 <= th[0] <= 1 else -math.inf, spec, 2000, np.random.default_rng(5))
    assert ens.samples.min() >= 0 and ens.samples.max() <= 1


def test_branch_frequency():
    ens = make_ensemble()
    n = 100000
    for i, lam in enumerate((0.1, 0.5, 0.9)):
        _, previous = variable_jump_sample_many(ProposalSpec(lam, ens, [0.0], [1.0]), np.random.default_rng(20 + i), n)
        assert abs(previous.mean() - lam) <= 3 * math.sqrt(lam * (1 - lam) / n)
    rng = np.random.default_rng(23)
    single = ProposalSpec(1.0, PosteriorEnsemble([[1.5, -2.0]]), [0.0, 0.0], [1.0, 1.0])
    for _ in range(10):
        theta, branch = variable_jump_sample(single, rng)
        assert branch is Branch.previous_posterior
        assert list(theta) == [1.5, -2.0]


def test_kde_peak():
    # a single support point leaves only the bandwidth floor, 1e-3 of the Gaussian scale
    spec = ProposalSpec(1.0, PosteriorEnsemble([[1.0]]), [0.0], [1.0])
    assert variable_jump_log_density([1.0], spec) == pytest.approx(-math.log(1e-3) - 0.5 * math.log(2 * math.pi))
    spec = ProposalSpec(1.0, PosteriorEnsemble([[1.0, 2.0]]), [0.0, 0.0], [1.0, 4.0], smoothed=True)
    expected = -math.log(1e-3) - math.log(4e-3) - math.log(2 * math.pi)
    assert variable_jump_log_density([1.0, 2.0], spec) == pytest.approx(expected)


def test_gaussian_covariance():
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    spec = ProposalSpec(0.0, None, [1.0, -1.0], [1.0, 1.0], gaussian_cov=cov)
    points = np.array([[1.0, -1.0], [0.0, 0.5], [2.0, 2.0]])
    expected = stats.multivariate_normal([1.0, -1.0], cov).logpdf(points)
    assert variable_jump_log_density_many(points, spec) == pytest.approx(expected)
    draws, _ = variable_jump_sample_many(spec, np.random.default_rng(24), 20000)
    assert np.cov(draws, rowvar=False) == pytest.approx(cov, abs=0.05)
    with pytest.raises(ProposalError):
        ProposalSpec(0.0, None, [0.0, 0.0], [1.0, 1.0], gaussian_cov=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ProposalError):
        ProposalSpec(0.0, None, [0.0, 0.0], [1.0, 1.0], gaussian_cov=np.eye(3))


def test_smoothed_previous_draws():
    rng = np.random.default_rng(25)
    cov = np.array([[0.04, 0.038], [0.038, 0.04]])
    ens = PosteriorEnsemble(rng.multivariate_normal([3.0, 1.0], cov, size=800))
    spec = ProposalSpec(1.0, ens, [0.0, 0.0], [1.0, 1.0], smoothed=True)
    draws, previous = variable_jump_sample_many(spec, rng, 50000)
    assert previous.all()
    # draws are fresh points spread like the kernel density: support covariance plus kernel covariance
    assert len(np.unique(draws[:, 0])) == len(draws)
    kernel = spec.kde_kernel_chol @ spec.kde_kernel_chol.T
    support_cov = np.cov(spec.kde_points, rowvar=False, ddof=0)
    assert np.cov(draws, rowvar=False) == pytest.approx(support_cov + kernel, rel=0.05)
    # correlated kernels follow the support, so the density is higher along it than across
    along = variable_jump_log_density([3.2, 1.2], spec)
    across = variable_jump_log_density([3.2, 0.8], spec)
    assert along > across + 5


def test_mh_target_equals_proposal():
    spec = ProposalSpec(0.0, None, [0.5], [1.5])
    ens = mh_chain([0.5], spec.gaussian_log_density, spec, 3000, np.random.default_rng(26), vectorized=True)
    assert ens.accepted == 2999
    # every candidate is accepted, so the chain is the sequence of independent proposal draws
    candidates, _ = variable_jump_sample_many(spec, np.random.default_rng(26), 2999)
    assert np.array_equal(ens.samples[1:], candidates)
    assert stats.kstest(ens.samples[1:, 0], stats.norm(0.5, 1.5).cdf).pvalue > 0.01
    lag1 = np.corrcoef(ens.samples[1:-1, 0], ens.samples[2:, 0])[0, 1]
    assert abs(lag1) < 0.06
