import numpy as np
import pytest

from diagnostics import freeze_runs_from_flags
from errors import SamplerError
from filter import run_filter, sample_trajectory
from models import SwitchingModel, simulate
from samplers import (ChainState, RunningMoments, ThetaProposal, am_propose, pg_step, pmh_within_pg_step,
                      pmmh_step, proposal_dimension, run_chain)
from schema import (Algorithm, ChainConfig, FilterConfig, InitPathKind, ProposalConfig, ProposalKind,
                    SwitchingParams)


def _rw(*variances):
    return ProposalConfig(kind=ProposalKind.RANDOM_WALK, rw_variances=tuple(variances))


def _state(model, y, theta, rng, n_particles=50):
    system = run_filter(model, theta, y, FilterConfig(n_particles=n_particles), rng)
    return ChainState(np.asarray(theta, dtype=float), sample_trajectory(system, rng), system.log_ml,
                      model.prior_logpdf(theta))


class _FixedProposal:
    def __init__(self, theta):
        self.theta = np.asarray(theta, dtype=float)

    def propose(self, theta, rng):
        return self.theta.copy()


def test_am_uses_initial_covariance_before_start():
    theta = np.array([0.1, -0.2])
    rw_cov = np.diag([0.3, 0.5])
    history = np.random.default_rng(0).normal(size=(40, 2))
    config = ProposalConfig(am_start=100)
    got = am_propose(theta, history, config, np.random.default_rng(1), rw_cov)
    np.testing.assert_array_equal(got, np.random.default_rng(1).multivariate_normal(theta, rw_cov))


def test_am_with_constant_history_uses_the_safety_component():
    theta = np.array([0.1, -0.2])
    history = np.tile(theta, (50, 1))
    config = ProposalConfig(am_start=10)
    got = am_propose(theta, history, config, np.random.default_rng(2))
    expected = np.random.default_rng(2).multivariate_normal(theta, 0.1 ** 2 / 2 * np.eye(2))
    np.testing.assert_array_equal(got, expected)


def test_am_after_start_tracks_the_history_scale():
    rng = np.random.default_rng(3)
    history = rng.normal(scale=[1.0, 10.0], size=(5000, 2))
    config = ProposalConfig(am_start=10, am_beta=0.01)
    draws = np.array([am_propose(np.zeros(2), history, config, rng) for _ in range(4000)])
    ratio = draws[:, 1].std() / draws[:, 0].std()
    assert ratio == pytest.approx(10.0, rel=0.2)


def test_running_covariance_matches_batch_covariance():
    rng = np.random.default_rng(4)
    for _ in range(100):
        history = rng.normal(size=(int(rng.integers(2, 60)), 3)) * rng.uniform(0.1, 5.0, size=3)
        moments = RunningMoments(3)
        for row in history:
            moments.update(row)
        np.testing.assert_allclose(moments.covariance, np.cov(history, rowvar=False, ddof=1), atol=1e-10)
        np.testing.assert_allclose(moments.mean, history.mean(axis=0), atol=1e-10)


def test_proposal_variances_must_match_dimension(theta_logistic):
    with pytest.raises(SamplerError):
        ThetaProposal(_rw(0.1), theta_logistic)


def test_pmmh_rejects_outside_support_without_filtering(theta_logistic, tl_data, rng, monkeypatch):
    _, y = tl_data
    state = _state(theta_logistic, y, theta_logistic.default_theta(), rng)

    def fail(*args, **kwargs):
        raise AssertionError("filter must not run")

    monkeypatch.setattr("samplers.run_filter", fail)
    outcome = pmmh_step(state, theta_logistic, y, FilterConfig(n_particles=50),
                        _FixedProposal([0.3, 1.0, -1.0]), rng)
    assert not outcome.accepted
    assert outcome.state is state
    assert outcome.system is None


def test_proposal_dimension_of_the_theta_logistic_experiment(theta_logistic):
    assert proposal_dimension(theta_logistic, np.zeros(100)) == 103


def test_pmmh_reestimation_at_the_same_theta_drives_acceptance(theta_logistic, tl_data, rng):
    _, y = tl_data
    theta = theta_logistic.default_theta()
    state = _state(theta_logistic, y, theta, rng)
    outcome = pmmh_step(state, theta_logistic, y, FilterConfig(n_particles=50), _FixedProposal(theta), rng)
    assert outcome.log_accept_ratio == pytest.approx(outcome.system.log_ml - state.log_ml)


def test_acceptance_ratio_is_recomputable_from_the_output(theta_logistic, tl_data):
    _, y = tl_data
    config = ChainConfig(n_iters=60, filter=FilterConfig(n_particles=40), proposal=_rw(0.001, 0.001, 25.0),
                         init_theta=(0.3, 1.0, 500.0), path_thin=1)
    out = run_chain(Algorithm.PMMH, theta_logistic, y, config, seed=1)
    assert out.accept_flags.any()
    previous = out.initial_state.log_ml + out.initial_state.log_prior
    for i in range(out.n_iters):
        current = out.log_mls[i] + out.log_priors[i]
        if out.accept_flags[i]:
            assert out.log_accept_ratios[i] == current - previous
        else:
            assert current == previous
        previous = current
    assert np.all(np.isfinite(out.log_mls))
    np.testing.assert_array_equal(out.proposal_dims, np.full(60, 3 + len(y)))


def test_single_iteration_output(theta_logistic, tl_data):
    _, y = tl_data
    config = ChainConfig(n_iters=1, filter=FilterConfig(n_particles=20), init_theta=(0.3, 1.0, 500.0))
    out = run_chain(Algorithm.PMMH, theta_logistic, y, config, seed=2)
    assert out.thetas.shape == (1, 3)
    assert out.log_mls.shape == out.accept_flags.shape == (1,)
    assert out.paths.shape == (1, len(y))
    frame = out.to_frame()
    assert len(frame) == 1
    assert {"iter", "accepted", "log_ml", "log_prior", "theta_1", "theta_3", "path_1"} <= set(frame.columns)


def test_same_seed_same_chain(linear_gaussian, lg_data):
    _, y = lg_data
    config = ChainConfig(n_iters=30, filter=FilterConfig(n_particles=30), proposal=_rw(0.01))
    a = run_chain("hybrid", linear_gaussian, y, config, seed=9).to_frame()
    b = run_chain("hybrid", linear_gaussian, y, config, seed=9).to_frame()
    assert a.equals(b)


def test_init_theta_outside_support_is_an_error(theta_logistic, tl_data):
    config = ChainConfig(n_iters=5, filter=FilterConfig(n_particles=10), init_theta=(0.3, 1.0, -4.0))
    with pytest.raises(SamplerError):
        run_chain(Algorithm.PMMH, theta_logistic, tl_data[1], config, seed=0)


def test_constant_initial_path(theta_logistic, tl_data):
    x, y = tl_data
    config = ChainConfig(n_iters=3, filter=FilterConfig(n_particles=20), init_theta=(0.3, 1.0, 500.0),
                         init_path=InitPathKind.CONSTANT, init_path_value=0.0, rmse_checkpoints=(2,))
    out = run_chain(Algorithm.PMMH, theta_logistic, y, config, seed=3, true_path=x)
    np.testing.assert_array_equal(out.initial_state.path, np.zeros(len(y)))
    assert out.initial_rmse == pytest.approx(float(np.sqrt(np.mean(x ** 2))))
    assert set(out.rmse_checkpoints) == {2}


def test_particle_gibbs_with_one_particle_never_moves_the_path(linear_gaussian, lg_data):
    _, y = lg_data
    config = ChainConfig(n_iters=20, filter=FilterConfig(n_particles=1), proposal=_rw(0.01), path_thin=1)
    out = run_chain(Algorithm.PG, linear_gaussian, y, config, seed=4)
    for path in out.paths:
        np.testing.assert_array_equal(path, out.initial_state.path)


def test_conditional_smc_retains_the_current_path(linear_gaussian, lg_data, rng):
    _, y = lg_data
    theta = linear_gaussian.default_theta()
    state = _state(linear_gaussian, y, theta, rng, n_particles=20)
    proposal = ThetaProposal(_rw(0.01), linear_gaussian)
    filter_config = FilterConfig(n_particles=20)
    for _ in range(1000):
        outcome = pg_step(state, linear_gaussian, y, filter_config, proposal, rng)
        np.testing.assert_array_equal(outcome.system.particles[:, -1], state.path)
        state = outcome.state


def test_zero_variance_theta_move_keeps_theta_and_refreshes_path(linear_gaussian, lg_data, rng):
    _, y = lg_data
    theta = linear_gaussian.default_theta()
    start = state = _state(linear_gaussian, y, theta, rng)
    kernel = ThetaProposal(_rw(0.0), linear_gaussian)
    for _ in range(5):
        state = pg_step(state, linear_gaussian, y, FilterConfig(n_particles=50), kernel, rng).state
        np.testing.assert_array_equal(state.theta, theta)
        assert np.isfinite(state.log_ml)
    assert not np.array_equal(state.path, start.path)


@pytest.mark.parametrize("mix_prob,pure_step", [(0.0, pg_step), (1.0, pmmh_step)])
def test_degenerate_mixtures_reproduce_the_pure_steps(linear_gaussian, lg_data, mix_prob, pure_step):
    _, y = lg_data
    theta = linear_gaussian.default_theta()
    state = _state(linear_gaussian, y, theta, np.random.default_rng(10))
    filter_config = FilterConfig(n_particles=25)

    mixed = pmh_within_pg_step(state, linear_gaussian, y, filter_config, ThetaProposal(_rw(0.05), linear_gaussian),
                               np.random.default_rng(11), mix_prob)
    pure = pure_step(state, linear_gaussian, y, filter_config, ThetaProposal(_rw(0.05), linear_gaussian),
                     np.random.default_rng(11))
    np.testing.assert_array_equal(mixed.state.theta, pure.state.theta)
    np.testing.assert_array_equal(mixed.state.path, pure.state.path)
    assert mixed.state.log_ml == pure.state.log_ml
    assert mixed.move == pure.move


def test_mix_prob_out_of_range(linear_gaussian, lg_data, rng):
    _, y = lg_data
    state = _state(linear_gaussian, y, linear_gaussian.default_theta(), rng)
    with pytest.raises(SamplerError):
        pmh_within_pg_step(state, linear_gaussian, y, FilterConfig(n_particles=5),
                           ThetaProposal(_rw(0.01), linear_gaussian), rng, 1.5)


def _median_freeze_length(out):
    histogram = freeze_runs_from_flags(out.repeats)
    runs = np.repeat(list(histogram), list(histogram.values()))
    frozen = runs[runs > 1]
    return float(np.median(frozen)) if frozen.size else 1.0


@pytest.mark.slow
def test_occasional_pmmh_moves_shorten_freezes():
    model = SwitchingModel(SwitchingParams(a=1.0, ar_coeff=0.5, state_var=1.0, obs_var=0.1))
    _, y = simulate(model, model.default_theta(), 50, seed=13)
    base = dict(n_iters=500, filter=FilterConfig(n_particles=5), proposal=_rw(0.01), init_theta=(1.0,))
    pure, mixed = [], []
    for seed in range(20):
        pure.append(_median_freeze_length(run_chain("pg", model, y, ChainConfig(mix_prob=0.0, **base), seed=seed)))
        mixed.append(_median_freeze_length(run_chain("hybrid", model, y, ChainConfig(mix_prob=0.1, **base),
                                                   seed=seed)))
    assert np.median(mixed) < np.median(pure)
