import numpy as np
import pytest

from certkit.accuracy import (
    certify_deterministic,
    certify_stochastic,
    epsilon_from_Q,
    initial_block,
    moment_recursion,
    noise_covariance_block,
    relation_check,
    relation_check_moment,
    verify_certificate,
)
from certkit.errors import ConvergenceError, InstabilityError
from certkit.matops import psd_dominates
from certkit.model import StochasticLti
from certkit.refine import error_dynamics

XHAT0 = np.array([16.0, 16.0, 0.0])
XBAR0 = np.array([16.0, 16.0])


@pytest.fixture(scope="module")
def certs(building, gains):
    K, L = gains
    return {
        "sensor_based": certify_stochastic(building, K, L, XBAR0, XHAT0),
        "feedforward": certify_stochastic(building, None, L, XBAR0, XHAT0),
    }


def scalar_model():
    return StochasticLti(A=[[0.5]], B=[[1.0]], C=[[1.0]], H=[[1.0]])


# building blocks

def test_noise_block_special_cases(building, gains):
    _, L = gains
    no_e = building.with_changes(E=np.zeros((2, 2)))
    W = noise_covariance_block(no_e, L)
    np.testing.assert_array_equal(W[:3], 0.0)
    np.testing.assert_array_equal(W[3:, 3:], building.F @ building.F.T)
    quiet = building.with_changes(E=np.zeros((2, 2)), F=np.zeros((3, 3)))
    np.testing.assert_array_equal(noise_covariance_block(quiet, L), 0.0)
    es = error_dynamics(building, None, L)
    np.testing.assert_allclose(noise_covariance_block(building, L), es.G @ es.G.T, atol=1e-12)


def test_initial_block(building):
    m = building.with_changes(x0=XHAT0)
    np.testing.assert_array_equal(initial_block(m, XBAR0, XHAT0), 0.0)
    Q0 = initial_block(building, XBAR0, XHAT0)
    d = np.array([0.0, -2.0, -5.0])
    np.testing.assert_array_equal(Q0[3:, 3:], np.outer(d, d))
    np.testing.assert_array_equal(Q0[:3], 0.0)
    assert epsilon_from_Q(building.H, Q0) == pytest.approx(2.0, abs=1e-12)
    with_p0 = m.with_changes(P0=np.eye(3))
    np.testing.assert_array_equal(initial_block(with_p0, XBAR0, XHAT0)[3:, 3:], np.eye(3))


def test_initial_block_deterministic(building):
    Q0 = initial_block(building, [15.0, 16.0], XHAT0, "deterministic")
    v = np.array([1.0, 0.0, 0.0, 0.0, -2.0, -5.0])
    np.testing.assert_array_equal(Q0, np.outer(v, v))


def test_epsilon_from_Q():
    assert epsilon_from_Q(np.eye(2), np.zeros((4, 4))) == 0.0
    assert epsilon_from_Q([[1.0]], np.eye(2)) == pytest.approx(np.sqrt(2.0))


def test_moment_recursion_cap():
    A = np.array([[0.5]])
    with pytest.raises(ConvergenceError):
        # the stated limit is never reached
        moment_recursion(A, np.eye(1), np.zeros((1, 1)), np.eye(1), limit=5.0)


# deterministic certificates

def test_deterministic_zero_initial_error(building, gains):
    K, L = gains
    cert = certify_deterministic(building, K, L, np.zeros((6, 6)))
    assert cert.eps_x0 == 0.0 and cert.eps_inf == 0.0 and cert.eps_sup == 0.0


def test_deterministic_scalar_matches_simulation():
    m = scalar_model()
    K, L = [[0.25]], [[0.25]]
    v0 = np.array([1.0, 0.0])
    cert = certify_deterministic(m, K, L, np.outer(v0, v0))
    es = error_dynamics(m, K, L)
    v, devs = v0, []
    for _ in range(200):
        devs.append(abs((es.H_tilde @ v)[0]))
        v = es.A_cl @ v
    assert cert.eps_sup == pytest.approx(max(devs), abs=1e-12)
    assert cert.eps_x0 >= max(devs) - 1e-9
    assert verify_certificate(cert)


@pytest.mark.parametrize("witness", ["min_trace", "scaled"])
def test_deterministic_bound_along_trajectory(building, gains, witness):
    K, L = gains
    Q0 = initial_block(building, XBAR0, XHAT0, "deterministic")
    cert = certify_deterministic(building, K, L, Q0, witness=witness)
    assert verify_certificate(cert)
    es = error_dynamics(building, K, L)
    v = np.concatenate([XHAT0 - np.r_[XBAR0, 0.0], building.x0 - XHAT0])
    for _ in range(1000):
        assert np.linalg.norm(es.H_tilde @ v) <= cert.eps_x0 + 1e-9
        xbar = np.zeros(3)
        xhat = v[:3]
        assert relation_check(cert.Q, xbar, xhat, xhat + v[3:])
        v = es.A_cl @ v


def test_unstable_gain_has_no_certificate(building, gains):
    _, L = gains
    with pytest.raises(InstabilityError):
        certify_deterministic(building, -5 * np.ones((2, 3)), L, np.eye(6))


# stochastic certificates

def test_noise_free_matched_init_is_exact(building, gains):
    K, L = gains
    m = building.with_changes(F=np.zeros((3, 3)), E=np.zeros((2, 2)), x0=XHAT0)
    cert = certify_stochastic(m, K, L, XBAR0, XHAT0)
    assert cert.eps_inf == 0.0 and cert.eps_x0 == 0.0


def test_case_study_stationary_precision(certs):
    assert certs["sensor_based"].eps_inf == pytest.approx(0.1284, abs=5e-3)
    assert certs["feedforward"].eps_inf == pytest.approx(0.4890, abs=5e-3)


def test_case_study_transient_precision(certs):
    assert certs["sensor_based"].eps_x0 == pytest.approx(2.1194, rel=0.1)
    assert certs["feedforward"].eps_x0 == pytest.approx(3.9618, rel=0.1)
    for cert in certs.values():
        # the recursion starts at the instantaneous deviation 2 and never exceeds the witness
        assert cert.moments.eps[0] == pytest.approx(2.0, abs=1e-12)
        assert cert.eps_sup <= cert.eps_x0 + 1e-9
        assert cert.eps_inf <= cert.eps_x0


def test_certificate_inequalities(certs):
    for cert in certs.values():
        assert verify_certificate(cert)
        A, W, Q = cert.A_cl, cert.W, cert.Q
        assert psd_dominates(Q, A @ Q @ A.T + W, 1e-8)
        assert psd_dominates(Q, cert.Q0, 1e-8)
        assert np.max(np.abs(Q - Q.T)) <= 1e-10


def test_certificate_dominates_every_moment(certs):
    for cert in certs.values():
        assert all(relation_check_moment(cert.Q, M) for M in cert.moments.moments)


def test_one_step_preservation(certs):
    rng = np.random.default_rng(99)
    for cert in certs.values():
        Q, A, W = cert.Q, cert.A_cl, cert.W
        evals, evecs = np.linalg.eigh(Q)
        root = evecs * np.sqrt(np.clip(evals, 0.0, None))
        for _ in range(50):
            U, _ = np.linalg.qr(rng.standard_normal(Q.shape))
            R = U @ np.diag(rng.uniform(0.0, 1.0, Q.shape[0])) @ U.T
            M = root @ R @ root.T
            assert psd_dominates(Q, M, 1e-8)
            assert psd_dominates(Q, A @ M @ A.T + W, 1e-8)


def test_rms_consistency(certs):
    for cert in certs.values():
        stationary = cert.moments.eps[-1] ** 2
        assert stationary == pytest.approx(cert.eps_inf**2, abs=1e-8)


def test_interface_ordering(certs):
    sb, ff = certs["sensor_based"], certs["feedforward"]
    assert sb.eps_inf < ff.eps_inf
    assert sb.eps_x0 < ff.eps_x0


def test_scaled_witness(building, gains):
    K, L = gains
    cert = certify_stochastic(building, K, L, XBAR0, XHAT0, witness="scaled")
    assert cert.lam >= 1.0
    np.testing.assert_allclose(cert.Q, cert.lam * cert.Q_inf)
    assert verify_certificate(cert)
    assert cert.eps_x0 >= cert.eps_sup - 1e-9


def test_fixed_horizon(building, gains):
    K, L = gains
    cert = certify_stochastic(building, K, L, XBAR0, XHAT0, horizon=50)
    assert cert.horizon_used == 50 and len(cert.moments.eps) == 51


def test_jensen_direction(building, gains):
    # mean deviation at stationarity never exceeds the RMS certificate
    K, L = gains
    for K_used in (K, None):
        cert = certify_stochastic(building, K_used, L, XBAR0, XHAT0)
        es = error_dynamics(building, K_used, L)
        rng = np.random.default_rng(17)
        runs = 2000
        v = np.zeros((runs, 6))
        for _ in range(600):
            v = v @ es.A_cl.T + rng.standard_normal((runs, 5)) @ es.G.T
        dev = np.linalg.norm(v @ es.H_tilde.T, axis=1)
        se = dev.std(ddof=1) / np.sqrt(runs)
        assert dev.mean() <= cert.eps_inf + 3 * se
        # and the RMS itself sits close to the certificate
        assert np.sqrt(np.mean(dev**2)) == pytest.approx(cert.eps_inf, rel=0.1)


def test_relation_check_examples():
    Q = np.eye(2)
    assert relation_check(Q, [1.0], [1.0], [1.0])
    assert relation_check(0.0 * Q, [3.0], [3.0], [3.0])
    assert not relation_check(Q, [0.0], [2.0], [2.0])
    assert relation_check_moment(Q, 0.5 * Q)
    assert not relation_check_moment(Q, 2.0 * Q)


def test_certificate_serializes(certs):
    d = certs["sensor_based"].to_dict()
    assert d["interface"] == "sensor_based" and d["regime"] == "stochastic"
    assert len(d["Q"]) == 6 and len(d["model_hash"]) == 64
