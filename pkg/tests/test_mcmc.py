import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.special import log_ndtr, ndtr, ndtri

from dagprobit.errors import ValidationError
from dagprobit.graph import (
    Dag,
    OpKind,
    Operator,
    apply_operator,
    enumerate_valid_operators,
    log_prior,
    random_dag,
)
from dagprobit.mcmc import (
    ChainState,
    ChainTrace,
    accept_dag,
    edge_probabilities,
    log_acceptance,
    log_theta_ratio,
    propose_dag,
    run_chain,
    sample_truncated_normal,
    shared_sigma_params,
    update_L,
    update_latent,
    update_shared_sigma,
    update_theta,
)
from dagprobit.model import GroupData, Hyperparams, log_marginal_node, node_stats
from dagprobit.simlab import generate_scenario


def make_state(dags, datas, hyper, theta=0.0):
    q = dags[0].q
    return ChainState(dags, [np.eye(q), np.eye(q)], np.ones(q), theta, datas, hyper)


def batch_se(x, nbatch=50):
    b = np.asarray(x, dtype=float)[: len(x) // nbatch * nbatch].reshape(nbatch, -1).mean(axis=1)
    return b.std(ddof=1) / math.sqrt(nbatch)


def full_log_posterior(x, dag, g, a, xi):
    return sum(log_marginal_node(x, dag, j, g, a) for j in range(dag.q)) + log_prior(dag, xi)


class TestPropose:
    def test_q2_empty(self):
        new, op, lq = propose_dag(Dag.empty(2), np.random.default_rng(0))
        assert op == Operator(OpKind.INSERT, 1, 0)
        assert new == Dag.from_edges(2, [(1, 0)])
        assert lq == 0.0

    def test_log_q_ratio(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            dag = random_dag(5, 0.4, rng)
            new, op, lq = propose_dag(dag, rng)
            expect = math.log(len(enumerate_valid_operators(dag))) - math.log(
                len(enumerate_valid_operators(new)))
            assert lq == pytest.approx(expect)
            assert apply_operator(dag, op) == new

    def test_uniform(self):
        dag = Dag.from_edges(4, [(3, 1), (2, 0)])
        ops = enumerate_valid_operators(dag)
        rng = np.random.default_rng(1)
        n = 100_000
        counts = dict.fromkeys(ops, 0)
        for _ in range(n):
            counts[propose_dag(dag, rng)[1]] += 1
        p = 1 / len(ops)
        se = math.sqrt(p * (1 - p) / n)
        assert all(abs(c / n - p) < 3.5 * se for c in counts.values())

    def test_seeded(self):
        dag = Dag.from_edges(5, [(4, 1), (3, 0)])
        a = propose_dag(dag, np.random.default_rng(8))
        b = propose_dag(dag, np.random.default_rng(8))
        assert a[0] == b[0] and a[1] == b[1] and a[2] == b[2]


class TestAcceptance:
    def _random_instance(self, seed):
        rng = np.random.default_rng(seed)
        q = int(rng.integers(2, 5))
        n = int(rng.integers(3, 21))
        datas = [GroupData(rng.integers(0, 2, n), rng.normal(size=(n, q - 1)), rng.normal(size=n))
                 for _ in range(2)]
        hyper = Hyperparams(xi=float(rng.uniform(0.05, 0.6))).resolve(q, n, n)
        dags = [random_dag(q, 0.5, rng), random_dag(q, 0.5, rng)]
        return rng, make_state(dags, datas, hyper), hyper

    def test_identity_move(self):
        rng, state, hyper = self._random_instance(0)
        dag = state.dags[0]
        op = Operator(OpKind.REVERSE, 2, 1) if dag.q > 2 else Operator(OpKind.REVERSE, 1, 0)
        assert log_acceptance(state, 0, dag, op, hyper, 0.0) == 0.0

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_equals_full_posterior_ratio(self, seed):
        rng, state, hyper = self._random_instance(seed)
        for k in range(2):
            dag = state.dags[k]
            new, op, lq = propose_dag(dag, rng)
            x = state.data[k].X
            full = (full_log_posterior(x, new, hyper.g(k), hyper.a, hyper.xi)
                    - full_log_posterior(x, dag, hyper.g(k), hyper.a, hyper.xi) + lq)
            assert log_acceptance(state, k, new, op, hyper, lq) == pytest.approx(full, abs=1e-8)

    def test_strong_edge_insert_accepted(self):
        accepted = 0
        trials = 200
        for seed in range(trials):
            rng = np.random.default_rng(seed)
            n = 50
            x1 = rng.normal(size=n)
            x0 = 1.0 * x1 + rng.normal(size=n)
            gd = GroupData((x0 > 0).astype(int), x1[:, None], x0)
            hyper = Hyperparams().resolve(2, n, n)
            state = make_state([Dag.empty(2), Dag.empty(2)], [gd, gd.copy()], hyper)
            new, op, lq = propose_dag(state.dags[0], rng)
            accepted += accept_dag(state, 0, new, op, hyper, rng)
        assert accepted / trials > 0.9


def exact_prior_edge_marginals(q, xi):
    """Exhaustive enumeration of all DAGs on q nodes with node 0 a sink."""
    pairs = list(itertools.combinations(range(q), 2))
    marg = np.zeros((q, q))
    total = 0.0
    for states in itertools.product(range(3), repeat=len(pairs)):
        a = np.zeros((q, q), dtype=bool)
        for (i, j), s in zip(pairs, states):
            if s == 1:
                a[j, i] = True
            elif s == 2:
                a[i, j] = True
        try:
            dag = Dag(a)
        except ValidationError:
            continue
        w = math.exp(log_prior(dag, xi))
        marg += w * a
        total += w
    return marg / total


@pytest.fixture(scope="module")
def prior_run():
    q, xi, T = 3, 0.2, 60_000
    empty = GroupData(np.zeros(0), np.zeros((0, q - 1)))
    hyper = Hyperparams(xi=xi).resolve(q, 1, 1)
    state = make_state([Dag.empty(q), Dag.empty(q)], [empty, empty.copy()], hyper)
    rng = np.random.default_rng(2024)
    trace = np.empty((T, q, q), dtype=bool)
    for t in range(T):
        new, op, lq = propose_dag(state.dags[0], rng)
        accept_dag(state, 0, new, op, hyper, rng, lq)
        trace[t] = state.dags[0].adj
    return q, xi, trace


class TestPriorOnlyChain:
    """With no data every marginal ratio is 1 and the chain samples the DAG prior."""

    def test_marginals_are_zero(self):
        empty = GroupData(np.zeros(0), np.zeros((0, 3)))
        for dag in [Dag.empty(4), Dag.from_edges(4, [(3, 1), (2, 1), (1, 0)])]:
            for j in range(4):
                assert log_marginal_node(empty, dag, j, 0.3, 4.0) == pytest.approx(0.0, abs=1e-12)

    def test_into_latent_slots_match_xi(self, prior_run):
        q, xi, trace = prior_run
        for i in range(1, q):
            x = trace[:, i, 0]
            assert abs(x.mean() - xi) < 3 * batch_se(x)

    def test_all_slots_match_exact_prior(self, prior_run):
        q, xi, trace = prior_run
        exact = exact_prior_edge_marginals(q, xi)
        for i, j in itertools.permutations(range(q), 2):
            x = trace[:, i, j]
            se = max(batch_se(x), 1e-12)
            assert abs(x.mean() - exact[i, j]) < 3 * se, (i, j)


class TestSharedSigma:
    def _state(self, n=40, q=4, seed=0, same=True):
        rng = np.random.default_rng(seed)
        gd = GroupData(rng.integers(0, 2, n), rng.normal(size=(n, q - 1)), rng.normal(size=n))
        other = gd.copy() if same else GroupData(rng.integers(0, 2, n), rng.normal(size=(n, q - 1)),
                                                 rng.normal(size=n))
        dag = Dag.from_edges(q, [(3, 2), (2, 1), (1, 0)])
        hyper = Hyperparams().resolve(q, n, n)
        return make_state([dag, dag], [gd, other], hyper), hyper

    def test_latent_variance_stays_one(self):
        state, hyper = self._state(same=False)
        rng = np.random.default_rng(1)
        for _ in range(20):
            d = update_shared_sigma(state, hyper, rng)
            assert d[0] == 1.0 and np.all(d[1:] > 0)

    def test_symmetric_groups_double_single(self):
        state, hyper = self._state()
        q, n = state.q, state.data[0].n
        stats_one = [None] + [node_stats(state.data[0], state.dags[0], j, hyper.g1) for j in range(1, q)]
        shape2, rate2 = shared_sigma_params([stats_one, stats_one], hyper, [n, n], q)
        shape1, rate1 = shared_sigma_params([stats_one], hyper, [n], q)
        np.testing.assert_allclose(shape2[1:], 2 * shape1[1:], rtol=1e-14)
        np.testing.assert_allclose(rate2[1:], 2 * rate1[1:], rtol=1e-14)
        for j in range(1, q):
            aj = hyper.a + stats_one[j].n_parents - q + 1
            assert shape1[j] == pytest.approx((aj + n) / 2)
            assert rate1[j] == pytest.approx((hyper.g1 + stats_one[j].resid) / 2)

    def test_posterior_concentration(self):
        rng = np.random.default_rng(4)
        n, q = 2000, 3
        datas = [GroupData(rng.integers(0, 2, n), rng.normal(scale=math.sqrt(2.0), size=(n, q - 1)),
                           rng.normal(size=n)) for _ in range(2)]
        hyper = Hyperparams().resolve(q, n, n)
        state = make_state([Dag.empty(q), Dag.empty(q)], datas, hyper)
        draws = np.array([update_shared_sigma(state, hyper, rng)[1:] for _ in range(2000)])
        assert np.all(np.abs(draws.mean(axis=0) - 2.0) < 0.2)


class TestUpdateL:
    def test_empty_parents(self):
        rng = np.random.default_rng(0)
        gd = GroupData(rng.integers(0, 2, 10), rng.normal(size=(10, 2)), rng.normal(size=10))
        hyper = Hyperparams().resolve(3, 10, 10)
        state = make_state([Dag.empty(3), Dag.empty(3)], [gd, gd.copy()], hyper)
        np.testing.assert_array_equal(update_L(state, 0, rng), np.eye(3))

    def test_sign_and_location(self):
        rng = np.random.default_rng(1)
        n = 5000
        x2 = rng.normal(size=n)
        x1 = 0.7 * x2 + rng.normal(size=n)
        gd = GroupData(rng.integers(0, 2, n), np.column_stack([x1, x2]), rng.normal(size=n))
        dag = Dag.from_edges(3, [(2, 1)])
        hyper = Hyperparams().resolve(3, n, n)
        state = make_state([dag, dag], [gd, gd.copy()], hyper)
        draws = np.array([update_L(state, 0, rng)[2, 1] for _ in range(500)])
        # X_1 = -L[2, 1] X_2 + eps, so the slot carries the negated coefficient
        assert draws.mean() < 0
        assert abs(abs(draws.mean()) - 0.7) < 0.05 * 0.7
        assert update_L(state, 0, rng)[1, 2] == 0.0

    def test_draw_covariance(self):
        rng = np.random.default_rng(2)
        n, q = 15, 4
        gd = GroupData(rng.integers(0, 2, n), rng.normal(size=(n, q - 1)), rng.normal(size=n))
        dag = Dag.from_edges(q, [(3, 1), (2, 1)])
        hyper = Hyperparams().resolve(q, n, n)
        state = make_state([dag, dag], [gd, gd.copy()], hyper)
        state.d = np.array([1.0, 1.7, 1.0, 1.0])
        st_ = node_stats(gd, dag, 1, hyper.g1)
        target_cov = 1.7 * np.linalg.inv(st_.t_bar)
        N = 100_000
        draws = np.array([update_L(state, 0, rng)[[2, 3], 1] for _ in range(N)])
        np.testing.assert_allclose(draws.mean(axis=0), -st_.l_hat,
                                   atol=3 * math.sqrt(np.max(np.diag(target_cov)) / N))
        emp = np.cov(draws.T)
        se = np.sqrt((target_cov**2 + np.outer(np.diag(target_cov), np.diag(target_cov))) / (N - 1))
        assert np.all(np.abs(emp - target_cov) < 3 * se)


class TestTruncatedNormal:
    def test_half_line_mean(self):
        rng = np.random.default_rng(0)
        x = sample_truncated_normal(0.0, 0.0, np.inf, rng, size=100_000)
        mean = math.sqrt(2 / math.pi)
        sd = math.sqrt(1 - 2 / math.pi)
        assert np.all(x > 0)
        assert abs(x.mean() - mean) < 3 * sd / math.sqrt(x.size)

    def test_untruncated(self):
        rng = np.random.default_rng(1)
        x = sample_truncated_normal(0.0, -np.inf, np.inf, rng, size=100_000)
        assert abs(x.mean()) < 3 / math.sqrt(x.size)
        assert abs(x.var() - 1) < 3 * math.sqrt(2 / x.size)

    @pytest.mark.parametrize("mu", [5.0, 8.0, -6.0])
    def test_far_tail(self, mu):
        rng = np.random.default_rng(2)
        if mu > 0:
            lo, hi = -np.inf, 0.0
            beta = hi - mu
            mean = mu - math.exp(stats.norm.logpdf(beta) - log_ndtr(beta))
        else:
            lo, hi = 0.0, np.inf
            alpha = lo - mu
            mean = mu + math.exp(stats.norm.logpdf(alpha) - log_ndtr(-alpha))
        x = sample_truncated_normal(mu, lo, hi, rng, size=100_000)
        assert np.all(np.isfinite(x))
        assert np.all((x > lo) & (x <= hi))
        assert abs(x.mean() - mean) < 0.02 * abs(mean)

    def test_two_sided(self):
        rng = np.random.default_rng(3)
        mu, lo, hi = 0.3, -0.5, 1.2
        x = sample_truncated_normal(mu, lo, hi, rng, size=100_000)
        dist = stats.truncnorm(lo - mu, hi - mu, loc=mu)
        assert abs(x.mean() - dist.mean()) < 3 * dist.std() / math.sqrt(x.size)
        assert stats.kstest(x, dist.cdf).pvalue > 1e-3

    def test_vectorised_bounds(self):
        rng = np.random.default_rng(4)
        mu = rng.normal(size=1000) * 4
        y = rng.integers(0, 2, 1000)
        lo = np.where(y == 1, 0.2, -np.inf)
        hi = np.where(y == 1, np.inf, 0.2)
        x = sample_truncated_normal(mu, lo, hi, rng)
        assert np.array_equal(x > 0.2, y == 1)

    def test_empty_interval(self):
        with pytest.raises(ValidationError):
            sample_truncated_normal(0.0, 1.0, 1.0, np.random.default_rng(0))


class TestLatent:
    def _state(self, y, x, theta=0.0, dag=None):
        n = len(y)
        gd = GroupData(y, x)
        q = gd.q
        dag = Dag.empty(q) if dag is None else dag
        hyper = Hyperparams().resolve(q, n, n)
        return make_state([dag, dag], [gd, gd.copy()], hyper, theta), hyper

    def test_all_zero(self):
        state, _ = self._state(np.zeros(50, dtype=int), np.zeros((50, 1)))
        z = update_latent(state, 0, np.random.default_rng(0))
        assert np.all(z <= 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-2, 2))
    def test_consistency(self, seed, theta):
        rng = np.random.default_rng(seed)
        n = 30
        x = rng.normal(size=(n, 2))
        state, _ = self._state(rng.integers(0, 2, n), x, theta, Dag.from_edges(3, [(1, 0), (2, 0)]))
        state.L[0][1:, 0] = rng.normal(size=2) * 3
        update_latent(state, 0, rng)
        assert state.data[0].check_latent(theta)
        np.testing.assert_allclose(state.data[0].gram, state.data[0].X.T @ state.data[0].X, atol=1e-9)

    def test_exceedance_matches_y(self):
        scen = generate_scenario(5, 400, 400, 0.3, np.random.default_rng(6),
                                 theta_range=(0.5, 0.5))
        y = scen.data[0].y
        state, _ = self._state(y, scen.data[0].x_obs, 0.5)
        update_latent(state, 0, np.random.default_rng(1))
        assert np.mean(state.data[0].x_latent > 0.5) == pytest.approx(y.mean())


class TestTheta:
    def test_same_value(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, 20)
        mu = rng.normal(size=20)
        assert log_theta_ratio(0.3, 0.3, [y], [mu], 0.5) == 0.0

    def test_single_observation(self):
        y, mu = np.array([1]), np.zeros(1)
        lr = log_theta_ratio(-0.4, 0.2, [y], [mu], 0.5)
        assert lr == pytest.approx(math.log((1 - ndtr(-0.4)) / (1 - ndtr(0.2))))
        assert lr > 0

    def test_saturated_tails_finite(self):
        y = np.array([1, 0])
        mu = np.array([-40.0, 40.0])
        assert np.isfinite(log_theta_ratio(0.5, 0.0, [y], [mu], 0.5))

    def test_calibration(self):
        rng = np.random.default_rng(3)
        n = 4000
        y = (rng.random(n) < 0.3).astype(int)
        datas = [GroupData(y, np.zeros((n, 1))), GroupData(y.copy(), np.zeros((n, 1)))]
        hyper = Hyperparams(sigma0_sq=0.01).resolve(2, n, n)
        state = make_state([Dag.empty(2), Dag.empty(2)], datas, hyper)
        for k in range(2):
            update_latent(state, k, rng)
        draws = []
        for _ in range(3000):
            draws.append(update_theta(state, hyper, rng)[0])
            assert all(state.data[k].check_latent(state.theta) for k in range(2))
        assert abs(np.mean(draws[500:]) - ndtri(1 - y.mean())) < 0.03


@pytest.fixture(scope="module")
def scen():
    return generate_scenario(5, 60, 80, 0.3, np.random.default_rng(11))


class TestRunChain:
    def test_single_record(self, scen):
        tr = run_chain(*scen.data, Hyperparams(T=6, B=5), np.random.default_rng(0))
        assert tr.n_records == 1

    def test_deterministic(self, scen):
        h = Hyperparams(T=120, B=20)
        a = run_chain(*scen.data, h, np.random.default_rng(42))
        b = run_chain(*scen.data, h, np.random.default_rng(42))
        for f in ("edges", "theta", "L", "D", "effects"):
            assert getattr(a, f).tobytes() == getattr(b, f).tobytes()

    def test_inputs_untouched(self, scen):
        before = scen.data[0].X.copy()
        run_chain(*scen.data, Hyperparams(T=30, B=10), np.random.default_rng(1))
        np.testing.assert_array_equal(scen.data[0].X, before)

    def test_invariants_and_counters(self, scen):
        tr = run_chain(*scen.data, Hyperparams(T=300, B=100), np.random.default_rng(3), debug=True)
        assert tr.n_records == 200
        assert tr.dag_proposed.tolist() == [300, 300]
        assert tr.theta_proposed == 300
        assert np.all((tr.effects >= 0) & (tr.effects <= 1))
        assert np.all(tr.D[:, 0] == 1.0)
        for k in range(2):
            p = edge_probabilities(tr, k)
            assert np.all((p >= 0) & (p <= 1))
            assert not p[0].any()
            # L sparsity follows the recorded DAG
            off = ~tr.edges[:, k]
            off[:, np.arange(5), np.arange(5)] = False
            assert np.all(tr.L[:, k][off] == 0)

    def test_mismatched_groups(self):
        a = GroupData([0, 1, 1], np.zeros((3, 2)))
        b = GroupData([0, 1, 1], np.zeros((3, 3)))
        with pytest.raises(ValidationError):
            run_chain(a, b, Hyperparams(T=2, B=1), np.random.default_rng(0))

    def test_exchangeable_groups(self):
        rng = np.random.default_rng(8)
        scen = generate_scenario(4, 300, 300, 0.5, rng, coef_range=(0.6, 1.0))
        gd = scen.data[0]
        tr = run_chain(gd, gd.copy(), Hyperparams(T=4000, B=500), np.random.default_rng(9))
        np.testing.assert_allclose(edge_probabilities(tr, 0), edge_probabilities(tr, 1), atol=0.1)
        np.testing.assert_allclose(tr.L[:, 0].mean(axis=0), tr.L[:, 1].mean(axis=0), atol=0.1)


class TestEdgeProbabilities:
    def _trace(self, flags):
        R = len(flags)
        edges = np.zeros((R, 2, 2, 2), dtype=bool)
        edges[:, 0, 1, 0] = flags
        z = np.zeros(R)
        return ChainTrace(edges, z, np.tile(np.eye(2), (R, 2, 1, 1)), np.ones((R, 2)),
                          np.zeros((R, 2, 1)), np.array([1]), 1.0)

    def test_always(self):
        assert edge_probabilities(self._trace([True] * 4), 0)[1, 0] == 1.0

    def test_never(self):
        assert edge_probabilities(self._trace([False] * 4), 0)[1, 0] == 0.0

    def test_alternating(self):
        assert edge_probabilities(self._trace([True, False] * 3), 0)[1, 0] == 0.5
