"""Property-based identities over random states of three games."""
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from recomb.dynamics import recombinator_field, trait_growth
from recomb.game import PopulationState, mean_payoff, r_payoff_vector, trait_payoffs

GAMES = ["pd", "hd", "g3"]
BAND = 1e-12
SETTINGS = settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])


@pytest.fixture(params=GAMES)
def game(request):
    return request.getfixturevalue(request.param)


def states(k):
    # mix of interior and boundary states: some coordinates are exactly zero
    raw = st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 1.0)), min_size=k, max_size=k)
    return raw.filter(lambda w: sum(w) > 0)


rates = st.one_of(st.sampled_from([0.0, 1.0]), st.floats(0.0, 1.0))


def check(body):
    """Run ``body(game, x, r)`` on hypothesis-drawn states of each game."""
    def test(game):
        @SETTINGS
        @given(w=states(game.space.size), r=rates)
        def inner(w, r):
            body(game, PopulationState.from_weights(game.space, w), r)

        inner()

    return test


def _state_invariants(game, x, r):
    w = x.weights
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12
    for m in x.trait_marginals:
        assert abs(m.sum() - 1) <= 1e-12
    sup = x.supports()
    assert set(sup.support) <= set(sup.closure)


def _tangency(game, x, r):
    assert abs(recombinator_field(game, x, r).sum()) <= 1e-12


def _trait_payoff_averaging(game, x, r):
    ux = mean_payoff(game, x)
    for d in range(game.space.n_dims):
        tp = trait_payoffs(game, x, d)
        m = x.trait_marginals[d]
        on = m > 0
        assert abs(float(m[on] @ tp[on]) - ux) <= 1e-10 * max(1.0, ux)


def _growth_identity(game, x, r):
    v = recombinator_field(game, x, r)
    z = r_payoff_vector(game, x, r)
    S = x.weights > 0
    assert np.abs(v[S] / x.weights[S] - (z[S] - 1)).max() <= 1e-10
    # weighted r-payoffs average to one once the inflow into absent types is counted;
    # that inflow is zero for rectangular supports and at r = 0
    outside = float(v[~S].sum())
    assert abs(float(x.weights[S] @ z[S]) + outside - 1) <= 1e-10
    if r == 0 or x.supports().is_rectangular:
        assert abs(outside) <= 1e-12


def _r_payoff_monotonicity(game, x, r):
    v = recombinator_field(game, x, r)
    z = r_payoff_vector(game, x, r)
    S = np.flatnonzero(x.weights > 0)
    g = v[S] / x.weights[S]
    dz = z[S][:, None] - z[S][None, :]
    dg = g[:, None] - g[None, :]
    clear = np.abs(dz) > BAND
    assert np.all(np.sign(dz[clear]) == np.sign(dg[clear]))


def _trait_payoff_monotonicity(game, x, r):
    ux = mean_payoff(game, x)
    for d in range(game.space.n_dims):
        tp = trait_payoffs(game, x, d)
        on = np.flatnonzero(x.trait_marginals[d] > 0)
        g = np.array([trait_growth(game, x, r, d, int(i)) for i in on])
        du = (tp[on][:, None] - tp[on][None, :]) / ux
        dg = g[:, None] - g[None, :]
        clear = np.abs(du) > BAND
        assert np.all(np.sign(du[clear]) == np.sign(dg[clear]))


test_state_invariants = check(_state_invariants)
test_tangency = check(_tangency)
test_trait_payoff_averaging = check(_trait_payoff_averaging)
test_growth_identity = check(_growth_identity)
test_r_payoff_monotonicity = check(_r_payoff_monotonicity)
test_trait_payoff_monotonicity = check(_trait_payoff_monotonicity)
