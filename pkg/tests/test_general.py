import numpy as np
import pytest

from recomb.dynamics import recombinator_field, replicator_field
from recomb.errors import AssumptionUnverified, NotRegular, UnknownTrait, ZeroMarginal, ZeroWeight
from recomb.game import PopulationState, TraitSpace, _marginal, build_game, r_payoff_vector
from recomb.general import (
    GFamilyParams,
    RegularPair,
    audit_pair,
    available_pairs,
    classify_general,
    fd_trait_rates,
    g_family_field,
    g_family_pair,
    general_field,
    general_trait_growth,
    generalized_partner_distribution,
    generalized_partner_field,
    generalized_partner_integrate,
    get_pair,
    integrate_general,
    marginal_function,
    partner_rates,
    recombinator_pair,
    register_pair,
    single_dim_imitation_pair,
    zeta_r,
    zeta_vector,
)
from recomb.stability import Verdict, classify_stability, partner_field, stable_partner_distribution

from conftest import random_state


def test_recombinator_pair_reproduces_field(pd, hd, g3):
    rng = np.random.default_rng(0)
    pair = recombinator_pair()
    for game in (pd, hd, g3):
        for r in (0.0, 0.4, 1.0):
            x = random_state(game.space, rng)
            assert np.abs(general_field(pair, game, x, r) - recombinator_field(game, x, r)).max() <= 1e-12
            zeta = zeta_vector(pair, game, x, r)
            assert np.abs(zeta - r_payoff_vector(game, x, r)).max() <= 1e-12


def test_field_at_r0_is_f1(hd):
    x = random_state(hd.space, np.random.default_rng(1))
    for pair in (single_dim_imitation_pair(), g_family_pair(2.0)):
        assert np.abs(general_field(pair, hd, x, 0.0) - (pair.f1(hd, x.weights) - x.weights)).max() <= 1e-15


def test_g_family_b0_is_recombinator(pd, hd, g3):
    rng = np.random.default_rng(2)
    for game in (pd, hd, g3):
        for r in (0.2, 0.7):
            x = random_state(game.space, rng)
            v = g_family_field(GFamilyParams(0.0), game, x, r)
            assert np.abs(v - recombinator_field(game, x, r)).max() <= 1e-12


def test_g_family_single_dimension_is_replicator():
    rng = np.random.default_rng(3)
    game = build_game(TraitSpace((("a", "b", "c"),)), rng.uniform(1, 4, size=(3, 3)))
    for b in (0.0, 1.0, 5.0):
        for r in (0.0, 0.5, 1.0):
            x = random_state(game.space, rng)
            assert np.abs(g_family_field(GFamilyParams(b), game, x, r) - replicator_field(game, x)).max() <= 1e-12


def test_g_family_tangency(pd):
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = random_state(pd.space, rng)
        assert abs(g_family_field(GFamilyParams(1.0), pd, x, 0.5).sum()) <= 1e-12
    with pytest.raises(ValueError):
        GFamilyParams(-1.0)


def test_growth_identity_general(hd):
    rng = np.random.default_rng(5)
    for pair in (single_dim_imitation_pair(), g_family_pair(1.0)):
        for _ in range(10):
            x = random_state(hd.space, rng)
            v = general_field(pair, hd, x, 0.3)
            z = zeta_vector(pair, hd, x, 0.3)
            assert np.abs(v / x.weights - (z - 1)).max() <= 1e-10
    with pytest.raises(ZeroWeight):
        zeta_r(recombinator_pair(), hd, PopulationState.pure(hd.space, "dr"), "hv", 0.3)


def test_single_dim_imitation_stationary(hd, hd_half):
    pair = single_dim_imitation_pair()
    for r in (0.2, 0.6):
        z = zeta_vector(pair, hd, hd_half, r)
        assert np.abs(z[hd_half.weights > 0] - 1).max() <= 1e-12
        assert zeta_r(pair, hd, hd_half, "hv", r) == pytest.approx(1.0, abs=1e-12)


def test_marginal_function(pd, hd):
    rng = np.random.default_rng(6)
    pair = recombinator_pair()
    for game in (pd, hd):
        x = random_state(game.space, rng)
        ux = float(x.weights @ game.payoff @ x.weights)
        for d in range(game.space.n_dims):
            tp = _marginal(game.space.shape, x.weights * (game.payoff @ x.weights), d) / x.trait_marginals[d]
            phi1 = [marginal_function(pair.f1, game, x, d, i) for i in range(game.space.shape[d])]
            phi2 = [marginal_function(pair.f2, game, x, d, i) for i in range(game.space.shape[d])]
            assert phi1 == pytest.approx(tp / ux, abs=1e-12)
            # combinator: own trait payoff times the product of the other dimensions' inflow (all 1)
            assert phi2 == pytest.approx(tp / ux, abs=1e-12)
            for phi in (phi1, phi2):
                assert float(np.dot(x.trait_marginals[d], phi)) == pytest.approx(1.0, abs=1e-12)
            order_u = np.argsort(tp)
            assert np.all(np.diff(np.asarray(phi2)[order_u]) > 0)
    with pytest.raises(ZeroMarginal):
        marginal_function(pair.f1, pd, PopulationState.pure(pd.space, "sc"), 1, "d")


def test_general_trait_growth_matches_field(hd):
    rng = np.random.default_rng(7)
    pair = g_family_pair(0.5)
    x = random_state(hd.space, rng)
    v = general_field(pair, hd, x, 0.4)
    for d in range(2):
        via = _marginal(hd.space.shape, v, d) / x.trait_marginals[d]
        for i in range(hd.space.shape[d]):
            assert general_trait_growth(pair, hd, x, d, i, 0.4) == pytest.approx(via[i], abs=1e-12)


def test_not_regular_is_rejected(pd):
    bad = RegularPair("bad", lambda g, w: 2 * w, lambda g, w: w)
    with pytest.raises(NotRegular):
        general_field(bad, pd, PopulationState.uniform(pd.space), 0.5)
    rep = audit_pair(bad, pd, n_states=3)
    assert not rep.checks["regularity"] and bad.flags["regularity"] is False


def test_audits_pass_for_builtins(pd, hd, hd_half):
    for pair in (recombinator_pair(), single_dim_imitation_pair()):
        for game in (pd, hd):
            rep = audit_pair(pair, game, n_states=10)
            assert rep.passed, (pair.name, rep.details)
    # the recentred g-family trait term dips below zero far from equilibrium; audit locally
    rep = audit_pair(g_family_pair(1.0), hd, n_states=10, near=hd_half)
    assert rep.passed, rep.details


def test_trait_growth_inertia_detects_leak(pd):
    def f2(game, w):
        out = _recomb_f2(game, w)
        return 0.9 * out + 0.1 * np.full_like(w, 0.25) * w.sum(axis=-1, keepdims=True)

    from recomb.general import _recomb_f1, _recomb_f2

    leaky = RegularPair("leaky", _recomb_f1, f2)
    rep = audit_pair(leaky, pd, n_states=5)
    assert not rep.checks["trait_growth_inertia"]
    x = PopulationState.pure(pd.space, "sc")
    with pytest.raises(AssumptionUnverified):
        generalized_partner_field(leaky, pd, x, 1, "d", 0.5, [1.0])


def test_registry():
    assert "recombinator" in available_pairs()
    assert get_pair("g-family:b=2.5").name == "g-family:b=2.5"
    with pytest.raises(UnknownTrait):
        get_pair("nope")
    with pytest.raises(UnknownTrait):
        get_pair("g-family:b=abc")
    register_pair("custom-test", recombinator_pair)
    assert get_pair("custom-test").name == "recombinator"
    with pytest.raises(ValueError):
        register_pair("custom-test", recombinator_pair)


def test_recombinator_partner_field_reduction(hd, hd_half):
    pair = recombinator_pair()
    eta = stable_partner_distribution(hd, hd_half, 1, "e", 0.3)
    uhat = eta.payoffs / 40
    rng = np.random.default_rng(8)
    for _ in range(5):
        y = rng.dirichlet([1, 1])
        a = generalized_partner_field(pair, hd, hd_half, 1, "e", 0.3, y)
        b = partner_field(uhat, uhat, eta.products, 0.3, y)
        assert np.abs(a - b).max() <= 1e-12


def test_g_family_v_equals_g1(hd, hd_half):
    pair = g_family_pair(1.0)
    rates = partner_rates(pair, hd, hd_half, 1, "e")
    fd = fd_trait_rates(pair, hd, hd_half, 1, 2)
    assert np.abs(fd - rates.g1).max() <= 1e-6


def test_g_family_partner_convergence(hd, hd_half):
    pair = g_family_pair(1.0)
    eta, Ur, _ = generalized_partner_distribution(pair, hd, hd_half, 1, "e", 0.3)
    target = np.array(list(eta.values()))
    rng = np.random.default_rng(9)
    for _ in range(10):
        run = generalized_partner_integrate(pair, hd, hd_half, 1, "e", 0.3, y0=rng.dirichlet([1, 1]))
        assert run.converged
        assert np.abs(run.terminal - target).max() <= 1e-6


def test_classify_general_matches_recombinator(pd, hd, hd_half):
    pair = recombinator_pair()
    cases = [(hd, hd_half, r) for r in (0.1, 0.2, 0.5)]
    cases += [(pd, PopulationState.pure(pd.space, a), r) for a in ("sc", "ad") for r in (0.05, 0.1, 0.5)]
    for game, x, r in cases:
        assert classify_general(pair, game, x, r).verdict is classify_stability(game, x, r).verdict


def test_classify_general_g_family(hd, hd_half):
    rep = classify_general(g_family_pair(1.0), hd, hd_half, 0.5)
    assert rep.verdict in set(Verdict)
    assert rep.internal.eigenvalues.size == 1


def test_integrate_general_recombinator(pd):
    x0 = PopulationState(pd.space, [0.9 + 0.025, 0.025, 0.025, 0.025])
    run = integrate_general(recombinator_pair(), pd, x0, 0.9)
    assert run.converged
    assert np.abs(run.terminal.weights - [1, 0, 0, 0]).max() <= 1e-4
