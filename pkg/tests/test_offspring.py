import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import stats

from gwboundary.offspring import (
    GeometricOffspring,
    OffspringSpecError,
    extinction_prob,
    make_offspring,
    pgf_eval,
    size_biased,
)

XI_A = "0:0.25,2:0.75"


def test_make_offspring_means():
    assert make_offspring(XI_A).m == pytest.approx(1.5)
    g = make_offspring("geom:0.6667")
    assert g.m == pytest.approx(0.6667 / 0.3333)
    crit = make_offspring("0:0.5,2:0.5")
    assert crit.m == pytest.approx(1.0) and not crit.hyp_ok
    assert "not supercritical" in crit.status


@pytest.mark.parametrize(
    "spec, token",
    [
        ("0:0.3,1:0.8", None),
        ("0:0.5,x:0.5", "x:0.5"),
        ("0:-0.5,2:1.5", "0:-0.5"),
        ("geom:1.2", None),
        ("", None),
        ("0:0.5,0:0.5", "0:0.5"),
    ],
)
def test_make_offspring_errors(spec, token):
    with pytest.raises(OffspringSpecError) as exc:
        make_offspring(spec)
    if token is not None:
        assert exc.value.token == token


def test_pgf_examples():
    d = make_offspring(XI_A)
    assert pgf_eval(d, 0.5) == pytest.approx(0.4375)
    assert pgf_eval(d, 1.0) == pytest.approx(1.0)
    g = make_offspring(f"geom:{2/3!r}")
    assert pgf_eval(g, 0.0) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        pgf_eval(d, 1.5)


def test_geometric_pgf_closed_form_matches_series():
    g = make_offspring("geom:0.4")
    for r in np.linspace(0, 1, 11):
        series = math.fsum(g.pmf(k) * r**k for k in range(400))
        assert pgf_eval(g, r) == pytest.approx(series, abs=1e-12)


def test_extinction_examples():
    assert extinction_prob(make_offspring(XI_A)) == pytest.approx(1 / 3, abs=1e-10)
    assert extinction_prob(make_offspring("2:1")) == 0.0
    g = make_offspring(f"geom:{2/3!r}")
    assert extinction_prob(g) == pytest.approx(0.5, abs=1e-10)
    # closed form and iteration are separate routes
    assert g.q == pytest.approx(0.5, abs=1e-15)
    assert extinction_prob(g) == pytest.approx(g.q, abs=1e-10)


def test_size_biased_examples():
    sb = size_biased(make_offspring(XI_A))
    assert sb.pmf(2) == pytest.approx(1.0)
    assert sb.rho(1, 2) == pytest.approx(0.5) and sb.rho(2, 2) == pytest.approx(0.5)
    assert sb.rho(3, 2) == 0 and sb.rho(0, 2) == 0
    gsb = size_biased(make_offspring(f"geom:{2/3!r}"))
    assert gsb.pmf(1) == pytest.approx(1 / 9)
    with pytest.raises(ValueError):
        size_biased(make_offspring("0:0.5,2:0.5"))


@st.composite
def finite_laws(draw):
    support = draw(st.lists(st.integers(0, 12), min_size=2, max_size=6, unique=True))
    weights = draw(st.lists(st.integers(1, 50), min_size=len(support), max_size=len(support)))
    total = sum(weights)
    spec = ",".join(f"{k}:{w / total!r}" for k, w in zip(support, weights))
    return make_offspring(spec)


@settings(deadline=None)
@given(finite_laws())
def test_extinction_is_fixed_point(d):
    # exactly critical laws converge like 1/j and are covered separately
    assume(abs(d.m - 1) > 0.05)
    tol = 1e-12
    q = extinction_prob(d, tol)
    assert abs(pgf_eval(d, q) - q) < 10 * tol
    assert 0 <= q <= 1


@pytest.mark.slow
def test_extinction_critical_hits_cap_but_is_fixed_point():
    d = make_offspring("0:0.5,2:0.5")
    with pytest.warns(UserWarning, match="cap"):
        q = extinction_prob(d)
    assert abs(pgf_eval(d, q) - q) < 1e-11
    assert q == pytest.approx(1, abs=1e-5)


@given(finite_laws())
def test_size_biased_law_properties(d):
    if not d.m > 1:
        return
    sb = size_biased(d)
    ks = [int(k) for k in d.support]
    assert math.fsum(sb.pmf(k) for k in ks) == pytest.approx(1, abs=1e-12)
    assert sb.pmf(0) == 0
    total = math.fsum(sb.rho(i, l) for l in ks for i in range(1, l + 1))
    assert total == pytest.approx(1, abs=1e-12)
    for l in ks:
        marg = math.fsum(sb.rho(i, l) for i in range(1, l + 1))
        assert marg == pytest.approx(sb.pmf(l), abs=1e-12)
    # exact arithmetic agrees
    assert sum(sb.exact_pmf(k) for k in ks) == Fraction(1)


@settings(max_examples=20)
@given(finite_laws())
def test_pgf_monotone_convex(d):
    r = np.linspace(0, 1, 101)
    f = np.array([pgf_eval(d, x) for x in r])
    assert np.all(np.diff(f) >= -1e-15)
    assert np.all(np.diff(f, 2) >= -1e-12)


def _chi2_pvalue(draws, probs):
    ks = np.arange(len(probs))
    obs = np.array([(draws == k).sum() for k in ks], dtype=float)
    keep = probs * draws.size >= 5
    exp = probs[keep] * draws.size
    o = obs[keep]
    # lump the sparse tail into one cell
    o = np.append(o, draws.size - o.sum())
    exp = np.append(exp, draws.size - exp.sum())
    if exp[-1] < 1e-9:
        o, exp = o[:-1], exp[:-1]
    return stats.chisquare(o, exp).pvalue


@pytest.mark.parametrize("spec", ["0:0.1,1:0.2,2:0.3,4:0.4", f"geom:{2/3!r}"])
def test_size_biased_two_routes_agree(spec):
    d = make_offspring(spec)
    sb = size_biased(d)
    rng = np.random.default_rng(11)
    direct = sb.draw(rng, 10**4)
    _, via_rho = sb.draw_rho(rng, 10**4)
    kmax = 60
    probs = np.array([sb.pmf(k) for k in range(kmax)])
    assert _chi2_pvalue(direct, probs) > 0.001
    assert _chi2_pvalue(via_rho, probs) > 0.001
    table = np.array([np.bincount(direct, minlength=kmax)[:kmax], np.bincount(via_rho, minlength=kmax)[:kmax]])
    table = table[:, table.sum(axis=0) >= 10]
    assert stats.chi2_contingency(table).pvalue > 0.001


def test_repartition_is_uniform_given_count():
    sb = size_biased(make_offspring("1:0.2,3:0.8"))
    i, k = sb.draw_rho(np.random.default_rng(3), 30000)
    three = i[k == 3]
    counts = np.bincount(three, minlength=4)[1:]
    assert stats.chisquare(counts).pvalue > 0.001
    assert np.all((1 <= i) & (i <= k))


def test_alias_path_matches_pmf():
    spec = ",".join(f"{k}:{1/12!r}" for k in range(12))
    d = make_offspring(spec)
    draws = d.draw(np.random.default_rng(5), 60000)
    assert _chi2_pvalue(draws, np.full(12, 1 / 12)) > 0.001


def test_sum_draws_in_law():
    d = make_offspring("0:0.2,1:0.3,3:0.5")
    rng = np.random.default_rng(8)
    n = np.full(20000, 7)
    summed = d.sum_draws(rng, n)
    literal = d.draw(rng, 7 * 20000).reshape(20000, 7).sum(axis=1)
    assert stats.ks_2samp(summed, literal).pvalue > 0.001
    g = make_offspring("geom:0.6")
    s2 = g.sum_draws(rng, n)
    l2 = g.draw(rng, 7 * 20000).reshape(20000, 7).sum(axis=1)
    assert stats.ks_2samp(s2, l2).pvalue > 0.001
    assert np.all(g.sum_draws(rng, np.zeros(5, dtype=int)) == 0)


def test_w_second_moment_oracle():
    # projective identity W = m^-1 Σ_{i<=k} W_i gives E[W²](m² - m) = E[k²] - m;
    # solved here by fixed-point iteration of x -> (m x + E[k(k-1)]) / m²
    for spec, expected in [(XI_A, 2.0), (f"geom:{2/3!r}", 4.0)]:
        d = make_offspring(spec)
        m, k2 = d.m, d.second_moment
        x = 1.0
        for _ in range(2000):
            x = (m * x + (k2 - m)) / m**2
        assert x == pytest.approx(expected, rel=1e-9)
        assert d.w_second_moment() == pytest.approx(x, rel=1e-12)
    assert make_offspring(f"geom:{2/3!r}").second_moment == pytest.approx(10.0)


def test_geometric_repr():
    g = GeometricOffspring(0.5)
    assert not g.hyp_ok and g.max_support is None
