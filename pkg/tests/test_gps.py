"""Exposure distributions checked against independent oracles.

The main oracle enumerates all 2^m neighbor assignment patterns directly
(no shared code with the convolution in the package); uniform-weight rows
additionally have the binomial closed form.
"""

import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bipexp.design import AssignmentDesign, draw_assignments, linear_exposure_many
from bipexp.errors import DataError, ValidationError
from bipexp.gps import (
    ATOM_TOL,
    EXACT,
    MAX_EXACT_DEGREE,
    MONTE_CARLO,
    Bucketing,
    ExposureDistribution,
    exact_gps,
    exact_gps_table,
    gps_at,
    mc_gps,
    product_gps,
)
from bipexp.graph import BipartiteGraph
from bipexp.seeding import substream


def enumerate_exposures(weights, p_nbrs):
    """Oracle: brute-force sum of pattern probabilities per exposure value.

    Exact float sums only, so callers must use weights whose partial sums
    never collide approximately (dyadic grids do).
    """
    mass: dict[float, float] = {}
    for bits in itertools.product((0, 1), repeat=len(weights)):
        e = float(sum(w for w, z in zip(weights, bits) if z))
        prob = 1.0
        for p, z in zip(p_nbrs, bits):
            prob *= p if z else 1.0 - p
        mass[e] = mass.get(e, 0.0) + prob
    support = sorted(mass)
    return np.array(support), np.array([mass[v] for v in support])


def one_row_graph(weights):
    row = [(j, w) for j, w in enumerate(weights)]
    return BipartiteGraph.from_rows([row], m_diversion=len(weights))


# -- exact construction vs oracles ------------------------------------------


def test_exact_matches_enumeration_on_small_graph(small_graph):
    design = AssignmentDesign.bernoulli(0.3)
    for i in range(small_graph.n_outcome):
        w = [wt for _, wt in small_graph.row_weights(i)]
        support, probs = enumerate_exposures(w, [0.3] * len(w))
        dist = exact_gps(small_graph, design, i)
        np.testing.assert_allclose(dist.support, support, atol=1e-12)
        np.testing.assert_allclose(dist.probs, probs, atol=1e-12)


def test_exact_matches_enumeration_heterogeneous(small_graph):
    p_vec = np.array([0.2, 0.5, 0.7, 0.9])
    design = AssignmentDesign.bernoulli_heterogeneous(p_vec)
    for i in range(small_graph.n_outcome):
        idx = [j for j, _ in small_graph.row_weights(i)]
        w = [wt for _, wt in small_graph.row_weights(i)]
        support, probs = enumerate_exposures(w, p_vec[idx])
        dist = exact_gps(small_graph, design, i)
        np.testing.assert_allclose(dist.support, support, atol=1e-12)
        np.testing.assert_allclose(dist.probs, probs, atol=1e-12)


def test_exact_matches_binomial_closed_form():
    m, p = 6, 0.4
    graph = one_row_graph([1.0 / m] * m)
    dist = exact_gps(graph, AssignmentDesign.bernoulli(p), 0)
    np.testing.assert_allclose(dist.support, np.arange(m + 1) / m, atol=1e-12)
    np.testing.assert_allclose(dist.probs, stats.binom.pmf(np.arange(m + 1), m, p), atol=1e-12)


@settings(deadline=None, max_examples=60)
@given(
    weights=st.lists(st.integers(1, 32).map(lambda k: k / 32.0), min_size=1, max_size=6),
    p=st.floats(0.05, 0.95),
)
def test_exact_matches_enumeration_property(weights, p):
    # dyadic weights keep all partial sums exact, so the oracle's dict
    # keying on float equality agrees with the tolerance-based merge
    graph = one_row_graph(weights)
    support, probs = enumerate_exposures(weights, [p] * len(weights))
    dist = exact_gps(graph, AssignmentDesign.bernoulli(p), 0)
    np.testing.assert_allclose(dist.support, support, atol=1e-12)
    np.testing.assert_allclose(dist.probs, probs, atol=1e-12)


def test_scores_sum_to_one(small_graph, two_type_graph, bernoulli_half):
    for graph in (small_graph, two_type_graph):
        table = exact_gps_table(graph, bernoulli_half)
        for i in range(graph.n_outcome):
            assert abs(table.distribution(i).probs.sum() - 1.0) <= 1e-12


def test_endpoint_scores_positive(small_graph):
    # every unit can be fully exposed or fully unexposed under a Bernoulli design
    table = exact_gps_table(small_graph, AssignmentDesign.bernoulli(0.17))
    assert np.all(table.imputed_scores(0.0) > 0)
    assert np.all(table.imputed_scores(1.0) > 0)


def test_two_type_endpoint_scores(two_type_graph, bernoulli_half):
    table = exact_gps_table(two_type_graph, bernoulli_half)
    r0, r1 = table.imputed_scores(0.0), table.imputed_scores(1.0)
    np.testing.assert_allclose(r0[:4], 0.5, atol=1e-12)
    np.testing.assert_allclose(r1[:4], 0.5, atol=1e-12)
    np.testing.assert_allclose(r0[4:], 0.25, atol=1e-12)
    np.testing.assert_allclose(r1[4:], 0.25, atol=1e-12)
    np.testing.assert_allclose(table.imputed_scores(0.5)[4:], 0.5, atol=1e-12)
    # the single-neighbor units put no mass strictly between the endpoints
    np.testing.assert_allclose(table.imputed_scores(0.5)[:4], 0.0, atol=1e-12)


def test_tied_weights_merge_patterns():
    dist = exact_gps(one_row_graph([0.5, 0.5]), AssignmentDesign.bernoulli(0.3), 0)
    np.testing.assert_allclose(dist.support, [0.0, 0.5, 1.0], atol=1e-12)
    np.testing.assert_allclose(dist.probs, [0.49, 0.42, 0.09], atol=1e-12)


def test_nearly_tied_weights_merge_within_tol():
    dist = exact_gps(one_row_graph([0.5, 0.5 + 1e-12]), AssignmentDesign.bernoulli(0.3), 0)
    assert dist.support.size == 3
    np.testing.assert_allclose(dist.probs, [0.49, 0.42, 0.09], atol=1e-12)


def test_degree_cap_points_to_monte_carlo():
    m = MAX_EXACT_DEGREE + 1
    graph = one_row_graph([1.0 / m] * m)
    design = AssignmentDesign.bernoulli(0.5)
    with pytest.raises(ValueError, match="mc_gps"):
        exact_gps(graph, design, 0)
    with pytest.raises(ValueError, match="mc_gps"):
        exact_gps_table(graph, design)


def test_non_bernoulli_design_rejected(small_graph):
    with pytest.raises(ValueError, match="mc_gps"):
        exact_gps(small_graph, AssignmentDesign.completely_randomized(2), 0)


def test_exact_gps_unit_out_of_range(small_graph, bernoulli_half):
    with pytest.raises(IndexError):
        exact_gps(small_graph, bernoulli_half, 4)


# -- table behavior ----------------------------------------------------------


def test_table_shares_identical_rows(two_type_graph, bernoulli_half):
    table = exact_gps_table(two_type_graph, bernoulli_half)
    assert len(table.dists) == 2
    np.testing.assert_array_equal(table.unit_dist, [0, 0, 0, 0, 1, 1, 1, 1])
    assert table.mode == EXACT


def test_imputed_scores_match_per_unit(small_graph):
    table = exact_gps_table(small_graph, AssignmentDesign.bernoulli(0.3))
    for e in (0.0, 0.25, 0.5, 1.0):
        np.testing.assert_allclose(
            table.imputed_scores(e),
            [table.at(i, e) for i in range(table.n_units)],
            atol=1e-15,
        )


def test_observed_scores_alignment(small_graph, bernoulli_half):
    table = exact_gps_table(small_graph, bernoulli_half)
    exposures = np.array([1.0, 0.5, 0.25, 0.2])
    got = table.observed_scores(exposures)
    want = [table.at(i, e) for i, e in enumerate(exposures)]
    np.testing.assert_allclose(got, want, atol=1e-15)
    sub = table.observed_scores(exposures[[2, 0]], units=np.array([2, 0]))
    np.testing.assert_allclose(sub, [want[2], want[0]], atol=1e-15)
    with pytest.raises(ValueError, match="align"):
        table.observed_scores(exposures[:2])


def test_mass_off_support_is_zero(small_graph, bernoulli_half):
    table = exact_gps_table(small_graph, bernoulli_half)
    # 0.37 is reachable by no assignment pattern of any row
    assert table.imputed_scores(0.37).tolist() == [0.0, 0.0, 0.0, 0.0]


def test_query_outside_range_raises(small_graph, bernoulli_half):
    table = exact_gps_table(small_graph, bernoulli_half)
    with pytest.raises(DataError, match="outside"):
        table.at(0, 1.5)
    with pytest.raises(DataError, match="outside"):
        table.imputed_scores(-0.2)
    with pytest.raises(IndexError):
        table.at(9, 0.5)


def test_take_shares_distribution_objects(two_type_graph, bernoulli_half):
    table = exact_gps_table(two_type_graph, bernoulli_half)
    sub = table.take(np.array([6, 1]))
    assert sub.dists is table.dists
    np.testing.assert_array_equal(sub.unit_dist, table.unit_dist[[6, 1]])
    assert sub.at(0, 0.5) == table.at(6, 0.5)
    assert sub.at(1, 1.0) == table.at(1, 1.0)


def test_dist_mean_variance_binomial():
    m, p = 5, 0.3
    graph = one_row_graph([1.0 / m] * m)
    table = exact_gps_table(graph, AssignmentDesign.bernoulli(p))
    # exposure is Binomial(m, p) / m
    np.testing.assert_allclose(table.dist_mean(), [p], atol=1e-12)
    np.testing.assert_allclose(table.dist_variance(), [p * (1 - p) / m], atol=1e-12)


def test_gps_at_is_table_at(small_graph, bernoulli_half):
    table = exact_gps_table(small_graph, bernoulli_half)
    assert gps_at(table, 1, 0.5) == table.at(1, 0.5)


def test_write_csv_roundtrip(tmp_path, two_type_graph, bernoulli_half):
    table = exact_gps_table(two_type_graph, bernoulli_half)
    dest = tmp_path / "gps.csv"
    table.write_csv(dest)
    with open(dest, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["outcome_id", "exposure_lo", "exposure_hi", "probability"]
    sums: dict[str, float] = {}
    for unit, lo, hi, prob in rows[1:]:
        assert float(lo) == float(hi)  # atom rows
        sums[unit] = sums.get(unit, 0.0) + float(prob)
    assert set(sums) == {str(i) for i in range(8)}
    assert all(abs(s - 1.0) <= 1e-12 for s in sums.values())


# -- Monte Carlo construction ------------------------------------------------


def test_mc_matches_exact_on_atoms(small_graph, bernoulli_half):
    n_draws = 20_000
    exact = exact_gps_table(small_graph, bernoulli_half)
    mc = mc_gps(small_graph, bernoulli_half, Bucketing.atoms(), n_draws, substream(7, 2))
    assert mc.mode == MONTE_CARLO
    for i in range(small_graph.n_outcome):
        truth = exact.distribution(i)
        # every simulated atom sits on a true atom, and masses agree to 4 sigma
        got = mc.distribution(i).mass_at_many(truth.support)
        assert abs(mc.distribution(i).probs.sum() - 1.0) <= 1e-9
        band = 4.0 * np.sqrt(truth.probs * (1 - truth.probs) / n_draws)
        assert np.all(np.abs(got - truth.probs) <= band + 1e-12)
        assert abs(got.sum() - 1.0) <= 1e-9


def test_mc_bins_aggregate_exact_mass(small_graph, bernoulli_half):
    n_draws = 20_000
    bucketing = Bucketing.equal_width(4, 0.0, 1.0)
    mc = mc_gps(small_graph, bernoulli_half, bucketing, n_draws, substream(11, 2))
    exact = exact_gps_table(small_graph, bernoulli_half)
    edges = bucketing.edges
    for i in range(small_graph.n_outcome):
        truth = exact.distribution(i)
        idx = np.clip(np.searchsorted(edges, truth.support, side="right") - 1, 0, 3)
        want = np.bincount(idx, weights=truth.probs, minlength=4)
        got = mc.distribution(i).probs
        band = 4.0 * np.sqrt(want * (1 - want) / n_draws)
        assert np.all(np.abs(got - want) <= band + 1e-12)


def test_mc_bins_must_cover_reachable_range(small_graph, bernoulli_half):
    with pytest.raises(ValidationError, match="cover"):
        mc_gps(small_graph, bernoulli_half, Bucketing.equal_width(4, 0.0, 0.8), 100)


def test_mc_deterministic_for_fixed_seed(small_graph, bernoulli_half):
    a = mc_gps(small_graph, bernoulli_half, Bucketing.atoms(), 500, substream(3, 2))
    b = mc_gps(small_graph, bernoulli_half, Bucketing.atoms(), 500, substream(3, 2))
    for da, db in zip(a.dists, b.dists):
        np.testing.assert_array_equal(da.support, db.support)
        np.testing.assert_array_equal(da.probs, db.probs)


def test_mc_rejects_nonpositive_draws(small_graph, bernoulli_half):
    with pytest.raises(ValueError, match="positive"):
        mc_gps(small_graph, bernoulli_half, Bucketing.atoms(), 0)


def test_mc_handles_completely_randomized(two_type_graph):
    # exact enumeration refuses this design; the simulator must not
    design = AssignmentDesign.completely_randomized(6)
    table = mc_gps(two_type_graph, design, Bucketing.atoms(), 4000, substream(5, 2))
    # single-neighbor units: P(E = 1) = 6/12 exactly under 6-of-12 sampling
    r1 = table.imputed_scores(1.0)[:4]
    assert np.all(np.abs(r1 - 0.5) <= 4.0 * np.sqrt(0.25 / 4000))


# -- score balancing ---------------------------------------------------------


def test_units_grouped_by_score_balance():
    # units sharing r(1, w) see full exposure at exactly that frequency
    rows = []
    for _ in range(3):
        rows.append([(len(rows), 1.0)])
    base = len(rows)
    for k in range(3):
        j = base + 2 * k
        rows.append([(j, 0.5), (j + 1, 0.5)])
    graph = BipartiteGraph.from_rows(rows, m_diversion=base + 6)
    design = AssignmentDesign.bernoulli(0.4)
    table = exact_gps_table(graph, design)
    r1 = table.imputed_scores(1.0)

    n_draws = 5000
    z = draw_assignments(design, graph.m_diversion, n_draws, substream(13, 2))
    exposures = linear_exposure_many(graph, z.astype(np.float64))
    fully = np.abs(exposures - 1.0) <= 1e-12
    for r in np.unique(r1):
        group = r1 == r
        freq = fully[group].mean()
        sigma = np.sqrt(r * (1 - r) / (group.sum() * n_draws))
        assert abs(freq - r) <= 4.0 * sigma


# -- building blocks ---------------------------------------------------------


def test_product_gps_matches_manual():
    p = np.array([0.2, 0.6, 0.9])
    assert product_gps(p, np.array([1, 0, 1])) == pytest.approx(0.2 * 0.4 * 0.9)
    assert product_gps(p, np.array([0, 0, 0])) == pytest.approx(0.8 * 0.4 * 0.1)


def test_product_gps_validation():
    with pytest.raises(ValueError, match="matching"):
        product_gps(np.array([0.5, 0.5]), np.array([1]))
    with pytest.raises(ValidationError, match="strictly inside"):
        product_gps(np.array([0.0, 0.5]), np.array([1, 0]))
    with pytest.raises(ValueError, match="0/1"):
        product_gps(np.array([0.5, 0.5]), np.array([1, 2]))


def test_bucketing_validation():
    with pytest.raises(ValidationError, match="mode"):
        Bucketing(mode="histogram")
    with pytest.raises(ValidationError, match="tolerance"):
        Bucketing.atoms(tol=0.0)
    with pytest.raises(ValidationError, match="edges"):
        Bucketing(mode="bins")
    with pytest.raises(ValidationError, match="increasing"):
        Bucketing(mode="bins", edges=np.array([0.0, 0.5, 0.5]))
    with pytest.raises(ValidationError, match="bin"):
        Bucketing.equal_width(0)


def test_distribution_validation():
    atoms = Bucketing.atoms()
    with pytest.raises(ValidationError, match="ascending"):
        ExposureDistribution(np.array([0.5, 0.1]), np.array([0.5, 0.5]), atoms)
    with pytest.raises(ValidationError, match="nonnegative"):
        ExposureDistribution(np.array([0.0, 1.0]), np.array([1.2, -0.2]), atoms)
    with pytest.raises(ValidationError, match="sum"):
        ExposureDistribution(np.array([0.0, 1.0]), np.array([0.5, 0.4]), atoms)


def test_bins_top_edge_closed():
    bucketing = Bucketing.equal_width(2, 0.0, 1.0)
    dist = ExposureDistribution(np.array([0.25, 0.75]), np.array([0.3, 0.7]), bucketing)
    assert dist.mass_at(1.0) == pytest.approx(0.7)
    assert dist.mass_at(0.5) == pytest.approx(0.7)  # right-open lower bin
    assert dist.mass_at(0.0) == pytest.approx(0.3)
    assert dist.mass_at(1.2) == 0.0


def test_atom_tolerance_is_two_sided():
    dist = ExposureDistribution(np.array([0.0, 0.5, 1.0]), np.array([0.25, 0.5, 0.25]), Bucketing.atoms())
    assert dist.mass_at(0.5 + 0.5 * ATOM_TOL) == pytest.approx(0.5)
    assert dist.mass_at(0.5 - 0.5 * ATOM_TOL) == pytest.approx(0.5)
    assert dist.mass_at(0.5 + 3 * ATOM_TOL) == 0.0
