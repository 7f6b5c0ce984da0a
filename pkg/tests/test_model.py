"""Core billing model: option tables, flows, percentiles, cost, penalties.

Reference values come from tests/oracles.py, which recomputes everything
with plain loops.
"""

import numpy as np
import pytest

import oracles
from conftest import make_tiny
from ecsched import baselines
from ecsched.model import (AllocationScheme, DemandTensor, Instance,
                           InvalidTopologyError, SoftAllocation, Topology,
                           build_option_table, check_feasibility, compute_flows,
                           evaluate_hard, g95, percentile_exempt_count, soft_loss,
                           soft_loss_and_grad, total_cost)


def plain_topology(cb_e, cm_e, r_e, admissible, cmax_e=1e6,
                   cb_l=1e6, cm_l=1e7, cmax_l=1e8, r_l=1.0):
    """Hand-built topology; ISP caps default high enough to never bind."""
    cb_e = np.asarray(cb_e, dtype=float)
    n, el = cb_e.shape
    return Topology(
        edge_cap_basic=cb_e,
        edge_cap_billable=np.broadcast_to(np.asarray(cm_e, dtype=float), (n, el)).copy(),
        edge_cap_phys=np.full((n, el), float(cmax_e)),
        edge_rate=np.broadcast_to(np.asarray(r_e, dtype=float), (n, el)).copy(),
        isp_cap_basic=np.full(el, float(cb_l)),
        isp_cap_billable=np.full(el, float(cm_l)),
        isp_cap_phys=np.full(el, float(cmax_l)),
        isp_rate=np.full(el, float(r_l)),
        admissible=np.asarray(admissible, dtype=bool),
    ).validate()


def instance_of(topology, d_in, d_out, name="hand"):
    demands = DemandTensor(inbound=np.asarray(d_in, dtype=float),
                           outbound=np.asarray(d_out, dtype=float))
    return Instance(topology=topology, demands=demands, instance_id=name).validate()


def random_soft(instance, table, rng):
    t, n, k = instance.dims
    u = rng.uniform(0.1, 1.0, size=(t, n, k, table.n_options))
    u *= table.valid.transpose(1, 0, 2)[None]
    return SoftAllocation(x=u / u.sum(axis=3, keepdims=True))


# ---------------------------------------------------------------------------
# option table
# ---------------------------------------------------------------------------

def test_two_link_option_rows():
    topo = plain_topology([[100.0, 300.0]], 1e4, 5.0, np.ones((1, 1, 2), dtype=bool))
    table = build_option_table(topo)
    assert table.n_valid[0, 0] == 3
    np.testing.assert_allclose(table.weights[0, 0, 0], [1.0, 0.0])
    np.testing.assert_allclose(table.weights[0, 0, 1], [0.0, 1.0])
    np.testing.assert_allclose(table.weights[0, 0, 2], [0.25, 0.75])


def test_single_link_forced_option():
    adm = np.zeros((1, 1, 3), dtype=bool)
    adm[0, 0, 1] = True
    topo = plain_topology([[50.0, 80.0, 90.0]], 1e4, 5.0, adm)
    table = build_option_table(topo)
    assert table.n_valid[0, 0] == 1
    np.testing.assert_allclose(table.weights[0, 0, 0], [0.0, 1.0, 0.0])


def test_four_equal_links_full_subset():
    topo = plain_topology([[200.0] * 4], 1e4, 5.0, np.ones((1, 1, 4), dtype=bool))
    table = build_option_table(topo)
    assert table.n_valid[0, 0] == 15
    assert table.valid[0, 0].sum() == 15
    np.testing.assert_allclose(table.weights[0, 0, 14], [0.25] * 4)


def test_padded_rows_are_zero():
    adm = np.ones((2, 1, 2), dtype=bool)
    topo = plain_topology([[100.0, 300.0]], 1e4, 5.0, adm)
    table = build_option_table(topo, n_options=15)
    assert table.weights[:, :, 3:].sum() == 0.0
    assert not table.valid[:, :, 3:].any()


def test_option_table_matches_oracle_subsets():
    inst = make_tiny(4, n_users=2, n_isps=3, full_admissible=False)
    table = build_option_table(inst.topology)
    for k in range(inst.dims[2]):
        for n in range(inst.dims[1]):
            links = oracles.admissible_links(inst.topology, k, n)
            assert table.n_valid[k, n] == 2 ** len(links) - 1
            for p in range(int(table.n_valid[k, n])):
                expect = oracles.split_weights(
                    inst.topology, n, oracles.option_subset(links, p))
                row = table.weights[k, n, p]
                assert set(np.flatnonzero(row).tolist()) == set(expect)
                for j, w in expect.items():
                    assert row[j] == pytest.approx(w, rel=1e-12)


def test_table_too_small_is_rejected():
    topo = plain_topology([[200.0] * 4], 1e4, 5.0, np.ones((1, 1, 4), dtype=bool))
    with pytest.raises(InvalidTopologyError):
        build_option_table(topo, n_options=7)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def test_topology_rejects_empty_admissible_row():
    adm = np.ones((2, 1, 2), dtype=bool)
    adm[1, 0] = False
    with pytest.raises(InvalidTopologyError):
        plain_topology([[100.0, 300.0]], 1e4, 5.0, adm)


def test_topology_rejects_cap_order_violation():
    with pytest.raises(InvalidTopologyError):
        plain_topology([[100.0, 300.0]], 50.0, 5.0, np.ones((1, 1, 2), dtype=bool))


def test_demands_reject_negative_but_allow_zero():
    z = np.zeros((1, 1, 3))
    DemandTensor(inbound=z, outbound=z).validate()
    with pytest.raises(ValueError):
        DemandTensor(inbound=z - 1.0, outbound=z).validate()
    with pytest.raises(ValueError):
        DemandTensor(inbound=z + np.nan, outbound=z).validate()


def test_scheme_option_out_of_range():
    inst = make_tiny(0)
    table = build_option_table(inst.topology)
    bad = AllocationScheme(option=np.full(inst.dims, 3, dtype=np.int64))
    with pytest.raises(ValueError):
        total_cost(inst, bad, table)


# ---------------------------------------------------------------------------
# flows and billing
# ---------------------------------------------------------------------------

def test_proportional_split_flow_values():
    topo = plain_topology([[100.0, 300.0]], 1e4, 5.0, np.ones((1, 1, 2), dtype=bool))
    inst = instance_of(topo, [[[40.0, 40.0, 40.0]]], [[[40.0, 40.0, 40.0]]])
    both = AllocationScheme(option=np.full((3, 1, 1), 2, dtype=np.int64))
    flows = compute_flows(inst, both)
    np.testing.assert_allclose(flows.edge_in[0, 0], [10.0, 10.0, 10.0])
    np.testing.assert_allclose(flows.edge_in[0, 1], [30.0, 30.0, 30.0])


def test_zero_demands_zero_everything():
    topo = plain_topology([[100.0, 300.0]], 1e4, 5.0, np.ones((2, 1, 2), dtype=bool))
    inst = instance_of(topo, np.zeros((2, 1, 4)), np.zeros((2, 1, 4)))
    scheme = AllocationScheme(option=np.zeros((4, 1, 2), dtype=np.int64))
    flows = compute_flows(inst, scheme)
    assert flows.edge_in.sum() == 0.0 and flows.edge_out.sum() == 0.0
    assert flows.cost_total == 0.0
    assert check_feasibility(inst, scheme).feasible


def test_isp_flows_sum_users():
    inst = make_tiny(5, n_users=3, n_isps=3, full_admissible=False)
    table = build_option_table(inst.topology)
    scheme = baselines.rsn_sample(inst, np.random.default_rng(0), table)
    flows = compute_flows(inst, scheme, table)
    np.testing.assert_allclose(flows.isp_in, flows.edge_in.sum(axis=0), rtol=1e-12)
    np.testing.assert_allclose(flows.isp_out, flows.edge_out.sum(axis=0), rtol=1e-12)


def test_overage_cost_value():
    topo = plain_topology([[100.0]], 1e4, 5.0, np.ones((1, 1, 1), dtype=bool))
    inst = instance_of(topo, [[[120.0, 50.0, 10.0]]], [[[1.0, 1.0, 1.0]]])
    scheme = AllocationScheme(option=np.zeros((3, 1, 1), dtype=np.int64))
    # T=3 exempts nothing, so z = 120 and the edge overage bills 5 * 20
    assert total_cost(inst, scheme) == pytest.approx(100.0)


def test_under_basic_cap_is_free():
    topo = plain_topology([[100.0]], 1e4, 5.0, np.ones((1, 1, 1), dtype=bool))
    inst = instance_of(topo, [[[90.0, 50.0, 10.0]]], [[[1.0, 1.0, 1.0]]])
    scheme = AllocationScheme(option=np.zeros((3, 1, 1), dtype=np.int64))
    assert total_cost(inst, scheme) == 0.0


def test_billable_is_max_of_directions():
    topo = plain_topology([[10.0]], 1e4, 7.0, np.ones((1, 1, 1), dtype=bool))
    inst = instance_of(topo, [[[30.0, 5.0, 5.0]]], [[[80.0, 5.0, 5.0]]])
    scheme = AllocationScheme(option=np.zeros((3, 1, 1), dtype=np.int64))
    assert total_cost(inst, scheme) == pytest.approx(7.0 * (80.0 - 10.0))


# ---------------------------------------------------------------------------
# percentile
# ---------------------------------------------------------------------------

def test_exempt_counts():
    assert percentile_exempt_count(3) == 0
    assert percentile_exempt_count(19) == 0
    assert percentile_exempt_count(20) == 1
    assert percentile_exempt_count(48) == 2
    assert percentile_exempt_count(100) == 5


def test_g95_skips_one_of_twenty():
    assert g95(np.arange(1.0, 21.0)) == 19.0


def test_g95_constant_series():
    assert g95(np.full(48, 7.5)) == 7.5


def test_g95_three_spikes_in_48():
    series = np.ones(48)
    series[[5, 17, 40]] = 100.0
    assert g95(series) == 100.0


def test_g95_is_an_element_below_max():
    rng = np.random.default_rng(6)
    for _ in range(100):
        series = rng.uniform(0.0, 50.0, size=int(rng.integers(1, 120)))
        v = g95(series)
        assert v in series
        assert v <= series.max()


def test_g95_ignores_exempt_slot_growth():
    rng = np.random.default_rng(7)
    series = rng.uniform(10.0, 90.0, size=48)
    base = g95(series)
    bumped = series.copy()
    bumped[np.argmax(series)] += 123.456
    assert g95(bumped) == base


# ---------------------------------------------------------------------------
# feasibility reporting
# ---------------------------------------------------------------------------

def test_physical_violation_reported():
    topo = plain_topology([[100.0]], 140.0, 5.0, np.ones((1, 1, 1), dtype=bool),
                          cmax_e=140.0)
    inst = instance_of(topo, [[[150.0, 10.0, 10.0]]], [[[1.0, 1.0, 1.0]]])
    scheme = AllocationScheme(option=np.zeros((3, 1, 1), dtype=np.int64))
    report = check_feasibility(inst, scheme)
    assert not report.feasible
    assert ((0, 0, 0, "in"), pytest.approx(10.0)) in [
        (loc, mag) for loc, mag in report.edge_phys]
    # z = 150 also clears the billable cap by the same 10 Mbps
    assert report.counts()["edge_billable"] == 1
    assert report.edge_billable[0][0] == (0, 0)


def test_feasibility_agrees_with_oracle():
    rng = np.random.default_rng(8)
    hits = {True: 0, False: 0}
    for seed in range(15):
        inst = make_tiny(seed, n_users=2, n_slots=4, n_types=3, n_isps=3,
                         full_admissible=False, demand_scale=4.0)
        table = build_option_table(inst.topology)
        for _ in range(4):
            scheme = baselines.rsn_sample(inst, rng, table)
            got = check_feasibility(inst, scheme, table).feasible
            assert got == oracles.feasible(inst, scheme.option)
            hits[got] += 1
    assert hits[True] > 0 and hits[False] > 0


def test_evaluate_hard_matches_slow_path():
    rng = np.random.default_rng(9)
    for seed in range(10):
        inst = make_tiny(seed, n_users=2, n_slots=4, n_types=3, n_isps=3,
                         full_admissible=False, demand_scale=4.0)
        table = build_option_table(inst.topology)
        for _ in range(4):
            scheme = baselines.rsn_sample(inst, rng, table)
            cost, feasible = evaluate_hard(inst, table, scheme.option)
            assert feasible == check_feasibility(inst, scheme, table).feasible
            if feasible:
                assert cost == pytest.approx(total_cost(inst, scheme, table), rel=1e-12)
            else:
                assert cost == np.inf


# ---------------------------------------------------------------------------
# oracle agreement on generated instances
# ---------------------------------------------------------------------------

def test_hard_cost_matches_oracle():
    rng = np.random.default_rng(10)
    for seed in range(20):
        inst = make_tiny(seed, n_users=2, n_slots=5, n_types=3, n_isps=3,
                         full_admissible=False, demand_scale=6.0)
        table = build_option_table(inst.topology)
        scheme = baselines.rsn_sample(inst, rng, table)
        assert total_cost(inst, scheme, table) == pytest.approx(
            oracles.cost(inst, scheme.option), rel=1e-10)


def test_soft_loss_matches_oracle():
    rng = np.random.default_rng(11)
    for seed in range(10):
        inst = make_tiny(seed, n_users=2, n_slots=4, n_types=2, n_isps=3,
                         full_admissible=False, demand_scale=9.0)
        table = build_option_table(inst.topology)
        alloc = random_soft(inst, table, rng)
        got = soft_loss(inst, alloc, lam_g=1.3, table=table)
        assert got == pytest.approx(oracles.soft_loss(inst, alloc.x, 1.3), rel=1e-10)


def test_soft_loss_two_paths_agree():
    rng = np.random.default_rng(12)
    inst = make_tiny(2, n_users=2, n_slots=4, n_types=3, n_isps=4, demand_scale=9.0)
    table = build_option_table(inst.topology)
    alloc = random_soft(inst, table, rng)
    loss, _, _ = soft_loss_and_grad(inst, table, alloc.x, 1.0)
    assert loss == pytest.approx(soft_loss(inst, alloc, table=table), rel=1e-12)


# ---------------------------------------------------------------------------
# soft-loss structure
# ---------------------------------------------------------------------------

def test_billable_violation_penalty_value():
    # a lone 2 Mbps billable overshoot adds exactly 4 at unit weight
    topo = plain_topology([[10.0]], 50.0, 3.0, np.ones((1, 1, 1), dtype=bool))
    inst = instance_of(topo, [[[52.0, 5.0, 5.0]]], [[[1.0, 1.0, 1.0]]])
    scheme = AllocationScheme(option=np.zeros((3, 1, 1), dtype=np.int64))
    pen = soft_loss(inst, scheme, lam_g=1.0) - total_cost(inst, scheme)
    assert pen == pytest.approx(4.0)


def test_equality_weight_is_inert():
    rng = np.random.default_rng(13)
    inst = make_tiny(1, demand_scale=9.0)
    table = build_option_table(inst.topology)
    alloc = random_soft(inst, table, rng)
    assert soft_loss(inst, alloc, lam_h=0.0, table=table) == \
        soft_loss(inst, alloc, lam_h=25.0, table=table)


def test_penalty_scales_quadratically():
    rng = np.random.default_rng(14)
    inst = make_tiny(6, n_users=2, n_types=3, demand_scale=12.0)
    table = build_option_table(inst.topology)
    alloc = random_soft(inst, table, rng)
    cost1 = soft_loss(inst, alloc, lam_g=0.0, table=table)
    pen1 = soft_loss(inst, alloc, lam_g=1.0, table=table) - cost1
    assert pen1 > 0.0

    c = 3.0
    topo = inst.topology
    import dataclasses
    scaled_topo = dataclasses.replace(
        topo,
        edge_cap_basic=topo.edge_cap_basic * c,
        edge_cap_billable=topo.edge_cap_billable * c,
        edge_cap_phys=topo.edge_cap_phys * c,
        isp_cap_basic=topo.isp_cap_basic * c,
        isp_cap_billable=topo.isp_cap_billable * c,
        isp_cap_phys=topo.isp_cap_phys * c)
    scaled = Instance(
        topology=scaled_topo,
        demands=DemandTensor(inbound=inst.demands.inbound * c,
                             outbound=inst.demands.outbound * c),
        instance_id="scaled").validate()
    cost_c = soft_loss(scaled, alloc, lam_g=0.0)
    pen_c = soft_loss(scaled, alloc, lam_g=1.0) - cost_c
    assert cost_c == pytest.approx(c * cost1, rel=1e-9)
    assert pen_c == pytest.approx(c * c * pen1, rel=1e-9)


def test_cost_monotone_in_demand():
    rng = np.random.default_rng(15)
    inst = make_tiny(7, n_users=2, n_slots=4, n_types=2, n_isps=3, demand_scale=6.0)
    table = build_option_table(inst.topology)
    scheme = baselines.rsn_sample(inst, rng, table)
    base = total_cost(inst, scheme, table)
    t, n, k = inst.dims
    for _ in range(20):
        d = inst.demands.inbound.copy()
        d[rng.integers(k), rng.integers(n), rng.integers(t)] += 5.0
        bumped = Instance(
            topology=inst.topology,
            demands=DemandTensor(inbound=d, outbound=inst.demands.outbound),
            instance_id="bumped").validate()
        assert total_cost(bumped, scheme, table) >= base - 1e-12


def test_flow_conservation():
    rng = np.random.default_rng(16)
    for seed in range(25):
        inst = make_tiny(seed, n_users=2, n_slots=4, n_types=3, n_isps=3,
                         full_admissible=False)
        table = build_option_table(inst.topology)
        alloc = (baselines.rsn_sample(inst, rng, table) if seed % 2
                 else random_soft(inst, table, rng))
        flows = compute_flows(inst, alloc, table)
        np.testing.assert_allclose(flows.edge_in.sum(axis=1),
                                   inst.demands.inbound.sum(axis=0), rtol=1e-9)
        np.testing.assert_allclose(flows.edge_out.sum(axis=1),
                                   inst.demands.outbound.sum(axis=0), rtol=1e-9)


def test_soft_gradient_matches_central_differences():
    inst = make_tiny(3, n_users=2, n_slots=4, n_types=2, n_isps=3, demand_scale=6.0)
    table = build_option_table(inst.topology)
    rng = np.random.default_rng(17)
    alloc = random_soft(inst, table, rng)
    x = alloc.x
    loss0, dx, bd0 = soft_loss_and_grad(inst, table, x, 1.0)
    h = 1e-6
    t, n, k = inst.dims
    checked = 0
    attempts = 0
    while checked < 12 and attempts < 100:
        attempts += 1
        idx = (int(rng.integers(t)), int(rng.integers(n)), int(rng.integers(k)),
               int(rng.integers(table.n_options)))
        if not table.valid[idx[2], idx[1], idx[3]]:
            continue
        xp = x.copy()
        xp[idx] += h
        lp, _, bdp = soft_loss_and_grad(inst, table, xp, 1.0)
        xm = x.copy()
        xm[idx] -= h
        lm, _, bdm = soft_loss_and_grad(inst, table, xm, 1.0)
        if bdp.signature != bd0.signature or bdm.signature != bd0.signature:
            continue
        numeric = (lp - lm) / (2.0 * h)
        analytic = dx[idx]
        denom = max(abs(numeric), abs(analytic))
        if denom < 1e-8:
            checked += 1
            continue
        assert abs(numeric - analytic) / denom < 1e-4, (idx, numeric, analytic)
        checked += 1
    assert checked >= 12
