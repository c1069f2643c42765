import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shardsched.adversary import InjectionTrace
from shardsched.config import RunConfig
from shardsched.engine import ROUND_COLUMNS, check_conservation, detect_growth, run, summarize

CONFIGS = [
    RunConfig(scheduler="bds", s=8, rho="0.05", b=3, rounds=400, seed=1),
    RunConfig(scheduler="bds", s=8, rho="0.1", b=2, rounds=400, strategy="uniform_random", abort_prob=0.2),
    RunConfig(scheduler="fds", topology="line", s=8, rho="0.03", b=2, rounds=400, seed=4),
    RunConfig(scheduler="fds", topology="line", s=8, rho="0.05", b=2, rounds=400, abort_prob=0.3,
              retry_aborts=True, priority="epoch_end"),
    RunConfig(scheduler="fds", topology="uniform", s=8, rho="0.05", b=2, rounds=400, home_rule="access"),
]


def test_zero_rounds_header_only():
    res = run(RunConfig(rounds=0))
    assert res.metrics.csv_text() == ",".join(ROUND_COLUMNS) + "\n"
    sm = summarize(res)
    assert sm["injected"] == 0 and sm["avg_pending"] == 0.0


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: f"{c.scheduler}-{c.topology}-{c.abort_prob}")
def test_run_invariants(cfg):
    res = run(cfg)
    assert res.audit().ok
    assert not res.scheduler.capacity_violations
    assert check_conservation(res) == []
    m = res.metrics
    assert (m.latencies() >= 0).all()
    cens = m.censored_latencies()
    assert (cens >= 0).all()
    assert (cens[m.finished_mask] == m.latencies()).all()
    assert (m.shard_queues.sum(axis=1) == m.outstanding).all()
    assert np.all(np.diff(m.committed_cum) >= 0)


@pytest.mark.parametrize("cfg", CONFIGS[:3], ids=["bds", "bds-abort", "fds"])
def test_determinism(cfg):
    assert run(cfg).metrics.digest() == run(cfg).metrics.digest()


def test_seed_changes_trace():
    a = run(CONFIGS[1])
    b = run(CONFIGS[1].replace(seed=9))
    assert a.metrics.digest() != b.metrics.digest()


def test_retry_finishes_everything():
    cfg = RunConfig(scheduler="bds", s=8, rho="0.02", b=2, rounds=600, abort_prob=0.3, retry_aborts=True)
    res = run(cfg, None)
    sm = summarize(res)
    assert sm["aborted"] == 0 and sm["injected"] > 0
    assert sm["committed"] + sm["unfinished"] == sm["injected"]
    assert check_conservation(res) == [] and res.audit().ok


def test_detect_growth():
    g = detect_growth(np.full(200, 7.0))
    assert g.stable and g.slope == 0.0
    g = detect_growth(np.arange(400) / 10)
    assert g.growing and g.slope == pytest.approx(0.1) and g.r2 == pytest.approx(1.0)
    assert detect_growth([]).stable and detect_growth([3]).stable
    rng = np.random.default_rng(0)
    assert detect_growth(rng.integers(0, 20, 1000)).stable


@settings(max_examples=30, deadline=None)
@given(st.floats(0.02, 2.0), st.floats(0, 500))
def test_detect_growth_linear(slope, offset):
    y = offset + slope * np.arange(300)
    g = detect_growth(y, threshold=0.01)
    assert g.growing and g.slope == pytest.approx(slope, rel=1e-6)


@pytest.mark.parametrize("seed", range(2))
def test_theorem1_overload_grows(seed):
    cfg = RunConfig(scheduler="bds", s=6, k=3, rho="2/3", b=2, rounds=1500, strategy="theorem1", seed=seed)
    g = detect_growth(run(cfg).metrics)
    assert g.growing and g.slope > 0


def test_summary_keys():
    sm = summarize(run(CONFIGS[0]))
    for key in ("rounds", "injected", "committed", "aborted", "unfinished", "avg_pending", "avg_latency",
                "max_latency", "avg_latency_censored", "growth_slope", "growing", "atomicity_violations",
                "order_violations", "capacity_violations", "conservation_violations"):
        assert key in sm
    assert sm["avg_pending"] == pytest.approx(sm["avg_pending_total"] / 8)


def test_trace_wider_than_topology_rejected():
    with pytest.raises(ValueError):
        run(RunConfig(s=4, rounds=10), InjectionTrace(8, 10))
