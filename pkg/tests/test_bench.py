from __future__ import annotations

import json
import math
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meg.bench import (
    COMPONENTS,
    KINDS,
    BenchReport,
    BenchStats,
    TrialTiming,
    attribute_trial,
    compute_stats,
    preset_email,
    render_report,
    run_benchmark,
)
from meg.errors import InvalidArgument, MegError
from meg.plotting import plot_report
from meg.timing import Recorder

from oracles import brute_stats

GOLDEN = Path(__file__).parent / "data" / "golden_report.txt"

# reference component means for 20 trials (mobile, server, client total) and the aggregate mean
REFERENCE_MEANS = {
    "decryption": ((0.2959, 1.485, 0.182), 1.962),
    "encryption": ((0.3134, 1.547, 0.209), 2.07),
}


def _half_ulp(value: float) -> float:
    """Half a unit in the last printed decimal place, e.g. 1.485 -> 0.0005."""
    text = repr(value)
    decimals = len(text.split(".")[1]) if "." in text else 0
    return 0.5 * 10.0 ** -decimals


def synthetic_report() -> BenchReport:
    rng = random.Random(20)
    trials = []
    for kind in KINDS:
        for i in range(20):
            mobile = round(rng.uniform(0.25, 0.35), 4)
            server = round(rng.uniform(1.0, 2.0), 4)
            aes = round(rng.uniform(0.003, 0.008), 4)
            client = round(aes + rng.uniform(0.05, 0.3), 4)
            trials.append(TrialTiming(kind, mobile, server, client, aes, mobile + server + client, None, f"{kind}-{i}"))
    env = {"mobile": "synthetic phone", "server": "synthetic server", "client": "synthetic client"}
    return BenchReport.from_trials(trials, 300, env)


# -- statistics -------------------------------------------------------------------


def test_stats_by_hand():
    s = compute_stats([1, 2, 3])
    assert (s.n, s.median, s.mean, s.stddev) == (3, 2, 2, 1)
    s = compute_stats([0.2865] * 20)
    assert (s.n, s.median, s.stddev) == (20, 0.2865, 0.0)
    assert s.mean == pytest.approx(0.2865, rel=1e-15)
    s = compute_stats([0.5])
    assert s.median == s.mean == 0.5 and s.stddev == 0.0
    assert compute_stats([4, 1, 3, 2]).median == 2.5


def test_stats_rejects_bad_input():
    with pytest.raises(InvalidArgument) as e:
        compute_stats([])
    assert e.value.code == "invalid-argument"
    with pytest.raises(InvalidArgument):
        compute_stats([1.0, math.nan])
    with pytest.raises(InvalidArgument):
        compute_stats([math.inf])


def _check_against_oracle(samples):
    got = compute_stats(samples)
    n, median, mean, sd = brute_stats(samples)
    assert got.n == n
    assert got.median == median
    assert got.mean == pytest.approx(mean, rel=1e-12, abs=1e-300)
    assert got.stddev == pytest.approx(sd, rel=1e-12, abs=1e-300)


@settings(max_examples=1000)
@given(st.lists(st.floats(min_value=0.0, max_value=100.0, allow_nan=False), min_size=1, max_size=60))
def test_stats_match_oracle(samples):
    _check_against_oracle(samples)


def test_stats_match_oracle_on_twenty_sample_lists():
    rng = random.Random(5)
    for _ in range(1000):
        _check_against_oracle([rng.lognormvariate(0, 0.5) for _ in range(20)])


# -- reference arithmetic ---------------------------------------------------------------


@pytest.mark.parametrize("kind", KINDS)
def test_aggregate_is_component_sum_on_reference_means(kind):
    (mobile, server, client), aggregate = REFERENCE_MEANS[kind]
    rng = random.Random(kind)
    trials = []
    # 20 trials whose per-component means are exactly the reference ones
    offsets = [rng.uniform(-0.01, 0.01) for _ in range(19)]
    offsets.append(-sum(offsets))
    for d in offsets:
        m, s, c = mobile + d, server - d / 2, client + d / 4
        trials.append(TrialTiming(kind, m, s, c, 0.005, m + s + c))
    report = BenchReport.from_trials(trials, 300, {})
    stats = report.stats[kind]
    assert stats["mobile"].mean == pytest.approx(mobile, abs=1e-12)
    assert stats["server"].mean == pytest.approx(server, abs=1e-12)
    assert stats["client"].mean == pytest.approx(client, abs=1e-12)
    component_sum = stats["mobile"].mean + stats["server"].mean + stats["client"].mean
    assert stats["aggregate"].mean == pytest.approx(component_sum, abs=1e-12)
    tolerance = sum(_half_ulp(v) for v in (mobile, server, client, aggregate))
    assert abs(component_sum - aggregate) <= tolerance
    # and the tolerance is tight enough to matter: a missing component breaks it
    assert abs(mobile + server - aggregate) > tolerance


def test_half_ulp():
    assert _half_ulp(1.485) == pytest.approx(0.0005)
    assert _half_ulp(2.07) == pytest.approx(0.005)
    assert _half_ulp(0.2959) == pytest.approx(0.00005)


# -- reports ---------------------------------------------------------------------------


def test_report_golden_file():
    assert render_report(synthetic_report(), "table") == GOLDEN.read_text()


def test_golden_numbers_come_from_compute_stats():
    report = synthetic_report()
    text = GOLDEN.read_text()
    for kind in KINDS:
        for component in COMPONENTS:
            s = report.stats[kind][component]
            n, median, mean, sd = brute_stats([getattr(t, {
                "mobile": "mobile_s", "server": "server_s", "client": "client_s",
                "client_aes": "client_aes_s", "aggregate": "total_s"}[component]) for t in report.trials
                if t.task_kind == kind])
            assert f"{median:.4f}" == f"{s.median:.4f}"
            assert f"{s.median:.4f}{s.mean:>10.4f}{s.stddev:>11.4f}" in text


def test_report_shape():
    text = render_report(synthetic_report(), "table")
    titles = [
        "Mobile benchmarking results",
        "Server benchmarking results",
        "Client benchmarking results",
        "Aggregated benchmarking results",
    ]
    positions = [text.index(t) for t in titles]
    assert positions == sorted(positions)
    assert "Benchmarking environment" in text
    for block in text.split("\n\n")[2:]:
        lines = block.splitlines()
        assert "median (s)" in lines[1] and "mu (s)" in lines[1] and "sigma (s)" in lines[1]
        rows = lines[3:]
        assert rows[0].startswith("Decryption")
        assert any(r.startswith("Encryption") for r in rows)
    client_block = text.split("Client benchmarking results")[1].split("\n\n")[0]
    assert "AES" in client_block and "total" in client_block


def test_report_json_roundtrip():
    report = synthetic_report()
    text = render_report(report, "json")
    again = BenchReport.from_dict(json.loads(text))
    assert again == report
    assert render_report(again, "json") == text
    assert render_report(again, "table") == render_report(report, "table")


def test_report_refuses_empty_aggregate():
    with pytest.raises(InvalidArgument):
        render_report(BenchReport({}, 300, {}), "table")
    report = synthetic_report()
    del report.stats["encryption"]["aggregate"]
    with pytest.raises(InvalidArgument):
        render_report(report, "json")
    with pytest.raises(InvalidArgument):
        render_report(synthetic_report(), "xml")


def test_plot_written(tmp_path):
    out = plot_report(synthetic_report(), tmp_path / "fig.png")
    assert out.read_bytes()[:4] == b"\x89PNG"
    with pytest.raises(ValueError):
        plot_report(BenchReport({}, 1, {}), tmp_path / "empty.png")


def test_preset_email():
    assert len(preset_email(300)) == 300
    assert preset_email(300) == preset_email(300)
    assert len(preset_email(1)) == 1 and len(preset_email(5000)) == 5000
    with pytest.raises(InvalidArgument):
        preset_email(0)


# -- attribution -------------------------------------------------------------------------


def test_attribute_trial_arithmetic():
    r = Recorder()
    for label, t in [("client_start", 10.0), ("client_submit_start", 10.001), ("server_submit_in", 10.0012),
                     ("server_result_out", 10.4995), ("client_result_in", 10.5), ("client_end", 10.502)]:
        r.mark("t", label, t)
    r.add("t", "mobile", 0.3)
    r.add("t", "client_aes", 0.0004)
    trial = attribute_trial("encryption", r, "t")
    assert trial.total_s == pytest.approx(0.502)
    assert trial.mobile_s == 0.3
    assert trial.server_s == pytest.approx(0.499 - 0.3)
    assert trial.client_s == pytest.approx(0.003)
    assert trial.component_sum == pytest.approx(trial.total_s, abs=1e-12)
    assert trial.server_direct_s == pytest.approx(0.4983 - 0.3)


def test_attribute_trial_missing_marks():
    r = Recorder()
    r.mark("t", "client_start", 1.0)
    with pytest.raises(MegError) as e:
        attribute_trial("encryption", r, "t")
    assert e.value.code == "bench-failed" and e.value.detail["task_id"] == "t"


def test_small_benchmark_run():
    report = run_benchmark(n=3, message_len=50, poll_interval=0.02)
    assert len(report.trials) == 6
    for kind in KINDS:
        assert report.stats[kind]["aggregate"].n == 3
    for t in report.trials:
        assert abs(t.total_s - t.component_sum) <= 1e-3
        assert t.mobile_s >= 0 and t.server_s >= 0 and t.client_s >= 0 and t.client_aes_s >= 0
        assert t.server_direct_s is not None
        assert abs(t.server_s - t.server_direct_s) <= 1e-3


def test_single_trial_stats():
    report = run_benchmark(n=1, message_len=1, poll_interval=0.02)
    for kind in KINDS:
        agg = report.stats[kind]["aggregate"]
        assert agg.n == 1 and agg.median == agg.mean and agg.stddev == 0.0


def test_benchmark_argument_check():
    with pytest.raises(InvalidArgument):
        run_benchmark(n=0)


def test_stats_dataclass_roundtrip():
    s = BenchStats(3, 2.0, 2.0, 1.0)
    assert BenchStats(**s.to_dict()) == s
