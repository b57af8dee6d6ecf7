import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fcrstack.core import FcrBid
from fcrstack.settlement import (
    BlockEvaluation,
    Ledger,
    adjusted_block_profit,
    fcr_capacity_revenue,
    settle_quarter_hour,
)

finite = st.floats(-1e4, 1e4, allow_nan=False)


def test_settlement_examples():
    assert settle_quarter_hour(1.0, 200.0) == 200.0
    assert settle_quarter_hour(-1.0, 200.0) == -200.0
    assert settle_quarter_hour(0.0, 123.0) == 0.0


def test_capacity_revenue_examples():
    assert fcr_capacity_revenue(FcrBid(0, 0), 50) == 0
    assert fcr_capacity_revenue(FcrBid(0, 5), 20) == 100
    assert fcr_capacity_revenue(9, 0) == 0
    with pytest.raises(ValueError):
        fcr_capacity_revenue(5, -1)


def test_adjusted_profit_examples():
    assert adjusted_block_profit(0, 0, 0, 77) == 0
    assert adjusted_block_profit(100, 50, 0.5, 80) == 190
    assert adjusted_block_profit(100, 50, -1.0, 100) == 50


@given(finite, finite, st.floats(-100, 100))
def test_settlement_bilinear(e, p, alpha):
    assert settle_quarter_hour(alpha * e, p) == pytest.approx(alpha * settle_quarter_hour(e, p), rel=1e-9, abs=1e-6)
    assert settle_quarter_hour(e, p + alpha) == pytest.approx(
        settle_quarter_hour(e, p) + settle_quarter_hour(e, alpha), rel=1e-9, abs=1e-6
    )


@given(finite, finite)
def test_pure_energy_shift_is_priced_at_terminal_value(delta_e, pi_bar):
    assert adjusted_block_profit(0.0, 0.0, delta_e, pi_bar) == pi_bar * delta_e


def test_block_evaluation_builds_j_adj():
    ev = BlockEvaluation.build(100, 50, 0.5, 80, violations=2)
    assert ev.j_adj == 190 and ev.violations == 2


@given(
    st.lists(st.tuples(finite, finite), max_size=40),
    st.lists(st.tuples(st.integers(0, 9), st.floats(0, 500)), max_size=10),
)
def test_ledger_additivity(quarters, blocks):
    led = Ledger()
    for i, (e, p) in enumerate(quarters):
        led.settle(i, e, p)
    for i, (b, p) in enumerate(blocks):
        led.credit_fcr(i, b, p)
    assert led.total == sum(e * p for e, p in quarters) + sum(b * p for b, p in blocks) or math.isclose(
        led.total, sum(e * p for e, p in quarters) + sum(b * p for b, p in blocks), rel_tol=1e-12, abs_tol=1e-9
    )
    assert led.total == led.imbalance_cash + led.fcr_revenue


def test_ledger_csv(tmp_path):
    led = Ledger()
    led.settle("2022-01-01T00:00:00Z", 0.5, -40.0)
    led.credit_fcr("2022-01-01T00:00:00Z", 5, 20.0)
    led.to_csv(tmp_path / "l.csv")
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "timestamp,category,energy,price,cash"
    assert lines[1].endswith("imbalance,0.5,-40.0,-20.0")
    assert lines[2].endswith("fcr,5.0,20.0,100.0")
