"""Two-tier safety layer: a pre-decision action mask and a reactive override."""

from __future__ import annotations

import numpy as np

from .core import ENERGY_TOL, BatteryParams

CHARGE, IDLE, DISCHARGE = 0, 1, 2
N_ACTIONS = 3
ACTION_NAMES = ("charge", "idle", "discharge")
ACTION_SIGN = np.array([-1.0, 0.0, 1.0])


def action_setpoint(action: int, residual_power: float) -> float:
    """Imbalance setpoint (MW, + = discharge) for a discrete action."""
    return float(ACTION_SIGN[action] * residual_power) + 0.0


def _energy_after(soe, p_total, dt_h, params: BatteryParams):
    charge = np.maximum(-p_total, 0.0)
    discharge = np.maximum(p_total, 0.0)
    return soe + (params.eta_c * charge - discharge / params.eta_d) * dt_h


def worst_case_projection(soe, p_imb, bid, dt_h, params: BatteryParams):
    """SoE after one interval under full adverse FCR: ``(lowest, highest)``."""
    low = _energy_after(soe, p_imb + bid, dt_h, params)
    high = _energy_after(soe, p_imb - bid, dt_h, params)
    return low, high


def guarded_band(band, bid: float, residual_power: float, guard_h: float, params: BatteryParams):
    """Shrink a band so a sustained full activation the residual power cannot
    cancel still stays inside it for ``guard_h`` hours.

    Only bids above half the rating (``bid > residual``) are affected.
    """
    lo, hi = band
    excess = max(bid - residual_power, 0.0)
    if excess == 0.0 or guard_h <= 0:
        return lo, hi
    g_lo = lo + excess / params.eta_d * guard_h
    g_hi = hi - excess * params.eta_c * guard_h
    if g_lo > g_hi:
        mid = 0.5 * (g_lo + g_hi)
        return mid, mid
    return g_lo, g_hi


def band_violation(low, high, band) -> np.ndarray:
    lo, hi = band
    return np.maximum(lo - low, 0.0) + np.maximum(high - hi, 0.0)


def action_mask(
    soe: float,
    active,
    upcoming,
    residual_power: float,
    bid: float,
    params: BatteryParams,
    dt_h: float = 1.0 / 60.0,
    guard_h: float = 0.0,
    upcoming_bid: float | None = None,
    minutes_left: int = 1,
) -> np.ndarray:
    """Boolean mask over (charge, idle, discharge); True means allowed.

    An action is masked when its one-interval projection under full adverse
    FCR activation leaves the active band, or (inside the look-ahead window,
    when ``upcoming`` is given) can no longer reach the next block's band:
    that band is widened by how far full corrective power still moves the
    SoE, against adverse FCR, over the ``minutes_left - 1`` intervals after
    this one. With ``guard_h > 0`` both bands are first narrowed by
    :func:`guarded_band`. At least one
    action always survives: if every projection violates, the
    least-violating one (idle on ties) is kept.
    """
    active = guarded_band(active, bid, residual_power, guard_h, params)
    if upcoming is not None:
        nb = bid if upcoming_bid is None else upcoming_bid
        up_lo, up_hi = guarded_band(upcoming, nb, params.p_nom - nb, guard_h, params)
        spare = max(residual_power - bid, 0.0) * dt_h * max(minutes_left - 1, 0)
        upcoming = (up_lo - params.eta_c * spare, up_hi + spare / params.eta_d)
    setpoints = ACTION_SIGN * residual_power
    low, high = worst_case_projection(soe, setpoints, bid, dt_h, params)
    violation = band_violation(low, high, active)
    if upcoming is not None:
        violation = violation + band_violation(low, high, upcoming)
    mask = violation <= ENERGY_TOL
    if not mask.any():
        order = (IDLE, CHARGE, DISCHARGE)
        best = min(order, key=lambda a: violation[a])
        mask[best] = True
    return mask


def apply_override(p_imb, soe, bounds, residual_power):
    """Replace the setpoint with full corrective power when SoE is out of band.

    Returns ``(setpoint, fired)``; broadcasts over arrays.
    """
    lo, hi = bounds
    below = soe < lo - ENERGY_TOL
    above = soe > hi + ENERGY_TOL
    out = np.where(below, -residual_power, np.where(above, residual_power, p_imb)) + 0.0
    fired = below | above
    if np.ndim(out) == 0:
        return float(out), bool(fired)
    return out, fired
