#!/usr/bin/env python3
"""
Clear-sky irradiance and the smart persistence baseline
=======================================================

Walks through one summer day at the default site:

  1. where the sun is (zenith / azimuth) through the day,
  2. what a cloudless sky would deliver (ESRA and Haurwitz models),
  3. how smart persistence turns the current clear-sky index into a forecast,
  4. how forecast skill compares a forecaster against that baseline.

Run:  python demos/01_clearsky_and_persistence.py
"""

from datetime import datetime, timedelta, timezone

import numpy as np

from skycast.clearsky import (
    ClearSkyParams,
    clearsky_ghi,
    clearsky_index,
    haurwitz_clearsky_ghi,
    smart_persistence_forecast,
    solar_position,
)
from skycast.evaluation import forecast_skill

params = ClearSkyParams()  # ESRA, Linke turbidity 3, default site
day = datetime(2018, 6, 21, tzinfo=timezone.utc)
doy = day.timetuple().tm_yday

# --- 1 + 2: the sun's path and the clear-sky envelope ----------------------
print(f"{'UTC':>5}  {'zenith':>7}  {'azimuth':>7}  {'ESRA':>7}  {'Haurwitz':>8}")
for hour in range(4, 21, 2):
    t = day + timedelta(hours=hour)
    ang = solar_position(t, params.site)
    esra = clearsky_ghi(ang, doy, params)
    haur = haurwitz_clearsky_ghi(ang.zenith_deg)
    print(f"{t:%H:%M}  {ang.zenith_deg:7.2f}  {ang.azimuth_deg:7.2f}  {esra:7.1f}  {haur:8.1f}")

# --- 3: smart persistence ---------------------------------------------------
# A passing cloud at 10:00 UTC: the pyranometer reads 60 % of clear sky.
t0, h = day + timedelta(hours=10), 10
c_t = clearsky_ghi(solar_position(t0, params.site), doy, params)
c_th = clearsky_ghi(solar_position(t0 + timedelta(minutes=h), params.site), doy, params)
ghi_t = 0.6 * c_t
k = clearsky_index(ghi_t, c_t)
print(f"\nk*(t) = {k:.2f}; clear sky {c_t:.1f} -> {c_th:.1f} W/m2 over {h} min")
print(f"smart persistence forecast: {smart_persistence_forecast(ghi_t, c_t, c_th):.1f} W/m2")

# --- 4: forecast skill --------------------------------------------------------
rng = np.random.default_rng(0)
truth = rng.uniform(100, 900, 20000)
persistence = truth + rng.normal(0, 100, 20000)
model = truth + rng.normal(0, 70, 20000)
mse = lambda a: float(np.mean((a - truth) ** 2))  # noqa: E731
print(f"\nMSE persistence {mse(persistence):.0f}, model {mse(model):.0f} (W/m2)^2")
print(f"forecast skill = 1 - MSE_model / MSE_persistence = {forecast_skill(mse(model), mse(persistence)):.3f}")
print("(about 1 - 0.7^2 = 0.51 expected for this noise ratio)")
