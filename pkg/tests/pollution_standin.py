"""A format-faithful stand-in for the hourly Beijing PM2.5 file.

Same header, same 43,824 hourly rows (2010-01-01 00:00 to 2014-12-31 23:00),
same leading 24-hour block of missing pm2.5 plus scattered later gaps, and the
same four wind-direction labels.  The numbers are synthetic; only the layout
is meant to match, which is all the windowing checks need.
"""

import csv
from datetime import datetime, timedelta

import numpy as np

HEADER = ["No", "year", "month", "day", "hour", "pm2.5", "DEWP", "TEMP", "PRES", "cbwd", "Iws", "Is", "Ir"]
ROWS = 43_824
LEADING_GAP = 24
WIND = ["NW", "cv", "NE", "SE"]


def write_standin(path, seed=0, rows=ROWS):
    rng = np.random.default_rng(seed)
    hours = np.arange(rows)
    season = np.cos(2 * np.pi * hours / (24 * 365.25))
    daily = np.cos(2 * np.pi * hours / 24)
    temp = 12 - 15 * season + 4 * daily + rng.normal(0, 2, rows)
    dewp = temp - 8 + rng.normal(0, 3, rows)
    pres = 1016 + 10 * season + rng.normal(0, 3, rows)
    wind = rng.choice(len(WIND), rows, p=[0.33, 0.2, 0.12, 0.35])
    iws = np.zeros(rows)
    snow = np.zeros(rows)
    rain = np.zeros(rows)
    pm = np.zeros(rows)
    level = 80.0
    for t in range(rows):
        gust = rng.exponential(6)
        iws[t] = gust + (iws[t - 1] if t and wind[t] == wind[t - 1] else 0.0)
        wet = rng.random() < 0.03
        if wet and temp[t] < 0:
            snow[t] = snow[t - 1] + 1 if t else 1
        elif wet:
            rain[t] = rain[t - 1] + 1 if t else 1
        level = 0.95 * level + 5 + rng.normal(0, 8) - 0.4 * gust - 6 * wet
        level = max(level, 3.0)
        pm[t] = level
    missing = np.zeros(rows, dtype=bool)
    missing[:LEADING_GAP] = True
    missing[LEADING_GAP:][rng.random(rows - LEADING_GAP) < 0.045] = True

    start = datetime(2010, 1, 1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for t in range(rows):
            ts = start + timedelta(hours=int(t))
            w.writerow([
                t + 1, ts.year, ts.month, ts.day, ts.hour,
                "NA" if missing[t] else int(round(pm[t])),
                int(round(dewp[t])), int(round(temp[t])), int(round(pres[t])), WIND[wind[t]],
                round(iws[t], 2), int(snow[t]), int(rain[t]),
            ])
    return path
