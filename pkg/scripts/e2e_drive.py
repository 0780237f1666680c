#!/usr/bin/env python3
"""End-to-end smoke drive of the installed command-line tool.

Synthesizes a small but fully coherent dataset (index tables, daily
grids with a planted index->weather->outage chain, outage events, a
model registry), then drives the `enso-outages` console script through
validate, run, report, a single-stage rerun, and two failure paths,
checking exit codes and spot-checking artifacts.  Exits non-zero on the
first broken expectation.

Usage: python3 scripts/e2e_drive.py [workdir]
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from enso_outages.calendars import MonthWindow, add_months
from enso_outages.extremes import (
    EventKind,
    ExtremeConfig,
    build_thresholds,
    classify_days,
    monthly_frequency,
    regional_frequency,
)
from enso_outages.ingest import default_region_map
from enso_outages.ingest.gridio import DailyGridField, GridVariable, write_grid1

WINDOW = MonthWindow(2000, 1, 2009, 12)
N_DAYS = (dt.date(2010, 1, 1) - dt.date(2000, 1, 1)).days
CLI = "enso-outages"


def _month_of_day(n_days: int) -> np.ndarray:
    d0 = dt.date(2000, 1, 1)
    out = np.empty(n_days, dtype=int)
    for i in range(n_days):
        d = d0 + dt.timedelta(days=i)
        out[i] = (d.year - 2000) * 12 + d.month - 1
    return out


def build_dataset(root: Path) -> Path:
    data = root / "data"
    data.mkdir(parents=True)
    rng = np.random.default_rng(20260817)
    n = WINDOW.n_months

    t = np.arange(n)
    mei = np.round(1.2 * np.sin(2.0 * np.pi * t / 42.0) + rng.normal(0, 0.05, n), 6)
    nino3 = np.round(0.9 * np.roll(mei, 2) + rng.normal(0, 0.1, n), 6)
    for name, vals in (("mei.csv", mei), ("nino3.csv", nino3)):
        with open(data / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["year", "month", "value"])
            for k, v in enumerate(vals):
                y, m = add_months(2000, 1, k)
                w.writerow([y, m, "%.6f" % v])

    lats, lons = np.array([27.0, 31.0]), np.array([-99.0, -95.0, -91.0])
    month_of_day = _month_of_day(N_DAYS)
    t2m_vals = 15.0 + rng.normal(0, 2.0, (N_DAYS, 2, 3))
    # negative index months warm the whole grid three months later
    lagged = np.where(month_of_day >= 3, -2.0 * mei[np.maximum(month_of_day - 3, 0)], 0.0)
    t2m_vals += lagged[:, None, None]
    t2m = DailyGridField(GridVariable.T2M, lat0=27.0, dlat=4.0, lon0=-99.0, dlon=4.0,
                         t0=dt.date(2000, 1, 1), values=t2m_vals)
    write_grid1(t2m, data / "t2m.gr1")
    precip = DailyGridField(GridVariable.PRECIP, lat0=27.0, dlat=4.0, lon0=-99.0, dlon=4.0,
                            t0=dt.date(2000, 1, 1),
                            values=np.abs(rng.normal(2.0, 3.0, (N_DAYS, 2, 3))))
    write_grid1(precip, data / "precip.gr1")

    rmap = default_region_map()
    calendar = build_thresholds(t2m, ExtremeConfig())
    daymask = classify_days(t2m, calendar, EventKind.HEATWAVE)
    freq = monthly_frequency(daymask, t2m.lats(), t2m.lons())
    heat_te = regional_frequency(freq, rmap, "TE", how="mean")
    te_counts = np.maximum(0, np.round(2.0 + 3.0 * heat_te.values + rng.normal(0, 0.4, n))).astype(int)
    s2_counts = rng.integers(0, 4, n)

    with open(data / "outages.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Event ID", "Date Event Began", "Area Affected", "Event Type",
                    "Number of Customers Affected", "Demand Loss (MW)"])
        k = 0
        for idx in range(n):
            y, m = add_months(2000, 1, idx)
            for state, count in (("Texas", te_counts[idx]), ("Louisiana", s2_counts[idx])):
                for j in range(int(count)):
                    k += 1
                    day = 1 + (j * 5) % 28
                    w.writerow([f"ev-{k}", f"{m:02d}/{day:02d}/{y}", state,
                                "Severe Weather - Thunderstorms", 1000 + j, ""])

    scen_window = MonthWindow(2015, 1, 2100, 12)
    with open(data / "models.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "scenario", "format", "series_path"])
        for model, scenario, scale in (("cm-a", "ssp245", 1.0), ("cm-a", "ssp585", 1.3),
                                       ("cm-b", "ssp245", 1.15), ("cm-b", "ssp585", 1.5)):
            rel = f"freq_{model}_{scenario}.csv"
            w.writerow([model, scenario, "csv", rel])
            with open(data / rel, "w", newline="") as fh2:
                w2 = csv.writer(fh2)
                w2.writerow(["ym", "region", "value"])
                for q in range(scen_window.n_months):
                    y, m = add_months(2015, 1, q)
                    level = scale * (0.5 + 0.02 * (y - 2015))
                    w2.writerow([f"{y:04d}-{m:02d}", "TE", "%.6f" % level])
                    w2.writerow([f"{y:04d}-{m:02d}", "S2", "%.6f" % (0.8 * level)])

    (root / "run.toml").write_text(
        """
[window]
start = "2000-01"
end = "2009-12"

[inputs]
outage_table = "data/outages.csv"
t2m_grid = "data/t2m.gr1"
precip_grid = "data/precip.gr1"
region_map = "builtin"
model_registry = "data/models.csv"

[inputs.index_tables]
MEI = "data/mei.csv"
Nino3 = "data/nino3.csv"

[analysis]
sparse_region_threshold = 10

[projection]
base_period = [2000, 2004]
late_period = [2005, 2009]

[run]
out_dir = "out"
""",
        encoding="utf-8",
    )
    (root / "broken.toml").write_text(
        (root / "run.toml").read_text().replace(
            "[analysis]\nsparse_region_threshold = 10",
            "[analysis]\nsparse_region_threshold = 10\nalpha = 1.5",
        ),
        encoding="utf-8",
    )
    return root / "run.toml"


def run_cli(*args: str, expect: int) -> subprocess.CompletedProcess:
    proc = subprocess.run([CLI, *args], capture_output=True, text=True)
    if proc.returncode != expect:
        print(f"FAIL: {' '.join(args)} exited {proc.returncode}, wanted {expect}")
        print(proc.stdout)
        print(proc.stderr)
        sys.exit(1)
    print(f"ok: {' '.join(args)} -> {proc.returncode}")
    return proc


def main() -> None:
    if len(sys.argv) > 1:
        root = Path(sys.argv[1]).resolve()
        if root.exists():
            shutil.rmtree(root)
        root.mkdir(parents=True)
    else:
        root = Path(tempfile.mkdtemp(prefix="enso-drive-"))
    print(f"dataset under {root}")
    cfg = build_dataset(root)

    run_cli("validate", "--config", str(cfg), expect=0)
    run_cli("run", "--config", str(cfg), expect=0)

    out = root / "out"
    for rel in ("manifest.json", "ingest/ingest_summary.json",
                "correlate/fig2a_region_cc.csv", "composite/fig1b_composites.csv",
                "mediate/fig2def_mediation_heatwave.csv", "project/fig4eh_ratios.csv"):
        if not (out / rel).exists():
            print(f"FAIL: missing artifact {rel}")
            sys.exit(1)
    print("ok: expected artifacts present")

    rep = run_cli("report", "--config", str(cfg), expect=0)
    report = json.loads(rep.stdout)
    if report["ingest"]["records"] <= 0:
        print("FAIL: report shows no records")
        sys.exit(1)
    if "TE" not in report["regression"]["eligible_regions"]:
        print(f"FAIL: TE not eligible: {report['regression']['eligible_regions']}")
        sys.exit(1)
    if "ssp585/long_term" not in report["projection"]:
        print(f"FAIL: projection block incomplete: {sorted(report['projection'])}")
        sys.exit(1)
    print(f"ok: report sane (records={report['ingest']['records']})")

    manifest_before = (out / "manifest.json").read_bytes()
    run_cli("run", "--stage", "correlate", "--config", str(cfg), expect=0)
    if (out / "manifest.json").read_bytes() != manifest_before:
        print("FAIL: single-stage rerun changed the manifest")
        sys.exit(1)
    print("ok: single-stage rerun is byte-stable")

    run_cli("run", "--stage", "project", "--config", str(cfg),
            "--out", str(root / "fresh"), expect=1)
    run_cli("validate", "--config", str(root / "broken.toml"), expect=2)

    print("DRIVE OK")


if __name__ == "__main__":
    main()
