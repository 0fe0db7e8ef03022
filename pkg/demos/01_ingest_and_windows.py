"""
Loading a price panel and cutting it into windows
=================================================

Prices arrive as a long CSV (date, ticker, adj_close).  Dates missing for
any ticker are dropped, log returns are labelled by the start of their
interval, and windows of 42 trading days slide by one day.
"""

import tempfile
from pathlib import Path

from rrstates.market_data import (
    build_window_grid,
    compute_log_returns,
    load_price_panel,
    load_sector_map,
    write_price_csv,
    write_sector_csv,
)
from rrstates.synth import generate, two_regime_specs

work = Path(tempfile.mkdtemp())

# a small synthetic market: 20 assets, 30 epochs of 42 days
sp = generate(two_regime_specs(20, 16, 14, rho=0.7), 20, 42, seed=0)
write_price_csv(sp.prices(), work / "prices.csv")
write_sector_csv(sp.sector_map(0), work / "sectors.csv")

# remove one observation so that a date gets dropped
lines = (work / "prices.csv").read_text().splitlines()
(work / "prices.csv").write_text("\n".join(lines[:101] + lines[102:]) + "\n")

panel = load_price_panel(work / "prices.csv")
print(panel.shape, "prices;", "dropped:", panel.drop_report.dropped_dates)

rp = compute_log_returns(panel, load_sector_map(work / "sectors.csv"))
print("first tickers in sector order:", rp.tickers[:4], rp.sectors[:4])

# stride-1 windows leave out the one ending on the last return
grid = build_window_grid(rp.n_dates, 42, 1, dates=rp.dates)
print(len(grid), "windows over", rp.n_dates, "returns; first centre", grid.center_dates[0])

# disjoint epochs keep every window that fits
epochs = build_window_grid(rp.n_dates, 42, 42)
print(len(epochs), "epochs")
