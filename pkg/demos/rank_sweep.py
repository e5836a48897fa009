"""How low can the RSVD rank go before modes drift away from the SVD ones?

Fixed-lag diagrams at one Toeplitz size, matching RSVD clusters against the
full-SVD clusters with 1% / 1% / 2% tolerances. Runs in ~40 s.
"""
from rsvdoma import cli, randla, synth
from rsvdoma.config import PipelineConfig, RankScanSettings

spec = synth.ShearFrameSpec(snr_db=20, seed=0)
oracle = synth.analytic_modes(*synth.build_matrices(spec)).f
rec = synth.simulate(spec)

cfg = PipelineConfig(rankscan=RankScanSettings(orders=(2, 30, 2)))
j_b = 150
T = j_b * rec.n_channels
print(f"T = {T}, advisory rank {randla.min_rank_percent(T):.2f}% "
      f"= {randla.sample_count(randla.min_rank_percent(T), T)} columns")

rows = cli.rankscan_rows(rec, cfg, [j_b], [5, 10, 15, 20], {"snr_db": 20, "seed": 0}, [0.6], oracle)
for r in rows:
    tag = ""
    if r["percent"] == r["advisory_percent"]:
        tag = " <- advisory"
    elif abs(r["percent"] - 0.6 * r["advisory_percent"]) < 1e-9:
        tag = " <- 0.6 x advisory"
    print(f"{r['percent']:6.2f}%  k={r['k']:4d}  matched {r['n_matched']:2d}/{r['n_reference']}{tag}")
