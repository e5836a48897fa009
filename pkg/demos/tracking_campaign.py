"""A short monitoring campaign: the first session defines the reference modes,
later sessions are matched against it. Session s3 is recorded at only 5 dB;
the 3D diagram still recovers every mode there. Runs in ~40 s.
"""
from rsvdoma import pipeline, synth, track
from rsvdoma.config import PipelineConfig

cfg = PipelineConfig(f0=5.319)
sessions = [(20, 0), (20, 1), (25, 2), (5, 3), (15, 4)]

found = []
for snr, seed in sessions:
    rec = synth.simulate(synth.ShearFrameSpec(snr_db=snr, seed=seed, duration=200))
    found.append(pipeline.identify_record(rec, cfg).modes)
    print(f"session {seed} ({snr} dB): {len(found[-1])} clusters")

ref = track.ReferenceModeSet.from_modes(found[0])
hist = track.TrackedHistory(ref)
for (snr, seed), modes in zip(sessions, found):
    hist.add(track.track_session(ref, modes, session=f"s{seed}"))

print(f"\n{'mode':>6} {'f_ref':>8}  " + " ".join(f"{'s%d' % s:>7}" for _, s in sessions) + "  success")
for i, (r, ratio) in enumerate(zip(ref, track.success_ratio(hist))):
    cells = " ".join("   miss" if m is None else f"{m.f:7.3f}" for _, m in hist.series(i))
    print(f"{r.label:>6} {r.f:8.3f}  {cells}  {ratio:6.1f}%")
