"""
Market states and snapshot sequences
====================================

Epoch matrices are clustered with k-means.  A snapshot clusters epochs
0..n-1; adding one epoch at a time and aligning labels between snapshots
shows when a new market state appears and whether it persists.
"""

from rrstates.market_states import ClusterConfig, detect_transition, snapshot_sequence, typical_state
from rrstates.spectral import Approach, reduced_rank_pipeline
from rrstates.synth import generate, two_regime_specs

# regime change after epoch 15
sp = generate(two_regime_specs(20, 16, 14, rho=0.7), 20, 42, seed=0)
r = sp.returns.returns
mats = [reduced_rank_pipeline(r[:, e * 42 : (e + 1) * 42], Approach.COVARIANCE) for e in range(30)]

seq = snapshot_sequence(mats, ClusterConfig(k=2), start_count=5)
for snap in seq.snapshots[10:14]:
    print(len(snap.labels), "epochs:", "".join(str(x) for x in snap.labels))

for t in detect_transition(seq):
    print(f"new state {t.label} at epoch {t.epoch} (snapshot of {t.n_epochs} epochs), persistent={t.persistent}")

last = seq.snapshots[-1]
for ts in typical_state(last, mats):
    print(f"state {ts.state}: {ts.member_count} epochs, C[0,1]={ts.matrix[0, 1]:+.2f} C[0,2]={ts.matrix[0, 2]:+.2f}")
