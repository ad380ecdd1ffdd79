"""Accuracy of a sparsifier as a function of the number of sampled rows.

The default budget is conservative: at desk scale it exceeds m, so the
model keeps every row.  A budget override shows the actual trade-off
between support size and audited error.
"""

from glms import ProblemInstance, SparsifyConfig, audit_sparsifier, huber, sparsify
from glms.io import make_instance

m, n = 20000, 5
A, _, _ = make_instance("scale-separated", m, n, seed=1)
inst = ProblemInstance(A, huber(1.0))

cfg = SparsifyConfig(0.2, 1.0, 1e6, seed=1, audit=False)
full = sparsify(inst, cfg)
print(f"default budget M={full.stats['M']} for m={m}: support {full.support}")

for budget in (500, 2000, 8000, 32000):
    cfg = SparsifyConfig(0.2, 1.0, 1e6, seed=1, budget=budget, audit=False)
    model = sparsify(inst, cfg)
    rep = audit_sparsifier(inst, model, n_dirs=32, n_scales=12, seed=2)
    print(f"budget {budget:6d}: support {model.support:6d}, max rel error {rep.max_rel_error:.4f}, "
          f"sensitivity sum / n {rep.C_xi:.2f}")
