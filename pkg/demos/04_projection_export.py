"""Save a condensed set, reload it, and export a 2-D PCA projection.

Shows the persistence layer: the CND container round-trips the
synthetic images bit-exactly, and the projection CSV places real and
synthetic points in a shared principal-component basis for plotting.

Run with: python demos/04_projection_export.py
"""

import tempfile
from pathlib import Path

import numpy as np

from condensery.bilevel import CondenseConfig, run_condense
from condensery.data import export_projection_csv, load_synthetic, make_blob_split, \
    save_synthetic
from condensery.models import ConvNetSpec

train, _ = make_blob_split(num_classes=3, n_train=40, n_test=10,
                           shape=(1, 8, 8), spread=0.15, seed=0)
arch = ConvNetSpec(blocks=2, channels=4, input_shape=(1, 8, 8), num_classes=3)
cfg = CondenseConfig(ipc=2, n_per_class=16, gamma=5, l_out=5, l_in=10,
                     max_outer_iters=20, query_size=30, seed=0)
synth = run_condense(train, arch, cfg)

out = Path(tempfile.mkdtemp())
path = out / "synthetic.cnd"
save_synthetic(synth, path)
back = load_synthetic(path)
print("round trip bit-exact:",
      np.array_equal(back.images.values, synth.images.values))

csv_path = out / "projection.csv"
export_projection_csv(train.images.reshape(len(train), -1),
                      back.images.values.reshape(len(back.labels), -1),
                      train.labels, back.labels, csv_path)
lines = csv_path.read_text().splitlines()
print(f"wrote {csv_path} with {len(lines) - 1} points")
print("\n".join(lines[:4]))
print("...")
# The synthetic rows come last, one per (class, ipc) slot.
print("\n".join(lines[-6:]))
