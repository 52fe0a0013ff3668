"""A freshly created model is the lazy wavelet: every subband is just a
strided slice of the input.  Training moves it away from that starting point.

    python3 demos/01_lazy_wavelet.py
"""

import numpy as np

from liftvol import LiftConfig, Model

v = np.arange(8 * 8 * 8, dtype=np.float64).reshape(8, 8, 8)
model = Model.create(seed=0)
pyr = model.transform(cfg=LiftConfig(levels=1)).forward(v)

print("band  shape      first values")
for label, level, band in pyr:
    print(f"{label}@{level}  {band.shape}  {band.ravel()[:4]}")

# with zero final layers the predictor and updater contribute nothing,
# so the LLL band holds the even-indexed voxels along every axis
assert np.array_equal(pyr.arrays[0], v[::2, ::2, ::2])
print("\nLLL == v[::2, ::2, ::2]: the transform is a pure reindexing")
