"""Rate-distortion training on a handful of synthetic cubes, then a check
that the trained model codes held-out volumes with fewer bits.

Takes about a minute on one core.

    python3 demos/04_train_small.py
"""

import numpy as np

from liftvol import CodecConfig, Model, TrainConfig, encode, train_loop
from liftvol.codec import bits_per_voxel
from liftvol.synth import synth_cube

train = [synth_cube((16, 16, 16), seed=s) for s in range(8)]
held_out = [synth_cube((16, 16, 16), seed=1000 + s) for s in range(4)]


def log(step, terms):
    if step == 1 or step % 50 == 0:
        print(f"step {step:4d}  rate {terms.rate:.3f} bpp")


cfg = TrainConfig(mode="lossless", lr=1e-4, batch_size=4, cube=8, steps=200, seed=0)
trained, history = train_loop(train, cfg, log=log)


def mean_bpp(model):
    lossless = CodecConfig(mode="lossless")
    return np.mean([bits_per_voxel(encode(v, model, lossless), v.shape) for v in held_out])


before, after = mean_bpp(Model.create(seed=0)), mean_bpp(trained)
print(f"\nheld-out lossless: {before:.3f} -> {after:.3f} bits/voxel")
