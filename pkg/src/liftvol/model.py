"""The full trainable model: predict/update networks, post-filter, entropy
model and the log quantization step, all in one ParamStore."""

from __future__ import annotations

import numpy as np

from .entropy import FactorizedCDF
from .lifting import LiftConfig, LiftingTransform
from .nn3d import LiftNet, ParamStore, PostNet, params_load

LEVELS = 2
N_CLASSES = 7 * LEVELS + 1
LOSSLESS_SCALE = 255.0
DEFAULT_QS = 1.0 / 255.0


def model_specs():
    return (
        LiftNet.param_specs("predict")
        + LiftNet.param_specs("update")
        + PostNet.param_specs("post")
        + FactorizedCDF.param_specs("entropy", N_CLASSES)
        + [("log_qs", ())]
    )


class Model:
    def __init__(self, store: ParamStore | None = None):
        self.store = store if store is not None else ParamStore(model_specs())
        self.predict = LiftNet(self.store, "predict")
        self.update = LiftNet(self.store, "update")
        self.post = PostNet(self.store, "post")
        self.entropy = FactorizedCDF(self.store, "entropy", N_CLASSES)

    @classmethod
    def create(cls, seed=0, qs=DEFAULT_QS, entropy_scale=10.0) -> Model:
        m = cls()
        rng = np.random.default_rng(seed)
        m.predict.init(rng)
        m.update.init(rng)
        m.post.init(rng)
        m.entropy.init(entropy_scale)
        m.qs = qs
        return m

    @classmethod
    def load(cls, path) -> Model:
        return cls(params_load(path, ParamStore(model_specs())))

    def save(self, path) -> bytes:
        self.store.save(path)
        return self.hash

    @property
    def hash(self) -> bytes:
        return self.store.hash

    @property
    def log_qs(self) -> float:
        return float(self.store.view("log_qs"))

    @property
    def qs(self) -> float:
        return float(np.exp(self.log_qs))

    @qs.setter
    def qs(self, value: float):
        if not value > 0:
            raise ValueError("quantization step must be positive")
        self.store.view("log_qs")[...] = np.log(value)

    def lift_config(self, lossless: bool) -> LiftConfig:
        if lossless:
            return LiftConfig(levels=LEVELS, mode="integer", scale=LOSSLESS_SCALE)
        return LiftConfig(levels=LEVELS, mode="float", scale=1.0)

    def transform(self, lossless=False, cfg: LiftConfig | None = None) -> LiftingTransform:
        return LiftingTransform(self.predict, self.update, cfg or self.lift_config(lossless))

    def copy(self) -> Model:
        other = Model()
        other.store.values[...] = self.store.values
        return other
