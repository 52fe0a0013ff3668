"""Trainable 3-D lifting-wavelet codec for 8-bit volumes."""

from .codec import CodecConfig, decode, encode
from .errors import (
    CorruptModelError,
    CorruptStreamError,
    DomainError,
    EmptyDatasetError,
    LiftvolError,
    NotIW3DError,
    StateError,
    StreamError,
    TrainingDivergedError,
    UnsupportedVersionError,
    WrongModelError,
)
from .gradcheck import grad_check
from .lifting import LiftConfig, LiftingTransform
from .metrics import bd_psnr, psnr, ssim
from .model import Model
from .trainer import TrainConfig, train_loop
from .volume import SubbandPyramid, load_volume, save_volume

__version__ = "0.1.0"
