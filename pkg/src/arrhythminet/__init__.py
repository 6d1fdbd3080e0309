"""Lightweight depthwise-separable 1D CNNs for ECG beat classification."""

__version__ = "0.1.0"

from .estimator import ArrhythmiNetClassifier
from .metrics import EvalReport, emit_report, evaluate
from .models import ArrhythmiNet, ModelSpec, build, cost_report, count_macs, count_params, make_spec, predict
from .serialization import deserialize, serialize
from .training import TrainConfig, train
from .wavelet import BeatNormalizer, WaveletDenoiser, denoise, dwt, idwt, normalize
from .xai import grad_cam, shap_exact, shap_sampled

__all__ = [
    "ArrhythmiNet",
    "ArrhythmiNetClassifier",
    "BeatNormalizer",
    "EvalReport",
    "ModelSpec",
    "TrainConfig",
    "WaveletDenoiser",
    "build",
    "cost_report",
    "count_macs",
    "count_params",
    "denoise",
    "deserialize",
    "dwt",
    "emit_report",
    "evaluate",
    "grad_cam",
    "idwt",
    "make_spec",
    "normalize",
    "predict",
    "serialize",
    "shap_exact",
    "shap_sampled",
    "train",
]
