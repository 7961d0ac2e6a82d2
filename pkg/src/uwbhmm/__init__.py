"""Two-state HMM estimation of a person's bistatic delay from UWB channel
impulse responses, with threshold baselines, presence imaging and a
synthetic multipath simulator."""

__version__ = "0.1.0"

from .kernels import BACKEND
from .observe import ObservationVector, SampleSet, observe, symmetric_kl
from .hmm import (HmmParams, PosteriorTrack, baum_welch, estimate_k_star, forward_backward,
                  forward_backward_many, init_params)
from .baselines import ftc_estimate, ftc_sweep, zetik_estimate
from .sim import ClutterModel, LinkChannel, SceneGeometry
from .scenes import Scene, load_scene, realize
from .localize import PixelGrid, locate, presence_image_hard, presence_image_soft, sla_locate

__all__ = [
    "BACKEND", "ObservationVector", "SampleSet", "observe", "symmetric_kl", "HmmParams",
    "PosteriorTrack", "baum_welch", "estimate_k_star", "forward_backward", "forward_backward_many",
    "init_params", "ftc_estimate", "ftc_sweep", "zetik_estimate", "ClutterModel", "LinkChannel",
    "SceneGeometry", "Scene", "load_scene", "realize", "PixelGrid", "locate",
    "presence_image_hard", "presence_image_soft", "sla_locate",
]
