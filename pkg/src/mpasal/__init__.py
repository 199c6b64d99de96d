"""Two-stream video classification with pyramid attention and semantic adversarial learning.

Everything runs on a small numpy autodiff engine (:mod:`mpasal.autodiff`).
"""
from .autoencoder import FrozenError, LabelAutoencoder, TrainingFailure, train_autoencoder
from .backbone import Backbone, BackboneConfig, PyramidAttention, calibrate, network_forward
from .data import (DatasetManifest, SegmentSampler, SnippetBatch, VideoClip, build_snippet_batch,
                   compute_diff, generate_synthetic_dataset, load_clips, load_manifest,
                   sample_segments)
from .gradsuite import gradcheck_suite
from .sal import Classifier, Discriminator, LossReport, sal_step, toy_equilibrium
from .trainer import (Checkpoint, Metrics, TrainConfig, emit_reports, evaluate, fuse_streams,
                      train_stream)

__version__ = "0.1.0"
