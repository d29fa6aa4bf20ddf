"""Desk-scale time-series captioning: joint text + embedding encoder, retrieval denoiser, caption decoder."""

from .autoencoder import Autoencoder, AutoencoderConfig, canonicalize, train_autoencoder
from .datagen import CaptionedPair, generate_dataset, inject_mispairs, make_synth_dataset
from .decoder import SamplingConfig, TslmModel, generate_captions, sample_caption, train_tslm, truncate_distribution
from .denoiser import DenoiserModel, filter_pairs, score_pairs, score_stats, train_denoiser
from .encoder import EncoderConfig, MultiModalEncoder, encode_joint
from .evalkit import MetricsReport, evaluate_run, rouge_l, rouge_n, tslm_score
from .persistence import PipelineConfig, load_checkpoint, read_pairs, save_checkpoint, write_pairs
from .textrep import Vocabulary, build_vocab, phase_tag

__version__ = "0.1.0"

__all__ = [
    "Autoencoder",
    "AutoencoderConfig",
    "CaptionedPair",
    "DenoiserModel",
    "EncoderConfig",
    "MetricsReport",
    "MultiModalEncoder",
    "PipelineConfig",
    "SamplingConfig",
    "TslmModel",
    "Vocabulary",
    "build_vocab",
    "canonicalize",
    "encode_joint",
    "evaluate_run",
    "filter_pairs",
    "generate_captions",
    "generate_dataset",
    "inject_mispairs",
    "load_checkpoint",
    "make_synth_dataset",
    "phase_tag",
    "read_pairs",
    "rouge_l",
    "rouge_n",
    "sample_caption",
    "save_checkpoint",
    "score_pairs",
    "score_stats",
    "train_autoencoder",
    "train_denoiser",
    "train_tslm",
    "truncate_distribution",
    "tslm_score",
    "write_pairs",
]
