"""Conditional score-based generation of regular and irregular time series in a learned latent space."""
from .codec import GRUCodec, NCDECodec, load_codec, save_codec
from .config import ExperimentConfig, load_config, preset
from .data import SeriesBatch, NormStats, inject_missing, load_csv, synth_sines, window
from .evaluator import aggregate, discriminative_score, predictive_score
from .sampler import SamplerConfig, generate_latents, generate_sequence
from .score_net import ScoreNetConfig, ScoreNetState, new_score_state
from .sde import SdeKind, SdeSpec
from .trainer import TrainConfig, dsm_loss, pretrain_codec, train_score

__version__ = "0.1.0"
