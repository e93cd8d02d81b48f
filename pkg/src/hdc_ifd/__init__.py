"""Hyperdimensional fault classification under transferable adversarial attacks."""

from ._backend import BACKEND
from .attacks import AttackConfig, Method, bim, craft, fgsm, mim, rom_train
from .bench import RunConfig, accuracy, compromise, improvement, mean_compromise, run_pipeline
from .data import SignalDataset, load_csv, normalize, save_csv, subsample_str, synth_generate, window
from .hdc import (EncoderBasis, HdcClassifier, HdcConfig, HdcModel, Variant, cosine_similarity,
                  encode, new_basis, predict, retrain, train_initial)
from .substitute import NetworkConfig, SubstituteNet, TrainConfig, backward, evaluate, forward, init_net, loss

__version__ = "0.1.0"
