"""Latent factor point processes: simulation, Fourier-Eigen embeddings and evaluation."""

__version__ = "0.1.0"

from .core import (ConfigError, Dataset, EstimatorConfig, EventSequence, ModelSpec, Record,
                   SpectralConfig, TransferBank, two_group_model)
from .covariance import CovarianceCurve, analytic_cross_covariance, estimate_cross_covariance
from .simulate import SimulationPlan, simulate_cohort, simulate_patient
from .spectral import Embedding, SpectralMatrix, fourier_eigen_embedding, population_embedding

__all__ = [
    "ConfigError", "CovarianceCurve", "Dataset", "Embedding", "EstimatorConfig", "EventSequence",
    "ModelSpec", "Record", "SimulationPlan", "SpectralConfig", "SpectralMatrix", "TransferBank",
    "analytic_cross_covariance", "estimate_cross_covariance", "fourier_eigen_embedding",
    "population_embedding", "simulate_cohort", "simulate_patient", "two_group_model",
]
