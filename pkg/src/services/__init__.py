"""Services package for constrained RL experiments."""

from src.services.experiment_service import ExperimentService, ValidationError

__all__ = ["ExperimentService", "ValidationError"]
