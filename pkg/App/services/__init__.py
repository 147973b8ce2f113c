"""
Service layer for experiment orchestration.

The service layer runs experiments on the calvin package and writes their
artifacts, separated from command-line parsing and output formatting.
"""

from .artifact_service import ArtifactService
from .experiment_service import ExperimentService

__all__ = [
    'ArtifactService',
    'ExperimentService'
]
