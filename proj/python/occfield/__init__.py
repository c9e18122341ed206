# Copyright Contributors to the occfield project
# SPDX-License-Identifier: Apache-2.0
"""Python access to the occfield scene simulator, models and metrics."""

from ._occfield import (
    Error,
    Field,
    Model,
    RuntimeFailure,
    Scene,
    ValidationError,
    average_rank,
    chamfer,
    run,
)

__all__ = [
    "Error",
    "Field",
    "Model",
    "RuntimeFailure",
    "Scene",
    "ValidationError",
    "average_rank",
    "chamfer",
    "run",
]
