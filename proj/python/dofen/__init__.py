# Copyright 2026 The dofen Authors.
# SPDX-License-Identifier: Apache-2.0

"""DOFEN tabular engine."""

from ._dofen import (
    Checkpoint,
    ConfigError,
    DataError,
    DofenError,
    FormatError,
    NumericError,
    ShapeError,
    derive_shapes,
    train,
)

__all__ = [
    "Checkpoint",
    "ConfigError",
    "DataError",
    "DofenError",
    "FormatError",
    "NumericError",
    "ShapeError",
    "derive_shapes",
    "train",
]
