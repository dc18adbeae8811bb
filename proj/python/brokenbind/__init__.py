# SPDX-License-Identifier: Apache-2.0
"""Bind modalities across mismatched datasets.

Thin re-export of the compiled ``_brokenbind`` extension.
"""

from ._brokenbind import (  # noqa: F401
    ConfigError,
    DataError,
    NumericalError,
    clip_loss_one_side,
    config_hash,
    parse_flow,
    pinv,
    project_2d,
    pseudo_embeddings,
    retrieval_map,
    svd,
    sym_cross_data,
    sym_cross_modal,
    train_and_evaluate,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "clip_loss_one_side",
    "config_hash",
    "parse_flow",
    "pinv",
    "project_2d",
    "pseudo_embeddings",
    "retrieval_map",
    "svd",
    "sym_cross_data",
    "sym_cross_modal",
    "train_and_evaluate",
]
