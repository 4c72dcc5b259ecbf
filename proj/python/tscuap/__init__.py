"""Tiled universal adversarial perturbations (C++ core)."""

from ._core import (
    Error,
    FormatError,
    IoError,
    Model,
    NumericError,
    RegistryError,
    ShapeError,
    ValidationError,
    __version__,
    craft,
    evaluate,
    list_models,
    load_artifact,
    load_model,
    mask,
    norm,
    parse_epsilon,
    project,
    run_cli,
    sample_dataset,
    save_artifact,
    tile,
    tile_adjoint,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
