"""Gaussian multi-index models: leap decompositions and spectral recovery."""

__version__ = "0.1.0"

from .hermite import (
    HermiteTensor,
    Subspace,
    UnfoldedTensor,
    hermite_tensor,
    hermite_value,
    tensor_span,
    unfold,
)
from .models import (
    Dataset,
    PlantedModel,
    plant_subspace,
    read_dataset,
    sample,
    subspace_distance,
    write_dataset,
)

__all__ = [
    "HermiteTensor",
    "UnfoldedTensor",
    "Subspace",
    "hermite_value",
    "hermite_tensor",
    "unfold",
    "tensor_span",
    "PlantedModel",
    "Dataset",
    "plant_subspace",
    "sample",
    "subspace_distance",
    "write_dataset",
    "read_dataset",
]
