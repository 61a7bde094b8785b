"""Concept pseudo-labeling, concept-embedding encoding and fuzzy rule learning."""

from .alignment import ConceptSet, filter_concepts
from .formats import Dataset, load_manifest, load_tensor, save_manifest, save_tensor
from .training import Hyperparams, Model, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ConceptSet",
    "Dataset",
    "Hyperparams",
    "Model",
    "evaluate",
    "filter_concepts",
    "load_manifest",
    "load_tensor",
    "save_manifest",
    "save_tensor",
    "train",
]
