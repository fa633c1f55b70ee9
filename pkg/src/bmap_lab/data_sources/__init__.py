"""File-backed inputs and outputs."""

from .model_catalog import ModelCatalog, get_model_catalog
from .model_file import load_model, model_digest, model_from_dict, model_to_dict, save_model
from .results_writer import ResultsWriter, emit_plot_data

__all__ = [
    "ModelCatalog",
    "get_model_catalog",
    "load_model",
    "model_digest",
    "model_from_dict",
    "model_to_dict",
    "save_model",
    "ResultsWriter",
    "emit_plot_data",
]
