"""Bundled example models shipped under ``shared/models``."""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ..models.model_spec import ModelSpec
from .model_file import model_from_dict

logger = logging.getLogger(__name__)

# Path to shared data files
SHARED_DIR = Path(__file__).parent.parent.parent / "shared"
MODELS_DIR = SHARED_DIR / "models"


class ModelCatalog:
    """Name-indexed collection of the bundled model files."""

    def __init__(self, directory: Path = MODELS_DIR) -> None:
        self.directory = directory
        self._models: Dict[str, ModelSpec] = {}
        self._descriptions: Dict[str, str] = {}
        self._loaded = False

    def load(self) -> None:
        if self._loaded:
            return
        if not self.directory.exists():
            logger.warning(f"Model directory not found: {self.directory}")
            self._loaded = True
            return
        for path in sorted(self.directory.glob("*.json")):
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
            name = data.get("name") or path.stem
            self._models[name] = model_from_dict(data)
            self._descriptions[name] = data.get("description", "")
        logger.info(f"Loaded {len(self._models)} bundled models from {self.directory}")
        self._loaded = True

    def names(self) -> List[str]:
        self.load()
        return sorted(self._models)

    def get(self, name: str) -> Optional[ModelSpec]:
        self.load()
        return self._models.get(name)

    def entries(self) -> List[Tuple[str, str, int]]:
        """(name, description, d) for every bundled model."""
        self.load()
        return [(n, self._descriptions[n], self._models[n].d) for n in self.names()]


_catalog: Optional[ModelCatalog] = None


def get_model_catalog() -> ModelCatalog:
    """Get the singleton model catalog."""
    global _catalog
    if _catalog is None:
        _catalog = ModelCatalog()
        _catalog.load()
    return _catalog
