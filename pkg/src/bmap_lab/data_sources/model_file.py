"""JSON model files: schema, parsing and serialization."""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import aiofiles
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..errors import ModelValidationError
from ..models.model_spec import DiscreteLaw, ModelSpec, MotionSpec, TypeSpec, validate

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
AtomList = List[List[float]]


class TypeEntry(BaseModel):
    """One particle type in a model file."""

    model_config = ConfigDict(extra="forbid")

    sigma2: float = Field(0.0, ge=0.0)
    drift: float = 0.0
    jump_rate: float = Field(0.0, ge=0.0)
    jump_atoms: AtomList = Field(default_factory=lambda: [[0.0, 1.0]])
    branch_rate: float = Field(0.0, ge=0.0)
    offspring: AtomList = Field(default_factory=lambda: [[1.0, 1.0]])


class ModelFile(BaseModel):
    """Top-level model document: ``{d, types, q, u_laws}`` plus optional name/description."""

    model_config = ConfigDict(extra="forbid")

    name: str = ""
    description: str = ""
    d: int = Field(..., ge=1)
    types: List[TypeEntry]
    q: List[List[float]]
    u_laws: Optional[List[List[AtomList]]] = None


def _law(pairs: AtomList, label: str) -> DiscreteLaw:
    for pair in pairs:
        if len(pair) != 2:
            raise ModelValidationError([f"{label}: atoms must be [value, probability] pairs"])
    return DiscreteLaw.from_pairs(pairs)


def model_from_document(document: ModelFile) -> ModelSpec:
    """Build and validate a ModelSpec from a parsed document."""
    types = tuple(
        TypeSpec(
            motion=MotionSpec(
                sigma2=entry.sigma2,
                drift=entry.drift,
                jump_rate=entry.jump_rate,
                jump_law=_law(entry.jump_atoms, f"type {i} jump_atoms"),
            ),
            branch_rate=entry.branch_rate,
            offspring=_law(entry.offspring, f"type {i} offspring"),
        )
        for i, entry in enumerate(document.types)
    )
    u_laws = None
    if document.u_laws is not None:
        if len(document.u_laws) != document.d or any(len(r) != document.d for r in document.u_laws):
            raise ModelValidationError([f"u_laws must be a {document.d}x{document.d} array of laws"])
        u_laws = tuple(
            tuple(_law(cell, f"u_laws[{i}][{j}]") for j, cell in enumerate(row))
            for i, row in enumerate(document.u_laws)
        )
    model = ModelSpec(
        d=document.d,
        types=types,
        q=tuple(tuple(row) for row in document.q),
        u_laws=u_laws,
        name=document.name,
    )
    violations = validate(model)
    if violations:
        raise ModelValidationError(violations)
    return model


def model_from_dict(data: Dict[str, Any]) -> ModelSpec:
    """Parse a decoded JSON object; schema errors become ModelValidationError."""
    try:
        document = ModelFile.model_validate(data)
    except ValidationError as e:
        messages = [
            f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}" for err in e.errors()
        ]
        raise ModelValidationError(messages) from e
    return model_from_document(document)


def _pairs(law: DiscreteLaw) -> AtomList:
    return [[v, p] for v, p in law.atoms]


def model_to_dict(model: ModelSpec, description: str = "") -> Dict[str, Any]:
    """Inverse of ``model_from_dict``."""
    data: Dict[str, Any] = {"name": model.name}
    if description:
        data["description"] = description
    data["d"] = model.d
    data["types"] = [
        {
            "sigma2": t.motion.sigma2,
            "drift": t.motion.drift,
            "jump_rate": t.motion.jump_rate,
            "jump_atoms": _pairs(t.motion.jump_law),
            "branch_rate": t.branch_rate,
            "offspring": _pairs(t.offspring),
        }
        for t in model.types
    ]
    data["q"] = [list(row) for row in model.q]
    data["u_laws"] = [
        [_pairs(model.u_law(i, j)) for j in range(model.d)] for i in range(model.d)
    ]
    return data


def model_digest(model: ModelSpec) -> str:
    """sha256 of the canonical JSON form."""
    canonical = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


async def load_model(path: PathLike) -> ModelSpec:
    """
    Read and validate a model file.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ModelValidationError: If the document or the model is invalid
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Model file not found: {path}")
    async with aiofiles.open(path, "r", encoding="utf-8") as f:
        text = await f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelValidationError([f"{path.name}: invalid JSON ({e.msg} at line {e.lineno})"]) from e
    model = model_from_dict(data)
    logger.info(f"Loaded model '{model.name or path.stem}' (d={model.d}) from {path}")
    return model


async def save_model(model: ModelSpec, path: PathLike, description: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, "w", encoding="utf-8") as f:
        await f.write(json.dumps(model_to_dict(model, description), indent=2) + "\n")
    return path
