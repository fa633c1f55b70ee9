"""Tests for model files, the bundled catalog and the results writer."""

import json
import math
import pytest
import pandas as pd
from pathlib import Path
import sys

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from bmap_lab.data_sources.model_catalog import ModelCatalog, get_model_catalog
from bmap_lab.data_sources.model_file import (
    load_model,
    model_digest,
    model_from_dict,
    model_to_dict,
    save_model,
)
from bmap_lab.data_sources.results_writer import MANIFEST_NAME, ResultsWriter, emit_plot_data, to_json
from bmap_lab.errors import ModelValidationError

BUNDLED = [
    "bbm_death",
    "bbm_single",
    "champneys",
    "general_map",
    "on_off_variant_1",
    "on_off_variant_2",
    "two_type_symmetric",
]


@pytest.fixture
def two_type_document():
    return {
        "name": "pair",
        "d": 2,
        "types": [
            {"sigma2": 1.0, "branch_rate": 1.0, "offspring": [[2, 1.0]]},
            {"sigma2": 0.5, "drift": 0.1, "branch_rate": 0.5, "offspring": [[0, 0.5], [2, 0.5]]},
        ],
        "q": [[-1.0, 1.0], [1.0, -1.0]],
    }


class TestModelCatalog:
    """Tests for the bundled model catalog."""

    def test_bundled_models(self):
        catalog = get_model_catalog()
        assert catalog.names() == BUNDLED
        assert get_model_catalog() is catalog

    def test_entries(self):
        entries = dict((name, d) for name, _, d in get_model_catalog().entries())
        assert entries["bbm_single"] == 1
        assert entries["general_map"] == 2

    def test_unknown_name(self):
        assert get_model_catalog().get("nope") is None

    def test_missing_directory(self, tmp_path):
        catalog = ModelCatalog(tmp_path / "absent")
        assert catalog.names() == []


class TestModelFile:
    """Tests for parsing and serializing model documents."""

    def test_defaults(self, two_type_document):
        model = model_from_dict(two_type_document)
        assert model.d == 2
        assert model.types[0].motion.jump_rate == 0.0
        assert model.u_law(0, 1).is_point_mass_at_zero

    def test_unknown_key_rejected(self, two_type_document):
        two_type_document["types"][0]["colour"] = "red"
        with pytest.raises(ModelValidationError) as info:
            model_from_dict(two_type_document)
        assert any("colour" in v for v in info.value.violations)

    def test_invalid_model_lists_violations(self, two_type_document):
        two_type_document["q"] = [[-1.0, 0.5], [1.0, -1.0]]
        with pytest.raises(ModelValidationError) as info:
            model_from_dict(two_type_document)
        assert any("sum to 0" in v for v in info.value.violations)

    def test_malformed_atoms(self, two_type_document):
        two_type_document["types"][0]["offspring"] = [[2, 0.5, 0.5]]
        with pytest.raises(ModelValidationError):
            model_from_dict(two_type_document)

    def test_digest_is_canonical(self):
        model = get_model_catalog().get("general_map")
        assert model_digest(model) == model_digest(model_from_dict(model_to_dict(model)))
        assert model_digest(model) != model_digest(get_model_catalog().get("champneys"))

    async def test_save_and_load(self, tmp_path, two_type_document):
        model = model_from_dict(two_type_document)
        path = await save_model(model, tmp_path / "nested" / "pair.json", description="test pair")
        loaded = await load_model(path)
        assert model_digest(loaded) == model_digest(model)
        assert json.loads(path.read_text())["description"] == "test pair"

    async def test_load_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            await load_model(tmp_path / "missing.json")

    async def test_load_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ModelValidationError, match="invalid JSON"):
            await load_model(path)


class TestResultsWriter:
    """Tests for ResultsWriter and plot-data emission."""

    async def test_csv_json_and_manifest(self, tmp_path):
        writer = ResultsWriter(tmp_path / "out")
        await writer.write_csv("table.csv", [{"a": 1, "b": 2.5}])
        await writer.write_json("summary.json", {"speed": 1.5})
        await writer.write_manifest("velocity", {"seed": 3}, "abc", {"master_seed": 3}, 0.1)

        assert (tmp_path / "out" / "table.csv").read_text() == "a,b\n1,2.5\n"
        manifest = json.loads((tmp_path / "out" / MANIFEST_NAME).read_text())
        assert manifest["command"] == "velocity"
        assert manifest["model_sha256"] == "abc"
        assert manifest["outputs"] == ["summary.json", "table.csv"]
        assert "git_revision" in manifest and "bmap_lab_version" in manifest

    def test_to_json_non_finite(self):
        data = json.loads(to_json({"a": math.inf, "b": [math.nan, -math.inf], "c": 1.0}))
        assert data == {"a": "inf", "b": ["nan", "-inf"], "c": 1.0}

    async def test_emit_plot_data(self, tmp_path):
        frame = pd.DataFrame(
            {"replica": [1, 0, 0], "t": [1.0, 1.0, 0.0], "W": [0.9, 1.1, 1.0], "Z": [0.1, 0.2, 0.0]}
        )
        frame.to_csv(tmp_path / "martingales.csv", index=False)
        produced = await emit_plot_data(tmp_path)
        assert [p.name for p in produced] == ["plot_martingales.csv"]
        tidy = pd.read_csv(tmp_path / "plot_martingales.csv")
        assert list(tidy.columns) == ["t", "replica", "W", "Z"]
        assert tidy["replica"].tolist() == [0, 0, 1]

    async def test_emit_plot_data_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            await emit_plot_data(tmp_path / "absent")
        with pytest.raises(FileNotFoundError, match="No plottable"):
            await emit_plot_data(tmp_path)
