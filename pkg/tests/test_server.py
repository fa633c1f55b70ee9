"""Tests for the MCP tool functions."""

import math
import pytest
from pathlib import Path
import sys

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from bmap_lab import server


def tool(name: str):
    """The plain coroutine behind a registered tool."""
    registered = getattr(server, name)
    return getattr(registered, "fn", registered)


class TestModelTools:
    """Tests for catalog and validation tools."""

    async def test_list_bundled_models(self):
        result = await tool("list_bundled_models")()
        assert result["count"] == 7
        names = {m["name"]: m["d"] for m in result["models"]}
        assert names["champneys"] == 2
        assert names["bbm_single"] == 1

    async def test_validate_model(self):
        document = {
            "d": 1,
            "types": [{"sigma2": 1.0, "branch_rate": 1.0, "offspring": [[2, 1.0]]}],
            "q": [[0.0]],
        }
        result = await tool("validate_model")(document)
        assert result["valid"] is True
        assert result["model"]["types"][0]["offspring"] == [[2.0, 1.0]]

    async def test_validate_model_violations(self):
        document = {
            "d": 2,
            "types": [{"sigma2": 1.0}, {"sigma2": 1.0}],
            "q": [[-1.0, 2.0], [1.0, -1.0]],
        }
        result = await tool("validate_model")(document)
        assert result["valid"] is False
        assert any("sum to 0" in v for v in result["violations"])


class TestAnalysisTools:
    """Tests for spectral, FKPP and experiment tools."""

    async def test_spectral_report(self):
        result = await tool("get_spectral_report")("bbm_single")
        assert result["regime"]["theta_star"] == pytest.approx(math.sqrt(2.0))
        assert result["regime_of_theta"] == "critical"
        assert result["map_mean_velocity"] == pytest.approx(0.0)

    async def test_spectral_report_missing_model(self):
        result = await tool("get_spectral_report")("no_such_model")
        assert result["error"] == "model_not_found"

    async def test_spectral_report_without_growth(self, tmp_path):
        path = tmp_path / "dying.json"
        path.write_text(
            '{"d": 1, "types": [{"sigma2": 1.0, "branch_rate": 1.0, '
            '"offspring": [[0, 0.5], [1, 0.5]]}], "q": [[0.0]]}'
        )
        result = await tool("get_spectral_report")(str(path))
        assert result["error"] == "assumption_failed"

    async def test_estimate_velocity(self):
        """BBM leftmost particle lags -sqrt(2) by a logarithmic correction at short horizons."""
        result = await tool("estimate_velocity")("bbm_single", horizon=4.0, replicas=30, seed=3)
        assert result["expected"] == pytest.approx(-math.sqrt(2.0))
        assert result["stderr"] > 0.0
        assert -math.sqrt(2.0) - 0.4 <= result["speed_hat"] <= -0.4

    async def test_estimate_velocity_missing_model(self):
        result = await tool("estimate_velocity")("no_such_model")
        assert result["error"] == "model_not_found"

    async def test_fkpp_bad_kind(self):
        result = await tool("fkpp_front_speed")("bbm_single", kind="constant")
        assert result["error"] == "fkpp_failed"

    async def test_run_named_experiment(self, tmp_path):
        options = {"command": "spectral-report", "model": "champneys", "out": str(tmp_path)}
        result = await tool("run_named_experiment")(options)
        assert result["gate_passed"] is True
        assert "manifest.json" in result["files"]
        assert (tmp_path / "spectral_report.json").exists()

    async def test_run_named_experiment_invalid_options(self):
        result = await tool("run_named_experiment")({"command": "velocity", "model": "bbm_single", "replicas": 0})
        assert result["error"] == "invalid_options"
