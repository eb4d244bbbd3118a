"""Tests for the protocol constant table."""

import ast
from pathlib import Path

import pytest
from pydantic import ValidationError

from vidsgg.constants import CONSTANTS, ProtocolConstants, constants

PACKAGE_DIR = Path(__file__).resolve().parent.parent / "src" / "vidsgg"
ALLOWED_LITERALS = {0, 1, -1}


def _literal_value(node: ast.expr) -> object:
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub) and isinstance(node.operand, ast.Constant):
        return -node.operand.value  # type: ignore[operator]
    if isinstance(node, ast.Constant):
        return node.value
    return None


class TestConstants:
    """Tests for constant values and their provenance notes."""

    def test_clip_sampling(self) -> None:
        """Test clip length and stride."""
        assert constants().T == 8
        assert constants().v == 4

    def test_linking_constants(self) -> None:
        """Test segment length, interval and sampling."""
        assert constants().seg_len == 30
        assert constants().seg_interval == 15
        assert constants().sample_stride == 4

    def test_evaluation_caps(self) -> None:
        """Test per-pair caps, frame limit and cut-offs."""
        assert constants().k_per_pair_ag == (6, 7)
        assert constants().k_per_pair_vidvrd == 20
        assert constants().frame_limit == 50
        assert constants().hit_iou == 0.5
        assert constants().viou == 0.5
        assert constants().recall_ks == (10, 20, 50, 100)
        assert constants().tagging_ks == (1, 5, 10)

    def test_accessor_returns_shared_table(self) -> None:
        """Test that constants() returns the module singleton."""
        assert constants() is CONSTANTS

    def test_every_constant_has_citation(self) -> None:
        """Test that each field carries a provenance note."""
        for name in ProtocolConstants.model_fields:
            assert CONSTANTS.citation(name), name

    def test_citation_quotes_value(self) -> None:
        """Test a few notes against their values."""
        assert "T=8" in CONSTANTS.citation("T")
        assert "30 frames" in CONSTANTS.citation("seg_len")
        assert "50" in CONSTANTS.citation("frame_limit")

    def test_unknown_citation_raises(self) -> None:
        """Test that unknown names raise KeyError."""
        with pytest.raises(KeyError):
            CONSTANTS.citation("warp_speed")

    def test_table_is_frozen(self) -> None:
        """Test that constants cannot be reassigned."""
        with pytest.raises(ValidationError):
            CONSTANTS.T = 16  # type: ignore[misc]


class TestNoMagicDefaults:
    """Numeric defaults in signatures must come from the constant table."""

    def test_function_defaults(self) -> None:
        """Test that no function default is a bare numeric literal other than 0, 1 or -1."""
        offenders = []
        for path in sorted(PACKAGE_DIR.rglob("*.py")):
            if path.name == "constants.py":
                continue
            tree = ast.parse(path.read_text(encoding="utf-8"))
            for node in ast.walk(tree):
                if not isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.Lambda)):
                    continue
                defaults = list(node.args.defaults) + [d for d in node.args.kw_defaults if d is not None]
                for default in defaults:
                    value = _literal_value(default)
                    if isinstance(value, bool) or not isinstance(value, (int, float)):
                        continue
                    if value not in ALLOWED_LITERALS:
                        offenders.append(f"{path.name}:{default.lineno} default {value}")
        assert offenders == []
