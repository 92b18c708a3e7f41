"""Tests for run-configuration parsing, hashing, and stage seeds."""

import xml.etree.ElementTree as ET

import pytest

from advrsa import config as C
from advrsa import figures as F


class TestParsing:
    def test_defaults_complete(self):
        cfg = C.default_config()
        assert set(cfg.values) == set(C.SCHEMA)
        assert cfg.seed == 0
        assert cfg.re_k == 40
        assert cfg.an_lambda == 0.05
        assert cfg.an_match_thresholds is True

    def test_parse_overrides_and_keeps_defaults(self):
        cfg = C.parse_config_text("seed=7\nre_k=16\n# comment\n\nai_lambda=0.2\n")
        assert cfg.seed == 7
        assert cfg.re_k == 16
        assert cfg.ai_lambda == 0.2
        assert cfg.epochs == C.default_config().epochs

    def test_unknown_key_rejected_with_location(self):
        with pytest.raises(ValueError, match=r"<config>:2: unknown key 'bogus'"):
            C.parse_config_text("seed=1\nbogus=3\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ValueError, match="duplicate key 'seed'"):
            C.parse_config_text("seed=1\nseed=2\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ValueError, match="bad value for 'epochs'"):
            C.parse_config_text("epochs=many\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="expected key=value"):
            C.parse_config_text("this is not a config line\n")

    def test_bool_parsing(self):
        assert C.parse_config_text("standardize_features=false\n").standardize_features is False
        assert C.parse_config_text("standardize_features=true\n").standardize_features is True
        with pytest.raises(ValueError, match="bad value"):
            C.parse_config_text("standardize_features=maybe\n")

    def test_round_trip_through_resolved_text(self):
        cfg = C.parse_config_text("seed=3\nan_overshoot_cap=0.00025\nout_dir=x\n")
        again = C.parse_config_text(cfg.resolved_text())
        assert again.values == cfg.values

    def test_replaced_validates_keys(self):
        cfg = C.default_config()
        assert cfg.replaced(seed=9).seed == 9
        assert cfg.replaced(seed="9").seed == 9        # string coercion
        with pytest.raises(ValueError, match="unknown config keys"):
            cfg.replaced(nope=1)


class TestHashing:
    def test_hash_stable_and_hex(self):
        h = C.default_config().config_hash()
        assert h == C.default_config().config_hash()
        assert len(h) == 16
        int(h, 16)

    def test_hash_changes_with_analysis_keys(self):
        base = C.default_config()
        assert base.replaced(seed=1).config_hash() != base.config_hash()
        assert base.replaced(re_k=8).config_hash() != base.config_hash()

    def test_out_dir_exempt_from_hash(self):
        base = C.default_config()
        assert base.replaced(out_dir="elsewhere").config_hash() == base.config_hash()

    def test_written_file_carries_hash(self, tmp_path):
        cfg = C.default_config()
        path = tmp_path / "resolved.cfg"
        C.write_resolved(path, cfg)
        text = path.read_text()
        assert f"# config_hash={cfg.config_hash()}" in text
        assert C.parse_config_text(text).values == cfg.values


class TestStageSeeds:
    def test_distinct_across_stages_and_masters(self):
        seen = set()
        for master in range(50):
            for stage in C.STAGE_CODES:
                seen.add(C.stage_seed(master, stage))
        assert len(seen) == 50 * len(C.STAGE_CODES)

    def test_config_helper_matches_function(self):
        cfg = C.default_config().replaced(seed=5)
        assert cfg.stage_seed("network") == C.stage_seed(5, "network")

    def test_unknown_stage_rejected(self):
        with pytest.raises(KeyError):
            C.stage_seed(0, "nope")


class TestFigures:
    def test_well_formed_svg_with_expected_bars(self):
        svg = F.svg_grouped_bars(["a", "b", "c"],
                                 {"s1": [0.1, 0.5, 0.3], "s2": [0.2, 0.4, 0.6]},
                                 title="demo", ylabel="r")
        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")
        rects = [el for el in root.iter() if el.tag.endswith("rect")]
        # background + 6 bars + 2 legend swatches
        assert len(rects) == 1 + 6 + 2

    def test_deterministic_bytes(self):
        args = (["x", "y"], {"only": [1.0, -0.5]})
        assert F.svg_grouped_bars(*args) == F.svg_grouped_bars(*args)

    def test_negative_values_straddle_baseline(self):
        svg = F.svg_grouped_bars(["x"], {"s": [-0.4]})
        root = ET.fromstring(svg)
        bars = [el for el in root.iter()
                if el.tag.endswith("rect") and el.get("fill") == F.PALETTE[0]
                and el.get("width") != "12"]    # exclude the legend swatch
        assert len(bars) == 1
        assert float(bars[0].get("height")) > 0

    def test_error_whiskers_drawn(self):
        svg = F.svg_grouped_bars(["x"], {"s": [0.5]},
                                 errors={"s": [(0.4, 0.6)]})
        root = ET.fromstring(svg)
        lines = [el for el in root.iter()
                 if el.tag.endswith("line") and el.get("stroke") == "#333333"]
        assert len(lines) == 3 + 1     # whisker spine + two caps + zero axis

    def test_validation_errors(self):
        with pytest.raises(ValueError, match="at least one category"):
            F.svg_grouped_bars([], {"s": []})
        with pytest.raises(ValueError, match="has 1 values"):
            F.svg_grouped_bars(["a", "b"], {"s": [1.0]})
        with pytest.raises(ValueError, match="unknown series"):
            F.svg_grouped_bars(["a"], {"s": [1.0]}, errors={"t": [(0, 1)]})

    def test_title_escaped(self):
        svg = F.svg_grouped_bars(["a"], {"s": [1.0]}, title="a < b & c")
        assert "a &lt; b &amp; c" in svg
        ET.fromstring(svg)
