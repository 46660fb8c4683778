"""Cost audits: row conventions, scaling, and measured-vs-formula agreement."""

import numpy as np
import pytest

from hatnet.analysis import (
    cost_rows,
    count_flops,
    count_params,
    reconcile,
)
from hatnet.attention import complexity_hmhsa, complexity_mhsa
from hatnet.network import build_model, named_config, toy_config
from hatnet.tensor import ConfigError


def rows_by_name(rows):
    return {r.name: r for r in rows}


class TestParamCounting:
    def test_config_and_model_routes_agree(self):
        cfg = toy_config()
        assert count_params(cfg) == count_params(build_model(cfg, seed=0))

    def test_equals_sum_of_live_tensors(self):
        m = build_model(toy_config(), seed=0)
        assert count_params(m) == sum(t.data.size for t in m.params.values())

    def test_rejects_other_types(self):
        with pytest.raises(TypeError):
            count_params("tiny")


class TestRowConventions:
    def test_totals_are_row_sums(self):
        rows = cost_rows(named_config("tiny"), 224, 224)
        report = reconcile(named_config("tiny"), 224, 224)
        assert report.total_params == sum(r.params for r in rows)
        assert report.total_flops == sum(r.flops for r in rows)

    def test_param_total_matches_spec_walk(self):
        for variant in ("tiny", "small"):
            cfg = named_config(variant)
            rows = cost_rows(cfg, 224, 224)
            assert sum(r.params for r in rows) == count_params(cfg)

    def test_norm_rows_carry_no_flops(self):
        rows = rows_by_name(cost_rows(named_config("tiny"), 224, 224))
        assert rows["stem.norm1"].flops == 0
        assert rows["stem.norm1"].params == 32  # gamma and beta, 16 channels

    def test_stem_conv_row(self):
        rows = rows_by_name(cost_rows(named_config("tiny"), 224, 224))
        # 3x3x3x16 kernel over a 112x112 output map
        assert rows["stem.conv1"].params == 9 * 3 * 16
        assert rows["stem.conv1"].flops == 112 * 112 * 9 * 3 * 16

    def test_hierarchical_attention_row(self):
        rows = rows_by_name(cost_rows(named_config("tiny"), 224, 224))
        row = rows["stage2.block0.attn"]
        assert row.params == 7 * 48 * 48
        # closed form plus the output projection the form excludes
        assert row.flops == complexity_hmhsa(56, 56, 48, 8, 8) + 56 * 56 * 48 * 48

    def test_dense_attention_row(self):
        rows = rows_by_name(cost_rows(named_config("tiny"), 224, 224))
        row = rows["stage5.block0.attn"]
        assert row.params == 4 * 384 * 384
        assert row.flops == complexity_mhsa(7, 7, 384) + 7 * 7 * 384 * 384

    def test_mlp_row(self):
        rows = rows_by_name(cost_rows(named_config("tiny"), 224, 224))
        row = rows["stage2.block0.mlp"]
        c, ec, n = 48, 48 * 8, 56 * 56
        assert row.params == (c * ec + ec) + (9 * ec + ec) + (ec * c + c)
        assert row.flops == n * c * ec + n * 9 * ec + n * ec * c

    def test_head_rows(self):
        rows = rows_by_name(cost_rows(named_config("tiny"), 224, 224))
        assert rows["head.fc"].params == 384 * 1000 + 1000
        assert rows["head.fc"].flops == 384 * 1000
        assert rows["head.norm"].params == 2 * 384

    def test_invalid_input_size_rejected(self):
        with pytest.raises(ConfigError):
            cost_rows(named_config("tiny"), 225, 225)


class TestScaling:
    def test_flops_linear_in_batch(self):
        cfg = toy_config()
        assert count_flops(cfg, 32, 32, batch=4) == 4 * count_flops(cfg, 32, 32, batch=1)

    def test_params_ignore_input_size(self):
        rows224 = cost_rows(named_config("tiny"), 224, 224)
        rows448 = cost_rows(named_config("tiny"), 448, 448)
        assert [(r.name, r.params) for r in rows224] == [(r.name, r.params) for r in rows448]

    def test_conv_flops_quadruple_at_double_resolution(self):
        r224 = rows_by_name(cost_rows(named_config("tiny"), 224, 224))
        r448 = rows_by_name(cost_rows(named_config("tiny"), 448, 448))
        assert r448["stem.conv1"].flops == 4 * r224["stem.conv1"].flops
        assert r448["stage2.block0.mlp"].flops == 4 * r224["stage2.block0.mlp"].flops

    def test_total_flops_grow_faster_than_area(self):
        # pooled global attention is superlinear in token count, so
        # doubling resolution must cost more than 4x overall
        cfg = named_config("tiny")
        assert count_flops(cfg, 448, 448) > 4 * count_flops(cfg, 224, 224)


class TestCsvFormat:
    def test_header_rows_total_and_trailing_newline(self):
        report = reconcile(toy_config(), 32, 32)
        text = report.to_csv()
        lines = text.split("\n")
        assert lines[0] == "layer,params,flops"
        assert lines[-1] == ""
        assert lines[-2].startswith("TOTAL,")
        total = lines[-2].split(",")
        assert int(total[1]) == report.total_params
        assert int(total[2]) == report.total_flops

    def test_every_row_has_three_fields(self):
        text = reconcile(toy_config(), 32, 32).to_csv()
        for line in text.strip().split("\n")[1:]:
            name, params, flops = line.split(",")
            assert int(params) >= 0 and int(flops) >= 0

    def test_text_table_aligned(self):
        out = reconcile(toy_config(), 32, 32).to_text()
        assert "TOTAL" in out and "layer" in out


class TestReconcile:
    def test_toy_units_agree_to_the_integer(self):
        report = reconcile(toy_config(), 32, 32)
        assert len(report.units) == 5  # 1 + 1 + 2 + 1 blocks
        assert report.all_units_ok
        for u in report.units:
            assert u.measured == u.formula
            for measured, expected in u.groups.values():
                assert measured == expected

    def test_stage4_small_unit(self):
        # 14x14 map, 320 channels, g1=7, g2=2 on the small variant
        report = reconcile(named_config("small"), 224, 224)
        unit = next(u for u in report.units if u.name == "stage4.block0.attn")
        assert (unit.h, unit.w, unit.c, unit.g1, unit.g2) == (14, 14, 320, 7, 2)
        assert unit.ok
        assert unit.measured == complexity_hmhsa(14, 14, 320, 7, 2)

    def test_dense_stage5_unit(self):
        report = reconcile(named_config("small"), 224, 224)
        unit = next(u for u in report.units if u.name == "stage5.block0.attn")
        assert unit.kind == "dense"
        assert unit.measured == complexity_mhsa(7, 7, 512)
        assert unit.ok

    def test_out_proj_reported_separately(self):
        report = reconcile(toy_config(), 32, 32)
        for u in report.units:
            n = u.h * u.w
            assert u.out_proj == n * u.c * u.c
            assert u.out_proj not in (0, u.measured)

    @pytest.mark.parametrize("variant", ["tiny", "small", "medium", "large"])
    def test_all_variants_reconcile_at_224(self, variant):
        report = reconcile(named_config(variant), 224, 224)
        assert report.all_units_ok
        assert len(report.units) == sum(s.blocks for s in named_config(variant).stages)
