"""Schema conformance for the figure-CSV reader."""

from pathlib import Path

import pytest

from plotviz.reader import EXPECTED_HEADER, SchemaError, read_figure_csv

FIXTURES = Path(__file__).parent / "fixtures"

GOOD_HEADER = ",".join(EXPECTED_HEADER)


def write_csv(tmp_path, lines, name="fig.csv"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestValidFiles:
    def test_fixture_parses_with_expected_values(self):
        rows = read_figure_csv(FIXTURES / "figure_siteA_test.csv")
        assert len(rows) == 5
        assert {r.regime for r in rows} == {"real_plus_synthetic",
                                            "synthetic_only"}
        assert all(r.baseline_auroc == 0.78 for r in rows)
        first = rows[0]
        assert first.ratio_percent == 0
        assert first.macro_auroc == pytest.approx(0.78)
        assert first.ci_lo <= first.macro_auroc <= first.ci_hi

    def test_single_row_file(self, tmp_path):
        path = write_csv(tmp_path, [GOOD_HEADER,
                                    "0,real_plus_synthetic,0.8,0.79,0.81,0.8"])
        rows = read_figure_csv(path)
        assert len(rows) == 1
        assert rows[0].ci_hi == pytest.approx(0.81)

    def test_header_tolerates_surrounding_spaces(self, tmp_path):
        spaced = ", ".join(EXPECTED_HEADER)
        path = write_csv(tmp_path, [spaced,
                                    "0,real_plus_synthetic,0.8,0.79,0.81,0.8"])
        assert len(read_figure_csv(path)) == 1


class TestSchemaViolations:
    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError, match="no such file"):
            read_figure_csv(tmp_path / "absent.csv")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(SchemaError, match="empty file"):
            read_figure_csv(path)

    def test_header_only(self, tmp_path):
        path = write_csv(tmp_path, [GOOD_HEADER])
        with pytest.raises(SchemaError, match="no data rows"):
            read_figure_csv(path)

    def test_wrong_header(self, tmp_path):
        path = write_csv(tmp_path, ["ratio,regime,auc,lo,hi,base",
                                    "0,x,0.8,0.79,0.81,0.8"])
        with pytest.raises(SchemaError, match="header"):
            read_figure_csv(path)

    @pytest.mark.parametrize("row,complaint", [
        ("0,real_plus_synthetic,0.8,0.79,0.81", "columns"),
        ("half,real_plus_synthetic,0.8,0.79,0.81,0.8", "not an integer"),
        ("-100,real_plus_synthetic,0.8,0.79,0.81,0.8", "negative"),
        ("0,real_plus_synthetic,high,0.79,0.81,0.8", "not a number"),
        ("0,real_plus_synthetic,1.2,0.79,0.81,0.8", "outside"),
        ("0,real_plus_synthetic,0.8,0.82,0.81,0.8", "exceeds"),
        ("0,,0.8,0.79,0.81,0.8", "empty regime"),
    ])
    def test_malformed_rows(self, tmp_path, row, complaint):
        path = write_csv(tmp_path, [GOOD_HEADER, row])
        with pytest.raises(SchemaError, match=complaint):
            read_figure_csv(path)

    def test_inconsistent_baseline_within_file(self, tmp_path):
        path = write_csv(tmp_path, [
            GOOD_HEADER,
            "0,real_plus_synthetic,0.8,0.79,0.81,0.8",
            "100,real_plus_synthetic,0.81,0.80,0.82,0.75",
        ])
        with pytest.raises(SchemaError, match="baseline_auroc varies"):
            read_figure_csv(path)

    def test_duplicate_regime_ratio_cell(self, tmp_path):
        path = write_csv(tmp_path, [
            GOOD_HEADER,
            "0,real_plus_synthetic,0.8,0.79,0.81,0.8",
            "0,real_plus_synthetic,0.79,0.78,0.80,0.8",
        ])
        with pytest.raises(SchemaError, match="duplicate"):
            read_figure_csv(path)
