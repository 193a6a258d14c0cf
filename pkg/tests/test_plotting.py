"""
Tests for metrics plotting.
"""

import json

import matplotlib.pyplot as plt
import pytest
from matplotlib.figure import Figure

from leaptt.errors import ParseError
from leaptt.plotting import collect_series, plot_metrics, read_metrics


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return str(path)


class TestReadMetrics:
    """Tests for read_metrics()."""

    def test_skips_blank_lines(self, tmp_path):
        """Test blank lines are ignored."""
        path = tmp_path / "m.jsonl"
        path.write_text('{"step": 0}\n\n{"step": 1}\n', encoding="utf-8")
        assert read_metrics(str(path)) == [{"step": 0}, {"step": 1}]

    def test_bad_line_number(self, tmp_path):
        """Test the error names the 1-based line."""
        path = tmp_path / "m.jsonl"
        path.write_text('{"step": 0}\n{"step": \n', encoding="utf-8")
        with pytest.raises(ParseError) as excinfo:
            read_metrics(str(path))
        assert excinfo.value.line_number == 2
        assert excinfo.value.exit_code == 2

    def test_non_object(self, tmp_path):
        """Test a JSON value that is not an object is rejected."""
        path = tmp_path / "m.jsonl"
        path.write_text("[1, 2]\n", encoding="utf-8")
        with pytest.raises(ParseError, match="JSON object"):
            read_metrics(str(path))


class TestCollectSeries:
    """Tests for collect_series()."""

    def test_groups_by_source_and_axis(self):
        """Test loss, validation and distance curves are kept apart."""
        series = collect_series(
            [
                ("ft", [{"step": 0, "valid_loss": 2.0}, {"step": 1, "loss": 1.5}]),
                ("leap", [{"meta_step": 0, "expected_distance": 0.5}]),
            ]
        )
        assert series[("ft", "step", "valid_loss")] == [(0.0, 2.0)]
        assert series[("ft", "step", "loss")] == [(1.0, 1.5)]
        assert series[("leap", "meta_step", "expected_distance")] == [(0.0, 0.5)]


class TestPlotMetrics:
    """Tests for plot_metrics()."""

    def test_writes_svg_and_csv(self, tmp_path):
        """Test a two-point series renders and every record becomes a CSV row."""
        path = write_jsonl(
            tmp_path / "ssl_metrics.jsonl",
            [{"step": 0, "loss": 2.0}, {"step": 1, "loss": 1.0}],
        )
        svg_path, csv_path = plot_metrics([path], str(tmp_path / "plots"))
        with open(svg_path, encoding="utf-8") as f:
            assert "<svg" in f.read()
        with open(csv_path, encoding="utf-8") as f:
            rows = f.read().splitlines()
        assert rows[0] == "source,step,meta_step,loss,valid_loss,expected_distance"
        assert rows[1:] == ["ssl_metrics.jsonl,0,,2.0,,", "ssl_metrics.jsonl,1,,1.0,,"]

    def test_no_inputs(self, tmp_path):
        """Test an empty input list still writes the header and an empty plot."""
        _, csv_path = plot_metrics([], str(tmp_path))
        with open(csv_path, encoding="utf-8") as f:
            assert f.read() == "source,step,meta_step,loss,valid_loss,expected_distance\n"

    def test_malformed_input(self, tmp_path):
        """Test a malformed file aborts before anything is written."""
        path = tmp_path / "bad.jsonl"
        path.write_text("not json\n", encoding="utf-8")
        with pytest.raises(ParseError):
            plot_metrics([str(path)], str(tmp_path / "plots"))
        assert not (tmp_path / "plots").exists()

    def test_figure_closed_when_saving_fails(self, tmp_path, monkeypatch):
        """Test a failing savefig still releases the figure."""
        path = write_jsonl(tmp_path / "ssl_metrics.jsonl", [{"step": 0, "loss": 2.0}])

        def refuse(self, *args, **kwargs):
            raise OSError("disk full")

        monkeypatch.setattr(Figure, "savefig", refuse)
        before = plt.get_fignums()
        with pytest.raises(OSError, match="disk full"):
            plot_metrics([path], str(tmp_path / "plots"))
        assert plt.get_fignums() == before
