import xml.etree.ElementTree as ET

import pytest

from gfmate.errors import ConfigError
from gfmate.harness import MetricReport
from gfmate.plots import emit_plots


def report(mean, value=None, kind=None, target="target"):
    return MetricReport(
        target_domain=target,
        shots=1,
        seeds=[0, 1],
        per_seed_accuracy=[mean - 1.0, mean + 1.0],
        mean_accuracy=mean,
        std_accuracy=1.0,
        display=f"{mean:.2f}±1.00",
        comp_label_accuracy=None,
        param_count=111,
        pretrain_steps=0,
        wallclock_s=1.0,
        sweep_kind=kind,
        sweep_value=value,
    )


def test_single_report_bar_chart_is_valid_xml(tmp_path):
    (path,) = emit_plots([report(63.0)], tmp_path)
    root = ET.parse(path).getroot()
    assert root.tag.endswith("svg")
    rects = [e for e in root.iter() if e.tag.endswith("rect")]
    assert len(rects) == 2  # background + a single bar


def test_sweep_polyline_has_one_vertex_per_report(tmp_path):
    reports = [report(60 + 3 * i, value=v, kind="ratio") for i, v in enumerate([0.0, 0.2, 0.5, 0.8, 1.0])]
    (path,) = emit_plots(reports, tmp_path)
    root = ET.parse(path).getroot()
    (poly,) = [e for e in root.iter() if e.tag.endswith("polyline")]
    assert len(poly.attrib["points"].split()) == 5
    assert path.name == "accuracy_vs_ratio.svg"


def test_plots_are_byte_identical_across_reruns(tmp_path):
    reports = [report(60 + i, value=float(i), kind="shots") for i in range(3)]
    (p1,) = emit_plots(reports, tmp_path / "a")
    (p2,) = emit_plots(reports, tmp_path / "b")
    assert p1.read_bytes() == p2.read_bytes()


def test_empty_reports_rejected(tmp_path):
    with pytest.raises(ConfigError):
        emit_plots([], tmp_path)
