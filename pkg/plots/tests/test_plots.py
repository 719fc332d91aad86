import os

import pytest

from selfmt_plots.cli import main
from selfmt_plots.render import PlotError, plot_dynamics, plot_summary

STATS_HEADER = ("epoch,phase,direction,n_spe_accepted,n_bt_generated,"
                "n_bt_accepted,n_wt,n_noise_copies,mean_train_loss,dev_bleu")

SUMMARY_HEADER = ("run_id,technique,init,direction,epoch_of_best,"
                  "dev_bleu,test_bleu,ci_low,ci_high,extraction_p,extraction_r")


@pytest.fixture()
def stats_csv(tmp_path):
    rows = [STATS_HEADER]
    for epoch in (1, 2, 3):
        rows.append(f"{epoch},train,a->b,{10 * epoch},{20},{epoch},{5 - epoch},0,1.5,{epoch}")
        rows.append(f"{epoch},train,b->a,{10 * epoch},{20},{epoch + 1},{5 - epoch},0,1.4,{epoch}")
    path = tmp_path / "stats.csv"
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture()
def baseline_csv(tmp_path):
    rows = [STATS_HEADER]
    for epoch in (1, 2, 3):
        rows.append(f"{epoch},train,a->b,{12 - epoch},0,0,0,0,1.5,{epoch}")
        rows.append(f"{epoch},train,b->a,{12 - epoch},0,0,0,0,1.5,{epoch}")
    path = tmp_path / "baseline.csv"
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture()
def summary_csv(tmp_path):
    rows = [SUMMARY_HEADER]
    for tech in ("B", "B+BT", "B+BT+WT", "B+BT+WT+N"):
        for direction in ("a->b", "b->a"):
            rows.append(f"r_{tech},{tech},we,{direction},3,10.0,12.5,10.1,14.2,0.9,0.6")
    path = tmp_path / "summary.csv"
    path.write_text("\n".join(rows) + "\n")
    return path


def test_dynamics_series_and_baseline(stats_csv, baseline_csv, tmp_path):
    out = tmp_path / "dyn.png"
    fig = plot_dynamics(stats_csv, out, baseline_csv=baseline_csv)
    assert out.exists() and out.stat().st_size > 0
    lines = fig.axes[0].get_lines()
    assert len(lines) == 4  # SPE, BT, WT + dashed baseline
    labels = [l.get_label() for l in lines]
    assert labels[:3] == ["SPE", "BT", "WT"]
    dashed = [l for l in lines if l.get_linestyle() == "--"]
    assert len(dashed) == 1 and dashed[0].get_label() == "SPE (baseline)"
    # SPE series is the per-epoch pair count (direction rows collapse)
    spe = [l for l in lines if l.get_label() == "SPE"][0]
    assert list(spe.get_ydata()) == [10.0, 20.0, 30.0]


def test_dynamics_without_baseline(stats_csv, tmp_path):
    fig = plot_dynamics(stats_csv, tmp_path / "dyn.png")
    assert len(fig.axes[0].get_lines()) == 3


def test_dynamics_idempotent_dimensions(stats_csv, tmp_path):
    f1 = plot_dynamics(stats_csv, tmp_path / "a.png")
    f2 = plot_dynamics(stats_csv, tmp_path / "b.png")
    assert f1.get_size_inches().tolist() == f2.get_size_inches().tolist()
    assert len(f1.axes[0].get_lines()) == len(f2.axes[0].get_lines())
    assert (tmp_path / "a.png").stat().st_size == (tmp_path / "b.png").stat().st_size


def test_dynamics_empty_csv_fails_without_file(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text(STATS_HEADER + "\n")
    out = tmp_path / "never.png"
    with pytest.raises(PlotError):
        plot_dynamics(empty, out)
    assert not out.exists()


def test_dynamics_schema_drift_fails(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("epoch,phase,direction\n1,train,a->b\n")
    with pytest.raises(PlotError, match="missing columns"):
        plot_dynamics(bad, tmp_path / "x.png")


def test_summary_panels_and_bars(summary_csv, tmp_path):
    out = tmp_path / "summary.png"
    fig = plot_summary(summary_csv, out)
    assert out.exists()
    assert len(fig.axes) == 2  # one panel per direction
    for ax in fig.axes:
        assert len(ax.patches) == 4  # one bar per technique


def test_summary_missing_ci_warns_and_renders(tmp_path, caplog):
    rows = [",".join(SUMMARY_HEADER.split(",")[:7])]
    rows.append("r,B,we,a->b,3,10.0,12.5")
    path = tmp_path / "summary.csv"
    path.write_text("\n".join(rows) + "\n")
    with caplog.at_level("WARNING"):
        fig = plot_summary(path, tmp_path / "s.png")
    assert len(fig.axes) == 1
    assert any("whiskers omitted" in r.message for r in caplog.records)


def test_summary_missing_file_fails(tmp_path):
    with pytest.raises(PlotError, match="no such file"):
        plot_summary(tmp_path / "none.csv", tmp_path / "x.png")


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_cli_dynamics_ok(stats_csv, baseline_csv, tmp_path):
    out = tmp_path / "dyn.svg"
    code = main(["dynamics", "--in", str(stats_csv), "--baseline", str(baseline_csv),
                 "--out", str(out)])
    assert code == 0
    assert out.exists()


def test_cli_svg_is_deterministic(stats_csv, tmp_path):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert main(["dynamics", "--in", str(stats_csv), "--out", str(a)]) == 0
    assert main(["dynamics", "--in", str(stats_csv), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_cli_malformed_input_exits_nonzero(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("not,a,stats\nfile,at,all\n")
    code = main(["dynamics", "--in", str(bad), "--out", str(tmp_path / "x.png")])
    assert code == 2


def test_cli_summary_ok(summary_csv, tmp_path):
    assert main(["summary", "--in", str(summary_csv),
                 "--out", str(tmp_path / "s.png")]) == 0


def test_cli_usage_error():
    assert main(["dynamics"]) == 1


def test_acceptance_criterion_12(stats_csv, baseline_csv, tmp_path):
    """Dynamics figure: exactly one series per provenance plus a dashed
    baseline; malformed input exits nonzero."""
    fig = plot_dynamics(stats_csv, tmp_path / "dyn.png", baseline_csv=baseline_csv)
    lines = fig.axes[0].get_lines()
    solid = [l for l in lines if l.get_linestyle() == "-"]
    dashed = [l for l in lines if l.get_linestyle() == "--"]
    assert [l.get_label() for l in solid] == ["SPE", "BT", "WT"]
    assert len(dashed) == 1

    bad = tmp_path / "bad.csv"
    bad.write_text("garbage\n")
    code = main(["dynamics", "--in", str(bad), "--out", str(tmp_path / "no.png")])
    assert code != 0
    assert not (tmp_path / "no.png").exists()
    print("[criterion 12] PASS: 3 provenance series + dashed baseline; "
          "malformed input exits nonzero")
