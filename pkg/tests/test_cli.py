import json
import os

import pytest

from conftest import FABRICS, KERNELS
from generate_sample_inputs import generate_sample_inputs
from relic_tools.cli import main, parse_cell
from relic_tools.errors import InputError

TMRFU = os.path.join(FABRICS, "tmrfu_4x4.fab")
CONV = os.path.join(KERNELS, "conv2x2.dfg")


def _design(*extra):
    return ["-k", CONV, "--mode", "tmrfu", "--fabric", TMRFU, *extra]


def _run(argv, capsys):
    main(argv)
    return capsys.readouterr().out


def _exit_code(argv, capsys):
    with pytest.raises(SystemExit) as e:
        main(argv)
    err = capsys.readouterr().err
    assert err.startswith("error:") or err.startswith("Input not found")
    return e.value.code


@pytest.fixture(scope="module")
def compiled_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("compile") / "conv.bit"
    main(["compile", *_design("--out", str(out))])
    return out


def test_size_reports_requirements(tmp_path, capsys):
    table = tmp_path / "size.json"
    fab = tmp_path / "min.fab"
    out = _run(["size", "-k", "conv2x2", "-k", "sad2x2", "--mode", "naive", "--json", str(table),
                "--fabric-out", str(fab)], capsys)
    assert "Minimal fabric 6x7" in out
    data = json.loads(table.read_text())
    assert data["requirements"]["by_kind"] == {"mul": 12, "add": 9, "sub": 0, "subabs": 12, "vote": 7}
    assert data["manifest"]["command"] == "size"
    assert fab.read_text().startswith("fabric minimal")


def test_compile_writes_bitstream_and_report(compiled_files, tmp_path, capsys):
    report = json.loads(compiled_files.with_suffix(".json").read_text())
    assert report["cells_used"] == 7
    assert report["config_bits"]["total"] == 1104
    assert compiled_files.read_bytes()[:4] == b"ROVB"
    inputs = report["manifest"]["inputs"]
    assert [os.path.basename(i["path"]) for i in inputs] == ["conv2x2.dfg", "tmrfu_4x4.fab"]

    again = tmp_path / "again.bit"
    out = _run(["compile", *_design("--out", str(again))], capsys)
    assert f"Wrote {again}" in out
    assert again.read_bytes() == compiled_files.read_bytes()


def test_compile_on_minimal_fabric(tmp_path, capsys):
    out_path = tmp_path / "sad.bit"
    _run(["compile", "-k", "sad2x2", "--mode", "dwc", "--out", str(out_path)], capsys)
    assert out_path.with_suffix(".fab").read_text().startswith("fabric minimal_sad2x2")
    assert json.loads(out_path.with_suffix(".json").read_text())["mode"] == "dwc_fu"


def test_sim_against_reference(tmp_path, capsys):
    report = tmp_path / "sim.json"
    results = tmp_path / "sim.csv"
    out = _run(["sim", *_design("--vectors", "40", "--out", str(results), "--report", str(report))], capsys)
    assert "status equal" in out
    data = json.loads(report.read_text())
    assert (data["status"], data["vectors"], data["latency"]) == ("equal", 40, 3)
    assert len(results.read_text().splitlines()) == 41


def test_sim_with_stuck_cell(tmp_path, compiled_files, capsys):
    report = json.loads(compiled_files.with_suffix(".json").read_text())
    first = report["placement"][0]
    sim_report = tmp_path / "stuck.json"
    _run(["sim", *_design("--vectors", "20", "--faulty", f"fu:{first['row']},{first['col']}",
                          "--report", str(sim_report))], capsys)
    assert json.loads(sim_report.read_text())["status"] == "corrupted"


def test_inject_campaign(tmp_path, capsys):
    out = tmp_path / "sens.csv"
    printed = _run(["inject", *_design("--bits", "kinds:fu_replica", "--vectors", "8", "--device",
                                       "--out", str(out))], capsys)
    assert "192 bits: benign 192" in printed
    summary = json.loads((tmp_path / "sens_summary.json").read_text())
    assert summary["totals"] == {"benign": 192, "detected": 0, "sdc": 0}
    assert summary["mbu"]["adjacent_pairs"] == 42
    assert summary["device"]["frames"] == 40
    assert out.read_text().splitlines()[0] == "bit_index,frame,offset,resource_kind,row,col,class"


def test_scrub_with_random_trace(tmp_path, capsys):
    out = tmp_path / "scrub.json"
    trace = tmp_path / "trace.csv"
    printed = _run(["scrub", *_design("--random-upsets", "10", "--horizon", "10000000", "--level", "upper",
                                      "--trace-out", str(trace), "--out", str(out))], capsys)
    assert printed.startswith("upper: 10 upsets")
    data = json.loads(out.read_text())
    assert data["levels"]["upper"]["outcomes"]["corrected"] == 10
    assert len(trace.read_text().splitlines()) == 11

    replay = tmp_path / "replay.json"
    _run(["scrub", *_design("--upsets", str(trace), "--level", "upper", "--out", str(replay))], capsys)
    assert json.loads(replay.read_text())["events"] == data["events"]


def test_repair_around_a_faulty_cell(tmp_path, compiled_files, capsys):
    report = json.loads(compiled_files.with_suffix(".json").read_text())
    # the first precompiled alternate avoids the lowest used multiplier cell
    mul = min((p for p in report["placement"] if p["op"] == "mul"), key=lambda p: (p["row"], p["col"]))
    out = tmp_path / "fixed.bit"
    printed = _run(["repair", *_design("--faulty", f"fu:{mul['row']},{mul['col']}", "--precompiled", "2",
                                       "--spares", "mul:1", "--out", str(out))], capsys)
    assert "Repair via precompiled" in printed
    data = json.loads(out.with_suffix(".json").read_text())
    assert [mul["row"], mul["col"]] not in data["repair"]["cells_used"]
    assert len(data["plan"]["configs"]) == 2
    assert os.path.exists(data["plan"]["configs"][0]["bitstream"])


def test_report_pdf(tmp_path, compiled_files, capsys):
    sens = tmp_path / "sens.csv"
    _run(["inject", *_design("--bits", "random:30", "--vectors", "8", "--out", str(sens))], capsys)
    pdf, png = tmp_path / "report.pdf", tmp_path / "heat.png"
    out = _run(["report", "--compile-report", str(compiled_files.with_suffix(".json")), "--sensitivity", str(sens),
                "--fabric", TMRFU, "--heatmap", str(png), "--out", str(pdf)], capsys)
    assert f"Wrote {png}" in out
    assert pdf.read_bytes().startswith(b"%PDF")


def test_exit_codes(tmp_path, capsys):
    assert _exit_code(["compile", "-k", "no_such_kernel", "--out", str(tmp_path / "x.bit")], capsys) == 1
    assert _exit_code(["compile", "-k", "conv3x3", "--mode", "tmrfu", "--fabric", TMRFU,
                       "--out", str(tmp_path / "x.bit")], capsys) == 2
    tiny = tmp_path / "tiny.fab"
    tiny.write_text("fabric tiny\nrows 1\ncols 1\nchannel_width 1\nfu 0 0 add\n")
    adder = tmp_path / "add.dfg"
    adder.write_text("kernel a\ninput x y\nnode s = add x y\noutput o = s\n")
    assert _exit_code(["compile", "-k", str(adder), "--fabric", str(tiny),
                       "--out", str(tmp_path / "x.bit")], capsys) == 3
    assert _exit_code(["report", "--compile-report", str(tmp_path / "missing.json"),
                       "--out", str(tmp_path / "r.pdf")], capsys) == 1


def test_seed_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("RELIC_SEED", "7")
    out = tmp_path / "s.bit"
    _run(["compile", *_design("--out", str(out))], capsys)
    assert json.loads(out.with_suffix(".json").read_text())["manifest"]["seed"] == 7
    monkeypatch.setenv("RELIC_SEED", "seven")
    assert _exit_code(["compile", *_design("--out", str(out))], capsys) == 1


def test_parse_cell():
    assert parse_cell("fu:2,3") == (2, 3)
    assert parse_cell("1,0") == (1, 0)
    with pytest.raises(InputError):
        parse_cell("fu:2")


def test_sample_inputs_load_and_compile(tmp_path, capsys):
    written = generate_sample_inputs(str(tmp_path))
    names = sorted(os.path.basename(p) for p in written)
    assert names[:4] == ["conv2x2.dfg", "conv2x2_vectors.csv", "conv3x3.dfg", "pair_dwc_fu.fab"]
    assert "sobel.dfg" in names and "pair_tmr_fu.fab" in names
    out = tmp_path / "pair.bit"
    printed = _run(["compile", "-k", str(tmp_path / "conv2x2.dfg"), "--mode", "tmrfu",
                    "--fabric", str(tmp_path / "pair_tmr_fu.fab"), "--out", str(out)], capsys)
    assert f"Wrote {out}" in printed
