import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from plategeom.cli import main
from plategeom.config import AnalysisConfig, default_config_text, load_config, parse_config, parse_emit
from plategeom.errors import CorpusError
from plategeom.report import (
    InstrumentRecord,
    load_corpus_metadata,
    parse_neck_direction,
    run_corpus,
    run_instrument,
    safe_name,
    write_corpus_metadata,
)
from plategeom.synthetic import synthetic_corpus

HEADER = "inventory_id,size,attribution,date,sound_board_path,back_path,body_path,size_class_override,neck_direction,notes\n"


def fast_config(out, **kw):
    return AnalysisConfig(grid_step=1.0, output_dir=Path(out), **kw)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    return synthetic_corpus(d, count=3, back_only=1, seed=7, rings=8, sectors=32)


# ---------------------------------------------------------------------------
# metadata


def test_metadata_rows_and_overrides(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text(
        HEADER
        + "2836,tenor_violin,unknown maker,?,m/2836_sb.ply,m/2836_b.ply,,violin_viola,+y,\n"
        + "2853,tenor_violin,?,c. 1700,m/2853_sb.ply,,,cello,0.6;0.8,reduced\n"
        + "2776,violin,,1690,,m/2776_b.obj,,,,no sound board\n",
        encoding="utf-8",
    )
    recs = load_corpus_metadata(p)
    assert [r.inventory_id for r in recs] == ["2836", "2853", "2776"]
    assert recs[0].size_class == "violin_viola" and recs[0].date == "?"
    assert recs[0].neck_direction == (0.0, 1.0)
    assert recs[0].sound_board_path == tmp_path / "m/2836_sb.ply"
    assert recs[1].size_class == "cello" and recs[1].attribution == "?"
    assert recs[1].neck_direction == pytest.approx((0.6, 0.8))
    assert recs[1].back_path is None
    assert recs[2].sound_board_path is None and recs[2].size_class == "violin_viola"


def test_metadata_round_trip(tmp_path):
    recs = [
        InstrumentRecord("A 1", "tenor_violin", size_class="cello", attribution="?", date="?",
                         sound_board_path=tmp_path / "a.ply", neck_direction=(3, 4)),
        InstrumentRecord("B", "viola", back_path=tmp_path / "sub" / "b.obj"),
    ]
    p = write_corpus_metadata(recs, tmp_path / "c.csv")
    again = load_corpus_metadata(p)
    assert again == recs


def test_metadata_errors(tmp_path, caplog):
    p = tmp_path / "c.csv"
    p.write_text(HEADER + "X,violin\nX,viola\n")
    with pytest.raises(CorpusError) as exc:
        load_corpus_metadata(p)
    assert exc.value.code == "duplicate-id" and ":3:" in str(exc.value)
    p.write_text(HEADER + "X,fiddle\n")
    with pytest.raises(CorpusError) as exc:
        load_corpus_metadata(p)
    assert exc.value.code == "unknown-size"
    p.write_text("inventory_id,attribution\nX,?\n")
    with pytest.raises(CorpusError) as exc:
        load_corpus_metadata(p)
    assert exc.value.code == "invalid-header"
    p.write_text(HEADER)
    with caplog.at_level(logging.WARNING):
        assert load_corpus_metadata(p) == []
    assert "no instruments" in caplog.text


def test_neck_direction_parsing():
    assert parse_neck_direction("") == (1.0, 0.0)
    assert parse_neck_direction("-X") == (-1.0, 0.0)
    assert parse_neck_direction(" 1 2 ") == (1.0, 2.0)
    with pytest.raises(CorpusError):
        parse_neck_direction("north")
    with pytest.raises(CorpusError):
        InstrumentRecord("a", "violin", neck_direction=(0, 0))


def test_safe_name():
    assert safe_name("MIM 2836/b") == "MIM_2836_b"
    assert safe_name("..") == "_.."


# ---------------------------------------------------------------------------
# config


def test_default_config_values():
    cfg = parse_config(default_config_text())
    assert cfg.contour_spacing == 1.0 and cfg.grid_step == 0.25
    assert cfg.histogram_bin == 0.05 and cfg.min_votes == 2
    assert cfg.channel_params("violin_viola").neighbourhood_radius == 2.0
    assert cfg.channel_params("cello").neighbourhood_radius == 5.0
    assert cfg.colour_range("violin_viola") == 28.0 and cfg.colour_range("cello") == 80.0
    assert cfg == AnalysisConfig()


def test_config_round_trip(tmp_path):
    cfg = AnalysisConfig(contour_spacing=2.0, min_votes=3, boundary_band=6.5,
                         emit=parse_emit("csv,json"), output_dir=tmp_path)
    p = tmp_path / "a.ini"
    p.write_text(cfg.to_ini())
    assert load_config(p, tmp_path) == cfg


@pytest.mark.parametrize(
    "text",
    [
        "[analysis]\ngrid_step_mm = 0\n",
        "[analysis]\nmin_votes = 5\n",
        "[analysis]\nemit = svg,pdf\n",
        "[violin]\nneighbourhood_radius_mm = 2\n",
        "[analysis]\ncontour_spacing_mm = one\n",
    ],
)
def test_config_errors(text):
    with pytest.raises(CorpusError) as exc:
        parse_config(text)
    assert exc.value.code == "invalid-config"


# ---------------------------------------------------------------------------
# pipeline


def test_run_instrument_statuses(small_corpus, tmp_path):
    recs = {r.inventory_id: r for r in load_corpus_metadata(small_corpus)}
    cfg = fast_config(tmp_path)
    ok = run_instrument(recs["S001"], cfg)
    assert ok.status == "ok" and ok.angles is not None
    assert set(ok.plates) == {"sound_board", "back"}
    assert ok.plates["sound_board"]["channel"]["points"] > 0
    missing = run_instrument(recs["S003"], cfg)
    assert missing.status == "missing_plate" and missing.angles is None
    assert set(missing.plates) == {"back"} and missing.succeeded

    bad = tmp_path / "bad.ply"
    bad.write_text("ply\nformat ascii 1.0\nelement vertex 3\nend_header\n1 2\n")
    failed = run_instrument(replace(recs["S001"], sound_board_path=bad), cfg)
    assert failed.status == "failed" and failed.stage == "load"
    assert failed.status_text.startswith("failed(load, ")
    assert not failed.succeeded


def test_run_corpus_errors(tmp_path):
    cfg = fast_config(tmp_path)
    with pytest.raises(CorpusError) as exc:
        run_corpus([], cfg)
    assert exc.value.code == "empty-corpus"
    a = InstrumentRecord("a/b", "violin", back_path=tmp_path / "x.ply")
    b = InstrumentRecord("a_b", "violin", back_path=tmp_path / "x.ply")
    with pytest.raises(CorpusError) as exc:
        run_corpus([a, b], cfg)
    assert exc.value.code == "duplicate-id"
    with pytest.raises(CorpusError) as exc:
        run_corpus([a], cfg, only=["zzz"])
    assert exc.value.code == "unknown-id"
    with pytest.raises(CorpusError) as exc:
        run_corpus([a], cfg, jobs=0)
    assert exc.value.code == "invalid-config"


@pytest.fixture(scope="module")
def corpus_run(small_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("out")
    cfg = fast_config(out)
    return run_corpus(load_corpus_metadata(small_corpus), cfg), out


def test_corpus_histograms_exclude_missing_plate(corpus_run):
    corpus, out = corpus_run
    assert [r.status for r in corpus.reports] == ["ok", "ok", "missing_plate"]
    assert corpus.exit_code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["counts"] == {"ok": 2, "missing_plate": 1, "failed": 0}
    for h in summary["histograms"].values():
        assert h["total"] == 2
        assert sum(len(b["ids"]) for b in h["bins"]) == 2
        assert all("S003" not in b["ids"] for b in h["bins"])
    # synthetic tilts are 0 and 0.3 degrees
    assert corpus.report("S001").angles.sb_back_signed == pytest.approx(0.0, abs=1e-9)
    assert corpus.report("S002").angles.sb_back_signed == pytest.approx(0.3, abs=1e-9)


def test_every_file_referenced_once(corpus_run):
    _, out = corpus_run
    summary = json.loads((out / "summary.json").read_text())
    listed = list(summary["artifacts"]) + ["summary.json"]
    for entry in summary["instruments"]:
        if "report" in entry:
            listed.append(entry["report"])
            rep = json.loads((out / entry["report"]).read_text())
            assert rep["schema_version"] == 1 and rep["status"] == entry["status"]
            listed += rep["artifacts"]
        else:
            listed += entry["artifacts"]
    on_disk = sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file())
    assert len(listed) == len(set(listed))
    assert sorted(listed) == on_disk


def test_emitted_files(corpus_run):
    _, out = corpus_run
    assert (out / "S001" / "sound_board_contours.svg").read_text().startswith("<?xml")
    assert "<svg" in (out / "S001" / "sound_board_contours.svg").read_text()
    assert (out / "S003" / "back_channel.csv").exists()
    assert not (out / "S003" / "sound_board_contours.svg").exists()
    rows = (out / "summary.csv").read_text().splitlines()
    assert rows[0].startswith("instrument_id,size_class,status")
    assert rows[3].startswith("S003,violin_viola,missing_plate,,,,,,")
    assert parse_config((out / "config.ini").read_text()) == AnalysisConfig(grid_step=1.0)
    rep = json.loads((out / "S001" / "report.json").read_text())
    assert "timings_s" not in rep
    assert rep["date"] == "2026" and rep["attribution"] == "?"


def test_emit_subset_and_timings(small_corpus, tmp_path):
    recs = load_corpus_metadata(small_corpus)[:1]
    cfg = fast_config(tmp_path, emit=parse_emit("csv,timings"))
    corpus = run_corpus(recs, cfg)
    files = sorted(p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*") if p.is_file())
    assert not any(f.endswith((".svg", ".pltgrid", "report.json")) for f in files)
    summary = json.loads((tmp_path / "summary.json").read_text())
    entry = summary["instruments"][0]
    assert "report" not in entry and set(entry["artifacts"]) == set(corpus.reports[0].artifacts)
    assert entry["timings_s"]["grid"] > 0


def test_failed_instrument_sets_exit_code(small_corpus, tmp_path):
    recs = load_corpus_metadata(small_corpus)
    broken = replace(recs[0], back_path=tmp_path / "nowhere.ply")
    corpus = run_corpus([broken, recs[1]], fast_config(tmp_path))
    assert corpus.exit_code == 1
    assert corpus.report("S001").status_text.startswith("failed(load")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["counts"]["failed"] == 1
    assert summary["histograms"]["sb_back_signed"]["total"] == 1


# ---------------------------------------------------------------------------
# CLI


def test_cli_default_config(capsys):
    assert main(["default-config"]) == 0
    assert parse_config(capsys.readouterr().out) == AnalysisConfig()


def test_cli_analyze_and_exit_codes(small_corpus, tmp_path, capsys):
    ini = tmp_path / "a.ini"
    ini.write_text(default_config_text().replace("grid_step_mm = 0.25", "grid_step_mm = 1.0"))
    assert "grid_step_mm = 1.0" in ini.read_text()
    out = tmp_path / "out"
    code = main(["analyze", str(small_corpus), "--config", str(ini), "--out", str(out), "--only", "S001,S003"])
    text = capsys.readouterr().out
    assert code == 0
    assert "S001\tok" in text and "S003\tmissing_plate" in text
    assert sorted(p.name for p in out.iterdir() if p.is_dir()) == ["S001", "S003", "angles"]

    assert main(["analyze", str(tmp_path / "absent.csv"), "--out", str(out)]) == 2
    assert "absent.csv" in capsys.readouterr().err
    assert main(["analyze", str(small_corpus), "--out", str(out), "--only", "nope"]) == 2
    assert "nope" in capsys.readouterr().err


def test_cli_analyze_one(small_corpus, tmp_path, capsys):
    recs = load_corpus_metadata(small_corpus)
    out = tmp_path / "one"
    code = main([
        "analyze-one", "--sound-board", str(recs[0].sound_board_path), "--back", str(recs[0].back_path),
        "--id", "demo", "--out", str(out), "--emit", "json",
    ])
    assert code == 0
    assert json.loads((out / "demo" / "report.json").read_text())["status"] == "ok"
    assert main(["analyze-one", "--out", str(out)]) == 2
    bad = tmp_path / "bad.obj"
    bad.write_text("v 0 0 0\nf 1 2 3\n")
    assert main(["analyze-one", "--back", str(bad), "--out", str(out)]) == 1


def test_cli_synth_corpus(tmp_path, capsys):
    assert main(["synth-corpus", "--out", str(tmp_path), "--count", "2", "--back-only", "0",
                 "--rings", "4", "--sectors", "16"]) == 0
    recs = load_corpus_metadata(Path(capsys.readouterr().out.strip()))
    assert len(recs) == 2 and all(r.sound_board_path.exists() for r in recs)
    n = np.array(recs[0].neck_direction)
    assert np.hypot(*n) == pytest.approx(1.0)
