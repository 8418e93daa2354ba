import argparse
import csv
import io

import pytest

from pgen import cli
from pgen.codec import decode_sequence
from pgen.corpus import corpus_sequence
from pgen.container import extract_substream, read_stream
from pgen.evaluation import RDCurve, bd_rate, psnr
from pgen.media import read_raw_video, read_track

QP_LADDER = "2,12,22,32,42,52"


@pytest.fixture(scope="module")
def synth_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    video = d / "clip.pgrv"
    assert cli.main(["synth", "--size", "64", "--frames", "4", "--keypoints", "6",
                     "--seed", "3", "--amplitude", "3", "--bandwidth", "24", "-o", str(video)]) == 0
    return video, d / "clip.pgrv.track.json"


@pytest.fixture(scope="module")
def encoded(synth_files):
    video, track = synth_files
    out = video.parent / "clip.pgen"
    assert cli.main(["encode", str(video), "--track", str(track), "-o", str(out)]) == 0
    return out


def report_rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


# --- synth -------------------------------------------------------------------


def test_synth_writes_video_and_track(synth_files):
    video, track = synth_files
    seq = read_raw_video(video.read_bytes())
    assert (len(seq), seq.width, seq.height, seq.fps) == (4, 64, 64, 25)
    assert read_track(track.read_bytes()).points.shape == (4, 6, 2)


def test_synth_full_length_example(tmp_path):
    out = tmp_path / "long.pgrv"
    assert cli.main(["synth", "--size", "32", "--frames", "250", "--fps", "25", "--seed", "7",
                     "-o", str(out)]) == 0
    seq = read_raw_video(out.read_bytes())
    assert len(seq) == 250 and seq.fps == 25


def test_synth_default_seed_is_zero(tmp_path):
    a, b = tmp_path / "a.pgrv", tmp_path / "b.pgrv"
    assert cli.main(["synth", "--size", "32", "--frames", "2", "-o", str(a)]) == 0
    assert cli.main(["synth", "--size", "32", "--frames", "2", "--seed", "0", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_synth_single_frame_is_a_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["synth", "--frames", "1", "-o", str(tmp_path / "x.pgrv")])
    assert exc.value.code == 2
    assert "--frames" in capsys.readouterr().err


# --- encode / decode / extract ----------------------------------------------


def test_encode_defaults(encoded):
    header = read_stream(encoded.read_bytes()).header
    assert header.key_qp == 22
    assert header.levels == (0, 1, 2)


def test_encode_prints_layer_bits(synth_files, tmp_path, capsys):
    video, track = synth_files
    assert cli.main(["encode", str(video), "--track", str(track), "-o", str(tmp_path / "s.pgen"),
                     "--layers", "8"]) == 0
    out = capsys.readouterr().out
    assert "key frame" in out and "level 8" in out and "level 16" not in out
    assert read_stream((tmp_path / "s.pgen").read_bytes()).header.level_mask == 0b001


def test_synth_defaults_reproduce_the_corpus(tmp_path):
    out = tmp_path / "c.pgrv"
    assert cli.main(["synth", "--frames", "3", "--seed", "4", "-o", str(out)]) == 0
    seq, track = corpus_sequence(4, frame_count=3)
    assert read_raw_video(out.read_bytes()) == seq
    assert read_track((tmp_path / "c.pgrv.track.json").read_bytes()) == track


def test_all_layers_not_worse_than_base_on_corpus_content(tmp_path):
    video, stream = tmp_path / "c.pgrv", tmp_path / "c.pgen"
    assert cli.main(["synth", "--frames", "4", "--seed", "0", "-o", str(video)]) == 0
    assert cli.main(["encode", str(video), "--track", str(video) + ".track.json", "-o", str(stream)]) == 0
    ref = read_raw_video(video.read_bytes())
    for layers, name in (("base", "b.pgrv"), ("all", "a.pgrv")):
        assert cli.main(["decode", str(stream), "-o", str(tmp_path / name), "--layers", layers]) == 0
    base = read_raw_video((tmp_path / "b.pgrv").read_bytes())
    full = read_raw_video((tmp_path / "a.pgrv").read_bytes())
    assert psnr(ref, full) >= psnr(ref, base)


def test_decode_base_equals_extracted_base(encoded, tmp_path):
    assert cli.main(["decode", str(encoded), "--layers", "base", "-o", str(tmp_path / "d1.pgrv")]) == 0
    assert cli.main(["extract", str(encoded), "--layers", "base", "-o", str(tmp_path / "b.pgen")]) == 0
    assert cli.main(["decode", str(tmp_path / "b.pgen"), "-o", str(tmp_path / "d2.pgrv")]) == 0
    assert (tmp_path / "d1.pgrv").read_bytes() == (tmp_path / "d2.pgrv").read_bytes()


def test_decode_absent_layer_fails(encoded, tmp_path, capsys):
    sub = tmp_path / "s8.pgen"
    assert cli.main(["extract", str(encoded), "--layers", "8", "-o", str(sub)]) == 0
    assert cli.main(["decode", str(sub), "--layers", "16", "-o", str(tmp_path / "x.pgrv")]) == 1
    assert "not in the stream" in capsys.readouterr().err


def test_corrupt_stream_names_the_record(encoded, tmp_path, capsys):
    data = bytearray(encoded.read_bytes())
    data[-10] ^= 0xFF  # inside the last frame record
    bad = tmp_path / "bad.pgen"
    bad.write_bytes(bytes(data))
    assert cli.main(["decode", str(bad), "-o", str(tmp_path / "x.pgrv")]) == 1
    err = capsys.readouterr().err
    assert "frame record 3" in err and "error" in err
    assert not (tmp_path / "x.pgrv").exists()


def test_extract_budget(encoded, tmp_path, capsys):
    assert cli.main(["extract", str(encoded), "--budget", "1e9", "-o", str(tmp_path / "all.pgen")]) == 0
    assert (tmp_path / "all.pgen").read_bytes() == encoded.read_bytes()
    assert cli.main(["extract", str(encoded), "--budget", "0.001", "-o", str(tmp_path / "no.pgen")]) == 1
    assert "base layer alone exceeds" in capsys.readouterr().err


def test_eval_prints_metrics(synth_files, encoded, tmp_path, capsys):
    video, _ = synth_files
    dec = tmp_path / "d.pgrv"
    assert cli.main(["decode", str(encoded), "-o", str(dec)]) == 0
    capsys.readouterr()
    assert cli.main(["eval", str(video), str(dec), "--stream", str(encoded)]) == 0
    out = capsys.readouterr().out
    assert "psnr_db=" in out and "ssim=" in out and "rate_kbps=" in out


# --- config files ------------------------------------------------------------


def test_config_file_with_flag_override(synth_files, tmp_path):
    video, track = synth_files
    cfg = tmp_path / "enc.cfg"
    cfg.write_text("# key frame settings\nqp = 32\nlayers = 8,16\n")
    out = tmp_path / "c.pgen"
    assert cli.main(["encode", str(video), "--track", str(track), "-o", str(out), "--config", str(cfg)]) == 0
    header = read_stream(out.read_bytes()).header
    assert header.key_qp == 32 and header.levels == (0, 1)
    assert cli.main(["encode", str(video), "--track", str(track), "-o", str(out), "--config", str(cfg),
                     "--qp", "12"]) == 0
    assert read_stream(out.read_bytes()).header.key_qp == 12


def test_config_file_unknown_key(synth_files, tmp_path):
    video, track = synth_files
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    with pytest.raises(SystemExit) as exc:
        cli.main(["encode", str(video), "--track", str(track), "-o", str(tmp_path / "x"), "--config", str(cfg)])
    assert exc.value.code == 2


def test_qp_outside_set_is_rejected(synth_files, tmp_path, capsys):
    video, track = synth_files
    assert cli.main(["encode", str(video), "--track", str(track), "-o", str(tmp_path / "x.pgen"),
                     "--qp", "23"]) == 1
    assert "23" in capsys.readouterr().err


def test_argument_parsers():
    assert cli.parse_layers("base") == ()
    assert cli.parse_layers("all") == (0, 1, 2)
    assert cli.parse_layers("32,8") == (0, 2)
    assert cli.parse_layer_sets("base;8;8,16") == [(), (0,), (0, 1)]
    assert cli.layer_tag((0, 1)) == "base+8+16"
    assert cli.parse_qf("2") == (2.0, 2.0, 2.0)
    with pytest.raises(argparse.ArgumentTypeError):
        cli.parse_layers("12")


# --- sweep -------------------------------------------------------------------


@pytest.fixture(scope="module")
def sweep_dir(synth_files, tmp_path_factory):
    video, track = synth_files
    out = tmp_path_factory.mktemp("sweep")
    assert cli.main(["sweep", str(video), "--track", str(track), "--out-dir", str(out),
                     "--qps", QP_LADDER, "--layer-sets", "base;8,16,32"]) == 0
    return out


def test_sweep_base_only_is_a_monotone_six_point_curve(sweep_dir):
    rows = [r for r in report_rows(sweep_dir / "report.csv") if r["layer_set"] == "base"]
    assert len(rows) == 6
    by_qp = sorted(rows, key=lambda r: int(r["config"].split(";")[0].split("=")[1]))
    rates = [float(r["rate_kbps"]) for r in by_qp]
    quality = [float(r["psnr_db"]) for r in by_qp]
    assert all(a > b for a, b in zip(rates, rates[1:]))
    assert all(a >= b for a, b in zip(quality, quality[1:]))
    assert len((sweep_dir / "rd_base_psnr.dat").read_text().splitlines()) == 6


def test_sweep_outputs(sweep_dir):
    names = {p.name for p in sweep_dir.iterdir()}
    assert {f"clip_qp{q}.pgen" for q in QP_LADDER.split(",")} <= names
    assert {"report.csv", "bd_rate.csv", "rd_base+8+16+32_ssim.dat"} <= names
    bd = list(csv.DictReader(io.StringIO((sweep_dir / "bd_rate.csv").read_text())))
    assert {(r["test"], r["anchor"], r["metric"]) for r in bd} == {
        ("base+8+16+32", "base", "psnr"), ("base+8+16+32", "base", "ssim")}
    for row in report_rows(sweep_dir / "report.csv"):
        assert "tau=" in row["config"] and "search=" in row["config"]


def test_sweep_enhancement_extends_max_rate(sweep_dir):
    rows = report_rows(sweep_dir / "report.csv")
    top = {tag: max(float(r["rate_kbps"]) for r in rows if r["layer_set"] == tag)
           for tag in ("base", "base+8+16+32")}
    assert top["base+8+16+32"] > top["base"]


def test_sweep_streams_decode_like_extraction(sweep_dir):
    data = (sweep_dir / "clip_qp22.pgen").read_bytes()
    a = decode_sequence(extract_substream(data, ()))
    b = decode_sequence(data, ())
    assert all(x == y for x, y in zip(a.frames, b.frames))


def test_identical_configs_give_zero_bd_rate(synth_files, sweep_dir, tmp_path):
    video, track = synth_files
    assert cli.main(["sweep", str(video), "--track", str(track), "--out-dir", str(tmp_path),
                     "--qps", QP_LADDER, "--layer-sets", "base"]) == 0

    def curve(path):
        rows = [r for r in report_rows(path) if r["layer_set"] == "base"]
        return RDCurve.from_arrays([float(r["rate_kbps"]) for r in rows], [float(r["psnr_db"]) for r in rows])

    assert bd_rate(curve(tmp_path / "report.csv"), curve(sweep_dir / "report.csv")) == 0.0


def test_sweep_parallel_matches_serial(synth_files, sweep_dir, tmp_path, monkeypatch):
    video, track = synth_files
    monkeypatch.setenv("PGEN_JOBS", "2")
    assert cli.main(["sweep", str(video), "--track", str(track), "--out-dir", str(tmp_path),
                     "--qps", QP_LADDER, "--layer-sets", "base;8,16,32"]) == 0
    for name in ("report.csv", "bd_rate.csv", "clip_qp2.pgen", "clip_qp52.pgen"):
        assert (tmp_path / name).read_bytes() == (sweep_dir / name).read_bytes()


def test_sweep_with_few_qps_skips_bd_rate(synth_files, tmp_path, capsys):
    video, track = synth_files
    assert cli.main(["sweep", str(video), "--track", str(track), "--out-dir", str(tmp_path),
                     "--qps", "22,32", "--layer-sets", "base;8"]) == 0
    assert "at least 4" in capsys.readouterr().err
    assert (tmp_path / "bd_rate.csv").read_text() == "test,anchor,metric,bd_rate_percent\n"


def test_jobs_must_be_positive(synth_files, tmp_path):
    video, track = synth_files
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep", str(video), "--track", str(track), "--out-dir", str(tmp_path), "--jobs", "0"])
    assert exc.value.code == 2
