import csv
import io
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from cryorefine.cli import main
from cryorefine.errors import BadMagic, IoError, ParseError, TruncatedFile, UnsupportedMode, ValidationError
from cryorefine.forward import CTFParams, PhantomSpec, UniformPoseSampler, generate_phantom, simulate_particles
from cryorefine.grid import Volume3D
from cryorefine.io import (ImageStack, ParticleMetaRow, emit_curve, meta_rows, parse_particle_meta,
                           particles_from_files, particles_to_stack, read_mrc, read_particle_meta,
                           write_mrc, write_particle_meta)
from cryorefine.validation import FSCCurve

from oracles import mrc_bytes, read_mrc_struct

DATA = Path(__file__).parent / "data"


def golden_volume():
    return Volume3D((np.arange(64, dtype=np.float64).reshape(4, 4, 4) - 20.0) / 7.0, 1.5)


# ---------------------------------------------------------------------------
# MRC


def test_golden_file_bytes(tmp_path):
    p = tmp_path / "out.mrc"
    write_mrc(p, golden_volume())
    gold = (DATA / "golden_4cube.mrc").read_bytes()
    assert p.read_bytes() == gold
    assert gold == mrc_bytes(golden_volume().data, 1.5)


def test_golden_file_reads_back():
    v = read_mrc(DATA / "golden_4cube.mrc")
    assert isinstance(v, Volume3D) and v.voxel_size == 1.5
    np.testing.assert_array_equal(v.data, golden_volume().data.astype("<f4"))


def test_header_fields_via_independent_reader(rng, tmp_path):
    x = rng.standard_normal((6, 6, 6))
    p = tmp_path / "v.mrc"
    write_mrc(p, Volume3D(x, 2.5))
    nx, ny, nz, mode, cell, stats, payload = read_mrc_struct(p.read_bytes())
    assert (nx, ny, nz, mode) == (6, 6, 6, 2)
    np.testing.assert_allclose(cell, 15.0)
    x32 = x.astype("<f4")
    np.testing.assert_allclose(stats, [x32.min(), x32.max(), x32.astype(float).mean()], rtol=1e-6)
    np.testing.assert_array_equal(payload, x32)


def test_round_trip_within_float32(rng, tmp_path):
    v = Volume3D(rng.standard_normal((8, 8, 8)), 1.2)
    write_mrc(tmp_path / "a.mrc", v)
    back = read_mrc(tmp_path / "a.mrc")
    np.testing.assert_allclose(back.data, v.data, rtol=1e-7, atol=1e-7)
    assert back.voxel_size == pytest.approx(1.2, rel=1e-7)


def test_writing_twice_is_byte_identical(rng, tmp_path):
    v = Volume3D(rng.standard_normal((6, 6, 6)))
    write_mrc(tmp_path / "a.mrc", v)
    write_mrc(tmp_path / "b.mrc", v)
    assert (tmp_path / "a.mrc").read_bytes() == (tmp_path / "b.mrc").read_bytes()


def test_zero_volume_stats(tmp_path):
    write_mrc(tmp_path / "z.mrc", Volume3D.zeros(4))
    _, _, _, _, _, stats, _ = read_mrc_struct((tmp_path / "z.mrc").read_bytes())
    assert stats == (0.0, 0.0, 0.0)


def test_stack_round_trip(rng, tmp_path):
    s = ImageStack(rng.standard_normal((3, 8, 8)), 2.0)
    write_mrc(tmp_path / "s.mrc", s)
    back = read_mrc(tmp_path / "s.mrc")
    assert isinstance(back, ImageStack) and back.data.shape == (3, 8, 8)


def _corrupt(tmp_path, edit):
    raw = bytearray(mrc_bytes(np.zeros((4, 4, 4)), 1.0))
    raw = edit(raw)
    p = tmp_path / "bad.mrc"
    p.write_bytes(bytes(raw))
    return p


def test_unsupported_mode(tmp_path):
    def mode1(raw):
        raw[12:16] = (1).to_bytes(4, "little")
        return raw
    with pytest.raises(UnsupportedMode):
        read_mrc(_corrupt(tmp_path, mode1))


def test_bad_magic(tmp_path):
    def nomap(raw):
        raw[208:212] = b"XXXX"
        return raw
    with pytest.raises(BadMagic):
        read_mrc(_corrupt(tmp_path, nomap))


@pytest.mark.parametrize("keep", [100, 1024 + 10])
def test_truncated(tmp_path, keep):
    with pytest.raises(TruncatedFile):
        read_mrc(_corrupt(tmp_path, lambda raw: raw[:keep]))


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        read_mrc(tmp_path / "none.mrc")


# ---------------------------------------------------------------------------
# particle metadata


def test_empty_metadata_table(tmp_path):
    write_particle_meta(tmp_path / "m.csv", [])
    assert read_particle_meta(tmp_path / "m.csv") == []


def test_metadata_round_trip(rng, tmp_path):
    rows = [ParticleMetaRow(i, rng.uniform(0, 360), rng.uniform(0, 180), rng.uniform(0, 360),
                            float(rng.integers(-2, 3)), float(rng.integers(-2, 3)),
                            rng.uniform(5000, 30000), 300.0, 2.0, 0.1, bool(i % 2))
            for i in range(100)]
    write_particle_meta(tmp_path / "m.csv", rows)
    back = read_particle_meta(tmp_path / "m.csv")
    assert len(back) == 100
    for a, b in zip(rows, back):
        assert a.id == b.id and a.ctf_identity == b.ctf_identity
        np.testing.assert_allclose([a.rot, a.tilt, a.psi, a.defocus_A],
                                   [b.rot, b.tilt, b.psi, b.defocus_A], rtol=1e-8)


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("id,rot\n1,2\n", 1),
    ("id,rot,tilt,psi,shift_x,shift_y,defocus_A,voltage_kv,cs_mm,amplitude_contrast\n"
     "0,1,2,3,0,0,10000,300,2,0.1\n1,x,2,3,0,0,10000,300,2,0.1\n", 3),
    ("id,rot,tilt,psi,shift_x,shift_y,defocus_A,voltage_kv,cs_mm,amplitude_contrast\n"
     "0,1,200,3,0,0,10000,300,2,0.1\n", 2),
    ("id,rot,tilt,psi,shift_x,shift_y,defocus_A,voltage_kv,cs_mm,amplitude_contrast\n0,1,2\n", 2),
])
def test_metadata_parse_errors(text, line):
    with pytest.raises(ParseError) as info:
        parse_particle_meta(text)
    assert info.value.line == line


def test_particles_survive_files(tmp_path):
    truth = generate_phantom(PhantomSpec.random(2, 8, seed=1), 8, 2.0)
    ps = simulate_particles(truth, 4, UniformPoseSampler(1), CTFParams(), 0.3, seed=2)
    write_mrc(tmp_path / "s.mrc", particles_to_stack(ps))
    write_particle_meta(tmp_path / "m.csv", meta_rows(ps))
    back = particles_from_files(read_mrc(tmp_path / "s.mrc"), read_particle_meta(tmp_path / "m.csv"))
    np.testing.assert_allclose(back.stack(), ps.stack(), atol=1e-4 * np.abs(ps.stack()).max())
    # metadata carries nine significant digits
    for a, b in zip(back, ps):
        np.testing.assert_allclose(a.true_pose.angles, b.true_pose.angles, rtol=1e-8)
    with pytest.raises(ValidationError):
        particles_from_files(read_mrc(tmp_path / "s.mrc"), read_particle_meta(tmp_path / "m.csv")[:3])


# ---------------------------------------------------------------------------
# curves


def _curves():
    r = np.arange(5.0)
    return {"a": FSCCurve(r, np.array([1, 0.8, 0.5, 0.2, 0.0]), 8, 2.0),
            "b": FSCCurve(r, np.array([1, 0.9, 0.7, 0.3, 0.1]), 8, 2.0)}


def test_curve_csv(tmp_path):
    emit_curve(tmp_path / "c.csv", _curves(), "csv")
    rows = list(csv.reader(io.StringIO((tmp_path / "c.csv").read_text())))
    assert rows[0] == ["shell_radius", "freq_inv_A", "a", "b"]
    assert len(rows) == 6
    assert float(rows[3][1]) == pytest.approx(2 / 16)
    assert float(rows[3][2]) == 0.5


def test_curve_svg(tmp_path):
    emit_curve(tmp_path / "c.svg", _curves(), "svg")
    root = ET.parse(tmp_path / "c.svg").getroot()
    ns = "{http://www.w3.org/2000/svg}"
    assert len(root.findall(f"{ns}polyline")) == 2
    assert root.find(f"{ns}line[@class='threshold']") is not None
    assert {t.text for t in root.findall(f"{ns}text")} >= {"a", "b"}


def test_curve_validation(tmp_path):
    with pytest.raises(ValidationError):
        emit_curve(tmp_path / "c.txt", _curves(), "png")
    bad = dict(_curves(), c=FSCCurve(np.arange(3.0), np.ones(3), 4))
    with pytest.raises(ValidationError):
        emit_curve(tmp_path / "c.csv", bad)


# ---------------------------------------------------------------------------
# CLI


@pytest.fixture(scope="module")
def cli_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["phantom", str(d / "truth.mrc"), "--size", "16", "--blobs", "3",
                 "--voxel-size", "2", "--seed", "1"]) == 0
    assert main(["simulate", str(d / "truth.mrc"), "--stack", str(d / "stack.mrc"),
                 "--meta", str(d / "meta.csv"), "--count", "40", "--sigma", "0.5",
                 "--max-shift", "1", "--seed", "2"]) == 0
    (d / "fast.cfg").write_text("angle_step = 30\ntranslation_radius = 1\ninner_iters = 10\n"
                                "lowpass_A = 8\n")
    return d


def _refine(d, out, *extra):
    return main(["refine", str(d / "stack.mrc"), str(d / "meta.csv"), "--initial",
                 str(d / "truth.mrc"), "--config", str(d / "fast.cfg"), "--max-iters", "1",
                 "--out-dir", str(out), "--seed", "3", *extra])


def test_cli_fsc_of_map_with_itself(cli_data, tmp_path, capsys):
    t = str(cli_data / "truth.mrc")
    assert main(["fsc", t, t, "--csv", str(tmp_path / "f.csv")]) == 0
    assert "limit reached" in capsys.readouterr().out
    rows = list(csv.reader(io.StringIO((tmp_path / "f.csv").read_text())))
    assert all(float(r[2]) == pytest.approx(1.0) for r in rows[1:])


def test_cli_refine_outputs(cli_data, tmp_path):
    out = tmp_path / "run"
    assert _refine(cli_data, out) == 0
    for name in ("half1.mrc", "half2.mrc", "full.mrc", "fsc.csv", "fsc.svg", "report.json"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["mode"] == "regularized" and len(report["iterations"]) == 1
    assert isinstance(read_mrc(out / "full.mrc"), Volume3D)


def test_cli_refine_is_deterministic(cli_data, tmp_path):
    assert _refine(cli_data, tmp_path / "a", "--mode", "baseline_wiener") == 0
    assert _refine(cli_data, tmp_path / "b", "--mode", "baseline_wiener") == 0
    for name in ("full.mrc", "fsc.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_missing_input_is_io_error(cli_data, tmp_path):
    assert main(["fsc", str(tmp_path / "none.mrc"), str(cli_data / "truth.mrc")]) == 2


def test_cli_usage_error_is_validation_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["refine"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["bogus"])
    assert info.value.code == 1


def test_cli_grid_mismatch(cli_data, tmp_path):
    write_mrc(tmp_path / "small.mrc", Volume3D.zeros(8, 2.0))
    assert main(["fsc", str(cli_data / "truth.mrc"), str(tmp_path / "small.mrc")]) == 1


def test_cli_bad_metadata_writes_nothing(cli_data, tmp_path):
    lines = (cli_data / "meta.csv").read_text().splitlines()
    (tmp_path / "short.csv").write_text("\n".join(lines[:-1]) + "\n")
    out = tmp_path / "never"
    code = main(["refine", str(cli_data / "stack.mrc"), str(tmp_path / "short.csv"),
                 "--initial", str(cli_data / "truth.mrc"), "--out-dir", str(out)])
    assert code == 1
    assert not out.exists()


def test_cli_bad_config_value(cli_data, tmp_path):
    (tmp_path / "bad.cfg").write_text("max_iters = many\n")
    code = main(["refine", str(cli_data / "stack.mrc"), str(cli_data / "meta.csv"), "--initial",
                 str(cli_data / "truth.mrc"), "--config", str(tmp_path / "bad.cfg"),
                 "--out-dir", str(tmp_path / "x")])
    assert code == 1 and not (tmp_path / "x").exists()


def test_cli_reconstruct(cli_data, tmp_path):
    assert main(["reconstruct", str(cli_data / "stack.mrc"), str(cli_data / "meta.csv"),
                 str(tmp_path / "r.mrc"), "--mode", "wiener"]) == 0
    assert read_mrc(tmp_path / "r.mrc").data.shape == (16, 16, 16)
