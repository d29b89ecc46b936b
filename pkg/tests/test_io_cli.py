import json
import numpy as np
import pytest

from flowlab.geometry import FlatCylinder, build_mesh
from flowlab import serialize
from flowlab.config import (ConfigError, parse_config_text,
                            build_descriptor, EXPERIMENTS)
from flowlab.cli import main as cli_main


@pytest.fixture(scope="module")
def cyl():
    return build_mesh(FlatCylinder(1.0, 1.0, 8, 8))


# ------------------------------------------------------------- serialize --- #

def test_binary_field_roundtrip(tmp_path, cyl):
    arr = np.random.default_rng(0).random(cyl.n_vertices)
    p = tmp_path / "field.flab"
    serialize.write_binary_field(p, arr, mesh_hash=serialize.mesh_hash(cyl),
                                 t=0.25, group="SU2")
    back, meta = serialize.read_binary_field(p)
    assert np.array_equal(back, arr)
    assert meta["t"] == 0.25
    assert meta["group"] == "SU2"
    assert meta["mesh_hash"] == serialize.mesh_hash(cyl)


def test_binary_field_magic(tmp_path):
    p = tmp_path / "x.flab"
    serialize.write_binary_field(p, np.arange(4.0))
    assert p.read_bytes()[:4] == b"FLAB"


def test_binary_rejects_corrupt(tmp_path):
    p = tmp_path / "bad.flab"
    p.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValueError):
        serialize.read_binary_field(p)


def test_mesh_hash_stable_and_sensitive(cyl):
    assert serialize.mesh_hash(cyl) == serialize.mesh_hash(cyl)
    other = build_mesh(FlatCylinder(1.0, 1.0, 8, 10))
    assert serialize.mesh_hash(cyl) != serialize.mesh_hash(other)


def test_csv_roundtrip(tmp_path):
    p = tmp_path / "data.csv"
    serialize.write_csv(p, {"a": [1, 2], "b": [0.5, 0.25]})
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "a,b"
    assert len(lines) == 3


def test_write_json_numpy_coercion(tmp_path):
    p = tmp_path / "v.json"
    serialize.write_json(p, {"x": np.float64(1.5), "ns": np.arange(3)})
    data = json.loads(p.read_text())
    assert data["x"] == 1.5
    assert data["ns"] == [0, 1, 2]


# ---------------------------------------------------------------- config --- #

def test_parse_minimal():
    cfg = parse_config_text("experiment = doubling\nseed = 4\n")
    assert cfg.experiment == "doubling"
    assert cfg.get("seed") == 4


def test_unknown_key_fatal():
    with pytest.raises(ConfigError):
        parse_config_text("experiment = doubling\nbogus = 1\n")


def test_duplicate_key_fatal():
    with pytest.raises(ConfigError):
        parse_config_text("experiment = doubling\nseed = 1\nseed = 2\n")


def test_bad_choice_fatal():
    with pytest.raises(ConfigError):
        parse_config_text("experiment = doubling\ngroup = SU9\n")


def test_bad_experiment_fatal():
    with pytest.raises(ConfigError):
        parse_config_text("experiment = warp-drive\n")


def test_list_values():
    cfg = parse_config_text("experiment = lyh-sharp\n"
                            "resolutions = 16, 32\n"
                            "times = 0.01,0.1\n")
    assert cfg.get("resolutions") == [16, 32]
    assert cfg.get("times") == [0.01, 0.1]


def test_comments_and_blanks_ignored():
    cfg = parse_config_text("# study\n\nexperiment = zeta\nr = 0.2\n")
    assert cfg.get("r") == 0.2


def test_build_descriptor_resolution_override():
    cfg = parse_config_text("experiment = lyh-sharp\nmanifold = cylinder\n")
    d16 = build_descriptor(cfg, 16)
    d32 = build_descriptor(cfg, 32)
    assert d16.nx == 16 and d32.nx == 32


def test_resolved_text_roundtrips():
    cfg = parse_config_text("experiment = zeta\nr = 0.2\nseed = 7\n")
    cfg2 = parse_config_text(cfg.resolved_text())
    assert cfg2.experiment == "zeta"
    assert cfg2.get("r") == 0.2 and cfg2.get("seed") == 7


def test_experiment_ids_complete():
    assert len(EXPERIMENTS) == 13
    from flowlab.experiments import _CLAIMS
    assert set(_CLAIMS) == set(EXPERIMENTS)


# ------------------------------------------------------------------- cli --- #

def test_cli_runs_experiment(tmp_path, capsys):
    cfgp = tmp_path / "d.cfg"
    cfgp.write_text("experiment = dist-lemma\nmanifold = cylinder\n"
                    "nx = 10\nny = 10\n")
    rc = cli_main(["dist-lemma", "--config", str(cfgp),
                   "--out", str(tmp_path / "runs"), "--strict"])
    assert rc == 0
    verdict = json.loads(
        (tmp_path / "runs" / "dist-lemma" / "verdict.json").read_text())
    assert verdict["passed"]
    assert verdict["claim"] == "squared-distance-identities"
    assert (tmp_path / "runs" / "dist-lemma" / "resolved.cfg").exists()
    assert (tmp_path / "runs" / "dist-lemma" / "plot.py").exists()


def test_cli_wrong_subcommand_for_config(tmp_path):
    cfgp = tmp_path / "d.cfg"
    cfgp.write_text("experiment = doubling\n")
    rc = cli_main(["zeta", "--config", str(cfgp)])
    assert rc == 2


def test_cli_suite(tmp_path, capsys):
    (tmp_path / "a.cfg").write_text(
        "experiment = dist-lemma\nmanifold = cylinder\nnx = 10\nny = 10\n")
    (tmp_path / "b.cfg").write_text(
        "experiment = doubling\nnx = 10\nny = 10\nt_final = 0.05\n")
    manifest = tmp_path / "suite.txt"
    manifest.write_text("a.cfg\nb.cfg\n")
    rc = cli_main(["suite", str(manifest), "--out",
                   str(tmp_path / "runs"), "--strict"])
    assert rc == 0
    summary = json.loads((tmp_path / "runs" / "suite.json").read_text())
    assert summary["n_experiments"] == 2
    assert summary["all_passed"]
    out = capsys.readouterr().out
    assert "PASS" in out


def test_cli_seed_override(tmp_path):
    cfgp = tmp_path / "d.cfg"
    cfgp.write_text("experiment = dist-lemma\nmanifold = cylinder\n"
                    "nx = 10\nny = 10\nseed = 1\n")
    rc = cli_main(["dist-lemma", "--config", str(cfgp), "--seed", "9",
                   "--out", str(tmp_path / "runs")])
    assert rc == 0
    resolved = (tmp_path / "runs" / "dist-lemma"
                / "resolved.cfg").read_text()
    assert "seed = 9" in resolved
