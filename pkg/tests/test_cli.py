import json

import pytest
import yaml

from hyperfit.cli import main
from hyperfit.config import ConfigError, config_hash, load_config, to_mpa, validate_config
from hyperfit.mesh import generate_plate_mesh, write_mesh
from hyperfit.pipeline import file_checksum, run_pipeline

SMALL = {
    "seed": 1,
    "geometry": {"plate": {"width": 20, "height": 30, "element_size": 4, "thickness": 2,
                           "holes": [[10, 15, 4, 2.5, 0.3]]}},
    "load": {"n_snap": 3, "displacement": 6},
    "ddi": {"pseudo_stiffness": "1000 kPa", "max_iter": 50},
    "pann": {"width": 4, "restarts": 2, "maxiter": 200},
    "eval": {"n": 11},
}


@pytest.fixture
def mesh_file(tmp_path):
    path = tmp_path / "plate.txt"
    write_mesh(generate_plate_mesh(10.0, 20.0, h=2.0), path)
    return path


def test_empty_config_over_a_mesh_gets_defaults(mesh_file):
    cfg = validate_config({}, mesh=mesh_file)
    assert cfg["ddi"]["nstar_ratio"] == 0.01 and cfg["ddi"]["stiffness_factor"] == 10.0
    assert cfg["ddi"]["formulation"] == "ul" and cfg["seed"] == 0
    assert cfg["load"]["displacement"] == pytest.approx(10.0)  # half the height


def test_stress_units():
    assert to_mpa("500 kPa") == pytest.approx(0.5)
    assert to_mpa(2, "GPa") == 2000.0
    with pytest.raises(ValueError):
        to_mpa("3 mm")
    cfg = validate_config({**SMALL, "units": "kPa", "material": {"E": 1000}})
    assert cfg["material"]["E"] == pytest.approx(1.0) and cfg["ddi"]["pseudo_stiffness"] == pytest.approx(1.0)


def test_every_problem_is_reported():
    bad = {**SMALL, "noise": {"eta": -1e-4, "grid": 1000}, "ddi": {"formulation": "xl"}, "colour": "red"}
    with pytest.raises(ConfigError) as info:
        validate_config(bad)
    text = "\n".join(info.value.errors)
    for key in ("noise.eta", "noise.grid", "ddi.formulation", "colour: unknown key"):
        assert key in text
    with pytest.raises(ConfigError):
        validate_config({})


def test_config_hash_ignores_output_directory():
    a = validate_config(SMALL)
    b = validate_config({**SMALL, "output": "/elsewhere"})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(validate_config({**SMALL, "seed": 2}))


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    cfg = validate_config(SMALL)
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    return cfg, a, run_pipeline(cfg, a), b, run_pipeline(cfg, b)


def test_pipeline_is_deterministic(runs):
    _, a, ma, b, mb = runs
    for name in ("ddi/database.csv", "train/model.pann", "eval/r2.csv", "eval/paths.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert ma["config_hash"] == mb["config_hash"]


def test_manifest_lists_every_output_once(runs):
    _, a, ma, _, _ = runs
    on_disk = sorted(str(p.relative_to(a)) for p in a.rglob("*") if p.is_file() and p.name != "manifest.json")
    assert sorted(ma["files"]) == on_disk
    assert all(ma["files"][k] == file_checksum(a / k) for k in on_disk)
    assert set(ma["stages"]) == {"generate", "noise", "ddi", "train", "eval"}


def test_pipeline_resumes_after_a_deleted_stage(runs):
    cfg, a, _, _, _ = runs
    before = (a / "train" / "model.pann").read_bytes()
    for f in (a / "eval").iterdir():
        f.unlink()
    (a / "eval").rmdir()
    m = run_pipeline(cfg, a)
    status = {k: v["status"] for k, v in m["stages"].items()}
    assert status == {"generate": "reused", "noise": "reused", "ddi": "reused", "train": "reused", "eval": "ran"}
    assert (a / "train" / "model.pann").read_bytes() == before


def test_cli_validate_prints_normalised_config(tmp_path, capsys, mesh_file):
    assert main(["validate", "--mesh", str(mesh_file)]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["geometry"]["mesh"] == str(mesh_file) and cfg["units"] == "MPa"
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"noise": {"eta": -1.0}}))
    assert main(["validate", "--config", str(path)]) == 2
    assert "noise.eta" in capsys.readouterr().err


def test_cli_runs_the_stages(tmp_path, capsys):
    cfgfile = tmp_path / "c.yaml"
    cfgfile.write_text(yaml.safe_dump(SMALL))
    assert load_config(cfgfile)["seed"] == 1
    raw, noisy, ddi = tmp_path / "raw", tmp_path / "noisy", tmp_path / "ddi"
    assert main(["generate", "--config", str(cfgfile), "--out", str(raw)]) == 0
    assert main(["noise", "--in", str(raw), "--eta", "1e-4", "--grid", "64", "--out", str(noisy)]) == 0
    code = main(["ddi", "--in", str(noisy), "--pseudo-stiffness", "1 MPa", "--max-iter", "50", "--out", str(ddi)])
    assert code in (0, 3) and (ddi / "database.csv").is_file()
    model = tmp_path / "m.pann"
    assert main(["train", "--db", str(ddi / "database.csv"), "--width", "3", "--restarts", "1", "--maxiter", "100",
                 "--out", str(model)]) == 0
    assert main(["eval", "--ddi", str(ddi), "--model", str(model), "--out", str(tmp_path / "ev")]) == 0
    assert (tmp_path / "ev" / "r2.csv").is_file()
    out = tmp_path / "sw.csv"
    assert main(["sweep", "--in", str(raw), "--param", "nstar-ratio", "--values", "0.05,2", "--out", str(out)]) == 3
    assert len(out.read_text().splitlines()) == 3
