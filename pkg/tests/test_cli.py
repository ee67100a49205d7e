import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from swinghjb import ConfigurationError, DomainError, penalty_phi
from swinghjb.cli import DEFAULTS_DOC, parse_config
from swinghjb.cli.main import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = """
[model]
kind = "gbm"
mu = 0.05
sigma = 0.3
rate = 0.03

[contract]
maturity = 1.0
strike = 10.0
u_bar = 4.0
m = {m}
M = {M}
"""


def _write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_minimal_config_gets_documented_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, MINIMAL.format(m=2.0, M=6.0)), output_root=str(tmp_path))
    for key, default in DEFAULTS_DOC.items():
        section, _, name = key.rpartition(".")
        if default == "required" or section == "contract.penalty" or default is None:
            continue
        assert cfg.values[section][name] == default, key
    assert cfg.grid["p_ref"] == 10.0
    assert cfg.verify["start_p"] == 10.0
    assert cfg.output_dir == tmp_path / "cfg"


def test_invalid_band_names_the_keys(tmp_path):
    with pytest.raises(ConfigurationError, match="contract.m must be < contract.M"):
        parse_config(_write(tmp_path, MINIMAL.format(m=10.0, M=5.0)))


def test_unreachable_minimum_is_an_empty_domain(tmp_path):
    text = MINIMAL.format(m=5.0, M=6.0).replace("u_bar = 4.0", "u_bar = 1.0")
    with pytest.raises(ConfigurationError, match="empty"):
        parse_config(_write(tmp_path, text))


def test_unknown_key_is_rejected_with_its_path(tmp_path):
    text = MINIMAL.format(m=2.0, M=6.0) + "\n[grid]\nn_q = 3\n"
    with pytest.raises(ConfigurationError, match="grid.n_q: unknown key"):
        parse_config(_write(tmp_path, text))


def test_start_outside_domain_is_rejected(tmp_path):
    text = MINIMAL.format(m=2.0, M=6.0) + "\n[verify]\nstart_z = -3.0\n"
    with pytest.raises(DomainError):
        parse_config(_write(tmp_path, text))


def test_cli_errors_exit_2(tmp_path, capsys):
    path = _write(tmp_path, MINIMAL.format(m=10.0, M=5.0))
    assert main(["run", str(path)]) == 2
    assert "contract.m must be < contract.M" in capsys.readouterr().err


def test_dry_run_writes_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(CONFIGS / "demo_strict.toml"), "--dry-run", "--output", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert len(printed["config_hash"]) == 64
    assert printed["grid"]["n_z"] == 64
    assert not out.exists()


def test_overrides_change_the_hash(tmp_path):
    base = parse_config(CONFIGS / "demo_strict.toml").config_hash()
    from swinghjb.cli import apply_overrides, load_raw, resolve

    raw = load_raw(CONFIGS / "demo_strict.toml")
    moved = resolve(apply_overrides(raw, output=str(tmp_path)), "demo_strict.toml")
    reseeded = resolve(apply_overrides(raw, seed=1), "demo_strict.toml")
    assert moved.config_hash() == base
    assert reseeded.config_hash() != base


@pytest.fixture(scope="module")
def strict_runs(tmp_path_factory):
    dirs = [tmp_path_factory.mktemp(f"strict{i}") for i in range(2)]
    codes = [main(["run", str(CONFIGS / "demo_strict.toml"), "--output", str(d)]) for d in dirs]
    return codes, dirs


@pytest.fixture(scope="module")
def penalized_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("penalized")
    code = main(["run", str(CONFIGS / "demo_penalized.toml"), "--output", str(out)])
    return code, out


def test_strict_demo_writes_every_artifact(strict_runs):
    codes, (out, _) = strict_runs
    assert codes == [0, 0]
    names = {p.name for p in out.iterdir()}
    assert {
        "surface_strict_direct.csv", "surface_strict_direct.json",
        "surface_strict_normalized.csv", "surface_strict_normalized.json",
        "exercise_curve.csv", "ladder_convergence.csv", "verification.json", "manifest.json",
    } <= names
    verification = json.loads((out / "verification.json").read_text())
    assert verification["hard_failed"] is False
    statuses = [c["status"] for r in verification["reports"] for c in r["checks"]]
    assert "fail" not in statuses


def test_ladder_tail_settles(strict_runs):
    _, (out, _) = strict_runs
    with open(out / "ladder_convergence.csv") as fh:
        rows = list(csv.DictReader(fh))
    gaps = [float(r["sup_gap"]) for r in rows]
    assert all(b <= a + 1e-9 for a, b in zip(gaps[-4:], gaps[-3:]))
    assert float(rows[-1]["successive_rel_gap"]) < 1e-2


def test_runs_are_byte_identical(strict_runs):
    _, (a, b) = strict_runs
    for path in sorted(a.iterdir()):
        assert path.read_bytes() == (b / path.name).read_bytes(), path.name


def test_manifest_lists_hashes_per_artifact(strict_runs):
    _, (out, _) = strict_runs
    manifest = json.loads((out / "manifest.json").read_text())
    listed = {a["path"] for a in manifest["artifacts"]}
    assert listed == {p.name for p in out.iterdir()} - {"manifest.json"}
    for entry in manifest["artifacts"]:
        assert entry["config_hash"] == manifest["config_hash"]
        assert entry["sha256"] == hashlib.sha256((out / entry["path"]).read_bytes()).hexdigest()
    assert "output" not in manifest["config"]


def test_penalized_terminal_slice_round_trips(penalized_run):
    code, out = penalized_run
    assert code == 0
    cfg = parse_config(CONFIGS / "demo_penalized.toml")
    c = cfg.contract
    with open(out / "surface_penalized_contract.csv") as fh:
        reader = csv.reader(fh)
        assert next(reader) == ["t", "p", "z", "value"]
        rows = [r for r in reader if float(r[0]) == c.maturity]
    grid = cfg.rect_grid()
    assert len(rows) == grid.p_nodes.size * grid.z_nodes.size
    for t, p, z, value in rows:
        expected = penalty_phi(c.penalty, float(p), float(z), c.m, c.M)
        assert value == repr(float(expected))
    sidecar = json.loads((out / "surface_penalized_contract.json").read_text())
    assert sidecar["grid"]["z"]["cells"] == grid.z_nodes.size - 1
    assert np.isclose(sidecar["grid"]["p"]["min"], grid.p_nodes[0])
