import csv
import json
import textwrap

import numpy as np
import pytest

from bergerwave import GridSpec, build_operators, total_energy
from bergerwave.cli import main
from bergerwave.config import load_config, parse_config
from bergerwave.exceptions import ConfigurationError
from bergerwave.states import SimState

SIM = """
experiment = "simulate"
seed = 3
dt = 0.05
T = 1.0
[grid]
nx = 8
[initial]
kind = "random"
R = 10.0
"""

DECAY = """
experiment = "decay"
seed = 1
dt = 0.05
T = 1.0
save_every = 10
[grid]
nx = 8
[params]
gamma = 0.5
kappa = 0.0
[decay]
n_trajectories = 1
n_starts = 2
"""

SWEEP = """
experiment = "sweep"
seed = 1
dt = 0.05
T = 1.0
save_every = 10
[grid]
nx = 8
[sweep]
experiment = "decay"
{cells}
[decay]
n_trajectories = 1
n_starts = 2
"""


def write(tmp_path, text, name="c.toml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_syntax_error_reports_position(tmp_path):
    path = write(tmp_path, 'experiment = "simulate"\ndt = \n')
    with pytest.raises(ConfigurationError, match="line 2"):
        load_config(path)


@pytest.mark.parametrize(
    "text, match",
    [
        ('experiment = "simulate"\n[grid]\nnx = 8\nnz = 3\n', "grid.nz"),
        ('experiment = "simulate"\n[params]\nzeta = 1\n', "params.zeta"),
        ('experiment = "nothing"\n', "experiment"),
        ('experiment = "simulate"\ndt = -1\n', "dt"),
        ('experiment = "sweep"\n[sweep]\ngamma = []\nkappa = [1.0]\n', "sweep grid is empty"),
        ('experiment = "dimension"\n', "dimension"),
    ],
)
def test_config_errors_name_the_field(tmp_path, text, match):
    with pytest.raises(ConfigurationError, match=match):
        load_config(write(tmp_path, text))


def test_parse_defaults_and_hash():
    cfg = parse_config({"experiment": "simulate"})
    assert cfg.grid == GridSpec(16) or cfg.grid.nx > 0
    other = parse_config({"experiment": "simulate", "threads": 4})
    assert cfg.config_hash() == other.config_hash()
    assert cfg.config_hash() != parse_config({"experiment": "simulate", "seed": 5}).config_hash()


def test_cli_aborts_on_decreasing_damping(tmp_path, capsys):
    path = write(tmp_path, 'experiment = "decay"\n[grid]\nnx = 8\n[params]\ng = [-1.0]\n')
    code = main(["run", path, "--out", str(tmp_path / "o")])
    assert code == 3
    assert "non-decreasing" in capsys.readouterr().err
    assert not (tmp_path / "o" / "decay.csv").exists()


def test_cli_config_error_exit_code(tmp_path):
    assert main(["run", write(tmp_path, 'experiment = "simulate"\ndt = \n'), "--out", str(tmp_path / "o")]) == 2
    assert main(["sweep", write(tmp_path, SIM, "s.toml"), "--out", str(tmp_path / "o2")]) == 2


def test_simulate_run_outputs(tmp_path):
    out = tmp_path / "sim"
    assert main(["run", write(tmp_path, SIM), "--out", str(out)]) == 0
    for name in ("energy.csv", "final_state.json", "summary.json", "manifest.json", "config.resolved.json", "schema.json"):
        assert (out / name).exists(), name
    rows = read_csv(out / "energy.csv")
    assert len(rows) == 1 + 21
    cfg = load_config(str(tmp_path / "c.toml"))
    ops = build_operators(cfg.grid, mu=cfg.params.mu, gamma=cfg.params.gamma)
    final = SimState.load_json(out / "final_state.json")
    assert final.t == pytest.approx(1.0)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["config_hash"] == cfg.config_hash()
    from bergerwave.experiments import initial_state

    E0 = total_energy(initial_state(cfg, ops), cfg.params, ops).E_total
    head = rows[0].index("E_total")
    assert float(rows[1][head]) == E0


def test_runs_are_deterministic(tmp_path):
    path = write(tmp_path, SIM)
    main(["run", path, "--out", str(tmp_path / "a")])
    main(["run", path, "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "energy.csv").read_text() == (tmp_path / "b" / "energy.csv").read_text()
    main(["run", path, "--out", str(tmp_path / "c"), "--seed", "4"])
    assert (tmp_path / "a" / "energy.csv").read_text() != (tmp_path / "c" / "energy.csv").read_text()
    assert json.loads((tmp_path / "c" / "manifest.json").read_text())["seed"] == 4


def test_single_cell_sweep_matches_direct_run(tmp_path):
    direct = tmp_path / "direct"
    assert main(["run", write(tmp_path, DECAY, "d.toml"), "--out", str(direct)]) == 0
    sweep = tmp_path / "sweep"
    path = write(tmp_path, SWEEP.format(cells="cells = [[0.5, 0.0]]"), "s.toml")
    assert main(["sweep", path, "--out", str(sweep)]) == 0
    cell = next(p for p in sweep.iterdir() if p.is_dir())
    assert (cell / "decay.csv").read_text() == (direct / "decay.csv").read_text()


def test_three_by_three_sweep(tmp_path):
    out = tmp_path / "sw"
    cells = "gamma = [0.0, 0.5, 1.0]\nkappa = [0.0, 0.5, 1.0]"
    assert main(["sweep", write(tmp_path, SWEEP.format(cells=cells)), "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert len(rows) == 1 + 9
    status = rows[0].index("status")
    assert all(r[status] == "ok" for r in rows[1:])
    gk = {(float(r[0]), float(r[1])) for r in rows[1:]}
    assert gk == {(g, k) for g in (0.0, 0.5, 1.0) for k in (0.0, 0.5, 1.0)}
    assert np.isfinite(json.loads((out / "summary.json").read_text())["n_cells"])
