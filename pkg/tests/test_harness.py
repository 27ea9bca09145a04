import csv
import json

import numpy as np
import pytest

from maskxrl.errors import ConfigError
from maskxrl.harness import (ExperimentConfig, NumericFailure, config_from_dict, emit_plots, load_config,
                             run_ablations, run_experiment, run_tau_sweep, trainer_from_checkpoint)
from maskxrl.harness.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from maskxrl.harness.plots import plot_sweep, read_sweep_csv
from maskxrl.harness.sweeps import mean_iterations

TINY_HIGHWAY = dict(env="highway", t_max=2, rollout_length=64, hidden=[8], n_eval_episodes=2,
                    eval_interval=1, probes_per_iter=2, buffer={"interval": 1})
TINY_CHAIN = dict(env="chain", n_agents=1, t_max=1, rollout_length=32, hidden=[8], n_eval_episodes=2,
                  probes_per_iter=2)


def _cfg(base=TINY_HIGHWAY, **kw):
    return config_from_dict({**base, **kw})


def _events(art):
    return [json.loads(line) for line in art.events_jsonl.read_text().splitlines()]


# ---------------------------------------------------------------- config


def test_defaults_validate():
    ExperimentConfig().validate()


@pytest.mark.parametrize("bad", [
    {"env": "pong"}, {"t_max": 0}, {"n_eval_episodes": 1}, {"mask": {"tau": 1.5}},
    {"buffer": {"capacity": -1}}, {"unknown_key": 1}, {"ppo": {"not_a_field": 1}},
    {"env_options": {"nope": 3}}, {"env": "connect4", "n_agents": 3},
])
def test_invalid_configs_raise(bad):
    with pytest.raises(ConfigError):
        config_from_dict({**TINY_HIGHWAY, **bad})


def test_load_config_files_and_overrides(tmp_path):
    for name in ("default", "highway", "chain", "connect4"):
        load_config(f"configs/{name}.toml")
    p = tmp_path / "c.toml"
    p.write_text('env = "chain"\nn_agents = 1\n[mask]\ntau = 0.3\n')
    cfg = load_config(p, {"seed": 4, "mask": {"tau": 0.7}})
    assert cfg.seed == 4 and cfg.mask.tau == 0.7
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("env = [")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_fingerprint_ignores_output_location():
    a = _cfg()
    assert a.fingerprint() == a.replace(output_dir="/elsewhere", run_name="x").fingerprint()
    assert a.fingerprint() != a.replace(seed=1).fingerprint()


# ---------------------------------------------------------------- runs


def test_single_iteration_run(out_root):
    art = run_experiment(_cfg(TINY_CHAIN))
    assert len(art.records) == 1 and len(art.checkpoints) == 1
    for p in (art.config_path, art.metrics_csv, art.metrics_jsonl, art.events_jsonl, art.critical_states_csv):
        assert p.exists()
    assert art.run_dir.parent == out_root
    assert (art.run_dir / "plots" / "curves.svg").exists()


def test_phase_order_in_events(out_root):
    art = run_experiment(_cfg())
    phases = [(e["iteration"], e["phase"]) for e in _events(art) if e["event"] == "phase"]
    assert phases == [(i, p) for i in (1, 2) for p in ("rollout", "ppo", "mask", "collab", "eval")]


def test_runs_are_reproducible(out_root):
    a = run_experiment(_cfg(run_name="a"))
    b = run_experiment(_cfg(run_name="b"))
    assert a.records == b.records
    assert a.metrics_csv.read_text() == b.metrics_csv.read_text()
    c = run_experiment(_cfg(run_name="c", seed=1))
    assert c.records != a.records


def test_disable_comm_equals_zero_capacity(out_root):
    a = run_experiment(_cfg(disable_comm=True, run_name="nocomm"))
    b = run_experiment(_cfg(buffer={"capacity": 0, "interval": 1}, run_name="cap0"))
    assert a.records == b.records
    assert not any(e["event"] == "broadcast" for e in _events(a))


def test_invalid_config_writes_nothing(out_root):
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(env="highway", t_max=0))
    assert not any(out_root.iterdir()) if out_root.exists() else True


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_is_reported(out_root):
    cfg = _cfg(TINY_CHAIN, t_max=3, ppo={"lr": 1e300})
    with pytest.raises(NumericFailure):
        run_experiment(cfg)
    assert (cfg.run_dir() / "error.json").exists()
    assert (cfg.run_dir() / "checkpoints" / "failure" / "state.json").exists()


def test_checkpoint_restore_reproduces_evaluation(out_root):
    art = run_experiment(_cfg(TINY_CHAIN))
    tr = trainer_from_checkpoint(art.checkpoints[-1])
    assert tr.evaluate() == art.records[-1]


# ---------------------------------------------------------------- sweeps and plots


def test_tau_sweep_single_and_duplicate(out_root):
    table = run_tau_sweep(_cfg(TINY_CHAIN), [0.4], seeds=1)
    assert [r.label for r in table.rows] == ["tau=0.4"]
    assert table.csv_path.exists() and table.text_path.exists()
    with pytest.raises(ConfigError):
        run_tau_sweep(_cfg(TINY_CHAIN), [0.3, 0.3], seeds=1)
    with pytest.raises(ConfigError):
        run_tau_sweep(_cfg(TINY_CHAIN), [1.0], seeds=1)


def test_ablations_table(out_root, monkeypatch):
    table = run_ablations(_cfg(TINY_CHAIN), seeds=1)
    assert [r.label for r in table.rows] == ["full", "no_comm", "no_adaptive_eps"]
    assert [r.flagged for r in table.rows] == [True, False, False]
    rows = read_sweep_csv(table.csv_path)
    for r, row in zip(table.rows, rows):
        assert float(row["fidelity_mean"]) == r.mean("fidelity")
    import matplotlib.axes

    heights = {}
    real_bar = matplotlib.axes.Axes.bar

    def spy(ax, x, h, *a, **kw):
        heights.setdefault("bars", []).append(list(h))
        return real_bar(ax, x, h, *a, **kw)

    monkeypatch.setattr(matplotlib.axes.Axes, "bar", spy)
    svg = plot_sweep(table.csv_path)[0]
    assert svg.exists() and "<svg" in svg.read_text()
    fid = [float(row["fidelity_mean"]) for row in rows]
    assert fid in heights["bars"]


def test_mean_iterations_counts_misses():
    assert mean_iterations([2, None], 10) == 6.5
    assert np.isnan(mean_iterations([], 10))


def test_plot_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        emit_plots(tmp_path / "missing")
    with pytest.raises(FileNotFoundError):
        emit_plots(tmp_path)


def test_plot_curves_match_metrics(out_root):
    art = run_experiment(_cfg(TINY_CHAIN))
    paths = emit_plots(art.run_dir)
    assert paths
    with open(art.run_dir / "plots" / "curves.csv") as f:
        rows = list(csv.DictReader(f))
    assert float(rows[0]["fidelity"]) == art.records[0].fidelity


# ---------------------------------------------------------------- CLI


def _write_cfg(tmp_path, body):
    p = tmp_path / "cfg.toml"
    p.write_text(body)
    return str(p)


CHAIN_TOML = ('env = "chain"\nn_agents = 1\nt_max = 1\nrollout_length = 32\nhidden = [8]\n'
              'n_eval_episodes = 2\nprobes_per_iter = 2\n')


def test_cli_train_and_eval(out_root, tmp_path, capsys):
    path = _write_cfg(tmp_path, CHAIN_TOML)
    assert main(["train", "--config", path, "--seed", "3", "--deterministic", "--disable-comm"]) == EXIT_OK
    run_dir = next(out_root.iterdir())
    snap = json.loads((run_dir / "config.json").read_text())["config"]
    assert snap["seed"] == 3 and snap["disable_comm"]
    ckpt = run_dir / "checkpoints" / "iter_0001"
    before = {p.name: p.read_bytes() for p in ckpt.iterdir()}
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ckpt), "--out", str(tmp_path / "ev")]) == EXIT_OK
    rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    trained = json.loads((run_dir / "metrics.jsonl").read_text().splitlines()[-1])
    assert rec["fidelity"] == trained["fidelity"]
    assert {p.name: p.read_bytes() for p in ckpt.iterdir()} == before
    assert main(["plot", "--run", str(run_dir)]) == EXIT_OK


def test_cli_exit_codes(out_root, tmp_path):
    assert main(["train", "--config", str(tmp_path / "none.toml")]) == EXIT_CONFIG
    assert main(["train", "--config", _write_cfg(tmp_path, 'env = "pong"\n')]) == EXIT_CONFIG
    assert main(["sweep-tau", "--config", _write_cfg(tmp_path, CHAIN_TOML), "--taus", "0.3,x"]) == EXIT_CONFIG
    assert main(["plot", "--run", str(tmp_path / "nope")]) == EXIT_CONFIG
    with pytest.warns(RuntimeWarning):
        code = main(["train", "--config", _write_cfg(tmp_path, CHAIN_TOML.replace("t_max = 1", "t_max = 3")
                                                      + "[ppo]\nlr = 1e300\n")])
    assert code == EXIT_NUMERIC
