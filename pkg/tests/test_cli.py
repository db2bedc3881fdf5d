import hashlib
import json

import pytest

from qnet.cli import main
from qnet.config import ConfigError, load_config, make_equilibrium_set

SWITCH_YAML = """\
version: 1
network:
  preset: switch_example
  threshold_base: 1.0
experiment:
  n_values: [5, 20]
  horizon: 800
  replications: 2
  base_seed: 3
  warmup_frac: 0.2
  target_rates: [0.5, 0.5, 0.5]
simulate:
  n: 10
  horizon: 500
  seed: 1
  sample_count: 50
fluid:
  hbar: 1.0
  horizon: 30
  initial_q: [1, 2.4, 0, 0, 0, 0, 0.3, 1]
verify:
  set: {kind: switch, a: 0.5}
  hbar: 1.0
  target_rates: [0.5, 0.5, 0.5]
  time_budget: 120
  starts:
    - [1, 0.4, 0, 0, 0, 0, 0.7, 1]
    - [1, 1.9, 0, 0, 0, 0, 0.2, 1]
export:
  trace_queues: [1, 6]
  fluid_phase: [1, 6]
"""

TANDEM_YAML = """\
version: 1
network:
  stations: 2
  threshold_base: 1.0
  flows:
    - path: [0, 1]
      weight: 1
      arrival: {exponential: 1.0}
      service: [{exponential: 0.8}, {exponential: 0.5}]
"""


@pytest.fixture
def switch_cfg(tmp_path):
    p = tmp_path / "switch.yaml"
    p.write_text(SWITCH_YAML)
    return p


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


class TestConfig:
    def test_load_switch(self, switch_cfg):
        cfg = load_config(switch_cfg)
        assert cfg.network.num_classes == 8
        assert cfg.experiment.n_values == (5.0, 20.0)

    def test_load_explicit_network(self, tmp_path):
        p = tmp_path / "tandem.yaml"
        p.write_text(TANDEM_YAML)
        cfg = load_config(p)
        assert cfg.network.num_classes == 2
        assert cfg.network.arrival_dist[0].rate == 1.0

    def test_unknown_field_rejected(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text(TANDEM_YAML + "bogus_field: 1\n")
        with pytest.raises(ConfigError, match="unknown fields"):
            load_config(p)

    def test_unknown_nested_field_rejected(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text(TANDEM_YAML.replace("weight: 1", "weight: 1\n      color: red"))
        with pytest.raises(ConfigError, match="unknown fields"):
            load_config(p)

    def test_wrong_version_rejected(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text(TANDEM_YAML.replace("version: 1", "version: 99"))
        with pytest.raises(ConfigError, match="version"):
            load_config(p)

    def test_bad_distribution_rejected(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text(TANDEM_YAML.replace("{exponential: 1.0}", "{weibull: 1.0}"))
        with pytest.raises(ConfigError):
            load_config(p)

    def test_rational_weight(self, tmp_path):
        p = tmp_path / "w.yaml"
        p.write_text(TANDEM_YAML.replace("weight: 1", 'weight: "2/3"'))
        cfg = load_config(p)
        from fractions import Fraction

        assert cfg.network.weights[0] == Fraction(2, 3)

    def test_set_construction(self):
        assert len(make_equilibrium_set({"kind": "switch", "a": 0.5}).pieces) == 2
        assert len(make_equilibrium_set({"kind": "tandem_point"}).pieces) == 1
        with pytest.raises(ConfigError):
            make_equilibrium_set({"kind": "nonsense"})


class TestCli:
    def test_validate_ok(self, switch_cfg, capsys):
        assert main(["validate", "--config", str(switch_cfg)]) == 0
        out = capsys.readouterr().out
        assert "valid" in out
        assert "1.2" in out  # offered load echoed

    def test_validate_bad_config_exit_1(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("version: 1\nnetwork: {preset: nonsense}\n")
        assert main(["validate", "--config", str(p)]) == 1

    def test_simulate_writes_outputs(self, switch_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(switch_cfg), "--out", str(out)]) == 0
        doc = json.loads((out / "trace.json").read_text())
        assert doc["seed"] == 1
        assert len(doc["flow_depart_rates"]) == 3
        assert (out / "trace.csv").exists()

    def test_fluid_writes_trajectory(self, switch_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["fluid", "--config", str(switch_cfg), "--out", str(out)]) == 0
        lines = (out / "fluid.csv").read_text().splitlines()
        assert len(lines) > 2

    def test_verify_c1_and_c2(self, switch_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["verify-c1", "--config", str(switch_cfg), "--out", str(out)]) == 0
        c1 = json.loads((out / "c1.json").read_text())
        assert c1["ok"]
        assert main(["verify-c2", "--config", str(switch_cfg), "--out", str(out)]) == 0
        c2 = json.loads((out / "c2.json").read_text())
        assert c2["max_deviation"] == 0.0

    def test_sweep_and_determinism(self, switch_cfg, tmp_path):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        assert main(["sweep", "--config", str(switch_cfg), "--out", str(out1)]) == 0
        assert main(["sweep", "--config", str(switch_cfg), "--out", str(out2)]) == 0
        assert sha(out1 / "rates.csv") == sha(out2 / "rates.csv")
        assert sha(out1 / "rates.json") == sha(out2 / "rates.json")

    def test_export_phase_files(self, switch_cfg, tmp_path):
        out = tmp_path / "exp"
        assert main(["export", "--config", str(switch_cfg), "--out", str(out)]) == 0
        queues = (out / "queues.csv").read_text().splitlines()
        assert queues[0] == "time,q1,q6"
        phase = (out / "phase.csv").read_text().splitlines()
        assert phase[0] == "time,q1,q6"

    def test_missing_section_exit_1(self, tmp_path):
        p = tmp_path / "min.yaml"
        p.write_text(TANDEM_YAML)
        assert main(["sweep", "--config", str(p)]) == 1
