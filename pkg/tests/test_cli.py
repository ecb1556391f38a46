import pytest

from meshweave import cli, simulator
from meshweave.cli import ConfigError, SweepSpec, derive_seed, main, parse_config, parse_config_text
from meshweave.core_model import InvariantViolation
from meshweave.simulator import ScenarioConfig
from meshweave.topology import load_topology

TINY = """
peer_count = 40   # desk-sized
as_count = 5
edges_per_node = 2
policies = mlh+ex
lambda_inv_values = 1h
"""


def write(tmp_path, text, name="run.conf"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_empty_config_gives_defaults(tmp_path):
    spec = parse_config(write(tmp_path, ""))
    base = spec.base
    assert base == ScenarioConfig()
    assert (base.content_count, base.view_rate, base.hop_limit) == (2, 2.0, 4)
    assert (base.peer_bandwidth_min, base.peer_bandwidth_max, base.oss_bandwidth) == (0.5, 10.0, 30.0)
    assert (base.mean_viewing_seconds, base.viewing_cv) == (10800, 6)
    assert spec.lambda_inv_values == (1800, 3600, 7200, 14400, 28800)
    assert len(spec.policies) == 6 and spec.replications == 1


def test_negative_peer_count_names_key_and_line():
    with pytest.raises(ConfigError, match=r"run.conf:2: peer_count"):
        parse_config_text("# comment\npeer_count = -5\n", "run.conf")


def test_policy_list():
    spec = parse_config_text("policies = mlh+ex, scamp-like")
    assert spec.policies == ("mlh+ex", "scamp-like")


@pytest.mark.parametrize(
    "text, needle",
    [
        ("bogus = 1", ":1: unknown key 'bogus'"),
        ("x", "expected 'key = value'"),
        ("peer_count = many", "bad value for 'peer_count'"),
        ("peer_count = 2.5", "bad value for 'peer_count'"),
        ("full_headroom = maybe", "bad value"),
        ("policy = mlh", "use 'policies'"),
        ("replications = 0", "replications"),
        ("policies = mlh, nope", "unknown policy"),
        ("seed = 1\nseed = 2", ":2: duplicate key"),
    ],
)
def test_config_errors(text, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert needle in str(exc.value)


def test_value_syntax():
    spec = parse_config_text(
        "mean_viewing_seconds = 3h\nlambda_inv_values = 30m, 2h, 1d, 90\nfull_headroom = no\n"
        "request_distribution = 1:1, 2:1, 1+2:2\nseed = 11\nreplications = 3\noutput = out.csv\n"
    )
    assert spec.base.mean_viewing_seconds == 10800
    assert spec.lambda_inv_values == (1800, 7200, 86400, 90)
    assert spec.base.full_headroom is False and spec.base.seed == 11
    assert spec.base.request_distribution == (((1,), 1.0), ((2,), 1.0), ((1, 2), 2.0))
    assert spec.replications == 3 and spec.output_path == "out.csv"


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec(policies=())
    with pytest.raises(ValueError):
        SweepSpec(lambda_inv_values=())


def test_missing_config_exits_1(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "nope.conf")]) == 1
    assert "cannot read config" in capsys.readouterr().err


def test_bad_config_exits_1(tmp_path, capsys):
    assert main(["--config", str(write(tmp_path, "peer_count = -5\n"))]) == 1
    assert "peer_count" in capsys.readouterr().err


def test_derived_seeds():
    assert derive_seed(1, 0, 0) == derive_seed(1, 0, 0)
    seeds = {derive_seed(1, li, r) for li in range(3) for r in range(3)}
    assert len(seeds) == 9
    spec = parse_config_text(TINY + "replications = 2\n")
    groups = cli.run_configs(spec)
    assert [c.seed for c in groups[0]] == [derive_seed(1, 0, 0), derive_seed(1, 0, 1)]


def test_policies_share_seeds():
    spec = parse_config_text(TINY.replace("policies = mlh+ex", "policies = mlh, scamp-like"))
    a, b = cli.run_configs(spec)
    assert [c.seed for c in a] == [c.seed for c in b]
    assert a[0].topology_seed == b[0].topology_seed == spec.base.seed


def test_single_run_csv_has_ten_batches_and_summary(tmp_path, capsys):
    out = tmp_path / "out.csv"
    assert main(["--config", str(write(tmp_path, TINY)), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 10 + 1
    assert lines[-1].split(",")[2:4] == ["summary", "10"]
    assert "joining" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path):
    conf = write(tmp_path, TINY)
    main(["--config", str(conf), "--out", str(tmp_path / "a.csv")])
    main(["--config", str(conf), "--out", str(tmp_path / "b.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_row_count_and_replication_pooling(tmp_path):
    conf = write(tmp_path, TINY.replace("policies = mlh+ex", "policies = mlh, scamp-like") + "replications = 2\nsim_days = 4\n")
    out = tmp_path / "out.csv"
    assert main(["--config", str(conf), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 2 * 1 * 2 * 2 + 2
    assert [line.split(",")[3] for line in lines[-2:]] == ["4", "4"]


def test_two_replications_pool_twenty_batches(tmp_path):
    conf = write(tmp_path, TINY + "replications = 2\n")
    out = tmp_path / "out.csv"
    assert main(["--config", str(conf), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[-1].split(",")[3] == "20"


def test_parallel_jobs_match_serial(tmp_path):
    conf = write(tmp_path, TINY.replace("policies = mlh+ex", "policies = mlh, mph") + "sim_days = 4\n")
    main(["--config", str(conf), "--out", str(tmp_path / "serial.csv")])
    main(["--config", str(conf), "--jobs", "2", "--out", str(tmp_path / "pool.csv")])
    assert (tmp_path / "serial.csv").read_bytes() == (tmp_path / "pool.csv").read_bytes()


def test_env_seed_override(tmp_path, monkeypatch):
    conf = write(tmp_path, TINY + "sim_days = 4\n")
    main(["--config", str(conf), "--out", str(tmp_path / "a.csv")])
    monkeypatch.setenv("MESHWEAVE_SEED", "99")
    main(["--config", str(conf), "--out", str(tmp_path / "b.csv")])
    a, b = (tmp_path / "a.csv").read_text(), (tmp_path / "b.csv").read_text()
    assert str(derive_seed(99, 0, 0)) in b and a != b
    monkeypatch.setenv("MESHWEAVE_SEED", "abc")
    assert main(["--config", str(conf)]) == 1


def test_csv_to_stdout(tmp_path, capsys):
    assert main(["--config", str(write(tmp_path, TINY + "sim_days = 3\n"))]) == 0
    captured = capsys.readouterr()
    assert captured.out.startswith("policy,lambda_inv_s,seed")
    assert "joining" in captured.err


def test_invariant_violation_exits_2_with_snapshot(tmp_path, monkeypatch, capsys):
    def broken(config):
        raise InvariantViolation("ledger drift", "# content 0\n")

    monkeypatch.setattr(simulator, "run", broken)
    out = tmp_path / "out.csv"
    assert main(["--config", str(write(tmp_path, TINY)), "--out", str(out)]) == 2
    err = capsys.readouterr().err
    assert "ledger drift" in err
    snaps = list(tmp_path.glob("meshweave-violation-*.txt"))
    assert len(snaps) == 1 and "# content 0" in snaps[0].read_text()
    assert not out.exists()


def test_dump_topology(tmp_path):
    topo = tmp_path / "topo.txt"
    assert main(["--config", str(write(tmp_path, TINY + "sim_days = 3\n")), "--out", str(tmp_path / "o.csv"), "--dump-topology", str(topo)]) == 0
    graph, placement = load_topology(topo)
    assert graph.as_count == 5 and len(placement.node_as) == 42
