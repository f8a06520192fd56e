import sys
import os.path
import pytest
from armcmc import configuratt
from armcmc.exceptions import ConfigError
from omegaconf import OmegaConf

testdir = os.path.dirname(os.path.abspath(__file__))


def test_includes(path=None):
    path = path or os.path.join(testdir, "testconf.yaml")
    conf, deps = configuratt.load(path, use_sources=[])
    OmegaConf.save(conf, sys.stderr)

    assert conf.model == "hunt_crossley"
    # included values, overridden by the section, on top of the _use chain
    assert OmegaConf.to_container(conf.armcmc) == dict(pack_size=50, epsilon=0.05, delta=0.8, sigma_nu=0.5)
    assert conf.profiles.quiet.epsilon == 0.1
    assert os.path.join(testdir, "test_include.yaml") in deps
    assert os.path.abspath(path) in deps


def test_nested():
    nested = [os.path.join(testdir, name) for name in ("test_nest_a.yml", "test_nest_b.yml", "test_nest_c.yml")]
    confs, deps = configuratt.load_nested(nested, nameattr="_name")

    assert sorted(confs) == ["actuator_fast", "needle_deep", "needle_slow"]
    assert confs["actuator_fast"].armcmc.pack_size == 20
    assert confs["needle_deep"].armcmc.pack_size == 200
    assert confs["needle_deep"].needle.amplitude == 20.0
    assert "_name" not in confs["needle_slow"]
    assert len(deps) == 3

    print(f"Dependencies are: {', '.join(sorted(deps))}")


def test_nested_by_filename():
    confs, _ = configuratt.load_nested([os.path.join(testdir, "test_nest_a.yml")])
    assert list(confs) == ["test_nest_a"]


def test_module_include():
    conf, deps = configuratt.load(os.path.join(testdir, "test_run.yml"))
    # from the package's defaults.yml
    assert conf.armcmc.pack_size == 100
    assert conf.heatmap.bins == 100
    # overridden locally
    assert conf.armcmc.epsilon == 0.1
    assert any(dep.endswith(os.path.join("presets", "defaults.yml")) for dep in deps)


def test_errors():
    with pytest.raises(ConfigError):
        configuratt.load(os.path.join(testdir, "test_bad_use.yaml"))
    with pytest.raises(ConfigError):
        configuratt.load(os.path.join(testdir, "test_bad_include.yaml"))
    with pytest.raises(ConfigError):
        configuratt.load(os.path.join(testdir, "no_such_config.yaml"))
    with pytest.raises(ConfigError):
        configuratt.resolve_include_path("(no_such_module_xyz)foo.yml", os.path.join(testdir, "x.yml"), "test")
    with pytest.raises(NameError):
        configuratt.load_nested([os.path.join(testdir, "test_include.yaml")], nameattr="_name")


if __name__ == "__main__":
    test_includes(sys.argv[1] if len(sys.argv) > 1 else None)
