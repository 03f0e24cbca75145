import hashlib
import json

import numpy as np
import pandas as pd
import pytest

from bff.config import Settings
from bff.dependencies import derive_seed, load_config, stage_rng
from bff.main import main
from bff.models.acoustics import ImagingGrid, TransducerConfig
from bff.models.bubble import DriveSignal
from bff.models.pipeline import BubbleConfig, PipelineConfig
from bff.models.tracks import EventTable
from bff.presets import PRESETS, get_preset
from bff.services import io_service as io
from bff.services.acoustics_service import envelope_log
from bff.services.bubble_service import integrate_radius, sonovue_preset
from bff.services.exceptions import InputError
from bff.services.pipeline_service import DatasetPipeline

TINY_CONFIG = """
name = "tiny"
seed = 5

[network]
max_level = 0
initial_position = [-0.9e-3, 0.0, 0.01]
initial_direction = [1.0, 0.0, 0.0]
initial_radius = 40e-6

[network.edge_step_f]
kind = "constant"
value = 200e-6

[network.inside_f]
kind = "box"
low = [-1e-3, -0.5e-3, 9e-3]
high = [1e-3, 0.5e-3, 11e-3]

[boundary]
inlet_pa = 250.0

[bubbles]
count = 3
n_frames = 3
frame_rate = 100.0
oversample = 4

[transducer]
n_elements = 16
pitch = 0.3e-3
f0 = 5e6
fs = 25e6
max_depth = 0.012

[grid]
x_min = -0.5e-3
x_max = 0.5e-3
z_min = 9.5e-3
z_max = 10.5e-3
"""

SERIAL = Settings(threads=1, checkpoint=False)


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_CONFIG)
    return path


def test_derive_seed_stable():
    """Stage seeds come from sha256 of master and stage name"""
    digest = hashlib.sha256(b"7:flow").digest()
    assert derive_seed(7, "flow") == int.from_bytes(digest[:8], "little") & (2**63 - 1)
    assert derive_seed(7, "flow") != derive_seed(7, "seed")
    assert derive_seed(7, "flow") != derive_seed(8, "flow")
    assert 0 <= derive_seed(2**63 - 1, "noise") < 2**63


def test_stage_rng_reproducible():
    """The same stage draws the same numbers"""
    a = stage_rng(3, "flow").uniform(size=5)
    b = stage_rng(3, "flow").uniform(size=5)
    np.testing.assert_array_equal(a, b)


def test_load_config_from_toml(tiny_config):
    """TOML tables map onto the pipeline config"""
    config = load_config(tiny_config)
    assert config.name == "tiny"
    assert config.seed == 5
    assert config.transducer.n_elements == 16
    assert config.network.edge_step_f.value == 200e-6
    assert config.evaluation.axes == "xz"


def test_seed_override(tiny_config):
    """--seed replaces the master seed and changes the config hash"""
    base = load_config(tiny_config)
    seeded = load_config(tiny_config, seed=42)
    assert seeded.seed == 42
    assert seeded.config_hash() != base.config_hash()
    assert load_config(tiny_config).config_hash() == base.config_hash()


def test_load_config_errors(tmp_path):
    """Missing, malformed and invalid configs are input errors"""
    with pytest.raises(InputError):
        load_config()
    with pytest.raises(InputError):
        load_config(tmp_path / "missing.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("name = [unterminated")
    with pytest.raises(InputError):
        load_config(broken)
    no_network = tmp_path / "empty.toml"
    no_network.write_text('name = "nothing"\n')
    with pytest.raises(InputError):
        load_config(no_network)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate(name):
    """Every preset is a complete config"""
    config = get_preset(name)
    assert isinstance(config, PipelineConfig)
    assert config.generators
    assert config.transducer.fs > 4 * config.transducer.f0


def test_frequency_presets():
    """hf and lf differ only in the transducer and noise"""
    assert get_preset("hf").transducer.f0 == 15e6
    assert get_preset("lf").transducer.f0 == 5e6
    assert get_preset("hf").bubbles == get_preset("lf").bubbles


def test_unknown_preset():
    with pytest.raises(InputError):
        get_preset("nope")


def test_rf_file_round_trip(tmp_path):
    """Header fields and float32 samples survive the binary format"""
    tx = TransducerConfig(n_elements=4, f0=5e6, fs=25e6, angles=(-0.1, 0.1))
    frames = [np.random.default_rng(k).normal(size=(2, 4, 30)) for k in range(3)]
    assert io.write_rf(tmp_path / "rf.bin", tx, frames) == 3
    fields, data = io.read_rf(tmp_path / "rf.bin")
    assert (fields["n_frames"], fields["n_angles"], fields["n_elements"], fields["n_samples"]) == (3, 2, 4, 30)
    assert fields["fs"] == 25e6
    assert fields["c"] == tx.c
    np.testing.assert_array_equal(data[1], frames[1].astype(np.float32))


def test_rf_file_rejects_other_files(tmp_path):
    """Files without the magic are not RF data"""
    path = tmp_path / "other.bin"
    path.write_bytes(bytes(128))
    with pytest.raises(InputError):
        io.read_rf(path)
    with pytest.raises(InputError):
        io.read_rf(tmp_path / "missing.bin")


def test_bmode_round_trip(tmp_path):
    """Envelope and grid are restored from the sidecar files"""
    grid = ImagingGrid(x_min=-1e-3, x_max=1e-3, z_min=9e-3, z_max=11e-3, dx=100e-6, dz=100e-6)
    image = np.random.default_rng(0).uniform(size=grid.shape)
    bmode = envelope_log(image, grid, dynamic_range=40.0)
    io.write_bmode(bmode, tmp_path / "frame_00000")
    restored = io.read_bmode(tmp_path / "frame_00000")
    assert restored.grid == grid
    assert restored.dynamic_range == 40.0
    np.testing.assert_allclose(restored.envelope, bmode.envelope, rtol=1e-6)
    np.testing.assert_allclose(restored.db, bmode.db, atol=1e-4)
    assert (tmp_path / "frame_00000.pgm").read_bytes().startswith(b"P5\n21 21\n255\n")


def test_events_csv_round_trip(tmp_path):
    """Ground truth keeps full float precision in CSV"""
    data = pd.DataFrame({"frame": [0, 1], "bubble_id": [0, 0], "x": [1 / 3, 2 / 3], "y": 0.0, "z": [0.01, 0.01]})
    io.write_events(EventTable(data=data), tmp_path / "gt.csv")
    restored = io.read_events(tmp_path / "gt.csv")
    np.testing.assert_allclose(restored.data["x"], [1 / 3, 2 / 3], rtol=1e-15)


def test_bubble_preset_file(tmp_path):
    """Shell parameters load from TOML and keep the derived break radius"""
    path = tmp_path / "shell.toml"
    path.write_text("chi = 0.5\nr0 = 2e-6\nr_buckle = 1.96e-6\n")
    params = io.read_bubble_params(path)
    assert params.chi == 0.5
    assert params.r_break == pytest.approx(1.96e-6 * np.sqrt(1 + 0.073 / 0.5))
    with pytest.raises(InputError):
        io.read_bubble_params(tmp_path / "missing.toml")
    path.write_text("r0 = 1e-6\nr_buckle = 2e-6\n")
    with pytest.raises(InputError):
        io.read_bubble_params(path)


def test_trace_export(tmp_path):
    """Traces are written as float64 t, R, Rdot, Rddot columns"""
    params = sonovue_preset()
    trace = integrate_radius(DriveSignal(fs=50e6, samples=np.zeros(10)), params, oversample=2)
    io.write_trace(trace, params, tmp_path / "trace")
    columns = np.fromfile(tmp_path / "trace.f64", dtype="<f8").reshape(-1, 4)
    np.testing.assert_array_equal(columns[:, 1], trace.radius)
    sidecar = json.loads((tmp_path / "trace.json").read_text())
    assert sidecar["columns"] == ["t", "R", "Rdot", "Rddot"]
    assert sidecar["n_samples"] == len(trace.radius) == 19


def test_full_pipeline(tiny_config, tmp_path):
    """Every stage writes its files and the manifest hashes them"""
    out = tmp_path / "run"
    manifest = DatasetPipeline(load_config(tiny_config), out, SERIAL).run()
    for name in ("network.toml", "flow_edges.csv", "flow_nodes.csv", "ground_truth.csv", "rf.bin",
                 "predictions.csv", "tracks.csv", "report.json", "report.html", "sr_image.f32",
                 "velocity_map.f32", "config.json"):
        assert (out / name).exists(), name
        assert name in manifest.files
    assert manifest.files["rf.bin"] == io.sha256_file(out / "rf.bin")
    assert len(list((out / "bmode").glob("frame_*.pgm"))) == 3

    fields, data = io.read_rf(out / "rf.bin")
    assert data.shape == (3, 1, 16, fields["n_samples"])
    report = json.loads((out / "report.json").read_text())
    assert set(report["localization"]) >= {"precision", "recall", "mean_loc_error"}
    assert json.loads((out / "manifest.json").read_text())["seed"] == 5


def test_pipeline_is_deterministic(tiny_config, tmp_path):
    """Same config and seed give byte-identical ground truth and RF data"""
    config = load_config(tiny_config)
    first = DatasetPipeline(config, tmp_path / "a", SERIAL).simulate_dataset()
    second = DatasetPipeline(config, tmp_path / "b", Settings(threads=3, checkpoint=True)).simulate_dataset()
    for name in ("network.toml", "ground_truth.csv", "rf.bin"):
        assert first.files[name] == second.files[name]
    assert first.config_hash == second.config_hash
    assert not (tmp_path / "b" / "checkpoint").exists()


def test_seed_changes_ground_truth(tiny_config, tmp_path):
    """A different master seed gives different bubbles"""
    for seed, name in ((1, "a"), (2, "b")):
        pipeline = DatasetPipeline(load_config(tiny_config, seed=seed), tmp_path / name, SERIAL)
        pipeline.generate()
        pipeline.flow()
        pipeline.seed()
    assert io.sha256_file(tmp_path / "a" / "ground_truth.csv") != io.sha256_file(tmp_path / "b" / "ground_truth.csv")


def test_stage_needs_upstream_files(tiny_config, tmp_path):
    """Running a stage before its inputs exist is an input error"""
    pipeline = DatasetPipeline(load_config(tiny_config), tmp_path, SERIAL)
    with pytest.raises(InputError):
        pipeline.flow()
    with pytest.raises(InputError):
        pipeline.localize()


def test_cli_stages(tiny_config, tmp_path):
    """generate, flow and seed run from the command line"""
    out = str(tmp_path / "cli")
    for command in ("generate", "flow", "seed"):
        assert main([command, "--config", str(tiny_config), "--out", out]) == 0
    assert (tmp_path / "cli" / "ground_truth.csv").exists()
    assert (tmp_path / "cli" / "bff.log").exists()


def test_cli_exit_codes(tmp_path):
    """Input errors exit with 6"""
    out = str(tmp_path)
    assert main(["generate", "--preset", "nope", "--out", out]) == 6
    assert main(["flow", "--preset", "desk", "--out", out]) == 6
    assert main(["evaluate", "--out", out]) == 6


def test_cli_source_is_exclusive(tiny_config):
    """--config and --preset cannot be combined"""
    with pytest.raises(SystemExit):
        main(["generate", "--config", str(tiny_config), "--preset", "desk"])


def test_cli_evaluate_files(tmp_path):
    """evaluate scores arbitrary CSVs and writes both reports"""
    gt = pd.DataFrame({"frame": [0, 0, 1], "bubble_id": [0, 1, 0], "x": [0.0, 1e-3, 5e-6], "y": 0.0, "z": 0.01})
    pred = pd.DataFrame({"frame": [0, 1], "loc_id": [0, 0], "x": [1e-6, 6e-6], "y": 0.0, "z": 0.01, "track_id": [0, 0]})
    gt.to_csv(tmp_path / "gt.csv", index=False)
    pred.to_csv(tmp_path / "pred.csv", index=False)
    code = main([
        "evaluate", "--gt", str(tmp_path / "gt.csv"), "--pred", str(tmp_path / "pred.csv"),
        "--radius", "1e-5", "--axes", "xz", "--out", str(tmp_path),
    ])
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["localization"]["n_tp"] == 2
    assert report["localization"]["n_fn"] == 1
    assert report["tracking"]["j_map"] == 1.0
    assert "Evaluation report" in (tmp_path / "report.html").read_text()


def test_custom_shell_file_and_trace_export(tmp_path):
    """A shell TOML next to the config feeds the simulation and traces are exported"""
    (tmp_path / "shell.toml").write_text("chi = 0.5\nr0 = 2e-6\nr_buckle = 1.96e-6\n")
    extra = 'oversample = 4\npreset = "custom"\nparams_file = "shell.toml"\ntrace_bubbles = 2\n'
    path = tmp_path / "custom.toml"
    path.write_text(TINY_CONFIG.replace("oversample = 4\n", extra))
    config = load_config(path)
    assert config.bubbles.params_file == tmp_path / "shell.toml"

    out = tmp_path / "run"
    manifest = DatasetPipeline(config, out, SERIAL).simulate_dataset()
    sidecars = sorted((out / "traces").glob("bubble_*.json"))
    assert [p.stem for p in sidecars] == ["bubble_00000", "bubble_00001"]
    sidecar = json.loads(sidecars[0].read_text())
    assert sidecar["params"]["r0"] == 2e-6
    assert sidecar["params"]["chi"] == 0.5
    columns = np.fromfile(sidecars[0].with_suffix(".f64"), dtype="<f8").reshape(-1, 4)
    assert columns[0, 1] == pytest.approx(2e-6)
    assert "traces/bubble_00000.f64" in manifest.files


def test_custom_shell_needs_one_source():
    """Custom bubbles take a params table or a file, not both or neither"""
    with pytest.raises(ValueError):
        BubbleConfig(preset="custom")
    with pytest.raises(ValueError):
        BubbleConfig(preset="custom", params=sonovue_preset(), params_file="shell.toml")
    assert BubbleConfig(preset="custom", params_file="shell.toml").params is None
