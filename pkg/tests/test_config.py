from datetime import date
from pathlib import Path

import pytest

from driftchain.config import RunConfig, load_config, load_grid_config
from driftchain.errors import ConfigError


def write_inputs(tmp_path):
    (tmp_path / "grid.cfg").write_text(
        "lon_min = 40\nlon_max = 42\nlat_min = -31\nlat_max = -30\ncell_size = 1\n"
    )
    (tmp_path / "tracks.csv").write_text("id,time_days,lon,lat\n0,0,40.5,-30.5\n")
    (tmp_path / "roles.csv").write_text("sticky: 1,0,0.5\ndebris: 1,0,1\nsource: 0,0\n")
    (tmp_path / "obs.csv").write_text("target_label,days_since_crash,name\n1,10,x\n")


def write_config(tmp_path, body):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(body)
    return cfg


class TestRunConfig:
    def test_full_file(self, tmp_path):
        write_inputs(tmp_path)
        cfg_path = write_config(
            tmp_path,
            "# a pipeline run\n"
            "grid = grid.cfg\n"
            "trajectories = tracks.csv\n"
            "roles = roles.csv\n"
            "observations = obs.csv\n"
            "lag_days = 4.5\n"
            "season_exponent = 20\n"
            "crash_date = 2014-03-08\n"
            "seed = 7\n"
            "out_dir = results\n"
            "cpi_level = 0.9\n",
        )
        cfg = load_config(cfg_path)
        assert cfg.grid == tmp_path / "grid.cfg"
        assert cfg.lag_days == 4.5
        assert cfg.season_exponent == 20
        assert cfg.crash_date == date(2014, 3, 8)
        assert cfg.seed == 7
        assert cfg.out_dir == tmp_path / "results"
        assert cfg.cpi_level == 0.9

    def test_paths_resolve_relative_to_config(self, tmp_path):
        sub = tmp_path / "deeper"
        sub.mkdir()
        write_inputs(sub)
        cfg_path = write_config(sub, "grid = grid.cfg\n")
        cfg = load_config(cfg_path)
        assert cfg.grid == sub / "grid.cfg"

    def test_overrides_win_but_none_ignored(self, tmp_path):
        write_inputs(tmp_path)
        cfg_path = write_config(tmp_path, "grid = grid.cfg\nseed = 1\n")
        cfg = load_config(cfg_path, seed=9, out_dir=None)
        assert cfg.seed == 9
        assert cfg.out_dir == Path("out")

    def test_unknown_and_duplicate_keys(self, tmp_path):
        bad = write_config(tmp_path, "wavelength = 5\n")
        with pytest.raises(ConfigError):
            load_config(bad)
        dup = write_config(tmp_path, "seed = 1\nseed = 2\n")
        with pytest.raises(ConfigError):
            load_config(dup)
        nosep = write_config(tmp_path, "seed 1\n")
        with pytest.raises(ConfigError):
            load_config(nosep)

    def test_lag_must_tile_season_block(self):
        with pytest.raises(ConfigError):
            RunConfig(lag_days=7.0)
        with pytest.raises(ConfigError):
            RunConfig(lag_days=5.0, season_exponent=17)
        # 4.5 x 20 = 90: fine.
        RunConfig(lag_days=4.5, season_exponent=20)

    def test_missing_input_file_rejected(self, tmp_path):
        cfg_path = write_config(tmp_path, "trajectories = nope.csv\n")
        with pytest.raises(ConfigError):
            load_config(cfg_path)

    def test_require_lists_missing_keys(self):
        cfg = RunConfig()
        with pytest.raises(ConfigError) as err:
            cfg.require("grid", "roles")
        assert "grid" in str(err.value)
        assert "roles" in str(err.value)

    def test_numeric_validation(self):
        with pytest.raises(ConfigError):
            RunConfig(cpi_level=1.0)
        with pytest.raises(ConfigError):
            RunConfig(window_steps=-1)
        with pytest.raises(ConfigError):
            RunConfig(threads=-2)
        with pytest.raises(ConfigError):
            RunConfig(eigen_tol=0.0)

    def test_malformed_number_reported(self, tmp_path):
        bad = write_config(tmp_path, "lag_days = five\n")
        with pytest.raises(ConfigError):
            load_config(bad)


class TestGridConfig:
    def test_build(self, tmp_path):
        write_inputs(tmp_path)
        g = load_grid_config(tmp_path / "grid.cfg")
        assert g.n_states == 2
        assert g.cell_size == 1.0

    def test_wet_mask_reference(self, tmp_path):
        (tmp_path / "mask.csv").write_text("0,0,1\n1,0,0\n")
        (tmp_path / "grid.cfg").write_text(
            "lon_min = 0\nlon_max = 2\nlat_min = 0\nlat_max = 1\n"
            "cell_size = 1\nwet_mask = mask.csv\n"
        )
        g = load_grid_config(tmp_path / "grid.cfg")
        assert g.n_states == 1

    def test_missing_keys_rejected(self, tmp_path):
        (tmp_path / "grid.cfg").write_text("lon_min = 0\n")
        with pytest.raises(ConfigError):
            load_grid_config(tmp_path / "grid.cfg")
