"""Unit tests for configuration management."""
import pytest

pytestmark = pytest.mark.unit


class TestSettingsConfiguration:
    """Test suite for process Settings."""

    def test_settings_loads_defaults(self, monkeypatch):
        """Test that settings loads with default values."""
        from src.config import Settings

        for name in ("FPS_THREADS", "FPS_DEFAULT_SEED", "FPS_DTYPE", "FPS_LOG_LEVEL", "RUN_INTEGRATION"):
            monkeypatch.delenv(name, raising=False)
        settings = Settings(_env_file=None)
        assert settings.fps_threads == 0
        assert settings.fps_default_seed == 0
        assert settings.fps_dtype == "float32"
        assert settings.fps_log_level == "INFO"
        assert settings.run_integration is False

    def test_settings_read_environment(self, monkeypatch):
        """Test that environment variables override defaults case-insensitively."""
        from src.config import Settings

        monkeypatch.setenv("FPS_THREADS", "2")
        monkeypatch.setenv("fps_dtype", "float64")
        settings = Settings(_env_file=None)
        assert settings.fps_threads == 2
        assert settings.fps_dtype == "float64"

    def test_global_settings_instance(self):
        """Test the module exposes one shared settings object."""
        from src.config import settings

        assert settings.fps_log_format
        assert isinstance(settings.run_integration, bool)


class TestExperimentConfigDefaults:
    """Test suite for the pydantic configuration sections."""

    def test_empty_text_yields_defaults(self):
        """Test that an empty config is the all-defaults experiment."""
        from src.models.config_models import ExperimentConfig
        from src.utils.config_parser import parse_config

        assert parse_config("") == ExperimentConfig()

    def test_train_config_merges_perturb_and_scales(self):
        """Test that train_config carries the [perturb] section and network scale count."""
        from src.utils.config_parser import parse_config

        config = parse_config("[perturb]\nepsilon = 0.25\n[network]\nscales = 2\n")
        merged = config.train_config()
        assert merged.perturbation.epsilon == 0.25
        assert merged.scales == 2

    def test_network_rejects_indivisible_channels(self):
        """Test that base channels must split evenly across FAS branches and groups."""
        from pydantic import ValidationError

        from src.models.config_models import NetworkConfig

        with pytest.raises(ValidationError):
            NetworkConfig(base_channels=6, fas_branches=2, fas_groups=2)

    def test_network_input_shape_check(self):
        """Test that inputs must divide into windows at every stage."""
        from src.models.config_models import NetworkConfig
        from src.utils.errors import ShapeError

        cfg = NetworkConfig(scales=2, window_size=4)
        cfg.check_input_shape(16, 24)
        with pytest.raises(ShapeError):
            cfg.check_input_shape(16, 20)

    def test_schedule_must_decay(self):
        """Test that lr_start below lr_end is rejected."""
        from pydantic import ValidationError

        from src.models.config_models import TrainConfig

        with pytest.raises(ValidationError):
            TrainConfig(lr_start=1e-6, lr_end=1e-4)


class TestConfigParser:
    """Test suite for the experiment configuration text format."""

    def test_qualified_key(self):
        """Test a fully qualified key outside any section header."""
        from src.utils.config_parser import parse_config

        config = parse_config("train.batch_size = 4\n")
        assert config.train.batch_size == 4

    def test_sections_comments_and_lists(self):
        """Test section headers, comments, enums, lists and pairs."""
        from src.models.config_models import MaskPolicy, PerturbationMode
        from src.utils.config_parser import parse_config

        text = (
            "# experiment\n"
            "[perturb]\n"
            "mode = single   # one plane wave\n"
            "epsilon = 0.5\n"
            "[network]\n"
            "fas_kernels = 3, 7\n"
            "use_fai = false\n"
            "[eval]\n"
            "mask_policy = full\n"
            "t2_window = 0.01, 0.2\n"
        )
        config = parse_config(text)
        assert config.perturb.mode == PerturbationMode.SINGLE
        assert config.perturb.epsilon == 0.5
        assert config.network.fas_kernels == [3, 7]
        assert config.network.use_fai is False
        assert config.eval.mask_policy == MaskPolicy.FULL
        assert config.eval.t2_window == (0.01, 0.2)

    def test_single_element_list(self):
        """Test that a one-entry list field parses without a trailing comma."""
        from src.utils.config_parser import parse_config

        config = parse_config("[network]\nfas_branches = 1\nfas_kernels = 3\nfas_groups = 2\n")
        assert config.network.fas_kernels == [3]

    def test_out_of_bounds_value_names_key_and_line(self):
        """Test that a bounds violation reports the dotted key and its line."""
        from src.utils.config_parser import parse_config
        from src.utils.errors import ConfigError

        with pytest.raises(ConfigError) as exc:
            parse_config("[perturb]\n\nepsilon = -1\n")
        assert exc.value.key == "perturb.epsilon"
        assert exc.value.line == 3

    @pytest.mark.parametrize(
        "text,key",
        [
            ("[train]\nbogus = 1\n", "train.bogus"),
            ("[train]\nscales = 3\n", "train.scales"),
            ("[train]\nbatch_size = 2\nbatch_size = 3\n", "train.batch_size"),
            ("[nowhere]\n", "nowhere"),
        ],
    )
    def test_rejected_keys(self, text, key):
        """Test unknown, reserved and duplicate keys and unknown sections."""
        from src.utils.config_parser import parse_config
        from src.utils.errors import ConfigError

        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert exc.value.key == key

    @pytest.mark.parametrize("text", ["[train\n", "[train]\nbatch_size 4\n", "batch_size = 4\n"])
    def test_syntax_errors(self, text):
        """Test malformed headers, missing '=' and unqualified keys outside sections."""
        from src.utils.config_parser import parse_config
        from src.utils.errors import ConfigError

        with pytest.raises(ConfigError):
            parse_config(text)

    def test_serialize_round_trip(self):
        """Test that serialized text parses back to an equal configuration."""
        from src.utils.config_parser import parse_config, serialize_config

        config = parse_config(
            "[train]\nmode = source_only\nlr_start = 0.003\n[eval]\nmask_policy = roi\n"
        )
        assert parse_config(serialize_config(config)) == config

    def test_load_config_none_and_missing(self, tmp_path):
        """Test defaults for no path and an I/O error for a missing file."""
        from src.models.config_models import ExperimentConfig
        from src.utils.config_parser import load_config
        from src.utils.errors import FPSDIOError

        assert load_config(None) == ExperimentConfig()
        with pytest.raises(FPSDIOError):
            load_config(tmp_path / "absent.cfg")
