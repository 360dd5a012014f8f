"""Unit tests for main.py runtime setup and entry point."""
import pytest

pytestmark = pytest.mark.unit


class TestConfigureRuntime:
    """Test logging and thread setup."""

    def test_thread_limit_applied(self, mocker):
        """Test a positive FPS_THREADS limits torch."""
        from src import main

        mocker.patch.object(main.settings, "fps_threads", 2)
        set_threads = mocker.patch("src.main.torch.set_num_threads")
        mocker.patch("src.main.logging.basicConfig")

        main.configure_runtime()

        set_threads.assert_called_once_with(2)

    def test_zero_threads_leaves_torch_default(self, mocker):
        """Test FPS_THREADS = 0 keeps torch's own default."""
        from src import main

        mocker.patch.object(main.settings, "fps_threads", 0)
        set_threads = mocker.patch("src.main.torch.set_num_threads")
        mocker.patch("src.main.logging.basicConfig")

        main.configure_runtime()

        set_threads.assert_not_called()

    def test_log_level_from_settings(self, mocker):
        """Test the configured level and format reach logging."""
        import logging

        from src import main

        mocker.patch.object(main.settings, "fps_log_level", "debug")
        mocker.patch.object(main.settings, "fps_threads", 0)
        basic_config = mocker.patch("src.main.logging.basicConfig")

        main.configure_runtime()

        kwargs = basic_config.call_args.kwargs
        assert kwargs["level"] == logging.DEBUG
        assert kwargs["format"] == main.settings.fps_log_format

    def test_unknown_level_falls_back_to_info(self, mocker):
        """Test an unknown level name logs at INFO."""
        import logging

        from src import main

        mocker.patch.object(main.settings, "fps_log_level", "chatty")
        mocker.patch.object(main.settings, "fps_threads", 0)
        basic_config = mocker.patch("src.main.logging.basicConfig")

        main.configure_runtime()

        assert basic_config.call_args.kwargs["level"] == logging.INFO


class TestMain:
    """Test the entry point."""

    def test_delegates_to_dispatch(self, mocker):
        """Test main configures the runtime and returns the command status."""
        from src import main

        configure = mocker.patch("src.main.configure_runtime")
        dispatch = mocker.patch("src.main.dispatch", return_value=0)

        assert main.main(["report", "x.tsv"]) == 0
        configure.assert_called_once()
        dispatch.assert_called_once_with(["report", "x.tsv"])

    def test_run_exits_with_status(self, mocker):
        """Test run turns the status into the process exit code."""
        from src import main

        mocker.patch("src.main.main", return_value=2)

        with pytest.raises(SystemExit) as exc_info:
            main.run()
        assert exc_info.value.code == 2
