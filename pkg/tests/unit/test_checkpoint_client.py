"""Unit tests for checkpoint directories."""
import numpy as np
import pytest

pytestmark = pytest.mark.unit


class TestCheckpointClient:
    """Test suite for write/read/resolve of checkpoints."""

    def test_write_and_read(self, tmp_path):
        """Test that manifest entries and tensors round-trip."""
        from src.clients.checkpoint_client import read_checkpoint, write_checkpoint

        tensors = {"student.w": np.ones((2, 2), dtype=np.float32), "teacher.w": np.zeros((2, 2), dtype=np.float32)}
        path = write_checkpoint(tmp_path, 12, {"rng_seed": "3", "mode": "fps"}, tensors)
        assert path.name == "ckpt_000012"

        manifest, restored = read_checkpoint(path)
        assert manifest["iteration"] == "12"
        assert manifest["rng_seed"] == "3"
        assert manifest["format_version"] == "1"
        assert list(restored) == ["student.w", "teacher.w"]

    def test_latest_pointer(self, tmp_path):
        """Test that the root resolves to the most recently written checkpoint."""
        from src.clients.checkpoint_client import resolve_checkpoint, write_checkpoint

        write_checkpoint(tmp_path, 2, {}, {"w": np.zeros(1)})
        write_checkpoint(tmp_path, 4, {}, {"w": np.ones(1)})
        assert resolve_checkpoint(tmp_path).name == "ckpt_000004"
        assert not any(p.name.endswith(".tmp") for p in tmp_path.iterdir())

    def test_overwrite_same_iteration(self, tmp_path):
        """Test that rewriting an iteration replaces the old tensors."""
        from src.clients.checkpoint_client import read_checkpoint, write_checkpoint

        write_checkpoint(tmp_path, 1, {}, {"w": np.zeros(1)})
        write_checkpoint(tmp_path, 1, {}, {"w": np.ones(1)})
        _, tensors = read_checkpoint(tmp_path)
        assert tensors["w"][0] == 1.0

    def test_unsupported_format(self, tmp_path):
        """Test that a manifest from another format version is rejected."""
        from src.clients.checkpoint_client import read_manifest, write_checkpoint
        from src.utils.errors import StateError

        path = write_checkpoint(tmp_path, 0, {}, {"w": np.zeros(1)})
        manifest = path / "manifest.txt"
        manifest.write_text(manifest.read_text().replace("format_version\t1", "format_version\t7"))
        with pytest.raises(StateError):
            read_manifest(path)

    def test_nothing_to_resolve(self, tmp_path):
        """Test that an empty directory holds no checkpoint."""
        from src.clients.checkpoint_client import resolve_checkpoint
        from src.utils.errors import FPSDIOError

        with pytest.raises(FPSDIOError):
            resolve_checkpoint(tmp_path)

    def test_split_prefix(self):
        """Test sub-bundle extraction by dotted prefix."""
        from src.clients.checkpoint_client import split_prefix

        tensors = {"student.a": 1, "student.b.c": 2, "teacher.a": 3}
        assert split_prefix(tensors, "student") == {"a": 1, "b.c": 2}
