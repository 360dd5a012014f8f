"""Unit tests for dataset directories and distance-map files."""
import numpy as np
import pytest

pytestmark = pytest.mark.unit


class TestDatasetDirectory:
    """Test suite for write_dataset/read_dataset."""

    def test_round_trip_keeps_labels_and_masks(self, tiny_splits, tmp_path):
        """Test that pairs come back with ids, tags, lesion masks and labels."""
        from src.clients.dataset_client import read_dataset, write_dataset

        pairs = tiny_splits["real"]
        assert write_dataset(pairs, tmp_path / "real") == len(pairs)
        restored = read_dataset(tmp_path / "real")

        assert [p.id for p in restored] == [p.id for p in pairs]
        for original, copy in zip(pairs, restored):
            assert copy.domain_tag == original.domain_tag
            assert copy.target.lesion_label == original.target.lesion_label
            np.testing.assert_array_equal(copy.input.re, original.input.re)
            np.testing.assert_array_equal(copy.target.adc, original.target.adc)
            np.testing.assert_array_equal(copy.target.lesion_mask, original.target.lesion_mask)

    def test_manifest_header(self, tiny_splits, tmp_path):
        """Test the manifest columns."""
        from src.clients.dataset_client import MANIFEST_COLUMNS, write_dataset

        write_dataset(tiny_splits["synthetic"][:1], tmp_path)
        header = (tmp_path / "manifest.tsv").read_text().splitlines()[0]
        assert header.split("\t") == MANIFEST_COLUMNS

    def test_bad_domain_tag(self, tiny_splits, tmp_path):
        """Test that an unknown domain tag is a format error."""
        from src.clients.dataset_client import read_dataset, write_dataset
        from src.utils.errors import FormatError

        write_dataset(tiny_splits["synthetic"][:1], tmp_path)
        manifest = tmp_path / "manifest.tsv"
        manifest.write_text(manifest.read_text().replace("\tsynthetic\t", "\tmartian\t"))
        with pytest.raises(FormatError):
            read_dataset(tmp_path)

    def test_missing_directory(self, tmp_path):
        """Test that a directory without a manifest is an I/O error."""
        from src.clients.dataset_client import read_dataset
        from src.utils.errors import FPSDIOError

        with pytest.raises(FPSDIOError):
            read_dataset(tmp_path / "nothing")


class TestDistanceMapFile:
    """Test suite for distance-map persistence."""

    def test_round_trip(self, tiny_distance_map, tmp_path):
        """Test that both planes and the corpus sizes survive a round trip."""
        from src.clients.dataset_client import read_distance_map, write_distance_map

        meta = write_distance_map(tiny_distance_map, tmp_path / "dmap.fpsd")
        assert meta.name == "dmap.fpsd.meta.tsv"
        restored = read_distance_map(tmp_path / "dmap.fpsd")
        np.testing.assert_array_equal(restored.raw, tiny_distance_map.raw)
        np.testing.assert_array_equal(restored.normalized, tiny_distance_map.normalized)
        assert (restored.n_syn, restored.n_real) == (tiny_distance_map.n_syn, tiny_distance_map.n_real)

    def test_missing_sidecar(self, tiny_distance_map, tmp_path):
        """Test that the corpus-size sidecar is required."""
        from src.clients.dataset_client import read_distance_map, write_distance_map
        from src.utils.errors import FPSDIOError

        meta = write_distance_map(tiny_distance_map, tmp_path / "dmap.fpsd")
        meta.unlink()
        with pytest.raises(FPSDIOError):
            read_distance_map(tmp_path / "dmap.fpsd")

    def test_bad_sidecar(self, tiny_distance_map, tmp_path):
        """Test that malformed counts are a format error."""
        from src.clients.dataset_client import read_distance_map, write_distance_map
        from src.utils.errors import FormatError

        meta = write_distance_map(tiny_distance_map, tmp_path / "dmap.fpsd")
        meta.write_text("n_syn\tmany\nn_real\t4\n")
        with pytest.raises(FormatError):
            read_distance_map(tmp_path / "dmap.fpsd")

    def test_wrong_plane_count(self, tmp_path):
        """Test that a single-plane array is not a distance map."""
        from src.clients.dataset_client import read_distance_map
        from src.clients.fpsd_client import write_array
        from src.utils.errors import ShapeError

        write_array(tmp_path / "dmap.fpsd", np.zeros((1, 4, 4)))
        with pytest.raises(ShapeError):
            read_distance_map(tmp_path / "dmap.fpsd")
