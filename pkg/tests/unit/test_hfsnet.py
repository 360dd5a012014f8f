"""Unit tests for HFSNet construction, forward shapes and gradient checks."""
import numpy as np
import pytest
import torch

pytestmark = pytest.mark.unit


class TestHFSNet:
    """Test suite for the network."""

    def test_output_scales(self, small_network_config):
        """Test one output per scale, full resolution first, halving each scale."""
        from src.network.hfsnet import build_hfsnet

        model = build_hfsnet(small_network_config, seed=0)
        outputs = model(torch.randn(2, 2, 16, 16))
        assert [tuple(o.shape) for o in outputs] == [(2, 2, 16, 16), (2, 2, 8, 8)]

    def test_seeded_initialization(self, small_network_config):
        """Test that a seed fixes every tensor and a new seed changes them."""
        from src.network.hfsnet import build_hfsnet, state_to_numpy

        a = state_to_numpy(build_hfsnet(small_network_config, seed=4))
        b = state_to_numpy(build_hfsnet(small_network_config, seed=4))
        c = state_to_numpy(build_hfsnet(small_network_config, seed=5))
        assert list(a) == list(b)
        assert all(np.array_equal(a[name], b[name]) for name in a)
        assert not all(np.array_equal(a[name], c[name]) for name in a)

    def test_dtype(self, small_network_config):
        """Test float64 construction."""
        from src.network.hfsnet import build_hfsnet

        model = build_hfsnet(small_network_config, seed=0, dtype=torch.float64)
        assert all(p.dtype == torch.float64 for p in model.parameters())

    def test_ablation_switches(self, small_network_config):
        """Test that disabling FAI, FAS and cFAS still yields every scale."""
        from src.network.hfsnet import build_hfsnet

        cfg = small_network_config.model_copy(update={"use_fai": False, "use_fas": False, "use_cfas": False})
        model = build_hfsnet(cfg, seed=0)
        assert model.stages is None
        outputs = model(torch.randn(2, 2, 16, 16))
        assert outputs[1].shape == (2, 2, 8, 8)

    def test_rejects_indivisible_input(self, small_network_config):
        """Test that inputs must divide into windows at every scale."""
        from src.network.hfsnet import build_hfsnet
        from src.utils.errors import ShapeError

        with pytest.raises(ShapeError):
            build_hfsnet(small_network_config, seed=0)(torch.zeros(2, 2, 12, 16))

    def test_rejects_wrong_channels(self, small_network_config):
        """Test that the input needs the configured channel count."""
        from src.network.hfsnet import build_hfsnet
        from src.utils.errors import ShapeError

        with pytest.raises(ShapeError):
            build_hfsnet(small_network_config, seed=0)(torch.zeros(2, 3, 16, 16))

    def test_zero_parameters_give_zero_outputs(self, small_network_config):
        """Test that an all-zero network maps any input to zero at every scale."""
        from src.network.hfsnet import build_hfsnet

        model = build_hfsnet(small_network_config, seed=0, dtype=torch.float64).eval()
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
            outputs = model(torch.randn(2, 2, 16, 16, dtype=torch.float64))
        assert all(torch.all(o == 0) for o in outputs)

    def test_duplicated_batch_duplicates_outputs(self, small_network_config):
        """Test that in inference mode each sample's outputs ignore the rest of the batch."""
        from src.network.hfsnet import build_hfsnet

        model = build_hfsnet(small_network_config, seed=3, dtype=torch.float64).eval()
        x = torch.randn(1, 2, 16, 16, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
        with torch.no_grad():
            single = model(x)
            doubled = model(torch.cat([x, x]))
        for one, two in zip(single, doubled):
            torch.testing.assert_close(two[0], two[1], rtol=0.0, atol=1e-12)
            torch.testing.assert_close(two[:1], one, rtol=0.0, atol=1e-10)

    def test_deterministic_in_inference_mode(self, small_network_config):
        """Test repeated inference on one input is bitwise stable."""
        from src.network.hfsnet import build_hfsnet

        model = build_hfsnet(small_network_config, seed=3).eval()
        x = torch.randn(2, 2, 16, 16)
        with torch.no_grad():
            a, b = model(x), model(x)
        assert all(torch.equal(p, q) for p, q in zip(a, b))

    def test_state_to_numpy_order(self, small_network_config):
        """Test that exported tensors follow the state_dict manifest."""
        from src.network.hfsnet import build_hfsnet, state_to_numpy

        model = build_hfsnet(small_network_config, seed=0)
        assert list(state_to_numpy(model)) == list(model.state_dict())


class TestGradientCheck:
    """Test suite for finite-difference gradient verification."""

    def test_quadratic(self):
        """Test an op with a known gradient passes and plain tensors are left as they were."""
        from src.network.gradcheck import check_gradients

        w = torch.tensor([0.5, -1.5, 2.0], dtype=torch.float64)
        report = check_gradients(lambda x: (w * x) ** 2, {"w": w}, [torch.ones(3, dtype=torch.float64)])
        assert report.passed(1e-6)
        assert set(report.per_tensor) == {"w", "input0"}
        assert report.step == 1e-6
        assert not w.requires_grad
        torch.testing.assert_close(w, torch.tensor([0.5, -1.5, 2.0], dtype=torch.float64))

    def test_parameter_already_requiring_grad(self):
        """Test a leaf that already requires grad keeps that flag."""
        from src.network.gradcheck import check_gradients

        w = torch.tensor([1.0, 2.0], dtype=torch.float64, requires_grad=True)
        report = check_gradients(lambda: (w**3).sum(), {"w": w}, [])
        assert report.passed(1e-6)
        assert w.requires_grad

    def test_non_leaf_parameter_rejected(self):
        """Test that a computed tensor cannot be perturbed as a parameter."""
        from src.network.gradcheck import check_gradients
        from src.utils.errors import GradientCheckError

        base = torch.ones(2, dtype=torch.float64, requires_grad=True)
        derived = base * 2
        with pytest.raises(GradientCheckError):
            check_gradients(lambda: derived.sum(), {"derived": derived}, [])

    def test_wrong_gradient_fails(self):
        """Test that a custom op with a wrong backward is caught."""
        from src.network.gradcheck import check_gradients

        class Wrong(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                ctx.save_for_backward(x)
                return x**3

            @staticmethod
            def backward(ctx, grad):
                (x,) = ctx.saved_tensors
                return grad * 2 * x

        x = torch.tensor([1.0, 2.0], dtype=torch.float64)
        report = check_gradients(Wrong.apply, {}, [x])
        assert not report.passed(1e-3)

    def test_non_finite_gradient(self):
        """Test that a non-finite analytic gradient raises."""
        from src.network.gradcheck import check_gradients
        from src.utils.errors import GradientCheckError

        with pytest.raises(GradientCheckError):
            check_gradients(torch.sqrt, {}, [torch.zeros(2, dtype=torch.float64)])

    def test_network_heads(self, small_network_config):
        """Test HFSNet gradients of the output heads and lateral selection weights in float64."""
        from src.network.gradcheck import check_gradients
        from src.network.hfsnet import build_hfsnet

        model = build_hfsnet(small_network_config, seed=1, dtype=torch.float64).eval()
        x = torch.randn(1, 2, 16, 16, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
        params = {
            name: p
            for name, p in model.named_parameters()
            if name.startswith("heads.") or name.startswith("lateral.0.cfas.")
        }
        report = check_gradients(lambda: model(x), params, [], max_entries=8)
        assert report.passed(1e-5)
        assert report.entries_checked > 0

    def test_whole_network_float32_is_finite(self, small_network_config):
        """Test a float32 whole-network check produces finite per-tensor errors."""
        from src.network.gradcheck import check_module_gradients
        from src.network.hfsnet import build_hfsnet

        model = build_hfsnet(small_network_config, seed=1).eval()
        report = check_module_gradients(model, [torch.randn(1, 2, 16, 16)], max_entries=1)
        assert report.step == 1e-3
        assert all(np.isfinite(v) for v in report.per_tensor.values())

    def test_whole_network_float64(self, small_network_config):
        """Test every HFSNet tensor and the input against finite differences in float64."""
        from src.network.gradcheck import check_module_gradients
        from src.network.hfsnet import build_hfsnet

        model = build_hfsnet(small_network_config, seed=1, dtype=torch.float64).eval()
        x = torch.randn(1, 2, 16, 16, generator=torch.Generator().manual_seed(5), dtype=torch.float64)
        report = check_module_gradients(model, [x], max_entries=2)
        assert "input0" in report.per_tensor
        assert len(report.per_tensor) == len(list(model.parameters())) + 1
        assert report.max_rel_error < 1e-3
