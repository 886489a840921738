"""Parity of the bindings against direct library calls on shared fixtures."""

import numpy as np
import pytest

import ssmkit

ssmlive = pytest.importorskip("ssmlive")
from ssmkit import (
    MetricConfig,
    PatchGrid,
    SegmentMask,
    compute_metric,
    init_conv_weights,
    init_mlp_weights,
)
from ssmkit.synthetic import SyntheticSpec, block_mask, derive_seed, generate
from ssmkit.transforms import (
    ChannelVector,
    NormalizeConfig,
    conv_project,
    mix_global,
    mlp_project,
    spatial_normalize,
)

TOL = 1e-12


def fixtures():
    """Ten seeded grids with masks, shared with the library side verbatim."""
    out = []
    for i in range(10):
        spec = SyntheticSpec(8, 8, 12, structure_level=0.3 + 0.07 * i,
                             seed=derive_seed(31415, i))
        out.append((generate(spec), block_mask(spec)))
    return out


CFG = dict(r_near=4, r_far=4, cds_delta_max=10, srss_triplets=128, srss_seed=5)


class TestMetricParity:
    def test_constant_field_lds_is_zero(self):
        assert ssmlive.metric("lds", np.full((4, 4, 3), 2.0)) == pytest.approx(0.0, abs=TOL)

    def test_hand_grid(self):
        data = np.zeros((1, 4, 2))
        data[0, 0, 0] = data[0, 1, 0] = 1.0
        data[0, 2, 1] = data[0, 3, 1] = 1.0
        value = ssmlive.metric("lds", data, r_near=2, r_far=2)
        assert abs(value - 2 / 3) < TOL

    @pytest.mark.parametrize("name", ["lds", "cds", "rmsc", "srss"])
    def test_parity_on_shared_fixtures(self, name):
        for grid, mask in fixtures():
            bound = ssmlive.metric(name, grid.data, mask=mask.bits, **CFG)
            lib = compute_metric(name, grid, MetricConfig(**CFG), mask)
            assert abs(bound - lib) <= TOL

    def test_repeat_calls_bit_identical(self):
        grid, mask = fixtures()[0]
        a = ssmlive.metric("srss", grid.data, mask=mask.bits, **CFG)
        b = ssmlive.metric("srss", grid.data, mask=mask.bits, **CFG)
        assert a == b

    def test_error_messages_mirror_library(self):
        data = np.ones((2, 2, 3))
        data[1, 0] = 0.0
        with pytest.raises(ValueError) as bound_err:
            ssmlive.metric("rmsc", data)
        with pytest.raises(ValueError) as lib_err:
            ssmkit.rmsc(PatchGrid(data))
        assert str(bound_err.value) == str(lib_err.value)


class TestTransformParity:
    def test_mix_alpha_zero_identity(self):
        grid, _ = fixtures()[1]
        out = ssmlive.transform("mix", grid.data, vector=np.ones(12), alpha=0.0)
        assert np.array_equal(out, grid.data)

    def test_normalize_gamma_one_zero_mean(self):
        grid, _ = fixtures()[2]
        out = ssmlive.transform("normalize", grid.data, gamma=1.0)
        assert np.abs(out.reshape(64, 12).mean(axis=0)).max() < 1e-9

    def test_parity_on_shared_fixtures(self):
        vector = ChannelVector(np.linspace(-1, 1, 12))
        conv = init_conv_weights(12, 6, seed=3)
        mlp = init_mlp_weights(12, 4, hidden=8, seed=4)
        ncfg = NormalizeConfig(gamma=0.8, epsilon=1e-5, variant="sqrt_var_plus_eps")
        for grid, _ in fixtures():
            pairs = [
                (
                    ssmlive.transform("normalize", grid.data, gamma=0.8,
                                      epsilon=1e-5, variant="sqrt_var_plus_eps"),
                    spatial_normalize(grid, ncfg).data,
                ),
                (
                    ssmlive.transform("mix", grid.data, vector=vector.values, alpha=0.3),
                    mix_global(grid, vector, 0.3).data,
                ),
                (
                    ssmlive.transform("conv_project", grid.data,
                                      kernel=conv.kernel, bias=conv.bias),
                    conv_project(grid, conv).data,
                ),
                (
                    ssmlive.transform("mlp_project", grid.data, layers=mlp.layers),
                    mlp_project(grid, mlp).data,
                ),
            ]
            for bound, lib in pairs:
                assert np.abs(bound - lib).max() <= TOL

    def test_seeded_projection_matches_library_init(self):
        grid, _ = fixtures()[3]
        bound = ssmlive.transform("conv_project", grid.data, out_dim=5, seed=11)
        lib = conv_project(grid, init_conv_weights(12, 5, seed=11)).data
        assert np.array_equal(bound, lib)


class TestBoundary:
    def test_caller_buffer_never_mutated(self):
        buffer = np.random.default_rng(0).normal(size=(4, 4, 6))
        snapshot = buffer.copy()
        ssmlive.metric("rmsc", buffer)
        ssmlive.transform("normalize", buffer, gamma=1.0)
        assert np.array_equal(buffer, snapshot)

    def test_output_is_fresh_memory(self):
        buffer = np.ones((3, 3, 4))
        out = ssmlive.transform("mix", buffer, vector=np.zeros(4), alpha=0.0)
        assert not np.shares_memory(out, buffer)

    def test_rejects_non_contiguous(self):
        buffer = np.ones((4, 4, 6))[:, :, ::2]
        with pytest.raises(ValueError, match="contiguous"):
            ssmlive.metric("lds", buffer)

    def test_rejects_bad_shape_and_dtype(self):
        with pytest.raises(ValueError, match=r"\(H, W, D\)"):
            ssmlive.metric("lds", np.ones((4, 4)))
        with pytest.raises(ValueError, match="real floats"):
            ssmlive.metric("lds", np.ones((2, 2, 2), dtype=np.int32))

    def test_unknown_names(self):
        with pytest.raises(ValueError, match="unknown metric"):
            ssmlive.metric("entropy", np.ones((2, 2, 2)))
        with pytest.raises(ValueError, match="unknown transform"):
            ssmlive.transform("blur", np.ones((2, 2, 2)))


def test_version_matches_library():
    assert ssmlive.__version__ == ssmkit.__version__
