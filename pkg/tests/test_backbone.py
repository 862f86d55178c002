"""Full noise estimator: shape/zero/trace oracles, channel symmetry,
parameter counting, and checkpoint round-trips."""

import numpy as np
import numpy.testing as npt
import pytest

import moediff.autodiff as ad
from moediff.backbone import (
    backbone_from_named,
    init_backbone,
    load_backbone,
    map_params,
    named_params,
    noise_estimate,
    param_count,
    params_to_named,
    replace_param,
    save_backbone,
)
from moediff.tensor import read_checkpoint
from oracles import naive_backbone


def _build(seed=0, channels=2, width=4, depth=1, kernels=(1, 3), k=2, d_emb=8):
    return init_backbone(
        np.random.default_rng(seed),
        channels=channels,
        width=width,
        depth=depth,
        kernel_sizes=kernels,
        head_experts=k,
        d_emb=d_emb,
    )


class TestNoiseEstimate:
    def test_output_shape_contract(self):
        params = _build(channels=3)
        out = noise_estimate(np.zeros((2, 3, 64)), np.zeros((2, 3, 64)), 1, params)
        assert out.shape == (2, 3, 64)

    def test_zero_parameters_zero_output(self, rng):
        params = map_params(np.zeros_like, _build())
        x = rng.standard_normal((2, 2, 16))
        npt.assert_array_equal(noise_estimate(x, x, 3, params), 0.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("depth", [1, 2])
    def test_matches_naive_oracle(self, seed, depth):
        rng = np.random.default_rng(seed + 100)
        params = _build(seed=seed, depth=depth)
        x_t = rng.standard_normal((2, 2, 12))
        x_bar = rng.standard_normal((2, 2, 12))
        npt.assert_allclose(
            noise_estimate(x_t, x_bar, 4, params),
            naive_backbone(x_t, x_bar, 4, params),
            atol=1e-10,
        )

    def test_hand_sized_manual_trace(self):
        # Depth 1, width 2, length 4: same prediction as the stage-by-stage
        # reference on a fixed tiny signal.
        params = _build(seed=42, channels=2, width=2, kernels=(1,), k=2, d_emb=4)
        x_t = np.array([[[1.0, -1.0, 0.5, 2.0], [0.0, 1.0, -2.0, 1.0]]])
        x_bar = np.array([[[1.0, 0.0, 0.0, 2.0], [0.0, 1.0, 0.0, 0.0]]])
        npt.assert_allclose(
            noise_estimate(x_t, x_bar, 1, params),
            naive_backbone(x_t, x_bar, 1, params),
            atol=1e-12,
        )

    def test_deterministic(self, rng):
        params = _build()
        x = rng.standard_normal((1, 2, 16))
        c = rng.standard_normal((1, 2, 16))
        a = noise_estimate(x, c, 2, params)
        b = noise_estimate(x, c, 2, params)
        npt.assert_array_equal(a, b)

    def test_channel_permutation_equivariance(self, rng):
        width, channels = 4, 3
        params = _build(seed=9, channels=channels, width=width)
        perm = np.array([2, 0, 1])
        # Remap the cross-channel fusion conv onto the permuted channel order:
        # block index (c, l) -> (perm[c], l).
        idx = (perm[:, None] * width + np.arange(width)[None, :]).ravel()

        def permute_fuse(p):
            w = p.fuse.weight[idx][:, idx]
            b = p.fuse.bias[idx]
            q = replace_param(p, "fuse.weight", w)
            return replace_param(q, "fuse.bias", b)

        permuted = params
        for i, level in enumerate(params.levels):
            for path in ("main", "cond"):
                block = getattr(level, path)
                w = block.fuse.weight[idx][:, idx]
                b = block.fuse.bias[idx]
                permuted = replace_param(permuted, f"levels.{i}.{path}.fuse.weight", w)
                permuted = replace_param(permuted, f"levels.{i}.{path}.fuse.bias", b)

        x_t = rng.standard_normal((2, channels, 10))
        x_bar = rng.standard_normal((2, channels, 10))
        base = noise_estimate(x_t, x_bar, 2, params)
        moved = noise_estimate(x_t[:, perm], x_bar[:, perm], 2, permuted)
        npt.assert_allclose(moved, base[:, perm], atol=1e-12)

    def test_input_validation(self):
        params = _build()
        with pytest.raises(ValueError, match="shape"):
            noise_estimate(np.zeros((1, 2, 8)), np.zeros((1, 2, 9)), 1, params)
        with pytest.raises(ValueError, match="channels"):
            noise_estimate(np.zeros((1, 3, 8)), np.zeros((1, 3, 8)), 1, params)
        with pytest.raises(ValueError, match="step"):
            noise_estimate(np.zeros((1, 2, 8)), np.zeros((1, 2, 8)), 0, params)


class TestParamCount:
    def test_zero_depth_counts_lift_and_head_only(self):
        params = _build(depth=0, width=4, k=2)
        lift = 2 * (4 * 1 * 1 + 4)
        head = 2 * (4 + 1) + (4 * 2 + 2)  # experts + router
        assert param_count(params) == lift + head

    def test_doubling_head_experts_delta(self):
        # Experts contribute K*(L+1) and the router K*(L+1) more, so going
        # K -> 2K adds 2K*(L+1) scalars.
        l, k = 6, 3
        small = _build(depth=0, width=l, k=k)
        big = _build(depth=0, width=l, k=2 * k)
        assert param_count(big) - param_count(small) == 2 * k * (l + 1)

    def test_against_checkpoint_walk(self, tmp_path, tiny_backbone):
        # Independent oracle: total scalars stored in the checkpoint file.
        path = tmp_path / "model.ckp1"
        save_backbone(path, tiny_backbone)
        records = read_checkpoint(path)
        stored = sum(v.size for k, v in records.items() if not k.startswith(("meta.", "opt.")))
        assert param_count(tiny_backbone) == stored


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path, tiny_backbone):
        path = tmp_path / "model.ckp1"
        save_backbone(path, tiny_backbone)
        loaded, aux = load_backbone(path)
        orig = dict(named_params(tiny_backbone))
        new = dict(named_params(loaded))
        assert orig.keys() == new.keys()
        for name in orig:
            npt.assert_array_equal(np.asarray(orig[name]), np.asarray(new[name]))
        assert loaded.channels == tiny_backbone.channels
        assert loaded.d_emb == tiny_backbone.d_emb

    def test_loaded_model_same_predictions(self, tmp_path, tiny_backbone, rng):
        path = tmp_path / "model.ckp1"
        save_backbone(path, tiny_backbone)
        loaded, _ = load_backbone(path)
        x = rng.standard_normal((1, 2, 12))
        npt.assert_array_equal(
            noise_estimate(x, x, 2, tiny_backbone), noise_estimate(x, x, 2, loaded)
        )

    def test_dotted_name_scheme(self, tiny_backbone):
        names = set(params_to_named(tiny_backbone))
        assert "levels.0.main.experts.1.weight" in names
        assert "levels.0.bridge.film.bias" in names
        assert "head.router.weight" in names
        assert "lift_cond.bias" in names

    def test_extra_records_survive(self, tmp_path, tiny_backbone):
        path = tmp_path / "model.ckp1"
        save_backbone(path, tiny_backbone, extra={"meta.step": np.asarray(17.0)})
        _, aux = load_backbone(path)
        assert int(aux["meta.step"]) == 17

    def test_from_named_rejects_inconsistent_widths(self, tiny_backbone):
        named = params_to_named(tiny_backbone)
        named["lift_xt.weight"] = np.zeros((3, 1, 1))  # width 3 vs fuse 8
        with pytest.raises(ValueError, match="multiple"):
            backbone_from_named(named)


class TestParamTree:
    def test_replace_param_unknown_name(self, tiny_backbone):
        with pytest.raises(KeyError):
            replace_param(tiny_backbone, "levels.0.main.bogus", np.zeros(1))

    def test_map_preserves_structure(self, tiny_backbone):
        doubled = map_params(lambda a: 2.0 * a, tiny_backbone)
        for (n1, a), (n2, b) in zip(named_params(tiny_backbone), named_params(doubled)):
            assert n1 == n2
            npt.assert_array_equal(2.0 * np.asarray(a), np.asarray(b))

    def test_lifted_tree_grads(self, tiny_backbone, rng):
        from moediff.backbone import grads_like, lift_params

        g = ad.Graph()
        lifted = lift_params(g, tiny_backbone)
        x = rng.standard_normal((1, 2, 8))
        out = noise_estimate(x, x, 1, lifted)
        loss = ad.tsum(ad.mul(out, out))
        grads = grads_like(lifted, ad.backward(g, loss))
        assert [n for n, _ in named_params(grads)] == [n for n, _ in named_params(tiny_backbone)]
