import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from rcst.errors import InvalidArgument, NotFound, StateError
from rcst.losses import (
    LossBundle,
    LossWeights,
    PerceptualExtractor,
    adversarial_loss_d,
    adversarial_loss_g,
    content_loss,
    perceptual_features,
    style_loss,
    total_loss,
    weighted_mse_loss,
)


def central_difference(f, x, idx, h=1e-5):
    xp = x.clone()
    xm = x.clone()
    xp[idx] += h
    xm[idx] -= h
    return (f(xp) - f(xm)) / (2 * h)


def plain_channel_stats(feat: np.ndarray):
    """Loop over (batch, channel): mean and sqrt(biased variance + 1e-5)."""
    b, c = feat.shape[:2]
    means = np.zeros((b, c))
    stds = np.zeros((b, c))
    for i in range(b):
        for j in range(c):
            vals = feat[i, j].ravel().astype(np.float64)
            m = vals.sum() / vals.size
            means[i, j] = m
            stds[i, j] = np.sqrt(((vals - m) ** 2).sum() / vals.size + 1e-5)
    return means, stds


class TestExtractor:
    def test_four_taps(self, extractor):
        feats = perceptual_features(torch.rand(1, 3, 32, 32), extractor)
        assert len(feats) == 4

    def test_frozen_and_deterministic(self, extractor):
        img = torch.rand(1, 3, 32, 32)
        a = perceptual_features(img, extractor)
        b = perceptual_features(img, extractor)
        assert all(torch.equal(x, y) for x, y in zip(a, b))
        assert not any(p.requires_grad for p in extractor.parameters())
        extractor.train()
        assert not extractor.training

    def test_tap_after_two_pools(self, extractor):
        feats = perceptual_features(torch.rand(1, 3, 64, 64), extractor)
        assert feats[extractor.layer_tags.index("relu3_1")].shape[-2:] == (16, 16)

    def test_unloaded_raises(self):
        ext = PerceptualExtractor()
        with pytest.raises(StateError):
            perceptual_features(torch.rand(1, 3, 16, 16), ext)
        with pytest.raises(StateError):
            style_loss(torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16), ext)

    def test_from_file(self, tmp_path, extractor):
        path = tmp_path / "vgg.pth"
        torch.save({f"features.{k}": v for k, v in extractor.body.state_dict().items()}, path)
        loaded = PerceptualExtractor.from_file(path)
        img = torch.rand(1, 3, 32, 32)
        assert all(torch.equal(a, b) for a, b in
                   zip(perceptual_features(img, loaded), perceptual_features(img, extractor)))

    def test_from_missing_file(self, tmp_path):
        with pytest.raises(NotFound):
            PerceptualExtractor.from_file(tmp_path / "none.pth")

    def test_unknown_tap(self):
        with pytest.raises(InvalidArgument):
            PerceptualExtractor(layer_tags=("relu9_9",))


class TestContentLoss:
    def test_identical_is_zero(self, extractor):
        x = torch.rand(2, 3, 32, 32)
        assert float(content_loss(x, x, extractor)) <= 1e-7

    def test_symmetric(self, extractor):
        a, b = torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 32)
        assert torch.allclose(content_loss(a, b, extractor), content_loss(b, a, extractor))

    def test_matches_plain_recomputation(self, extractor):
        g = torch.Generator().manual_seed(5)
        a, b = torch.rand(1, 3, 32, 32, generator=g), torch.rand(1, 3, 32, 32, generator=g)
        fa = extractor(a)["relu4_1"].numpy().astype(np.float64)
        fb = extractor(b)["relu4_1"].numpy().astype(np.float64)
        expected = ((fa - fb) ** 2).sum() / fa.size
        assert float(content_loss(a, b, extractor)) == pytest.approx(expected, rel=1e-5)

    def test_shape_mismatch(self, extractor):
        with pytest.raises(InvalidArgument):
            content_loss(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 16, 16), extractor)


class TestStyleLoss:
    def test_identical_is_zero(self, extractor):
        x = torch.rand(1, 3, 32, 32)
        assert float(style_loss(x, x, extractor)) <= 1e-6

    def test_spatial_shuffle_invariance(self, extractor):
        # the statistics are spatial moments, so permuting positions of the
        # feature maps changes nothing
        from rcst.losses import channel_stats

        feat = extractor(torch.rand(1, 3, 32, 32))["relu2_1"]
        perm = torch.randperm(feat.shape[-1] * feat.shape[-2])
        shuffled = feat.flatten(2)[..., perm].view_as(feat)
        for a, b in zip(channel_stats(feat), channel_stats(shuffled)):
            assert torch.allclose(a, b, atol=1e-6)

    def test_matches_brute_force(self, extractor):
        g = torch.Generator().manual_seed(9)
        out, sty = torch.rand(2, 3, 32, 32, generator=g), torch.rand(1, 3, 48, 40, generator=g)
        fo, fs = extractor(out), extractor(sty)
        expected = 0.0
        for tag in extractor.layer_tags:
            mo, so = plain_channel_stats(fo[tag].numpy())
            ms, ss = plain_channel_stats(fs[tag].numpy())
            expected += ((mo - ms) ** 2).mean() + ((so - ss) ** 2).mean()
        assert float(style_loss(out, sty, extractor)) == pytest.approx(expected, rel=1e-4)


class TestWeightedMSE:
    def test_zero_map(self):
        out, ref = torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 8)
        assert float(weighted_mse_loss(out, ref, torch.zeros(1, 1, 8, 8))) == 0.0

    def test_ones_map_is_plain_mse(self):
        out, ref = torch.rand(2, 3, 8, 8), torch.rand(2, 3, 8, 8)
        plain = torch.nn.functional.mse_loss(out, ref)
        assert abs(float(weighted_mse_loss(out, ref, torch.ones(2, 1, 8, 8)) - plain)) <= 1e-7

    def test_hand_example(self):
        ref = torch.zeros(1, 3, 2, 2)
        out = ref + 2.0
        w = torch.tensor([[1.0, 0.0], [0.0, 0.5]]).view(1, 1, 2, 2)
        assert float(weighted_mse_loss(out, ref, w)) == pytest.approx(1.5)

    def test_shape_errors(self):
        with pytest.raises(InvalidArgument):
            weighted_mse_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 5), torch.zeros(1, 1, 4, 4))
        with pytest.raises(InvalidArgument):
            weighted_mse_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 4), torch.zeros(1, 1, 2, 2))

    def test_gradient_matches_finite_differences(self):
        g = torch.Generator().manual_seed(0)
        out = torch.rand(1, 3, 8, 8, dtype=torch.float64, generator=g)
        ref = torch.rand(1, 3, 8, 8, dtype=torch.float64, generator=g)
        w = torch.rand(1, 1, 8, 8, dtype=torch.float64, generator=g)
        x = out.clone().requires_grad_(True)
        weighted_mse_loss(x, ref, w).backward()
        rng = np.random.default_rng(0)
        for _ in range(20):
            idx = tuple(int(rng.integers(0, n)) for n in out.shape)
            num = central_difference(lambda t: float(weighted_mse_loss(t, ref, w)), out, idx)
            ana = float(x.grad[idx])
            assert abs(ana - num) / max(abs(num), 1e-12) < 1e-4

    def test_zero_weight_pixels_get_exactly_zero_gradient(self):
        g = torch.Generator().manual_seed(1)
        w = torch.rand(1, 1, 8, 8, generator=g)
        w[..., 2:5, 1:6] = 0.0
        out = torch.rand(1, 3, 8, 8, generator=g, requires_grad=True)
        weighted_mse_loss(out, torch.rand(1, 3, 8, 8, generator=g), w).backward()
        zero = (w == 0).expand_as(out)
        assert torch.all(out.grad[zero] == 0)
        assert torch.any(out.grad[~zero] != 0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.0, 50.0))
    def test_homogeneous_in_map(self, c):
        g = torch.Generator().manual_seed(2)
        out, ref = torch.rand(1, 3, 6, 6, generator=g), torch.rand(1, 3, 6, 6, generator=g)
        w = torch.rand(1, 1, 6, 6, generator=g)
        base = float(weighted_mse_loss(out, ref, w))
        assert float(weighted_mse_loss(out, ref, c * w)) == pytest.approx(c * base, rel=1e-5, abs=1e-6)


class TestAdversarial:
    def test_discriminator_optimum(self):
        assert float(adversarial_loss_d(torch.ones(1, 1, 4, 4), torch.zeros(1, 1, 4, 4))) == 0.0

    def test_discriminator_worst_case(self):
        assert float(adversarial_loss_d(torch.zeros(1, 1, 4, 4), torch.ones(1, 1, 4, 4))) == 1.0

    def test_discriminator_hand_computed(self):
        real = torch.tensor([0.5, 2.0, -1.0]).view(1, 1, 1, 3)
        fake = torch.tensor([0.25, -0.5]).view(1, 1, 1, 2)
        expected = 0.5 * (0.25 + 1.0 + 4.0) / 3 + 0.5 * (0.0625 + 0.25) / 2
        assert float(adversarial_loss_d(real, fake)) == pytest.approx(expected)

    @pytest.mark.parametrize("value, expected", [(1.0, 0.0), (0.0, 0.5), (3.0, 2.0)])
    def test_generator(self, value, expected):
        assert float(adversarial_loss_g(torch.full((2, 1, 3, 3), value))) == pytest.approx(expected)


@pytest.fixture(scope="module")
def inputs():
    g = torch.Generator().manual_seed(4)
    out = torch.rand(2, 3, 32, 32, generator=g)
    content = torch.rand(2, 3, 32, 32, generator=g)
    style = torch.rand(1, 3, 32, 32, generator=g)
    wmap = torch.rand(2, 1, 32, 32, generator=g)
    scores = torch.randn(2, 1, 2, 2, generator=g)
    return out, content, style, wmap, scores


class TestTotalLoss:
    def test_all_zero_weights(self, inputs, extractor):
        b = total_loss(*inputs, LossWeights(0, 0, 0, 0), extractor)
        assert float(b.total) == 0.0
        assert float(b.content) > 0 and float(b.weighted_mse) > 0

    def test_projection(self, inputs, extractor):
        b = total_loss(*inputs, LossWeights(0, 0, 0, 1), extractor)
        assert float(b.total) == float(b.weighted_mse)

    def test_dot_product(self, inputs, extractor):
        lam = LossWeights(1, 10, 1, 50)
        b = total_loss(*inputs, lam, extractor)
        parts = [float(getattr(b, k)) for k in LossBundle.COMPONENTS]
        assert float(b.total) == pytest.approx(float(np.dot(parts, lam)), abs=1e-6, rel=1e-6)
        assert b.weights == lam

    def test_components_match_individual_losses(self, inputs, extractor):
        out, content, style, wmap, scores = inputs
        b = total_loss(out, content, style, wmap, scores, LossWeights(), extractor)
        assert float(b.content) == pytest.approx(float(content_loss(out, content, extractor)), rel=1e-6)
        assert float(b.style) == pytest.approx(float(style_loss(out, style, extractor)), rel=1e-6)
        assert float(b.weighted_mse) == pytest.approx(float(weighted_mse_loss(out, content, wmap)))
        assert float(b.adversarial) == pytest.approx(float(adversarial_loss_g(scores)))
        assert b.is_finite()
        assert all(v >= 0 for k, v in b.as_dict().items() if k != "adversarial")

    def test_negative_weight_rejected(self, inputs, extractor):
        with pytest.raises(InvalidArgument):
            total_loss(*inputs, LossWeights(1, -1, 1, 1), extractor)

    def test_same_image_everywhere_is_zero(self, extractor):
        x = torch.rand(1, 3, 32, 32)
        b = total_loss(x, x, x, torch.ones(1, 1, 32, 32), torch.ones(1, 1, 2, 2),
                       LossWeights(1, 1, 1, 1), extractor)
        assert float(b.content) <= 1e-7 and float(b.style) <= 1e-6
        assert float(b.total) <= 1e-5
