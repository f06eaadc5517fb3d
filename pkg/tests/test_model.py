import math
from random import Random

import pytest
import torch

from gudn.encoder import EncoderConfig
from gudn.model import (
    AblationMode,
    Batch,
    GudnModel,
    LossBreakdown,
    ModelConfig,
    bce_sum,
    class_loss,
    feature_loss,
)

VOCAB = 32


def tiny_model_config(num_labels=6, **kw):
    enc = EncoderConfig(num_layers=2, hidden_dim=8, num_heads=2, ffn_dim=16,
                        vocab_size=VOCAB, max_input_len=10)
    return ModelConfig(num_labels=num_labels, encoder=enc, **kw)


def random_batch(rng, model_cfg, n=3, with_labels=True):
    t = model_cfg.encoder.max_input_len
    text = torch.tensor([[0] + [rng.randrange(3, VOCAB) for _ in range(t - 1)]
                         for _ in range(n)])
    y = torch.zeros(n, model_cfg.num_labels)
    for i in range(n):
        for l in rng.sample(range(model_cfg.num_labels), 2):
            y[i, l] = 1.0
    label = None
    if with_labels:
        label = torch.tensor([[0] + [rng.randrange(3, VOCAB) for _ in range(t - 1)]
                              for _ in range(n)])
    return Batch(text_tokens=text, y=y, label_tokens=label)


class TestAblationMode:
    def test_values(self):
        assert AblationMode.from_str("FULL") is AblationMode.FULL
        assert {m.value for m in AblationMode} == {"full", "bert_only", "gud_f", "gud_l"}

    def test_guide_flags(self):
        assert AblationMode.FULL.use_feature_guide and AblationMode.FULL.use_link_guide
        assert AblationMode.GUD_F.use_feature_guide and not AblationMode.GUD_F.use_link_guide
        assert not AblationMode.GUD_L.use_feature_guide and AblationMode.GUD_L.use_link_guide
        assert not AblationMode.BERT_ONLY.needs_label_stream

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown mode"):
            AblationMode.from_str("half")


class TestModelConfig:
    def test_width_defaults_follow_encoder(self):
        cfg = tiny_model_config()
        assert cfg.d_feat == 8 and cfg.d_hidden == 8

    def test_sampling_off_for_small_label_spaces(self):
        assert not tiny_model_config(num_labels=100).sampling_enabled

    def test_sampling_auto_enables_above_threshold(self):
        cfg = tiny_model_config(num_labels=6000)
        assert cfg.sampling_enabled
        # smallest power of two whose square covers the label count
        assert cfg.cluster_count == 128
        assert 64 * 64 < 6000 <= 128 * 128
        assert cfg.num_candidate_clusters == 32  # C/4

    def test_explicit_sampling_overrides(self):
        cfg = tiny_model_config(num_labels=16, negative_sampling=True, C_target=4,
                                k_clusters=3)
        assert cfg.sampling_enabled
        assert cfg.cluster_count == 4
        assert cfg.num_candidate_clusters == 3

    def test_bad_cluster_count(self):
        with pytest.raises(ValueError, match="power of 2"):
            tiny_model_config(num_labels=16, negative_sampling=True, C_target=6)
        with pytest.raises(ValueError, match="k_clusters"):
            tiny_model_config(num_labels=16, negative_sampling=True, C_target=4,
                              k_clusters=9)

    def test_dict_round_trip(self):
        cfg = tiny_model_config(num_labels=9, dropout_rate=0.3,
                                softmax_in_classifier=False)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestFeatureLoss:
    def test_identical_is_zero(self):
        g = torch.randn(4, 6)
        assert feature_loss(g, g).item() == 0.0

    def test_hand_value(self):
        g_t = torch.tensor([[3.0, 4.0]])
        g_l = torch.zeros(1, 2)
        assert feature_loss(g_t, g_l).item() == pytest.approx(12.5)

    def test_matches_brute_force(self):
        rng = Random(5)
        g_t = torch.tensor([[rng.uniform(-2, 2) for _ in range(5)] for _ in range(2)])
        g_l = torch.tensor([[rng.uniform(-2, 2) for _ in range(5)] for _ in range(2)])
        expected = 0.0
        for i in range(2):
            for j in range(5):
                expected += (g_t[i, j].item() - g_l[i, j].item()) ** 2
        expected /= 2 * 2
        assert feature_loss(g_t, g_l).item() == pytest.approx(expected, rel=1e-6)

    def test_symmetry_and_nonnegativity(self):
        a, b = torch.randn(3, 4), torch.randn(3, 4)
        assert feature_loss(a, b).item() == feature_loss(b, a).item()
        assert feature_loss(a, b).item() >= 0

    def test_empty_batch_is_zero(self):
        assert feature_loss(torch.zeros(0, 4), torch.zeros(0, 4)).item() == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            feature_loss(torch.zeros(2, 3), torch.zeros(2, 4))


class TestBce:
    def test_zero_logits(self):
        n, L = 3, 5
        got = bce_sum(torch.zeros(n, L), torch.randint(0, 2, (n, L)).float())
        assert got.item() == pytest.approx(n * L * math.log(2), rel=1e-6)

    def test_saturated_bounded_by_clamp(self):
        n, L = 2, 4
        y = torch.randint(0, 2, (n, L)).float()
        logits = (2 * y - 1) * 50  # perfectly confident
        got = bce_sum(logits, y).item()
        assert math.isfinite(got)
        assert 0 < got < 1e-5  # clamped probabilities keep each term ~1e-7

    def test_single_positive_high_logit_near_zero(self):
        got = class_loss(torch.tensor([[20.0]]), torch.tensor([[1.0]]))
        assert got.item() < 1e-6

    def test_matches_scalar_loop(self):
        rng = Random(8)
        n, L = 2, 4
        logits = torch.tensor([[rng.uniform(-3, 3) for _ in range(L)] for _ in range(n)])
        y = torch.tensor([[float(rng.random() < 0.4) for _ in range(L)] for _ in range(n)])
        eps = 1e-7
        expected = 0.0
        for i in range(n):
            for j in range(L):
                p = 1.0 / (1.0 + math.exp(-logits[i, j].item()))
                p = min(max(p, eps), 1 - eps)
                expected += -(y[i, j].item() * math.log(p)
                              + (1 - y[i, j].item()) * math.log(1 - p))
        assert bce_sum(logits, y).item() == pytest.approx(expected, rel=1e-5)

    def test_mean_reduction_divides_by_batch(self):
        logits = torch.randn(4, 3)
        y = torch.randint(0, 2, (4, 3)).float()
        assert bce_sum(logits, y, reduction="mean").item() == \
            pytest.approx(bce_sum(logits, y).item() / 4, rel=1e-6)


class TestGuideForward:
    def _identity_guides(self, model):
        d = model.cfg.d_feat
        for layer in (model.fc_text, model.fc_label, model.shape_layer):
            with torch.no_grad():
                layer.weight.copy_(torch.eye(d))
                layer.bias.zero_()

    def test_identity_maps(self):
        torch.manual_seed(0)
        model = GudnModel(tiny_model_config())
        self._identity_guides(model)
        e_t, e_l = torch.randn(4, 8), torch.randn(4, 8)
        g_t, g_l = model.guide_forward(e_t, e_l)
        assert torch.allclose(g_t, e_t, atol=1e-6)
        assert torch.allclose(g_l, e_l, atol=1e-6)

    def test_empty_batch(self):
        model = GudnModel(tiny_model_config())
        g_t, g_l = model.guide_forward(torch.zeros(0, 8), torch.zeros(0, 8))
        assert g_t.shape == g_l.shape == (0, 8)

    def test_shapes(self):
        model = GudnModel(tiny_model_config())
        g_t, g_l = model.guide_forward(torch.randn(5, 8), torch.randn(5, 8))
        assert g_t.shape == g_l.shape == (5, 8)

    def test_row_count_mismatch(self):
        model = GudnModel(tiny_model_config())
        with pytest.raises(ValueError, match="batch mismatch"):
            model.guide_forward(torch.zeros(2, 8), torch.zeros(3, 8))


class TestRankClassify:
    def test_softmax_rows_sum_to_one(self):
        torch.manual_seed(1)
        model = GudnModel(tiny_model_config())
        act = model.classifier_activation(torch.randn(6, 8))
        assert torch.allclose(act.sum(dim=-1), torch.ones(6), atol=1e-6)

    def test_shift_invariance(self):
        torch.manual_seed(2)
        model = GudnModel(tiny_model_config())
        e_t = torch.randn(3, 8)
        before = model.rank_classify(e_t)
        with torch.no_grad():
            model.mlp2.bias.add_(4.2)  # constant shift of every hidden component
        after = model.rank_classify(e_t)
        assert torch.allclose(before, after, atol=1e-5)

    def test_hand_computation(self):
        cfg = tiny_model_config(num_labels=2, d_hidden=2, d_feat=3)
        model = GudnModel(cfg)
        with torch.no_grad():
            model.mlp2.weight.copy_(torch.tensor([[1.0, 0.0, 2.0], [0.0, -1.0, 1.0]]))
            model.mlp2.bias.copy_(torch.tensor([0.5, -0.5]))
            model.label_head.weight.copy_(torch.tensor([[2.0, 0.0], [-1.0, 3.0]]))
            model.label_head.bias.zero_()
        e_t = torch.tensor([[1.0, 2.0, -1.0]])
        h1 = 1.0 * 1 + 0.0 * 2 + 2.0 * -1 + 0.5   # -0.5
        h2 = 0.0 * 1 + -1.0 * 2 + 1.0 * -1 - 0.5  # -3.5
        z1, z2 = math.exp(h1), math.exp(h2)
        p1, p2 = z1 / (z1 + z2), z2 / (z1 + z2)
        expected = [2.0 * p1 + 0.0 * p2, -1.0 * p1 + 3.0 * p2]
        got = model.rank_classify(e_t)[0]
        assert got[0].item() == pytest.approx(expected[0], rel=1e-5)
        assert got[1].item() == pytest.approx(expected[1], rel=1e-5)

    def test_relu_variant(self):
        cfg = tiny_model_config(softmax_in_classifier=False)
        model = GudnModel(cfg)
        act = model.classifier_activation(torch.randn(4, 8))
        assert torch.all(act >= 0)
        assert not torch.allclose(act.sum(dim=-1), torch.ones(4))  # no normalization


class TestOverallLoss:
    def test_bert_only_is_class_only(self):
        torch.manual_seed(3)
        model = GudnModel(tiny_model_config()).eval()
        batch = random_batch(Random(0), model.cfg, with_labels=False)
        lb = model.overall_loss(batch, AblationMode.BERT_ONLY)
        assert lb.l_feature.item() == 0.0
        assert lb.l_link.item() == 0.0
        assert lb.l_overall.item() == lb.l_class.item()

    def test_mode_zeroing(self):
        torch.manual_seed(4)
        model = GudnModel(tiny_model_config()).eval()
        batch = random_batch(Random(1), model.cfg)
        f = model.overall_loss(batch, AblationMode.GUD_F)
        assert f.l_link.item() == 0.0 and f.l_feature.item() > 0.0
        l = model.overall_loss(batch, AblationMode.GUD_L)
        assert l.l_feature.item() == 0.0 and l.l_link.item() > 0.0

    def test_identities_bit_exact(self):
        torch.manual_seed(5)
        model = GudnModel(tiny_model_config()).eval()
        rng = Random(2)
        for mode in AblationMode:
            for _ in range(5):
                batch = random_batch(rng, model.cfg)
                lb = model.overall_loss(batch, mode)
                assert torch.equal(lb.l_guide, lb.l_feature + lb.l_link)
                assert torch.equal(lb.l_overall, lb.l_guide + lb.l_class)
                f = lb.floats()
                assert f["guide"] == f["feature"] + f["link"]
                assert f["overall"] == f["guide"] + f["class"]

    def test_missing_label_tokens_rejected(self):
        model = GudnModel(tiny_model_config())
        batch = random_batch(Random(3), model.cfg, with_labels=False)
        with pytest.raises(ValueError, match="requires label tokens"):
            model.overall_loss(batch, AblationMode.FULL)

    def test_aligned_and_perfect_means_near_zero(self):
        # force G_t == G_l and saturated correct heads: every term collapses
        cfg = tiny_model_config(num_labels=4)
        torch.manual_seed(6)
        model = GudnModel(cfg).eval()
        d = cfg.d_feat
        y_row = torch.tensor([1.0, 0.0, 1.0, 0.0])
        with torch.no_grad():
            model.label_mlp.weight.copy_(model.text_mlp.weight)
            model.label_mlp.bias.copy_(model.text_mlp.bias)
            for layer in (model.fc_text, model.fc_label, model.shape_layer):
                layer.weight.copy_(torch.eye(d))
                layer.bias.zero_()
            for head in (model.link_head, model.label_head):
                head.weight.zero_()
                head.bias.copy_((2 * y_row - 1) * 20)
        tokens = torch.tensor([[0, 5, 6, 7, 1, 1, 1, 1, 1, 1]] * 2)
        batch = Batch(text_tokens=tokens, y=y_row.repeat(2, 1),
                      label_tokens=tokens.clone())
        lb = model.overall_loss(batch, AblationMode.FULL)
        assert lb.l_feature.item() == 0.0
        assert lb.l_overall.item() < 1e-4

    def test_loss_breakdown_compose(self):
        lb = LossBreakdown.compose(torch.tensor(1.5), torch.tensor(2.25), torch.tensor(4.0))
        assert lb.l_guide.item() == 3.75
        assert lb.l_overall.item() == 7.75


class TestPredict:
    def test_full_ranking_is_permutation(self):
        torch.manual_seed(7)
        model = GudnModel(tiny_model_config(num_labels=6))
        tokens = torch.tensor([[0, 4, 5, 1, 1, 1, 1, 1, 1, 1]])
        ids, scores = model.predict(tokens, top_k=6)
        assert sorted(ids[0].tolist()) == list(range(6))
        assert all(scores[0][i] >= scores[0][i + 1] for i in range(5))

    def test_ties_break_toward_lower_id(self):
        torch.manual_seed(8)
        model = GudnModel(tiny_model_config(num_labels=5))
        with torch.no_grad():
            model.label_head.weight.zero_()
            model.label_head.bias.zero_()
        ids, scores = model.predict(torch.tensor([[0, 3, 1, 1, 1, 1, 1, 1, 1, 1]]), top_k=5)
        assert ids[0].tolist() == [0, 1, 2, 3, 4]
        assert scores[0].tolist() == [0.5] * 5

    def test_top_k_truncated_with_warning(self):
        torch.manual_seed(9)
        model = GudnModel(tiny_model_config(num_labels=4))
        with pytest.warns(UserWarning, match="truncating"):
            ids, _ = model.predict(torch.tensor([[0, 3, 1, 1, 1, 1, 1, 1, 1, 1]]), top_k=9)
        assert ids.shape == (1, 4)

    def test_guide_corruption_does_not_change_predictions(self):
        torch.manual_seed(10)
        model = GudnModel(tiny_model_config(num_labels=6))
        tokens = torch.tensor([[0, 4, 5, 6, 1, 1, 1, 1, 1, 1],
                               [0, 7, 8, 1, 1, 1, 1, 1, 1, 1]])
        before_ids, before_scores = model.predict(tokens, top_k=6)
        with torch.no_grad():
            for mod in (model.fc_text, model.fc_label, model.shape_layer,
                        model.link_head, model.label_mlp):
                mod.weight.fill_(123.0)
                mod.bias.fill_(-7.0)
        after_ids, after_scores = model.predict(tokens, top_k=6)
        assert (before_ids == after_ids).all()
        assert (before_scores == after_scores).all()

    def test_training_mode_restored(self):
        model = GudnModel(tiny_model_config()).train()
        model.predict(torch.tensor([[0, 3, 1, 1, 1, 1, 1, 1, 1, 1]]), top_k=2)
        assert model.training
