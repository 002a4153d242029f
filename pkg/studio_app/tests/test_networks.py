# anchorcast/studio_app/tests/test_networks.py
import numpy as np
import torch
from django.test import SimpleTestCase
from anchorcast_core.exceptions import InputValidationError, ShapeMismatchError
from anchorcast_core.networks import (ModelConfig, FeatureBank, ControlResiduals, PixelAutoencoder,
                                      face_flags_for_layers, skeleton_to_tensor)
from anchorcast_core.skeleton import SkeletonMap
from .helpers import tiny_config, tiny_model, randomize_zero_convs, random_skeleton_pixels


class ModelConfigTests(SimpleTestCase):
    def test_defaults_are_valid(self):
        config = ModelConfig()
        self.assertEqual(config.image_size, (64, 64))
        self.assertEqual(config.levels, 3)
        self.assertEqual(config.tokens_per_attention_layer, [256, 256, 256])

    def test_rejects_sizes_not_divisible_by_the_level_factor(self):
        with self.assertRaises(InputValidationError):
            ModelConfig(image_size=18, channels=(8, 16, 16), attention_levels=(2,), groups=4, heads=2)

    def test_rejects_bad_window_groups_and_heads(self):
        with self.assertRaises(InputValidationError):
            tiny_config(window_size=0)
        with self.assertRaises(InputValidationError):
            tiny_config(channels=(6, 16))
        with self.assertRaises(InputValidationError):
            tiny_config(heads=3)
        with self.assertRaises(InputValidationError):
            tiny_config(attention_levels=(2,))

    def test_dict_round_trip_keeps_hash(self):
        config = tiny_config()
        self.assertEqual(ModelConfig.from_dict(config.as_dict()).config_hash(), config.config_hash())


class BackboneTests(SimpleTestCase):
    def setUp(self):
        self.model = tiny_model()
        self.x = torch.randn(2, 3, 16, 16, generator=torch.Generator().manual_seed(0))
        self.t = torch.tensor([5, 700])

    def test_output_shape_matches_input(self):
        with torch.no_grad():
            self.assertEqual(self.model.backbone_forward(self.x, self.t).shape, self.x.shape)
        model = tiny_model(image_size=32, channels=(8, 16, 16), attention_levels=(1, 2))
        x = torch.randn(1, 3, 32, 32)
        with torch.no_grad():
            self.assertEqual(model.backbone_forward(x, 10).shape, x.shape)

    def test_neutral_conditioning_is_bitwise_bare_unet(self):
        bank = FeatureBank.empty(self.model.config, batch=2)
        ctrl = ControlResiduals.zeros(self.model.backbone.decoder_input_shapes(2))
        with torch.no_grad():
            bare = self.model.backbone(self.x, self.t, self.model.null_text())
            conditioned = self.model.backbone_forward(self.x, self.t, bank, ctrl, self.model.null_text)
        self.assertTrue(torch.equal(bare, conditioned))

    def test_reference_tokens_reach_the_prediction(self):
        image = torch.rand(1, 3, 16, 16) * 2 - 1
        mask = torch.ones(1, 1, 16, 16)
        with torch.no_grad():
            bank = self.model.reference_forward(image, mask)
            base = self.model.backbone_forward(self.x, self.t, bank)
            tokens = [t.clone() for t in bank.tokens]
            tokens[0][0, 3] += 0.5
            moved = self.model.backbone_forward(self.x, self.t, FeatureBank(tokens, bank.face_flags))
        self.assertGreater(float((moved - base).abs().max()), 0.0)

    def test_bad_residual_names_the_decoder_block(self):
        shapes = self.model.backbone.decoder_input_shapes(2)
        residuals = [torch.zeros(s) for s in shapes]
        residuals[1] = torch.zeros(2, 5, 16, 16)
        with self.assertRaises(ShapeMismatchError) as ctx:
            self.model.backbone_forward(self.x, self.t, ctrl=ControlResiduals(residuals))
        self.assertIn("decoder block 1", str(ctx.exception))

    def test_bank_layer_count_must_match(self):
        bank = FeatureBank([torch.zeros(1, 0, 16)], [torch.zeros(1, 0, dtype=torch.bool)])
        with self.assertRaises(ShapeMismatchError):
            self.model.backbone_forward(self.x, self.t, bank)

    def test_wrong_input_size_is_rejected(self):
        with self.assertRaises(ShapeMismatchError):
            self.model.backbone_forward(torch.zeros(1, 3, 8, 8), 0)

    def test_all_frames_mode_keeps_shape(self):
        bank = self.model.reference_forward(torch.zeros(3, 16, 16), torch.zeros(16, 16))
        with torch.no_grad():
            out = self.model.backbone_forward(self.x, self.t, bank, temporal_mode='all-frames')
        self.assertEqual(out.shape, self.x.shape)
        with self.assertRaises(InputValidationError):
            self.model.backbone_forward(self.x, self.t, bank, temporal_mode='sideways')


class ReferenceNetTests(SimpleTestCase):
    def setUp(self):
        self.model = tiny_model()
        self.image = torch.rand(1, 3, 16, 16) * 2 - 1

    def bank_for(self, mask):
        with torch.no_grad():
            return self.model.reference_forward(self.image, torch.from_numpy(mask)[None, None].float())

    def test_layer_count_and_flag_arity(self):
        bank = self.bank_for(np.zeros((16, 16)))
        self.assertEqual(bank.layer_count, len(self.model.backbone.attention_blocks()))
        for tokens, flags, n in zip(bank.tokens, bank.face_flags, self.model.config.tokens_per_attention_layer):
            self.assertEqual(tuple(tokens.shape[:2]), (1, n))
            self.assertEqual(tuple(flags.shape), (1, n))

    def test_empty_and_full_masks(self):
        self.assertFalse(any(f.any() for f in self.bank_for(np.zeros((16, 16))).face_flags))
        self.assertTrue(all(f.all() for f in self.bank_for(np.ones((16, 16))).face_flags))

    def test_single_cell_mask_flags_exactly_that_cell(self):
        mask = np.zeros((16, 16))
        mask[8:10, 8:10] = 1.0
        flags = self.bank_for(mask).face_flags[-1][0].reshape(8, 8)
        expected = np.zeros((8, 8), dtype=bool)
        for i in range(8):
            for j in range(8):
                expected[i, j] = mask[2 * i:2 * i + 2, 2 * j:2 * j + 2].mean() > 0.5
        np.testing.assert_array_equal(flags.numpy(), expected)
        self.assertEqual(int(flags.sum()), 1)

    def test_half_covered_cells_are_not_face(self):
        mask = torch.zeros(1, 1, 4, 4)
        mask[..., 0:1, 0:2] = 1.0
        flags = face_flags_for_layers(mask, tiny_config(image_size=4, channels=(8, 16)))
        self.assertFalse(flags[0].any())

    def test_size_mismatch_is_rejected(self):
        with self.assertRaises(ShapeMismatchError):
            self.model.reference_forward(self.image, torch.zeros(1, 1, 8, 8))

    def test_reference_net_starts_from_backbone_weights(self):
        backbone = self.model.backbone.state_dict()
        for name, value in self.model.reference_net.state_dict().items():
            if name in backbone:
                self.assertTrue(torch.equal(value, backbone[name]), name)
        gammas = [float(g) for g in self.model.reference_net.gammas()]
        self.assertTrue(all(1.0 < g < 1.02 for g in gammas))

    def test_face_enhance_switch_changes_the_bank(self):
        plain = tiny_model(face_enhance=False)
        plain.reference_net.load_state_dict(self.model.reference_net.state_dict())
        mask = torch.ones(1, 1, 16, 16)
        with torch.no_grad():
            for m in (plain.reference_net.magnification, self.model.reference_net.magnification):
                for p in m:
                    p.theta.fill_(2.0)
            a = plain.reference_forward(self.image, mask)
            b = self.model.reference_forward(self.image, mask)
        self.assertFalse(torch.equal(a.tokens[0], b.tokens[0]))


class ControlNetTests(SimpleTestCase):
    def setUp(self):
        self.model = tiny_model()
        self.x = torch.randn(1, 3, 16, 16)

    def test_residuals_start_at_zero(self):
        with torch.no_grad():
            black = self.model.controlnet_forward(SkeletonMap(np.zeros((16, 16, 3), dtype=np.uint8)), self.x, 10)
            drawn = self.model.controlnet_forward(SkeletonMap(random_skeleton_pixels()), self.x, 10)
        for a, b in zip(black.residuals, drawn.residuals):
            self.assertFalse(a.any())
            self.assertTrue(torch.equal(a, b))

    def test_trained_residual_shapes_match_decoder_inputs(self):
        randomize_zero_convs(self.model)
        with torch.no_grad():
            ctrl = self.model.controlnet_forward(SkeletonMap(random_skeleton_pixels()), self.x, 10)
        shapes = self.model.backbone.decoder_input_shapes(1)
        self.assertEqual(len(ctrl), len(shapes))
        for residual, shape in zip(ctrl.residuals, shapes):
            self.assertEqual(tuple(residual.shape), shape)
        self.assertTrue(any(r.abs().sum() > 0 for r in ctrl.residuals))

    def test_size_mismatch_is_rejected(self):
        with self.assertRaises(ShapeMismatchError):
            self.model.controlnet_forward(SkeletonMap(np.zeros((8, 8, 3), dtype=np.uint8)), self.x, 0)

    def test_encoder_copied_from_backbone(self):
        backbone = self.model.backbone.state_dict()
        own = self.model.controlnet.state_dict()
        shared = [k for k in own if k in backbone]
        self.assertTrue(shared)
        for name in shared:
            self.assertTrue(torch.equal(own[name], backbone[name]), name)

    def test_skeleton_tensor_range(self):
        hint = skeleton_to_tensor([random_skeleton_pixels(), random_skeleton_pixels(seed=1)])
        self.assertEqual(tuple(hint.shape), (2, 3, 16, 16))
        self.assertEqual(float(hint.max()), 1.0)
        self.assertEqual(float(hint.min()), 0.0)


class AssemblyTests(SimpleTestCase):
    def test_same_seed_builds_identical_models(self):
        a, b = tiny_model(seed=4), tiny_model(seed=4)
        for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            self.assertTrue(torch.equal(pa, pb), name)

    def test_only_reference_net_is_trainable(self):
        model = tiny_model()
        for name, p in model.named_parameters():
            self.assertEqual(p.requires_grad, name.startswith('reference_net.'), name)
        self.assertFalse(model.null_text().any())
        self.assertEqual(tuple(model.null_text().shape), (1, 1, model.config.context_dim))

    def test_pixel_autoencoder_is_identity(self):
        x = torch.randn(2, 3, 4, 4)
        ae = PixelAutoencoder()
        self.assertIs(ae.decode(ae.encode(x)), x)
