# anchorcast/studio_app/tests/test_attention.py
import math
import torch
from django.test import SimpleTestCase
from anchorcast_core.attention import (Attention, MagnificationParam, magnification_gain, self_attention,
                                       magnify_face_tokens, face_enhance_attention, concat_reference_attention,
                                       all_frames_attention)
from anchorcast_core.exceptions import ShapeMismatchError
from anchorcast_core.networks import TransformerBlock


def softmax(values):
    top = max(values)
    exps = [math.exp(v - top) for v in values]
    return [e / sum(exps) for e in exps]


class MagnificationTests(SimpleTestCase):
    def test_gain_stays_above_one(self):
        for theta in torch.linspace(-10, 10, 41, dtype=torch.float64):
            self.assertGreater(float(magnification_gain(theta)), 1.0)
        self.assertAlmostEqual(float(MagnificationParam().gamma()), 1.0 + math.log1p(math.exp(-4.0)), places=6)

    def test_gain_derivative_is_sigmoid(self):
        for value in (-6.0, -4.0, -0.5, 0.0, 1.3, 5.0):
            theta = torch.tensor(value, dtype=torch.float64, requires_grad=True)
            magnification_gain(theta).backward()
            h = 1e-6
            fd = (float(magnification_gain(torch.tensor(value + h, dtype=torch.float64)))
                  - float(magnification_gain(torch.tensor(value - h, dtype=torch.float64)))) / (2 * h)
            self.assertAlmostEqual(float(theta.grad), 1 / (1 + math.exp(-value)), places=12)
            self.assertLess(abs(float(theta.grad) - fd) / abs(fd), 1e-5)


class FaceEnhanceTests(SimpleTestCase):
    def setUp(self):
        torch.manual_seed(0)
        self.attn = Attention(8, heads=2)
        self.tokens = torch.randn(2, 6, 8)
        self.flags = torch.tensor([True, False, True, False, False, True])

    def test_unit_gain_is_plain_self_attention(self):
        out = face_enhance_attention(self.tokens, self.flags, torch.tensor(1.0), self.attn)
        torch.testing.assert_close(out, self_attention(self.tokens, self.attn), rtol=0, atol=1e-6)

    def test_no_face_tokens_ignores_gain(self):
        flags = torch.zeros(6, dtype=torch.bool)
        a = face_enhance_attention(self.tokens, flags, torch.tensor(1.5), self.attn)
        b = face_enhance_attention(self.tokens, flags, torch.tensor(3.0), self.attn)
        self.assertTrue(torch.equal(a, b))

    def test_hand_evaluated_two_token_example(self):
        tokens = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]], dtype=torch.float64)
        out = face_enhance_attention(tokens, torch.tensor([True, False]), 2.0)
        scaled = [(2.0, 0.0), (0.0, 1.0)]
        r = 1 / math.sqrt(2)
        expected = []
        for q in scaled:
            w = softmax([r * (q[0] * k[0] + q[1] * k[1]) for k in scaled])
            expected.append([w[0] * scaled[0][0] + w[1] * scaled[1][0], w[0] * scaled[0][1] + w[1] * scaled[1][1]])
        torch.testing.assert_close(out[0], torch.tensor(expected, dtype=torch.float64), rtol=0, atol=1e-12)

    def test_flag_arity_mismatch_is_rejected(self):
        with self.assertRaises(ShapeMismatchError):
            face_enhance_attention(self.tokens, torch.ones(5, dtype=torch.bool), 2.0, self.attn)

    def test_per_sample_flags(self):
        flags = torch.zeros(2, 6, dtype=torch.bool)
        flags[1, 0] = True
        scaled = magnify_face_tokens(self.tokens, flags, 3.0)
        self.assertTrue(torch.equal(scaled[0], self.tokens[0]))
        torch.testing.assert_close(scaled[1, 0], 3.0 * self.tokens[1, 0])
        self.assertTrue(torch.equal(scaled[1, 1:], self.tokens[1, 1:]))

    def test_gradients_match_finite_differences(self):
        for seed in range(20):
            torch.manual_seed(seed)
            attn = Attention(4, heads=2).double()
            tokens = torch.randn(2, 3, 4, dtype=torch.float64, requires_grad=True)
            theta = torch.randn((), dtype=torch.float64, requires_grad=True)
            flags = torch.rand(3) > 0.5

            def fn(x, th):
                return face_enhance_attention(x, flags, magnification_gain(th), attn)

            self.assertTrue(torch.autograd.gradcheck(fn, (tokens, theta), eps=1e-6, atol=1e-6, rtol=1e-4))


class ConcatReferenceTests(SimpleTestCase):
    def setUp(self):
        torch.manual_seed(1)
        self.attn = Attention(8, heads=2)
        self.tokens = torch.randn(2, 5, 8)

    def test_empty_reference_is_exactly_self_attention(self):
        plain = self_attention(self.tokens, self.attn)
        self.assertTrue(torch.equal(concat_reference_attention(self.tokens, torch.zeros(2, 0, 8), self.attn), plain))
        self.assertTrue(torch.equal(concat_reference_attention(self.tokens, None, self.attn), plain))

    def test_duplicated_reference_matches_self_attention(self):
        out = concat_reference_attention(self.tokens, self.tokens.clone(), self.attn)
        torch.testing.assert_close(out, self_attention(self.tokens, self.attn), rtol=0, atol=1e-6)

    def test_output_keeps_query_count(self):
        out = concat_reference_attention(self.tokens, torch.randn(1, 9, 8), self.attn)
        self.assertEqual(tuple(out.shape), (2, 5, 8))

    def test_single_query_single_reference_closed_form(self):
        x = torch.tensor([[[0.5, -1.0, 2.0]]], dtype=torch.float64)
        r = torch.tensor([[[1.0, 0.0, -0.5]]], dtype=torch.float64)
        out = concat_reference_attention(x, r)
        scale = 1 / math.sqrt(3)
        xs, rs = x[0, 0].tolist(), r[0, 0].tolist()
        w = softmax([scale * sum(a * a for a in xs), scale * sum(a * b for a, b in zip(xs, rs))])
        expected = [w[0] * a + w[1] * b for a, b in zip(xs, rs)]
        torch.testing.assert_close(out[0, 0], torch.tensor(expected, dtype=torch.float64), rtol=0, atol=1e-12)

    def test_rows_are_stochastic_with_concatenated_keys(self):
        context = torch.cat([self.tokens, torch.randn(2, 7, 8)], dim=1)
        weights = self.attn.attention_weights(self.tokens, context)
        self.assertEqual(tuple(weights.shape), (2, 2, 5, 12))
        torch.testing.assert_close(weights.sum(dim=-1), torch.ones(2, 2, 5), rtol=0, atol=1e-6)

    def test_channel_mismatch_is_rejected(self):
        with self.assertRaises(ShapeMismatchError):
            concat_reference_attention(self.tokens, torch.randn(2, 3, 7), self.attn)


class AllFramesTests(SimpleTestCase):
    def setUp(self):
        torch.manual_seed(2)
        self.attn = Attention(8, heads=2)

    def test_single_frame_equals_per_frame_attention(self):
        window = torch.randn(1, 6, 8)
        ref = torch.randn(4, 8)
        out = all_frames_attention(window, ref, self.attn)
        per_frame = concat_reference_attention(window, ref.unsqueeze(0), self.attn)
        torch.testing.assert_close(out, per_frame, rtol=0, atol=1e-6)

    def test_identical_frames_give_identical_outputs(self):
        frame = torch.randn(1, 6, 8)
        out = all_frames_attention(torch.cat([frame, frame]), torch.randn(3, 8), self.attn)
        torch.testing.assert_close(out[0], out[1], rtol=0, atol=1e-6)

    def test_two_frames_one_token_closed_form(self):
        window = torch.tensor([[[1.0, 0.0]], [[0.0, 2.0]]], dtype=torch.float64)
        ref = torch.tensor([[0.5, 0.5]], dtype=torch.float64)
        out = all_frames_attention(window, ref)
        keys = [(1.0, 0.0), (0.0, 2.0), (0.5, 0.5)]
        scale = 1 / math.sqrt(2)
        for f, q in enumerate(keys[:2]):
            w = softmax([scale * (q[0] * k[0] + q[1] * k[1]) for k in keys])
            expected = [sum(wi * k[d] for wi, k in zip(w, keys)) for d in range(2)]
            torch.testing.assert_close(out[f, 0], torch.tensor(expected, dtype=torch.float64), rtol=0, atol=1e-12)

    def test_window_without_reference(self):
        out = all_frames_attention(torch.randn(3, 4, 8), None, self.attn)
        self.assertEqual(tuple(out.shape), (3, 4, 8))

    def test_channel_mismatch_is_rejected(self):
        with self.assertRaises(ShapeMismatchError):
            all_frames_attention(torch.randn(2, 4, 8), torch.randn(3, 6), self.attn)


class TransformerBlockGradientTests(SimpleTestCase):
    def test_block_gradients_match_finite_differences(self):
        for seed in range(20):
            torch.manual_seed(seed)
            block = TransformerBlock(4, 3, heads=2).double()
            x = torch.randn(1, 4, 2, 2, dtype=torch.float64, requires_grad=True)
            ref = torch.randn(1, 3, 4, dtype=torch.float64, requires_grad=True)
            context = torch.zeros(1, 1, 3, dtype=torch.float64)

            def fn(inp, ref_tokens):
                return block(inp, context, ref_tokens=ref_tokens)[0]

            self.assertTrue(torch.autograd.gradcheck(fn, (x, ref), eps=1e-6, atol=1e-6, rtol=1e-4))
