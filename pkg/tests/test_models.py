import numpy as np
import pytest
import torch
from torch import nn

from segal.errors import InvalidArgumentError
from segal.models import (ModelPair, SmallSegNet, count_parameters, ema_update,
                          forward, load_checkpoint, restore_pair, save_checkpoint)


class Scalar(nn.Module):
    """One-parameter module for exact EMA arithmetic."""

    def __init__(self, value: float):
        super().__init__()
        self.p = nn.Parameter(torch.tensor(float(value)))

    def forward(self, x):
        return x * self.p


def make_pair(student_val: float, teacher_val: float) -> ModelPair:
    pair = ModelPair(Scalar(student_val))
    pair.teacher = Scalar(teacher_val)
    pair._freeze_teacher()
    return pair


class TestForward:
    def setup_method(self):
        torch.manual_seed(0)
        self.net = SmallSegNet(num_classes=4, base_width=8)

    def test_logits_at_input_resolution(self):
        x = torch.rand(2, 3, 16, 24)
        out = forward(self.net, x, train=False)
        assert out.shape == (2, 4, 16, 24)

    def test_eval_mode_deterministic(self):
        x = torch.rand(1, 3, 16, 16)
        a = forward(self.net, x, train=False)
        b = forward(self.net, x, train=False)
        assert torch.equal(a, b)

    def test_softmax_sums_to_one(self):
        x = torch.rand(1, 3, 16, 16)
        probs = torch.softmax(forward(self.net, x, train=False), dim=1)
        assert torch.allclose(probs.sum(dim=1), torch.ones(1, 16, 16), atol=1e-5)

    def test_channel_mismatch_errors(self):
        with pytest.raises(InvalidArgumentError):
            forward(self.net, torch.rand(1, 1, 16, 16), train=False)

    def test_parameter_count_scale(self):
        assert count_parameters(SmallSegNet(4, 16)) == pytest.approx(5e5, rel=0.05)


class TestEmaUpdate:
    def test_direct_arithmetic(self):
        pair = make_pair(student_val=0.0, teacher_val=1.0)
        ema_update(pair, 0.99)
        assert float(pair.teacher.p) == pytest.approx(0.99, abs=1e-9)

    def test_boundaries(self):
        pair = make_pair(0.0, 1.0)
        ema_update(pair, 1.0)
        assert float(pair.teacher.p) == 1.0
        ema_update(pair, 0.0)
        assert float(pair.teacher.p) == 0.0

    def test_momentum_bounds(self):
        with pytest.raises(InvalidArgumentError):
            ema_update(make_pair(0, 1), 1.5)

    def test_closed_form_oracle(self):
        # oracle first: theta_n = s + (theta_0 - s) * m^n
        s, theta0, m, n = 0.3, 2.0, 0.9, 40
        expected = s + (theta0 - s) * m ** n
        pair = make_pair(s, theta0)
        for _ in range(n):
            ema_update(pair, m)
        assert float(pair.teacher.p) == pytest.approx(expected, abs=1e-6)

    def test_elementwise_linearity(self):
        class Vec(nn.Module):
            def __init__(self, vals):
                super().__init__()
                self.p = nn.Parameter(torch.tensor(vals))

        student_vals = [0.1, -0.4, 2.0]
        teacher_vals = [1.0, 0.5, -1.0]
        pair = ModelPair(Vec(student_vals))
        pair.teacher = Vec(teacher_vals)
        pair._freeze_teacher()
        ema_update(pair, 0.7)
        expected = 0.7 * np.array(teacher_vals) + 0.3 * np.array(student_vals)
        assert np.allclose(pair.teacher.p.detach().numpy(), expected, atol=1e-7)

    def test_drift_bound(self):
        s, theta0, m = -1.0, 3.0, 0.95
        pair = make_pair(s, theta0)
        for n in range(1, 30):
            ema_update(pair, m)
            drift = abs(float(pair.teacher.p) - s)
            assert drift <= abs(theta0 - s) * m ** n + 1e-9

    def test_running_stats_averaged(self):
        torch.manual_seed(1)
        pair = ModelPair(SmallSegNet(3, 8))
        pair.spawn_teacher()
        with torch.no_grad():
            pair.student.enc1.net[1].running_mean.fill_(2.0)
            pair.teacher.enc1.net[1].running_mean.fill_(0.0)
        ema_update(pair, 0.5)
        assert torch.allclose(pair.teacher.enc1.net[1].running_mean,
                              torch.full((8,), 1.0))

    def test_teacher_untouched_by_gradient(self):
        torch.manual_seed(2)
        pair = ModelPair(SmallSegNet(3, 8))
        pair.spawn_teacher()
        assert all(not p.requires_grad for p in pair.teacher.parameters())


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        torch.manual_seed(3)
        pair = ModelPair(SmallSegNet(4, 8))
        pair.spawn_teacher()
        opt = torch.optim.SGD(pair.student.parameters(), lr=0.1, momentum=0.9)
        x = torch.rand(2, 3, 16, 16)
        loss = forward(pair.student, x, train=True).mean()
        loss.backward()
        opt.step()
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, pair, opt, extra={"cycle": 1})
        payload = load_checkpoint(path)
        clone = restore_pair(payload, lambda: SmallSegNet(4, 8))
        for a, b in zip(pair.student.state_dict().values(),
                        clone.student.state_dict().values()):
            assert torch.equal(a, b)
        for a, b in zip(pair.teacher.state_dict().values(),
                        clone.teacher.state_dict().values()):
            assert torch.equal(a, b)
        assert payload["extra"]["cycle"] == 1


class TestOverfitSanity:
    def test_two_image_overfit_below_point_one(self):
        torch.manual_seed(4)
        gen = np.random.default_rng(0)
        imgs = torch.rand(2, 3, 32, 32, generator=torch.Generator().manual_seed(5))
        labels = torch.from_numpy(gen.integers(0, 4, (2, 32, 32))).long()
        net = SmallSegNet(4, 8)
        opt = torch.optim.SGD(net.parameters(), lr=0.05, momentum=0.9)
        losses = []
        for step in range(500):
            opt.zero_grad()
            logits = forward(net, imgs, train=True)
            loss = torch.nn.functional.cross_entropy(logits, labels)
            loss.backward()
            opt.step()
            losses.append(float(loss))
            if losses[-1] < 0.1:
                break
        assert losses[-1] < 0.1, f"loss stuck at {losses[-1]:.3f}"
        # decreasing in the windowed-mean sense
        window = max(1, len(losses) // 5)
        means = [np.mean(losses[i:i + window]) for i in range(0, len(losses), window)]
        assert all(b < a for a, b in zip(means, means[1:]))
