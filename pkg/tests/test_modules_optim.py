import numpy as np
import pytest

from dvgait import numgrad as ng


def make_net(rng):
    class Net(ng.Module):
        def __init__(self):
            super().__init__()
            self.conv = ng.Conv2d(1, 2, 3, 1, 1, rng)
            self.bn = ng.BatchNorm2d(2)
            self.head = ng.Dense(2, 3, rng)

        def forward(self, x):
            h = ng.relu(self.bn(self.conv(x)))
            return self.head(ng.global_avg_pool(h))

    return Net()


def test_named_parameters_paths():
    net = make_net(np.random.default_rng(0))
    net.assign_parameter_names("G")
    names = [p.name for p in net.parameters()]
    assert "G.conv.weight" in names
    assert "G.bn.gamma" in names
    assert "G.head.bias" in names


def test_state_dict_round_trip_includes_buffers():
    rng = np.random.default_rng(0)
    net = make_net(rng)
    x = ng.Tensor(rng.normal(size=(4, 1, 8, 8)).astype(np.float32))
    net.train()
    net.forward(x)  # moves running stats off their init
    state = net.state_dict()
    assert "bn.running_mean" in state

    net2 = make_net(np.random.default_rng(99))
    net2.load_state_dict({k: v.copy() for k, v in state.items()})
    for k, v in net2.state_dict().items():
        np.testing.assert_array_equal(v, state[k])


def test_load_state_dict_rejects_mismatch():
    net = make_net(np.random.default_rng(0))
    state = net.state_dict()
    state.pop("conv.weight")
    with pytest.raises(ValueError, match="missing"):
        net.load_state_dict(state)


def test_train_eval_flag_recurses():
    net = make_net(np.random.default_rng(0))
    net.eval()
    assert not net.bn.training
    net.train()
    assert net.bn.training


def test_frozen_blocks_weight_grads_but_not_input_grads():
    rng = np.random.default_rng(1)
    net = make_net(rng)
    x = ng.Tensor(rng.normal(size=(4, 1, 8, 8)).astype(np.float32), requires_grad=True)
    with ng.frozen(net):
        out = net.forward(x)
        ng.l1_loss(out, np.zeros(out.shape, dtype=np.float32)).backward()
    assert all(p.grad is None for p in net.parameters())
    assert x.grad is not None and np.abs(x.grad).sum() > 0


class TestAdam:
    def test_zero_grad_leaves_params_unchanged(self):
        p = ng.Parameter(np.array([1.0, 2.0], dtype=np.float32))
        opt = ng.Adam([p], lr=0.1)
        p.tensor.grad = np.zeros(2, dtype=np.float32)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_first_step_matches_hand_evaluation(self):
        # g=1, lr=0.1, b1=0.9, b2=0.999: mhat = vhat = 1 after bias
        # correction, so the update is -lr / (1 + eps)
        p = ng.Parameter(np.array([0.0]))
        opt = ng.Adam([p], lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        p.tensor.grad = np.array([1.0], dtype=np.float32)
        opt.step()
        assert p.data[0] == pytest.approx(-0.1 / (1.0 + 1e-8), abs=1e-9)

    def test_two_constant_steps_match_hand_trajectory(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = ng.Parameter(np.array([0.0]))
        opt = ng.Adam([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
        # independent evaluation of the recurrence with g = 1 at every step
        m = v = 0.0
        theta = 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * 1.0
            v = b2 * v + (1 - b2) * 1.0
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            theta -= lr * mhat / (np.sqrt(vhat) + eps)
            p.tensor.grad = np.array([1.0], dtype=np.float32)
            opt.step()
            assert p.data[0] == pytest.approx(theta, abs=1e-7)

    def test_step_counter_monotone(self):
        p = ng.Parameter(np.zeros(1))
        opt = ng.Adam([p], lr=0.1)
        for expected in (1, 2, 3):
            p.tensor.grad = np.ones(1, dtype=np.float32)
            opt.step()
            assert p.step == expected

    def test_deterministic_for_fixed_inputs(self):
        def run():
            p = ng.Parameter(np.array([0.5, -0.5]))
            opt = ng.Adam([p], lr=0.01)
            for i in range(5):
                p.tensor.grad = np.array([1.0 + i, -2.0], dtype=np.float32)
                opt.step()
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        state = {
            "G.e1.weight": np.random.default_rng(0).normal(size=(4, 1, 5, 5)).astype(np.float32),
            "G.e1.bias": np.zeros(4, dtype=np.float32),
            "G.bn.running_mean": np.ones(4, dtype=np.float32),
        }
        path = tmp_path / "net.dvgw"
        ng.save_checkpoint(path, state)
        loaded = ng.load_checkpoint(path)
        assert list(loaded) == list(state)
        for k in state:
            np.testing.assert_array_equal(loaded[k], state[k])

    def test_magic_and_version(self, tmp_path):
        path = tmp_path / "net.dvgw"
        ng.save_checkpoint(path, {"w": np.zeros(2, dtype=np.float32)})
        blob = path.read_bytes()
        assert blob[:4] == b"DVGW"
        assert int.from_bytes(blob[4:8], "little") == 1

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "net.dvgw"
        ng.save_checkpoint(path, {"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(ng.CheckpointError, match="truncated"):
            ng.load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "net.dvgw"
        path.write_bytes(b"NOPE" + b"\x00" * 8)
        with pytest.raises(ng.CheckpointError, match="magic"):
            ng.load_checkpoint(path)
