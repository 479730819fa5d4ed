import math

import numpy as np
import pytest
import torch

from numnet import diffcore as dc
from numnet.exceptions import CheckpointError, ContractError, DimensionError, OptimizerError, StateError

F64 = torch.float64


def t(x):
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=F64)


def store(**values):
    s = dc.ParamStore(dtype=F64)
    for name, v in values.items():
        s.add(name, v)
    return s


# -- forward ops ----------------------------------------------------------

def test_sigmoid_zero():
    assert dc.sigmoid(t(0.0)).item() == 0.5


@pytest.mark.parametrize("c", [-1e3, 0.0, 7.5, 1e3])
def test_softmax_shift_invariance(c):
    out = dc.row_softmax(t([c, c, c]))
    assert torch.allclose(out, t([1 / 3] * 3))


def test_log_sum_exp_oracle():
    gen = np.random.default_rng(0)
    for a, b in gen.uniform(1e-3, 1e3, size=(50, 2)):
        assert dc.log_sum_exp(t([math.log(a), math.log(b)])).item() == pytest.approx(math.log(a + b), rel=1e-12)


def test_masked_softmax_rows_sum_to_one():
    gen = np.random.default_rng(1)
    x = t(gen.normal(size=(6, 9)))
    mask = torch.as_tensor(gen.random((6, 9)) < 0.6)
    mask[:, 0] = True
    out = dc.row_softmax(x, mask)
    assert torch.all(out[~mask] == 0)
    assert torch.all((out.sum(dim=1) - 1).abs() <= 1e-6)
    assert torch.all(torch.isneginf(dc.row_log_softmax(x, mask)[~mask]))


def test_mean_rows_empty_subset_is_zero():
    x = t(np.ones((3, 4)))
    assert torch.equal(dc.mean_rows(x, []), torch.zeros(4, dtype=F64))
    assert torch.equal(dc.mean_rows(x[:0]), torch.zeros(4, dtype=F64))
    assert torch.allclose(dc.mean_rows(x, [0, 2]), torch.ones(4, dtype=F64))


@pytest.mark.parametrize("op, args", [
    (dc.matmul, (np.ones((2, 3)), np.ones((2, 3)))),
    (dc.add_bias, (np.ones((2, 3)), np.ones(3))),
    (dc.concat_rows, (np.ones((2, 3)), np.ones((2, 4)))),
])
def test_shape_errors_name_op(op, args):
    with pytest.raises(DimensionError, match=op.__name__):
        op(*[t(a) for a in args])


def test_embedding_lookup_rows():
    table = t(np.arange(12).reshape(4, 3))
    assert torch.equal(dc.embedding_lookup(table, [3, 0]), table[[3, 0]])


def test_shift_cols():
    x = t(np.arange(8).reshape(2, 4))
    assert torch.equal(dc.shift_cols(x, 1), t([[0, 0, 1, 2], [0, 4, 5, 6]]))
    assert torch.equal(dc.shift_cols(x, -1), t([[1, 2, 3, 0], [5, 6, 7, 0]]))
    assert torch.equal(dc.shift_cols(x, 0), x)
    assert torch.equal(dc.shift_cols(x, 9), torch.zeros_like(x))


def test_determinism_float64():
    def run():
        gen = dc.rng(5, dc.INIT_STREAM)
        a, b = t(gen.normal(size=(4, 5))), t(gen.normal(size=(5, 3)))
        return dc.row_log_softmax(dc.relu(dc.matmul(a, b)))
    assert torch.equal(run(), run())


# -- backward -------------------------------------------------------------

def test_backward_outer_product():
    gen = np.random.default_rng(2)
    W, x = gen.normal(size=(3, 4)), gen.normal(size=4)
    s = store(W=W, unused=np.ones(2))
    grads = dc.backward(dc.matmul(s["W"], t(x)[:, None]).sum(), s)
    np.testing.assert_allclose(grads["W"].numpy(), np.tile(x, (3, 1)), rtol=0, atol=1e-15)
    assert torch.equal(grads["unused"], torch.zeros(2, dtype=F64))


def test_backward_requires_scalar():
    s = store(W=np.ones((2, 2)))
    with pytest.raises(ContractError):
        dc.backward(s["W"] * 2, s)


def test_grad_check_quadratic():
    s = store(x=[3.0])
    g = dc.backward((s["x"] ** 2).sum(), s)
    assert g["x"].item() == 6.0
    report = dc.grad_check(lambda p: (p["x"] ** 2).sum(), s)
    assert report.passed and report.max_rel_error["x"] < 1e-8


def test_grad_check_needs_float64():
    s = dc.ParamStore(dtype=torch.float32)
    s.add("x", [1.0])
    with pytest.raises(ContractError):
        dc.grad_check(lambda p: p["x"].sum(), s)


def test_grad_check_flags_non_finite():
    s = store(x=[1.0])
    report = dc.grad_check(lambda p: (p["x"] * math.inf).sum(), s)
    assert not report.passed and report.failing == ["x"]


def _op_losses():
    """Scalar losses exercising one op each; weights keep every output used."""
    return {
        "matmul": lambda p: (dc.matmul(p["a"], p["b"]) * p["c"]).sum(),
        "add_bias": lambda p: (dc.add_bias(p["a2"], p["v3"]) * p["w33"]).sum(),
        "concat_rows": lambda p: (dc.concat_rows(p["a"], p["a2"]) ** 2 * p["w53"]).sum(),
        "sigmoid": lambda p: (dc.sigmoid(p["a"]) * p["a2"][:2]).sum(),
        "relu": lambda p: (dc.relu(p["a"]) * p["a2"][:2]).sum(),
        "row_log_softmax": lambda p: (dc.row_log_softmax(p["a"]) * p["a2"][:2]).sum(),
        "row_softmax": lambda p: (dc.row_softmax(p["a"]) * p["a2"][:2]).sum(),
        "masked_log_softmax": lambda p: dc.row_log_softmax(
            p["a"], torch.tensor([[True, False, True], [True, True, False]]))[:, 0].sum(),
        "log_sum_exp": lambda p: dc.log_sum_exp(p["v3"] * 3.0),
        "mean_rows": lambda p: (dc.mean_rows(p["a2"], [0, 2]) * p["v3"]).sum(),
        "embedding_lookup": lambda p: (dc.embedding_lookup(p["a2"], [1, 1, 2]) * p["b"].T).sum(),
        "scale": lambda p: (dc.scale(p["a"], 0.7) ** 2).sum(),
        "shift_cols": lambda p: ((dc.shift_cols(p["a2"], 1) - dc.shift_cols(p["a2"], -2)) * p["w33"]).sum(),
        "layer_norm_cols": lambda p: (dc.layer_norm_cols(p["a2"]) * p["w33"]).sum(),
    }


@pytest.mark.parametrize("op", list(_op_losses()))
def test_every_op_passes_grad_check(op):
    f = _op_losses()[op]
    for seed in range(20):
        gen = np.random.default_rng(seed)
        s = store(
            a=gen.normal(size=(2, 3)), a2=gen.normal(size=(3, 3)), b=gen.normal(size=(3, 3)),
            c=gen.normal(size=(2, 3)), v3=gen.normal(size=3), w53=gen.normal(size=(5, 3)),
            w33=gen.normal(size=(3, 3)),
        )
        if op == "relu":  # keep away from the kink, where central differences straddle it
            with torch.no_grad():
                s["a"].add_(torch.sign(s["a"]) * 0.01)
        report = dc.grad_check(f, s, h=1e-4, tol=1e-3)
        assert report.passed, f"seed {seed}\n{report.format()}"


def test_corrupted_relu_backward_is_localized(monkeypatch):
    class BadRelu(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return x.clamp(min=0)

        @staticmethod
        def backward(ctx, g):
            (x,) = ctx.saved_tensors
            return g * (x < 0)  # wrong mask

    gen = np.random.default_rng(3)
    s = store(w1=gen.normal(size=(3, 3)), w2=gen.normal(size=(3, 3)), x=gen.normal(size=(3, 1)))

    def f(p):
        return dc.matmul(p["w2"], dc.relu(dc.matmul(p["w1"], p["x"]))).sum() + (p["w2"] ** 2).sum()

    assert dc.grad_check(f, s).passed
    monkeypatch.setattr(dc, "relu", BadRelu.apply)
    report = dc.grad_check(f, s)
    assert not report.passed
    assert "w1" in report.failing and "x" in report.failing
    assert "w2" not in report.failing
    assert "FAIL" in report.format()


# -- optimizer -----------------------------------------------------------

def test_adam_first_step_by_hand():
    s = store(theta=[0.0])
    dc.adam_step(s, {"theta": t([1.0])}, lr=5e-4, beta1=0.8, beta2=0.999, eps=1e-7, weight_decay=1e-7)
    m_hat, v_hat = 0.2 / 0.2, 0.001 / 0.001
    expected = -5e-4 * m_hat / (math.sqrt(v_hat) + 1e-7)
    assert s["theta"].item() == pytest.approx(expected, rel=1e-12)
    assert s["theta"].item() == pytest.approx(-5e-4, rel=1e-6)
    assert s.step == 1


def test_adam_zero_gradient_only_decay():
    s = store(theta=[2.0])
    dc.adam_step(s, {"theta": t([0.0])}, lr=1e-3, weight_decay=1e-7)
    g = 1e-7 * 2.0  # decay folded into the gradient: m_hat/sqrt(v_hat) = sign(g)
    assert s["theta"].item() == pytest.approx(2.0 - 1e-3 * g / (abs(g) + 1e-7), rel=1e-12)
    s2 = store(theta=[2.0])
    dc.adam_step(s2, {"theta": t([0.0])}, weight_decay=0.0)
    assert s2["theta"].item() == 2.0


def test_adam_nan_names_parameter():
    s = store(alpha=[1.0], beta=[1.0])
    with pytest.raises(OptimizerError, match="beta"):
        dc.adam_step(s, {"alpha": t([1.0]), "beta": t([math.nan])})
    assert s["alpha"].item() == 1.0


def test_clip():
    g = {"a": t([6.0, 8.0])}
    assert torch.allclose(dc.clip_gradients(g, 5.0)["a"], t([3.0, 4.0]))
    small = {"a": t([1.8, 2.4])}
    assert torch.equal(dc.clip_gradients(small, 5.0)["a"], small["a"])
    gen = np.random.default_rng(4)
    for _ in range(100):
        grads = {f"p{i}": t(gen.normal(scale=gen.uniform(0.1, 10), size=gen.integers(1, 6))) for i in range(4)}
        assert dc.global_norm(dc.clip_gradients(grads, 5.0)) <= 5.0 + 1e-9


# -- EMA -------------------------------------------------------------------

def test_ema_recurrence():
    s = store(w=[1.0])
    s.shadow["w"] = t([0.0])
    dc.ema_update(s, 0.5)
    dc.ema_update(s, 0.5)
    assert s.shadow["w"].item() == 0.75


def test_ema_decay_zero_and_constant():
    s = store(w=[3.0, -1.0])
    s.shadow["w"] = t([0.0, 0.0])
    dc.ema_update(s, 0.0)
    assert torch.equal(s.shadow["w"], s["w"].detach())
    s.shadow["w"] = t([10.0, 10.0])
    for _ in range(200):
        dc.ema_update(s, 0.9)
    assert torch.allclose(s.shadow["w"], t([3.0, -1.0]), atol=1e-7)


def test_ema_swap():
    s = store(w=[1.0])
    with pytest.raises(StateError):
        dc.ema_swap_in(s)
    s.shadow["w"] = t([5.0])
    dc.ema_swap_in(s)
    assert s["w"].item() == 5.0
    with pytest.raises(StateError):
        dc.ema_swap_in(s)
    with pytest.raises(StateError):
        dc.ema_update(s)
    dc.ema_swap_out(s)
    assert s["w"].item() == 1.0
    with pytest.raises(StateError):
        dc.ema_swap_out(s)


# -- checkpoints ----------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    gen = np.random.default_rng(5)
    s = store(a=gen.normal(size=(3, 2)), b=gen.normal(size=4))
    dc.adam_step(s, {"a": t(gen.normal(size=(3, 2))), "b": t(gen.normal(size=4))})
    dc.ema_update(s, 0.9)
    path = tmp_path / "ck.bin"
    dc.save_checkpoint(path, s, {"note": "x"}, dtype="float64")
    assert path.read_bytes()[:8] == dc.MAGIC
    loaded, meta = dc.load_checkpoint(path)
    assert meta["note"] == "x" and loaded.step == 1 and loaded.dtype == F64
    for name in s:
        assert torch.equal(loaded[name], s[name].detach())
        assert torch.equal(loaded.first_moment[name], s.first_moment[name])
        assert torch.equal(loaded.second_moment[name], s.second_moment[name])
        assert torch.equal(loaded.shadow[name], s.shadow[name])


def test_checkpoint_float32_precision(tmp_path):
    s = store(a=[1 / 3, 2 / 3])
    dc.save_checkpoint(tmp_path / "c", s)
    loaded, _ = dc.load_checkpoint(tmp_path / "c", dtype=F64)
    np.testing.assert_allclose(loaded["a"].detach().numpy(), [1 / 3, 2 / 3], rtol=1e-7)


@pytest.mark.parametrize("blob", [b"", b"NOTMAGIC" + b"\0" * 8, b"NUMNET01" + (999).to_bytes(8, "little") + b"{}"])
def test_checkpoint_corrupt(tmp_path, blob):
    path = tmp_path / "bad"
    path.write_bytes(blob)
    with pytest.raises(CheckpointError):
        dc.load_checkpoint(path)
