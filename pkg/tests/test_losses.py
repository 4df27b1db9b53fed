import numpy as np
import pytest

from bnnprior import nn
from bnnprior.data.pendulum import PendulumConfig, pendulum_energy
from bnnprior.errors import DegenerateBatch, InvalidConfig
from bnnprior.losses import (ClinicalRegion, DomainLossSpec, phi_background, phi_batch_mean, phi_clinical,
                             phi_energy_damping, phi_group_fairness_batch, phi_sq_sum, phi_terms)
from bnnprior.nn import ArchSpec
from oracles import central_diff, rel_err

REGION = ClinicalRegion(0.5, -0.5, 0.8, 0.8, -0.8)


def log_softmax_input_jacobian(arch, w, x, h=1e-6):
    def f(v):
        z = nn.forward(arch, w, v)
        if arch.output_head == "sigmoid":
            z = np.array([0.0, z[0]])
        return nn.log_softmax(z)
    return np.stack([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(len(x))], axis=1)


def test_background_empty_mask(rng):
    arch = ArchSpec((6, 4, 3), "softplus", "softmax")
    v, g = phi_background(arch, rng.normal(size=arch.n_params), rng.normal(size=6), [])
    assert v == 0 and np.all(g == 0)


def test_background_linear_regressor(rng):
    arch = ArchSpec((4, 1))
    w = rng.normal(size=arch.n_params)
    v, g = phi_background(arch, w, rng.normal(size=4), [0, 1, 2, 3])
    assert np.isclose(v, w[:4] @ w[:4]) and np.allclose(g[:4], 2 * w[:4]) and g[4] == 0


@pytest.mark.parametrize("head,out", [("softmax", 3), ("sigmoid", 1)])
@pytest.mark.parametrize("mode", ["log_softmax_sum", "log_softmax_jacobian", "logits"])
def test_background_value_and_gradient(head, out, mode, rng):
    arch = ArchSpec((6, 5, out), "softplus", head)
    w, x = rng.normal(size=arch.n_params), rng.normal(size=6)
    mask = [1, 4, 5]
    v, g = phi_background(arch, w, x, mask, mode)
    if mode == "logits":
        ref = (nn.grad_input(arch, w, x)[:, mask] ** 2).sum()
    else:
        J = log_softmax_input_jacobian(arch, w, x)[:, mask]
        ref = (J.sum(axis=0) ** 2).sum() if mode == "log_softmax_sum" else (J ** 2).sum()
    assert np.isclose(v, ref, rtol=1e-6)
    fd = central_diff(lambda p: phi_background(arch, p, x, mask, mode)[0], w)
    assert rel_err(g, fd) <= 1e-4


def test_background_ignores_offmask_inputs(rng):
    arch = ArchSpec((5, 4, 3), "softplus", "softmax")
    w, x = rng.normal(size=arch.n_params), rng.normal(size=5)
    v1, _ = phi_background(arch, w, x, [0, 1])
    layers = nn.unflatten(arch, w)
    W = layers[0][0].copy()
    W[:, 3:] += rng.normal(size=(4, 2))
    x2 = x.copy()
    x2[3:] = 0.0
    w2 = nn.flatten(arch, [(W, layers[0][1]), layers[1]])
    # off-mask weights only matter through the hidden activations, so zero those inputs
    assert np.isclose(phi_background(arch, w2, x2, [0, 1])[0], phi_background(arch, w, x2, [0, 1])[0])
    assert v1 >= 0


def constant_prob_net(p):
    arch = ArchSpec((3, 1), "relu", "sigmoid")
    w = np.zeros(arch.n_params)
    w[-1] = np.log(p / (1 - p))
    return arch, w


def test_fairness_examples(rng):
    arch = ArchSpec((3, 1), "relu", "sigmoid")
    # group column 0 drives the logit: p_a = 0.7 for group 1, p_b = 0.4 for group 0
    la, lb = np.log(0.7 / 0.3), np.log(0.4 / 0.6)
    w = np.array([la - lb, 0.0, 0.0, lb])
    X = np.array([[1, 0, 0], [1, 2, 1], [0, 1, 0], [0, 0, 3]], dtype=float)
    groups = X[:, 0] >= 0.5
    v, _ = phi_group_fairness_batch(arch, w, X, groups)
    assert np.isclose(v, 0.09)
    arch_c, wc = constant_prob_net(0.3)
    v, g = phi_group_fairness_batch(arch_c, wc, X, groups)
    assert v == 0 and np.allclose(g, 0)


def test_fairness_gradient_and_symmetry(rng):
    arch = ArchSpec((4, 5, 1), "softplus", "sigmoid")
    w, X = rng.normal(size=arch.n_params), rng.normal(size=(12, 4))
    groups = rng.random(12) < 0.5
    groups[:2] = [True, False]
    v, g = phi_group_fairness_batch(arch, w, X, groups)
    fd = central_diff(lambda p: phi_group_fairness_batch(arch, p, X, groups)[0], w)
    assert rel_err(g, fd) <= 1e-4
    v2, g2 = phi_group_fairness_batch(arch, w, X, ~groups)
    assert np.isclose(v, v2) and np.allclose(g, g2)


def test_fairness_degenerate_batch(rng):
    arch = ArchSpec((4, 1), "relu", "sigmoid")
    with pytest.raises(DegenerateBatch):
        phi_group_fairness_batch(arch, np.zeros(arch.n_params), rng.normal(size=(5, 4)), np.ones(5, bool))


def test_clinical_examples(rng):
    x_out = np.zeros(8)
    arch = ArchSpec((8, 1), "relu", "sigmoid")
    w = np.zeros(arch.n_params)
    w[-1] = np.log(0.2 / 0.8)
    v, g = phi_clinical(arch, w, x_out, REGION)
    assert v == 0 and np.all(g == 0)
    x_in = np.zeros(8)
    x_in[5], x_in[6] = 1.0, -1.0
    assert REGION.contains(x_in[None])[0]
    v, _ = phi_clinical(arch, w, x_in, REGION)
    assert np.isclose(v, 0.8)


def test_clinical_gradient_fd(rng):
    arch = ArchSpec((8, 6, 1), "softplus", "sigmoid")
    x = rng.normal(size=8)
    x[4], x[7], x[2] = 1.5, 1.2, -1.5
    w = rng.normal(size=arch.n_params)
    _, g = phi_clinical(arch, w, x, REGION)
    assert rel_err(g, central_diff(lambda p: phi_clinical(arch, p, x, REGION)[0], w)) <= 1e-4


def test_clinical_region_rules():
    X = np.zeros((4, 8))
    X[0, [5, 6]] = [1.0, -1.0]       # rule a
    X[1, [4, 7, 2]] = [1.0, 1.0, -1.0]  # rule b
    X[2, [5, 6]] = [1.0, 0.0]        # bicarbonate too high
    X[3, [4, 7, 2]] = [1.0, 0.0, -1.0]
    assert REGION.contains(X).tolist() == [True, True, False, False]
    with pytest.raises(InvalidConfig):
        ClinicalRegion(0, 0, 0, 0, 0, lactate_index=1, bicarbonate_index=1)


def identity_pendulum_net(out_bias=None):
    arch = ArchSpec((4, 4))
    w = np.concatenate([np.eye(4).ravel(), np.zeros(4) if out_bias is None else out_bias])
    return arch, w


def test_energy_damping_examples():
    arch, w = identity_pendulum_net()
    x = np.array([0.3, -0.2, 0.1, 0.5])
    v, g = phi_energy_damping(arch, w, x)
    assert v == 0 and np.all(g == 0)
    arch = ArchSpec((4, 4))
    w = np.zeros(arch.n_params)
    w[-3] = 1.0  # constant output (0, 1, 0, 0)
    v, _ = phi_energy_damping(arch, w, np.zeros(4))
    assert np.isclose(v, 3.0)
    # predicting the rest state from a moving state lowers the energy
    w = np.zeros(arch.n_params)
    v, g = phi_energy_damping(arch, w, np.array([0.0, 1.0, 0.0, 0.0]))
    assert v == 0 and np.all(g == 0)


def test_energy_damping_gradient_fd(rng):
    arch = ArchSpec((4, 6, 4), "softplus")
    cfg = PendulumConfig()
    for _ in range(20):
        w, x = rng.normal(size=arch.n_params) * 0.7, rng.normal(size=4) * 0.5
        v, g = phi_energy_damping(arch, w, x, cfg)
        excess = pendulum_energy(nn.forward(arch, w, x), cfg) - pendulum_energy(x, cfg)
        assert np.isclose(v, max(excess, 0.0))
        if abs(excess) > 1e-3:
            fd = central_diff(lambda p: phi_energy_damping(arch, p, x, cfg)[0], w)
            assert rel_err(g, fd) <= 1e-4


def test_batch_mean_matches_loop(rng):
    arch = ArchSpec((9, 5, 3), "softplus", "softmax")
    w, X = rng.normal(size=arch.n_params), rng.normal(size=(7, 9))
    masks = rng.random((7, 9)) < 0.3
    spec = DomainLossSpec("background")
    mean, grad = phi_batch_mean(arch, w, X, spec, masks)
    vals, grads = zip(*(phi_background(arch, w, X[i], np.flatnonzero(masks[i])) for i in range(7)))
    assert np.isclose(mean, np.mean(vals), rtol=1e-12)
    assert rel_err(grad, np.mean(grads, axis=0)) <= 1e-10


def test_batch_mean_simple_values():
    arch = ArchSpec((4, 4))
    w = np.zeros(arch.n_params)
    spec = DomainLossSpec("energy_damping")
    X = np.zeros((2, 4))
    X[0, 1] = 1.0
    mean, g = phi_batch_mean(arch, w, X, spec)
    assert mean == 0 and np.all(g == 0)


def test_phi_sq_sum_gradient(rng):
    arch = ArchSpec((4, 5, 4), "softplus")
    spec = DomainLossSpec("energy_damping")
    w, X = rng.normal(size=arch.n_params), rng.normal(size=(6, 4)) * 0.5
    val, g, values = phi_sq_sum(arch, w, X, spec)
    assert np.isclose(val, (values ** 2).sum())
    assert rel_err(g, central_diff(lambda p: phi_sq_sum(arch, p, X, spec)[0], w)) <= 1e-4


def test_spec_field_validation():
    with pytest.raises(InvalidConfig):
        DomainLossSpec("group_fairness")
    with pytest.raises(InvalidConfig):
        DomainLossSpec("clinical", group_attr_index=0, clinical_region=REGION)
    with pytest.raises(InvalidConfig):
        DomainLossSpec("nonsense")


def test_spec_dict_round_trip():
    for spec in (DomainLossSpec("background", background_output="logits"),
                 DomainLossSpec("group_fairness", group_attr_index=3),
                 DomainLossSpec("clinical", clinical_region=REGION),
                 DomainLossSpec("energy_damping")):
        assert DomainLossSpec.from_dict(spec.to_dict()) == spec


def test_values_nonnegative(rng):
    specs = [(ArchSpec((8, 4, 1), "relu", "sigmoid"), DomainLossSpec("clinical", clinical_region=REGION)),
             (ArchSpec((4, 4, 4), "relu"), DomainLossSpec("energy_damping")),
             (ArchSpec((8, 4, 3), "relu", "softmax"), DomainLossSpec("background", background_mask=[0, 1]))]
    for arch, spec in specs:
        for _ in range(5):
            values, _ = phi_terms(arch, rng.normal(size=arch.n_params), rng.normal(size=(10, arch.input_dim)), spec)
            assert np.all(values >= 0)
