import numpy as np
import pytest


def finite_diff_param_grads(model, batch, targets, h=1e-4, param_indices=None):
    """Central-difference gradients of the mean soft-CE loss w.r.t. model
    parameters. Independent of the reverse-mode path: only forward passes.

    Returns {name: {flat_index: grad}} for the checked indices (all if None).
    """
    from autolabel.tensor import Tensor, soft_cross_entropy_graph

    def loss_value():
        x = Tensor(np.asarray(batch, dtype=np.float64))
        t = Tensor(np.asarray(targets, dtype=np.float64))
        return float(soft_cross_entropy_graph(model.apply(x), t).data)

    out = {}
    for name, p in model.parameters().items():
        flat = p.data.reshape(-1)
        idxs = range(flat.size) if param_indices is None else param_indices.get(name, [])
        grads = {}
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            grads[i] = (up - down) / (2 * h)
        out[name] = grads
    return out


def max_relative_error(analytic, numeric, scale_floor=1e-3):
    """max |a - n| / max(|a|, |n|, scale_floor) over paired entries."""
    worst = 0.0
    for name, idx_grads in numeric.items():
        a_flat = analytic[name].reshape(-1)
        for i, g_fd in idx_grads.items():
            err = abs(a_flat[i] - g_fd) / max(abs(a_flat[i]), abs(g_fd), scale_floor)
            worst = max(worst, err)
    return worst


@pytest.fixture(scope="session")
def toy_gratings():
    """Small synthetic dataset shared by the slower model-dependent tests."""
    from autolabel import data as dat

    train = dat.synthetic_dataset(n=3000, n_classes=10, size=16, seed=71)
    test = dat.synthetic_dataset(n=800, n_classes=10, size=16, seed=72)
    return train, test


@pytest.fixture(scope="session")
def toy_model(toy_gratings):
    """A quickly trained conv net, good enough to rank corruption severities."""
    from autolabel import nn

    train, _ = toy_gratings
    rng = np.random.default_rng(5)
    model = nn.build_convnet((1, 16, 16), channels=(12, 24), fc_width=96,
                             n_classes=10, rng=rng)
    order_rng = np.random.default_rng(6)
    for _ in range(8):
        order = order_rng.permutation(len(train.images))
        for start in range(0, len(order), 128):
            idx = order[start:start + 128]
            onehot = np.eye(10, dtype=np.float32)[train.labels[idx]]
            g = nn.gradients(model, train.images[idx], onehot)
            nn.sgd_step(model, g, lr=0.02, momentum=0.9, weight_decay=5e-4)
    return model
