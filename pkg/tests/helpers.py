"""Shared fixtures-by-hand for the model and acceptance tests."""

import numpy as np

from tabvae.schema import FeatureSchema
from tabvae.tensor import Tape, zero_grads
from tabvae.transforms import one_hot


def mixed_schema(n_classes=2):
    """Three numeric and two categorical features plus a target."""
    return FeatureSchema.from_dict({"columns": [
        {"name": "n0", "kind": "numerical"},
        {"name": "n1", "kind": "numerical"},
        {"name": "n2", "kind": "numerical"},
        {"name": "c0", "kind": "categorical", "categories": ["A", "B"]},
        {"name": "c1", "kind": "categorical", "categories": ["u", "v", "w"]},
        {"name": "cls", "kind": "target",
         "categories": [str(i) for i in range(n_classes)]},
    ]})


def random_batch(schema, n=8, seed=0):
    rng = np.random.default_rng(seed)
    x_num = rng.normal(size=(n, schema.m_n))
    blocks = [one_hot(rng.integers(0, w, size=n), w) for w in schema.cat_widths()]
    x_cat = np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))
    y = rng.integers(0, schema.n_classes, size=n)
    return x_num, x_cat, y


def spot_check_gradients(model, x_num, x_cat, y, n_checks=20, h=1e-4,
                         tol=1e-3, seed=0):
    """Finite-difference check of the full loss on randomly chosen parameters.

    Returns the worst relative error over the checked entries.
    """
    eps = np.random.default_rng([seed, 99]).standard_normal(
        (len(y),) + model.latent_shape)
    params = model.params
    zero_grads(params.values())
    with Tape() as tape:
        loss, _, _ = model.elbo_loss(x_num, x_cat, y, eps=eps)
    tape.backward(loss, leaves=params.values())

    names = sorted(params)
    sizes = np.array([params[n].data.size for n in names])
    cum = np.cumsum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(cum[-1], size=min(n_checks, int(cum[-1])), replace=False)

    worst = 0.0
    for flat in sorted(picks.tolist()):
        k = int(np.searchsorted(cum, flat, side="right"))
        p = params[names[k]]
        idx = flat - (int(cum[k - 1]) if k else 0)
        view = p.data.reshape(-1)
        orig = view[idx]
        analytic = p.grad.reshape(-1)[idx]
        view[idx] = orig + h
        up = model.elbo_loss(x_num, x_cat, y, eps=eps)[0].item()
        view[idx] = orig - h
        down = model.elbo_loss(x_num, x_cat, y, eps=eps)[0].item()
        view[idx] = orig
        numeric = (up - down) / (2.0 * h)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
        assert rel <= tol, (
            f"{names[k]}[{idx}]: analytic {analytic:.6e} vs numeric {numeric:.6e} "
            f"(rel {rel:.2e})")
    return worst
