"""Central finite-difference oracle shared by the gradient tests."""

import torch

from sbufogen.autodiff import backward

GRAD_TOL = 1e-5
FD_STEP = 1e-6
MAX_ENTRIES = 24


def finite_difference(fn, tensor, index, h=FD_STEP):
    flat = tensor.detach().view(-1)
    orig = flat[index].item()
    with torch.no_grad():
        flat[index] = orig + h
        up = fn().item()
        flat[index] = orig - h
        down = fn().item()
        flat[index] = orig
    return (up - down) / (2 * h)


def check_param_grads(fn, params, tol=GRAD_TOL, max_entries=MAX_ENTRIES, seed=0):
    """Compare analytic gradients of scalar ``fn()`` against central differences.

    Large tensors are checked on a random subset of entries.  The error per
    tensor is ``max|analytic - fd| / max|fd|``.  Returns the worst error.
    """
    grads = backward(fn(), params)
    g = torch.Generator().manual_seed(seed)
    worst = 0.0
    for name, p in params.items():
        n = p.numel()
        idx = torch.randperm(n, generator=g)[:max_entries].tolist() if n > max_entries else range(n)
        fd = torch.tensor([finite_difference(fn, p, i) for i in idx], dtype=torch.float64)
        an = grads[name].detach().reshape(-1)[list(idx)].double()
        scale = fd.abs().max().item()
        if scale == 0.0:
            assert an.abs().max().item() <= 1e-10, name
            continue
        err = (an - fd).abs().max().item() / scale
        worst = max(worst, err)
        assert err <= tol, f"{name}: relative error {err:.3e}"
    return worst
