import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def fixed_seed():
    torch.manual_seed(0)
    np.random.seed(0)


def max_rel_err_fd(func, x: torch.Tensor, n_coords: int = 12, h: float = 1e-5,
                   rng_seed: int = 0) -> float:
    """Max relative error between autograd and central finite differences.

    Probes a random subset of coordinates of x (float64)."""
    assert x.dtype == torch.float64
    x = x.detach().clone().requires_grad_(True)
    out = func(x)
    out.backward()
    grad = x.grad.detach().reshape(-1)
    flat = x.detach().reshape(-1)
    rng = np.random.default_rng(rng_seed)
    coords = rng.choice(flat.numel(), size=min(n_coords, flat.numel()),
                        replace=False)
    worst = 0.0
    for idx in coords:
        orig = flat[idx].item()
        flat[idx] = orig + h
        up = func(x.detach()).item()
        flat[idx] = orig - h
        down = func(x.detach()).item()
        flat[idx] = orig
        num = (up - down) / (2 * h)
        ana = grad[idx].item()
        denom = max(abs(num), abs(ana), 1e-3)
        worst = max(worst, abs(num - ana) / denom)
    return worst
