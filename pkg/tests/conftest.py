import numpy as np
import pytest
import torch

torch.set_num_threads(1)

# Acceptance results collected by tests/test_acceptance.py, printed at the end of the run.
ACCEPTANCE = {}


def record(criterion, ok, detail=""):
    ACCEPTANCE[criterion] = (bool(ok), detail)


# Denominator floor for gradient comparisons, as a fraction of max(|loss|, 1).
# Central differences carry O(eps * |loss| / h) ~ 1e-11 * |loss| noise, so a
# floor of 1e-3 * |loss| still exposes any gradient error above 1e-7 * |loss|.
GRAD_FLOOR = 1e-3


def rel_err(a, b, floor=0.0):
    """||a - b|| / max(||a||, ||b||, floor).

    The floor matters only for gradients that vanish by construction (e.g. a
    bias feeding a shift-invariant op), where central differences return
    O(1e-11) noise and a pure ratio would compare noise with noise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def numerical_grad(fn, tensor, h=1e-5):
    """Central differences of scalar ``fn()`` with respect to every entry of ``tensor``."""
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    g = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        plus = float(fn().detach())
        flat[i] = orig - h
        minus = float(fn().detach())
        flat[i] = orig
        g[i] = (plus - minus) / (2 * h)
    return grad


def grad_check(fn, tensors, h=1e-5):
    """Worst relative error between autograd and central differences over ``tensors``."""
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    floor = GRAD_FLOOR * max(abs(loss.item()), 1.0)
    worst = 0.0
    with torch.no_grad():
        for t in tensors:
            analytic = torch.zeros_like(t) if t.grad is None else t.grad.detach().clone()
            numeric = numerical_grad(fn, t, h)
            worst = max(worst, rel_err(analytic.numpy(), numeric.numpy(), floor))
    return worst


def module_grad_check(module, fn, max_params=None, h=1e-5):
    params = [p for p in module.parameters() if p.requires_grad]
    if max_params is not None:
        params = params[:max_params]
    return grad_check(fn, params, h)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k.split(".")[0])):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
