import numpy as np
import pytest
import torch

from tsgm.oracles import LinearGaussianProcess


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def ar_latents(n: int, dim: int, proc: LinearGaussianProcess, seed: int = 0) -> torch.Tensor:
    """[n, N, dim] latents whose components are independent AR(1) paths."""
    x = proc.sample(n * dim, np.random.default_rng(seed))
    return torch.as_tensor(x.reshape(n, dim, proc.N).transpose(0, 2, 1).copy(), dtype=torch.float32)


ACCEPTANCE_LINES: list = []


def record_criterion(name: str, ok: bool, detail: str) -> str:
    """Log one PASS/FAIL line; it is echoed now and again in the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
