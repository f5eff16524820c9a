import pytest
import torch


@pytest.fixture(autouse=True)
def _reset_denormal_handling():
    """Trainer construction enables flush-to-zero process-wide; start every
    test from the default FPU state so test order cannot leak into results
    (hypothesis in particular refuses float strategies under flushed
    subnormals)."""
    torch.set_flush_denormal(False)
    yield
