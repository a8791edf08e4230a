import sys
from pathlib import Path

import pytest

# Make tests/reference.py importable regardless of invocation directory.
sys.path.insert(0, str(Path(__file__).parent))

from agentsched import (
    MemoryModel,
    SimConfig,
    figure2_predictor,
    figure2_workload,
    make_policy,
    run,
)


@pytest.fixture
def figure2():
    return figure2_workload(), figure2_predictor()


def run_figure2(policy_name: str, mlfq_config=None):
    """One-segment-at-a-time serial run of the demo workload."""
    workload = figure2_workload()
    predictor = figure2_predictor()
    policy = make_policy(policy_name, predictor, mlfq_config)
    memory = MemoryModel(capacity_tokens=1_000_000)
    config = SimConfig(cost_model="serial", max_batch_segments=1, cache_mode="preserve")
    return run(workload, policy, predictor, memory, config)
