from __future__ import annotations

import numpy as np
import pytest

from malpaca import capture, synth
from malpaca.capture import Connection, Direction

FIVE_KINDS = [
    "SystematicPortScan",
    "RandomizedPortScan",
    "PeriodicHeartbeat",
    "BroadcastDiscovery",
    "BulkTransfer",
]


def make_conn(key, ps, inter=None, sp=None, dp=None, direction=Direction.OUTGOING) -> Connection:
    n = len(ps)
    if isinstance(key, str):
        key = ("s", "10.0.0.2", key)
    return Connection(
        key=key,
        direction=direction,
        f_ps=tuple(ps),
        f_in=tuple(inter if inter is not None else [0.0] + [10.0] * (n - 1)),
        f_sp=tuple(sp if sp is not None else [40000] * n),
        f_dp=tuple(dp if dp is not None else [80] * n),
        original_length=n,
    )


def random_connections(n: int, length: int = 20, seed: int = 0) -> list[Connection]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        out.append(
            make_conn(
                f"198.51.100.{i}",
                rng.integers(40, 1500, length).tolist(),
                [0.0] + rng.uniform(0, 500, length - 1).round(3).tolist(),
                rng.integers(1000, 1010, length).tolist(),
                rng.integers(1, 30, length).tolist(),
            )
        )
    return out


@pytest.fixture(scope="session")
def five_kind_fixture():
    """Connections and planted kinds for the 5 behaviors x 15 connections fixture."""
    ds = synth.synth_dataset(FIVE_KINDS, 15, 20, seed=0)
    packets = [r for recs in ds.packets.values() for r in recs]
    conns = capture.extract_connections(packets, 20, localhost=(synth.LOCAL_HOST,)).connections
    truth = [ds.truth[c.key] for c in conns]
    return conns, truth


@pytest.fixture(scope="session")
def five_kind_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fixture")
    synth.write_dataset(synth.synth_dataset(FIVE_KINDS, 15, 20, seed=0), d)
    return d


def planted_groups(n_groups=3, per_group=10, intra=0.05, inter=0.9, jitter=0.02, seed=0):
    """Symmetric distance matrix with well-separated planted groups, and the true labels."""
    rng = np.random.default_rng(seed)
    n = n_groups * per_group
    truth = np.repeat(np.arange(n_groups), per_group)
    base = np.where(truth[:, None] == truth[None, :], intra, inter)
    noise = rng.uniform(-jitter, jitter, (n, n))
    d = base + (noise + noise.T) / 2
    np.fill_diagonal(d, 0.0)
    return d, truth


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
