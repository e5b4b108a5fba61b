import numpy as np
import pytest


def simulate_birth_death(birth, death, horizon, seed):
    """Gillespie run of a finite birth-death chain; returns time spent per state
    and the number of state changes. Independent of the package simulator."""
    rng = np.random.default_rng(seed)
    k = len(birth)
    state, t, changes = 0, 0.0, 0
    occupancy = np.zeros(k)
    while t < horizon:
        up = birth[state] if state < k - 1 else 0.0
        down = death[state] if state > 0 else 0.0
        total = up + down
        dt = min(rng.exponential(1.0 / total), horizon - t)
        occupancy[state] += dt
        t += dt
        if t >= horizon:
            break
        state += 1 if rng.random() < up / total else -1
        changes += 1
    return occupancy, changes


def simulate_mm1(lam, mu, horizon, seed, cap=200):
    """Occupancy and change times of an M/M/1 queue truncated at ``cap``."""
    rng = np.random.default_rng(seed)
    n, t = 0, 0.0
    occupancy = np.zeros(cap + 1)
    change_times = []
    while True:
        rate = lam + (mu if n > 0 else 0.0)
        dt = rng.exponential(1.0 / rate)
        if t + dt > horizon:
            occupancy[n] += horizon - t
            break
        occupancy[n] += dt
        t += dt
        if rng.random() < lam / rate:
            n = min(n + 1, cap)
        else:
            n -= 1
        change_times.append(t)
    return occupancy, np.array(change_times)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(number, ok, detail):
        lines[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
