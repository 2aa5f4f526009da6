import pytest

from flockcp.model import Configuration

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def replay(init, events):
    """Apply logged events to a copy of ``init``; yields the state before each event."""
    state = init.as_dict()
    for ev in events:
        yield Configuration(state), ev
        if ev.new_state:
            state[ev.site] = ev.new_state
        else:
            state.pop(ev.site, None)
    yield Configuration(state), None


@pytest.fixture
def replay_events():
    return replay
