import pytest

from hypocert import rate_map
from hypocert.fpe import FokkerPlanckSolver, mixture_density, run_decay_experiment
from hypocert.grid import Grid
from models import const_model as _const

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def const_model():
    return _const()


class DecayBenchmark:
    """Constant-diffusion decay run on [-5, 5]^2, computed once per grid size."""

    def __init__(self):
        self.model = _const()
        self.certificate = rate_map(self.model, Grid.make((-1, -1), (1, 1), 41))
        self._runs = {}

    def setup(self, n):
        grid = Grid.make((-5, -5), (5, 5), n)
        return FokkerPlanckSolver(self.model, grid), mixture_density(self.model, grid)

    def run(self, n=81, t_final=20.0):
        key = (n, t_final)
        if key not in self._runs:
            solver, p0 = self.setup(n)
            self._runs[key] = run_decay_experiment(self.model, p0, t_final, rate_certificate=self.certificate,
                                                   solver=solver)
        return self._runs[key]


@pytest.fixture(scope="session")
def decay_benchmark():
    return DecayBenchmark()
