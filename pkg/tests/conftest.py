import numpy as np
import pytest

from concnn.data import PanelDataset, Scaler, ScalerMethod


@pytest.fixture
def tiny_panel():
    """2 products x 3 weeks, fully available."""
    return PanelDataset(
        product_ids=("A", "B"),
        weeks=np.array([0, 1, 2]),
        sales=np.array([[4, 8, 12], [6, 12, 18]]),
        covariates=np.zeros((2, 3, 1)),
        covariate_names=("price",),
        available=np.ones((2, 3), dtype=bool),
    )


@pytest.fixture
def constant_scaler():
    def make(n, value=100.0):
        return Scaler(values=np.full(n, float(value)), method=ScalerMethod.ORACLE)
    return make


def write_panel_csv_text(path, rows, covariates=("price",)):
    header = "product_id,week,sales," + ",".join(covariates)
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return str(path)


#: one line per acceptance criterion, echoed after the run so the
#: pass/fail summary survives pytest's output capture
acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
