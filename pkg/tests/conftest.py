import numpy as np
import pytest

from conjac.materials import MaterialParams, linear_corotational_free_material, snh_material
from conjac.meshgen import box_mesh, perturbed


def unit_tet_arrays():
    x = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return x, np.array([[0, 1, 2, 3]])


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bar():
    """Irregular 4x1x1 bar, 0.2 m long."""
    return perturbed(box_mesh((0.2, 0.05, 0.05), (4, 1, 1)), 0.1, seed=3)


@pytest.fixture
def snh():
    return snh_material(MaterialParams(1e4, 0.4))


@pytest.fixture
def linear():
    return linear_corotational_free_material(MaterialParams(1e4, 0.3))


def end_face(mesh, k=4):
    """The ``k`` nodes with the smallest x coordinate (the x = 0 face of ``bar``)."""
    return np.sort(np.argsort(mesh.rest_positions[:, 0], kind='stable')[:k])


# acceptance reporting: tests marked ``criterion(n, title)`` get one summary
# line each at the end of the session
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line('markers', 'criterion(number, title): acceptance criterion')


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker('criterion')
    if mark is None:
        return
    number, title = mark.args
    if rep.when == 'call' or (rep.when == 'setup' and not rep.passed):
        detail = getattr(item, 'measured', '')
        _CRITERIA[number] = (title, 'PASS' if rep.passed else 'FAIL', detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section('acceptance criteria')
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f'{status} criterion {number:2d}: {title}'
        terminalreporter.write_line(line + (f' ({detail})' if detail else ''))
