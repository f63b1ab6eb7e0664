import json
import time

import pytest

from agarcount.core import BBox, ColonyClass, Detection, Label, SampleAnnotation


def agar_json(labels=(), colonies_number=None, background="dark", classes=("S.aureus",), sample_id=1, **extra):
    if colonies_number is None:
        colonies_number = sum(1 for lab in labels if lab["class"] not in ("Defect", "Contamination"))
    obj = {
        "background": background,
        "classes": list(classes),
        "colonies_number": colonies_number,
        "labels": list(labels),
        "sample_id": sample_id,
    }
    obj.update(extra)
    return json.dumps(obj)


def label_dict(i, cls="S.aureus", x=0, y=0, w=10, h=10):
    return {"id": i, "class": cls, "x": x, "y": y, "width": w, "height": h}


def det(x, y, w, h, score=1.0, cls=ColonyClass.SAureus):
    return Detection(BBox(x, y, w, h), cls, score)


def lab(i, x, y, w, h, cls=ColonyClass.SAureus):
    return Label(i, cls, BBox(x, y, w, h))


def spurious_fixture(n_samples=6):
    """Each plate: its true colonies at score 0.9 plus one disjoint spurious box at 0.3."""
    rows = []
    for s in range(n_samples):
        n = 2 + s
        labels = tuple(lab(i, 40 * i, 0, 20, 20) for i in range(n))
        raw = [det(40 * i, 0, 20, 20, 0.9) for i in range(n)] + [det(0, 200, 25, 25, 0.3)]
        rows.append((SampleAnnotation(s, "dark", (ColonyClass.SAureus,), n, labels), raw))
    return rows


@pytest.fixture
def empty_json():
    return agar_json(labels=(), colonies_number=0, background="dark", classes=())


@pytest.fixture
def uncountable_json():
    return agar_json(labels=(), colonies_number=-1, background="bright", classes=("E.coli",), sample_id=7)


@pytest.fixture
def mixed_json():
    labels = [label_dict(i, "S.aureus", x=20 * i, y=5) for i in range(1, 4)]
    labels.append(label_dict(4, "Contamination", x=200, y=200, w=30, h=40))
    return agar_json(labels=labels, colonies_number=3, background="vague", sample_id=3)


# --- acceptance reporting ---------------------------------------------------

_CRITERIA = {}


class Criterion:
    """Times one acceptance criterion and records a PASS / FAIL / SKIP line for the run summary."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.detail = ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        detail = self.detail
        if exc_type is None:
            status = "PASS"
        elif issubclass(exc_type, pytest.skip.Exception):
            status, detail = "SKIP", str(exc.msg if hasattr(exc, "msg") else exc)
        else:
            status = "FAIL"
            detail = (str(exc).splitlines() or [exc_type.__name__])[0][:120]
        line = f"criterion {self.number:>2} {status}  {self.title}: {detail} [{elapsed:.2f}s]"
        _CRITERIA[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
