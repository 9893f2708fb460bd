"""Shared fixtures and the acceptance-criterion summary printed after the run."""

from __future__ import annotations

import numpy as np
import pytest

from vertenet.landmarks import VERTEBRA_LABELS, LandmarkSet, Vertebra

ACCEPTANCE: list[tuple[str, bool, str]] = []


def report_criterion(name: str, ok: bool, detail: str) -> None:
    """Record one acceptance criterion; the line is printed live and again in the summary."""
    ACCEPTANCE.append((name, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def rect_vertebra(label: str, x0: float, y0: float, width: float, height: float) -> Vertebra:
    """Axis-aligned vertebra, anterior to the right; corners in AS, PS, AI, PI order."""
    corners = np.array([[x0 + width, y0], [x0, y0], [x0 + width, y0 + height], [x0, y0 + height]], float)
    return Vertebra(label, corners.mean(axis=0), corners)


def stacked_rects(k: int = 6, x0: float = 20.0, y0: float = 10.0, width: float = 30.0, height: float = 20.0,
                  gap: float = 6.0, image_size=(256, 128), orientation: str = "anterior-right") -> LandmarkSet:
    verts = [rect_vertebra(VERTEBRA_LABELS[i], x0, y0 + i * (height + gap), width, height) for i in range(k)]
    return LandmarkSet(verts, image_size, orientation)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
