import time

import pytest

from motionfields.datagen import sample_negatives, synth_corpus, toy_spec
from motionfields.fields import train_field
from motionfields.presets import TOY_TRAIN, toy_corpus, train_fields


@pytest.fixture(scope="session")
def k2_fields():
    """K = 2 toy corpus with pose and transition fields trained on 5k labels each."""
    train, held = synth_corpus(toy_spec(2, seed=0), 20)
    out = {"train": train, "heldout": held, "fields": {}, "reports": {}, "seconds": {}}
    for i, kind in enumerate(("pose", "vel")):
        t0 = time.perf_counter()
        labeled = sample_negatives(train, 5000, kind, seed=1 + i)
        out["fields"][kind], out["reports"][kind] = train_field(labeled, TOY_TRAIN)
        out["seconds"][kind] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def toy5():
    """Five-joint swinging chain with all three fields (a few minutes of training)."""
    skel, train, held = toy_corpus(5)
    fields, reports = train_fields(train)
    return {"skel": skel, "train": train, "heldout": held, "fields": fields, "reports": reports}


def pytest_terminal_summary(terminalreporter):
    lines = []
    for reports in terminalreporter.stats.values():
        for rep in reports:
            if getattr(rep, "when", None) == "call":
                lines += [v for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
