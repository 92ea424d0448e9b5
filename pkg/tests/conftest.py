import json

import pytest


def tiny_config(dataset_path="data", seed=0, steps=6):
    """A complete run config small enough to train in a second or two."""
    return {
        "schema": "s2vgen.run/1",
        "dataset": {
            "path": dataset_path,
            "count": 4,
            "mix": [1, 0, 0],
            "seed": seed,
            "eval_count": 2,
            "eval_seed": seed + 1,
            "scene": {"frames": 2, "resolution": [16, 16]},
        },
        "model": {"model_dim": 16, "depth": 1, "heads": 2, "head_dim": 8, "text_dim": 8, "init_seed": seed},
        "variant": "ShiftWH",
        "training": {"phases": [{"name": "pretrain", "steps": steps, "lr": 1e-3}], "seed": seed, "warmup": 2},
        "sampler": {"steps": 2, "seed": seed},
    }


@pytest.fixture
def write_config(tmp_path):
    def write(raw=None, name="run.json", **kw):
        path = tmp_path / name
        path.write_text(json.dumps(raw if raw is not None else tiny_config(**kw)))
        return path

    return write


CRITERIA: list[str] = []
SECTIONS: list[tuple[str, str]] = []


def record_criterion(number, name: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    CRITERIA.append(line)
    print(line)


def record_section(title: str, text: str) -> None:
    SECTIONS.append((title, text))
    print(text)


def pytest_terminal_summary(terminalreporter):
    for title, text in SECTIONS:
        terminalreporter.section(title)
        terminalreporter.write_line(text)
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1]) if s.split()[1].isdigit() else 99):
            terminalreporter.write_line(line)
