"""Acceptance suite: every criterion at its stated tolerance, one printed line each."""

import json
import os

import pytest

from predmatch.acceptance import CRITERIA, DEFAULT_SEED, DEFAULT_TOLERANCES, REPLAY_TITLE, verify_all
from predmatch.cli import main

NUMBERS = sorted(CRITERIA) + [len(CRITERIA) + 1]


@pytest.fixture(scope="module")
def outcome(tmp_path_factory):
    path = tmp_path_factory.mktemp("acceptance") / "acceptance-manifest.json"
    res = verify_all(seed=DEFAULT_SEED, out_path=path, workers=os.cpu_count(), replay=True)
    assert path.read_text() == res.text
    return res


@pytest.mark.slow
@pytest.mark.parametrize("number", NUMBERS)
def test_criterion(outcome, number, capsys):
    (res,) = [r for r in outcome.results if r.number == number]
    with capsys.disabled():
        print("\n" + res.line())
    for m in res.measurements:
        assert m.passed, f"{m.name} = {m.value:.6g}, needs {m.relation} {m.bound:g}"
    assert res.passed, res.error


@pytest.mark.slow
def test_manifest_contents(outcome):
    d = json.loads(outcome.text)
    assert d["schema"] == "predmatch.acceptance/1" and d["seed"] == DEFAULT_SEED
    assert [c["number"] for c in d["criteria"]] == NUMBERS
    assert d["criteria"][-1]["title"] == REPLAY_TITLE
    assert d["tolerances"] == DEFAULT_TOLERANCES
    assert outcome.exit_code == (0 if d["all_passed"] else 1)


def test_corrupted_tolerance_gives_nonzero_exit():
    res = verify_all(only=[5], tolerances={"c5.h_norm": -1.0}, replay=False)
    assert res.exit_code == 1
    assert not res.results[0].passed
    with pytest.raises(KeyError):
        verify_all(only=[5], tolerances={"c5.no_such_tolerance": 1.0})


def test_repeated_run_identical_bytes():
    a = verify_all(only=[1, 5], replay=False)
    b = verify_all(only=[1, 5], replay=False)
    assert a.text == b.text and a.digest == b.digest
    assert a.exit_code == 0


def test_cli_verify_subset(tmp_path, capsys):
    assert main(["verify", "--only", "5", "--no-replay", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[PASS] criterion  5" in out and "RESULT: PASS" in out
    assert json.loads((tmp_path / "acceptance-manifest.json").read_text())["all_passed"] is True
