#!/usr/bin/env python3
"""Smoke test for the cog_py extension module.

Builds the cdylib with cargo, loads it as a Python module, and drives the
shipped scenarios end to end.
"""

import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_extension() -> Path:
    subprocess.run(
        ["cargo", "build", "-p", "cog-py", "--release"],
        cwd=ROOT,
        check=True,
    )
    for name in ("libcog_py.so", "libcog_py.dylib", "cog_py.dll"):
        built = ROOT / "target" / "release" / name
        if built.exists():
            return built
    raise SystemExit("built extension not found under target/release")


def load_module(built: Path):
    workdir = Path(tempfile.mkdtemp(prefix="cog-py-"))
    target = workdir / ("cog_py" + (".pyd" if built.suffix == ".dll" else ".so"))
    shutil.copyfile(built, target)
    sys.path.insert(0, str(workdir))
    import cog_py  # noqa: E402

    return cog_py


def check(label: str, ok: bool, detail: str = "") -> None:
    status = "ok" if ok else "FAIL"
    print(f"[{status}] {label}" + (f" — {detail}" if detail and not ok else ""))
    if not ok:
        raise SystemExit(1)


def main() -> None:
    cog_py = load_module(build_extension())
    print(f"loaded cog_py {cog_py.__version__}")

    # pure helpers
    check(
        "score_guess two-pass scoring",
        cog_py.score_guess("slate", "tripe") == ["gray", "gray", "gray", "yellow", "green"],
    )
    check(
        "score_guess rejects bad words",
        _raises(lambda: cog_py.score_guess("abc", "tripe")),
    )
    diagnostics = cog_py.check_rules("rule r { when: (<s> ^a 1) then: add (<s> ^b <ghost>) }")
    check("check_rules reports the unbound variable", any("ghost" in d for d in diagnostics))
    check("check_rules accepts valid text", cog_py.check_rules("") == [])
    a = cog_py.activation(5, 0, 10, 0.5)
    check(
        "activation matches ln(5) - 0.5*ln(11)",
        abs(a - (math.log(5) - 0.5 * math.log(11))) < 1e-12,
        f"got {a}",
    )

    # full runs
    robot = cog_py.Scenario(str(ROOT / "scenarios" / "robot.json"))
    metrics = json.loads(robot.run())
    check(
        "robot improves from 12 to 8 actions",
        metrics["env"]["actions_per_episode"] == [12, 8],
        json.dumps(metrics["env"]),
    )
    check("robot learned one rule", metrics["rules_learned"] == 1)
    check("robot goal reached", robot.goal_reached())
    check(
        "robot working memory is inspectable",
        any("^type state" in t for t in robot.working_memory()),
    )
    check(
        "episodic dump parses as JSON lines",
        all(json.loads(line) for line in robot.episodic_dump().splitlines()[:3]),
    )

    # stepwise control
    wordle = cog_py.Scenario(str(ROOT / "scenarios" / "wordle.json"))
    steps = 0
    while not wordle.goal_reached() and steps < 40:
        line = json.loads(wordle.step())
        steps += 1
    check("wordle solves within its budget", wordle.goal_reached(), f"{steps} steps")
    check("wordle stepwise trace exists", len(wordle.trace()) == steps)
    m = json.loads(wordle.metrics())
    check("wordle discarded the familiar candidate", m["discarded_candidates"] == 1)
    check("wordle guessed once", m["env"]["guesses"] == 1)

    game = cog_py.Scenario(str(ROOT / "scenarios" / "game.json"))
    m = json.loads(game.run())
    check(
        "game ties once then transfers",
        m["impasses_per_episode"][0]["tie"] == 1 and m["impasses_per_episode"][1]["tie"] == 0,
    )
    check("game opened three hypothetical contexts", m["hypothetical_contexts"] == 3)

    print("smoke test passed")


def _raises(f) -> bool:
    try:
        f()
        return False
    except Exception:
        return True


if __name__ == "__main__":
    main()
