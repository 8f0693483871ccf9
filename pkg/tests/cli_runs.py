"""Runs every subcommand into a directory and snapshots the outputs."""

import contextlib
import io
from pathlib import Path

from swaptrace.cli import main


def run(argv) -> tuple[int, str]:
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main([str(a) for a in argv])
    return code, buf.getvalue()


def snapshot(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def run_all(root: Path, seed: int = 3, events: int = 3000) -> dict[str, int]:
    """simulate, then every analysis command over the simulated trace."""
    sim, bx = root / "sim", root / "bx"
    codes = {}
    codes["simulate"], _ = run(["simulate", "--seed", seed, "--events", events, "--out", sim])
    codes["simulate-strategy"], _ = run(["simulate", "--kind", "strategy", "--seed", seed,
                                         "--out", root / "strategy"])
    codes["simulate-bancorx"], _ = run(["simulate", "--kind", "bancorx", "--seed", seed, "--swaps", 200,
                                        "--out", bx])
    common = ["--trace", sim / "trace.jsonl", "--registry", sim / "registry.json", "--rates", sim / "rates.csv"]
    codes["detect"], _ = run(["detect", *common, "--out", root / "detect"])
    codes["detect-csv"], _ = run(["detect", *common, "--format", "csv", "--jobs", 3, "--out", root / "detect-csv"])
    codes["indicators"], _ = run(["indicators", *common[:4], "--out", root / "indicators"])
    codes["lost"], _ = run(["lost", *common, "--out", root / "lost"])
    codes["crosschain"], _ = run(["crosschain", "--source", bx / "source.jsonl", "--destination",
                                  bx / "destination.jsonl", "--out", root / "crosschain"])
    return codes
