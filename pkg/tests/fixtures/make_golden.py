"""Regenerates the bundled 20-record fixture and its golden pipeline outputs.

Run from the repository root::

    python tests/fixtures/make_golden.py

The goldens are produced by driving the installed CLI against the
deterministic stub server, so fresh runs of the end-to-end tests must
reproduce them byte for byte.
"""

from __future__ import annotations

import json
import subprocess
import sys
import tempfile
import threading
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent.parent))

from tests.stub_server import make_stub_server  # noqa: E402

ROWS = [
    ("rec-000", 48, 64, "a red car parked beside a tall tree on a sunny street"),
    ("rec-001", 64, 64, "two dogs chase a yellow ball across the wet grass"),
    ("rec-002", 32, 48, "an old wooden bench under a striped umbrella near the shore"),
    ("rec-003", 40, 56, "a woman in a green coat holds a small shiny kite"),
    ("rec-004", 64, 48, "the elephant stands behind a broken fence at the zoo"),
    ("rec-005", 56, 56, "a bird lands on the lamp above the quiet bench"),
    ("rec-006", 48, 48, "children ride bicycles past a white house with round windows"),
    ("rec-007", 64, 32, "a boat floats near the dock while gulls circle overhead"),
    ("rec-008", 32, 64, "an apple rests on the table beside a folded newspaper"),
    ("rec-009", 40, 40, "a man walks a spotted dog under the bright morning sky"),
    ("rec-010", 64, 64, "a tall sign leans against the brick wall of the bakery"),
    ("rec-011", 48, 56, "the striped cat sleeps on a warm stone step"),
    ("rec-012", 56, 40, "a large truck delivers crates of fruit to the market"),
    ("rec-013", 32, 32, ""),
    ("rec-014", 64, 40, "rain falls on the red umbrella held by a child"),
    ("rec-015", 40, 64, "a shiny bicycle leans on the old oak tree by the path"),
    ("rec-016", 48, 40, "the lamp glows above a bench where a woman reads"),
    ("rec-017", 56, 64, "a kite tangles in the branches of a bare winter tree"),
    ("rec-018", 64, 56, "a green boat and a blue boat rest on the calm lake"),
    ("rec-019", 40, 48, "an orange cat watches birds from the kitchen window"),
]

FILTER_ARGS = ["--strategy", "detailness", "--k", "8", "--t", "4", "--seed", "0"]


def write_fixture_manifest(path: Path) -> None:
    lines = []
    for record_id, height, width, caption in ROWS:
        lines.append(
            json.dumps(
                {
                    "record_id": record_id,
                    "image_path": f"images/{record_id}.png",
                    "image_height": height,
                    "image_width": width,
                    "caption": caption,
                },
                ensure_ascii=False,
                separators=(",", ":"),
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_pipeline(manifest: Path, cache_dir: Path, out_dir: Path, endpoint: str) -> None:
    """The golden pipeline: annotate, score, filter, analyze twice."""
    out_dir.mkdir(parents=True, exist_ok=True)
    cli = [sys.executable, "-m", "capdet"]
    annotated = out_dir / "annotated.jsonl"
    reports = out_dir / "reports.jsonl"

    def run(*args):
        subprocess.run([*cli, *args], check=True, capture_output=True)

    run(
        "annotate", "--manifest", str(manifest), "--cache-dir", str(cache_dir),
        "--endpoint", endpoint, "--out", str(annotated), "--force",
    )
    run(
        "score", "--manifest", str(annotated), "--cache-dir", str(cache_dir),
        "--out", str(reports), "--force",
    )
    run(
        "filter", "--manifest", str(annotated), "--reports", str(reports),
        *FILTER_ARGS, "--out", str(out_dir / "selection.txt"), "--force",
    )
    run(
        "analyze", "--reports", str(reports), "--manifest", str(annotated),
        "--pearson", "--metric", "icr",
        "--out", str(out_dir / "analysis_pearson.json"), "--force",
    )
    run(
        "analyze", "--reports", str(reports), "--manifest", str(annotated),
        "--binned", "--metric", "icr", "--bins", "5",
        "--out", str(out_dir / "analysis_binned.json"), "--force",
    )


def main() -> None:
    manifest = HERE / "twenty.jsonl"
    write_fixture_manifest(manifest)

    server = make_stub_server()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    endpoint = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        with tempfile.TemporaryDirectory() as tmp:
            run_pipeline(manifest, Path(tmp) / "cache", HERE / "golden", endpoint)
    finally:
        server.shutdown()
        server.server_close()
    print(f"fixture and goldens written under {HERE}")


if __name__ == "__main__":
    main()
