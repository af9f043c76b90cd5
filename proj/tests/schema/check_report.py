"""Runs `vgs sweep` and `vgs evaluate` on the sim and validates report.json
against assets/schemas/report.schema.json."""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema


def run(vgs, *args):
    proc = subprocess.run([vgs, *args], capture_output=True, text=True)
    if proc.returncode != 0:
        sys.exit(f"vgs {args[0]} exited {proc.returncode}: {proc.stderr}")


def main():
    vgs, schema_path = sys.argv[1], Path(sys.argv[2])
    schema = json.loads(schema_path.read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)

    with tempfile.TemporaryDirectory() as tmp:
        d = Path(tmp)
        (d / "caps.json").write_text(json.dumps([
            {"image_id": "a", "caption": "A dog and a car near two bicycles."},
            {"image_id": "b", "caption": "A cat on a bench."},
        ]))
        (d / "ann.json").write_text(json.dumps({"a": ["dog", "car"], "b": ["cat"]}))
        run(vgs, "sweep", "--seed", "5", "--sizes", "1,2,4", "--guidance", "prm", "--prompt", "Describe the image.",
            "--image", "sim:img-0", "--out", str(d / "sweep"))
        run(vgs, "evaluate", "--captions", str(d / "caps.json"), "--annotations", str(d / "ann.json"),
            "--sweep", str(d / "sweep" / "sweep.json"), "--out", str(d / "eval"))
        report = json.loads((d / "eval" / "report.json").read_text())

    errors = sorted(validator.iter_errors(report), key=lambda e: list(e.path))
    for e in errors:
        print(f"{list(e.path)}: {e.message}")
    # A report with an out-of-range fraction must be rejected.
    bad = json.loads(json.dumps(report))
    bad["chair"]["chair_i"] = 1.5
    if validator.is_valid(bad):
        print("schema accepted chair_i = 1.5")
        errors.append(None)
    print("report.json valid" if not errors else f"{len(errors)} schema problems")
    sys.exit(1 if errors else 0)


if __name__ == "__main__":
    main()
