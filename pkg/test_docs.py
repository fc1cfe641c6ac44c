#!/usr/bin/env python3
"""
Tests for the examples embedded in docs/

Tests:
- tagged JSON examples validate against the schema models
- field tables list exactly the model fields
- the tutorial command sequence runs and prints what it claims
"""

import contextlib
import io
import json
import os
import re
import shlex
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import main
from core import schema
from core.data_loader import parse_document
from core.schema import SCHEMA_MODELS

DOCS = Path(__file__).parent / "docs"
FENCE = re.compile(r"^```([\w-]*)[ \t]*([\w-]*)[ \t]*\n(.*?)^```", re.MULTILINE | re.DOTALL)
TABLE_HEADING = re.compile(r"^### `(\w+)`\s*$")
TABLE_FIELD = re.compile(r"^\| `(\w+)` \|")


def code_blocks(name):
    """(language, tag, body) for every fenced block, in document order"""
    text = (DOCS / name).read_text(encoding="utf-8")
    return [(m.group(1), m.group(2), m.group(3)) for m in FENCE.finditer(text)]


def field_tables(name):
    """Model name -> field names listed in its table"""
    tables, current = {}, None
    for line in (DOCS / name).read_text(encoding="utf-8").splitlines():
        heading = TABLE_HEADING.match(line)
        if heading:
            current = heading.group(1)
            tables[current] = []
            continue
        field = TABLE_FIELD.match(line)
        if field and current:
            tables[current].append(field.group(1))
        elif line.startswith("#"):
            current = None
    return tables


def cli_commands(body, out_dir):
    """argv lists for every `python main.py ...` line of a bash block"""
    commands = []
    for line in body.splitlines():
        line = line.strip()
        if line.startswith("python main.py"):
            commands.append(shlex.split(line.replace("$OUT", str(out_dir)))[2:])
    return commands


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main.main(argv)
    return code, out.getvalue(), err.getvalue()


class TestSchemaExamples(unittest.TestCase):
    """Test the JSON examples in SCHEMA.md."""

    def test_tagged_examples_validate(self):
        """Test that every tagged example parses with its model."""
        seen = set()
        for language, tag, body in code_blocks("SCHEMA.md"):
            if language != "json":
                continue
            self.assertIn(tag, SCHEMA_MODELS, f"untagged or unknown JSON example '{tag}'")
            document = parse_document(SCHEMA_MODELS[tag], json.loads(body), f"SCHEMA.md {tag}")
            if tag == "calibration":
                self.assertEqual(len(document.camera_models()), len(document.cameras))
            seen.add(tag)
        self.assertEqual(seen, set(SCHEMA_MODELS))

    def test_field_tables_match_models(self):
        """Test that each documented table lists exactly the model's fields."""
        tables = field_tables("SCHEMA.md")
        self.assertGreaterEqual(len(tables), 9)
        for name, fields in tables.items():
            model = getattr(schema, name)
            self.assertEqual(sorted(fields), sorted(model.model_fields), name)


class TestTutorial(unittest.TestCase):
    """Test the tutorial end to end."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out_dir = Path(self.tmp.name)
        self.saved_out = os.environ.get("OUT")
        os.environ["OUT"] = str(self.out_dir)

    def tearDown(self):
        if self.saved_out is None:
            os.environ.pop("OUT", None)
        else:
            os.environ["OUT"] = self.saved_out
        self.tmp.cleanup()

    def run_blocks(self, name):
        last_stdout, ran = None, 0
        for language, _, body in code_blocks(name):
            if language == "bash":
                for argv in cli_commands(body, self.out_dir):
                    code, last_stdout, err = run_cli(argv)
                    self.assertEqual(code, 0, f"{' '.join(argv)}\n{err}")
                    ran += 1
            elif language == "python":
                exec(compile(body, f"<{name}>", "exec"), {"__name__": "tutorial"})
            elif language == "text":
                self.assertEqual(last_stdout.strip(), body.strip())
        return ran

    def test_tutorial_sequence(self):
        """Test that the tutorial commands exit 0 and produce their outputs."""
        self.assertEqual(self.run_blocks("TUTORIAL.md"), 7)
        self.assertTrue((self.out_dir / "synth" / "manifest.json").is_file())
        self.assertTrue((self.out_dir / "rectified" / "grid_fisheye_front_equirect.bin").is_file())
        summary = json.loads((self.out_dir / "bev" / "summary.json").read_text(encoding="utf-8"))
        self.assertAlmostEqual(summary["bev_total"], summary["in_extent_mass"], delta=1e-9 * max(1.0, summary["bev_total"]))
        report = json.loads((self.out_dir / "report.json").read_text(encoding="utf-8"))
        self.assertEqual(sorted(report["distance_bins"]), ["0-10", "0-20"])
        self.assertTrue(0.0 <= report["fds"] <= 1.0)
        for artifact in ("scatter.csv", "curve.csv", "compression.svg"):
            self.assertTrue((self.out_dir / "compression" / artifact).is_file())
        coverage = json.loads((self.out_dir / "coverage" / "summary.json").read_text(encoding="utf-8"))
        self.assertIn("4xP-no-front-rear", coverage)

    def test_schema_command(self):
        """Test the schema command shown in SCHEMA.md."""
        self.assertEqual(self.run_blocks("SCHEMA.md"), 1)
        generated = json.loads((self.out_dir / "schemas" / "manifest.schema.json").read_text(encoding="utf-8"))
        self.assertEqual(generated["title"], "DatasetManifest")


def run_tests():
    """Run all tests with detailed output."""
    loader = unittest.TestLoader()
    suite = loader.loadTestsFromModule(sys.modules[__name__])
    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)
    return result.wasSuccessful()


if __name__ == "__main__":
    success = run_tests()
    sys.exit(0 if success else 1)
