"""Run the demo pipeline and validate every output against schemas/."""
import json
import pathlib
import shutil
import subprocess
import sys

import jsonschema

cbu, source, scratch = (pathlib.Path(a).resolve() for a in sys.argv[1:4])
schemas = {}
for p in (source / "schemas").glob("*.schema.json"):
    schema = json.loads(p.read_text())
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    schemas[p.name.removesuffix(".schema.json")] = cls(schema)

shutil.rmtree(scratch, ignore_errors=True)
shutil.copytree(source / "demo", scratch, ignore=shutil.ignore_patterns("out"))
for sub in (["ingest"], ["rollout", "--k", "4"], ["score-cbu"], ["score-judge"], ["metrics"],
            ["--resamples", "20", "bootstrap"], ["regress"], ["--k", "32", "curate"], ["audit"], ["report"]):
    subprocess.run([str(cbu), "--config", "demo.conf", *sub], cwd=scratch, check=True,
                   stdout=subprocess.DEVNULL)

out = scratch / "out"
checked = 0


def check(kind, doc, where):
    global checked
    error = jsonschema.exceptions.best_match(schemas[kind].iter_errors(doc))
    if error:
        sys.exit(f"{where}: {error.message}")
    checked += 1


def check_jsonl(kind, path):
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if line.strip():
            check(kind, json.loads(line), f"{path}:{n}")


check_jsonl("problem", out / "problems.jsonl")
check_jsonl("candidate", out / "candidates.jsonl")
check_jsonl("score", out / "scores.jsonl")
check_jsonl("rollout", out / "cache" / "rollouts.jsonl")
for p in out.glob("rollouts-*.jsonl"):
    check_jsonl("rollout", p)
for p in out.glob("curated*.jsonl"):
    check_jsonl("candidate_question", p)
check("report", json.loads((out / "report.json").read_text()), "report.json")
for p in (out / "manifests").glob("*.json"):
    check("manifest", json.loads(p.read_text()), p.name)
print(f"{checked} documents valid")
