#!/usr/bin/env python3
"""Validate nar run directories against the shipped JSON schemas.

Every directory below the given roots that holds a manifest.json is checked:
the manifest itself, result.json (schema chosen by the manifest command) and
the header line of each CSV it lists.
"""

import argparse
import json
import sys
from pathlib import Path

import jsonschema

RESULT_SCHEMA = {
    "search": "search",
    "enumerate": "enumerate",
    "analyze-rewards": "analyze",
    "gradcheck": "gradcheck",
    "demo eq11": "demo_ascent",
    "demo fig1": "demo_grad_noise",
    "demo bias": "demo_bias",
    "demo pretrain": "demo_pretrain",
}

CSV_HEADERS = {
    "noise.csv": ["decision_id,kind,node,edge_t,mean,variance,count"],
    "trace.csv": ["phase,arch,reward", "instance,phase,arch,reward"],
    "ranking.csv": ["rank,arch,reward"],
    "gradlog.csv": ["step,op_grad_norm,skip_grad_norm", "seed,step,op_grad_norm,skip_grad_norm"],
}


def load_schemas(schema_dir):
    schemas = {}
    for path in Path(schema_dir).glob("*.schema.json"):
        schema = json.loads(path.read_text())
        jsonschema.Draft202012Validator.check_schema(schema)
        schemas[path.name[: -len(".schema.json")]] = jsonschema.Draft202012Validator(schema)
    return schemas


def check_dir(run_dir, schemas):
    errors = []

    def validate(name, path, doc):
        for err in schemas[name].iter_errors(doc):
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            errors.append(f"{path}: {where}: {err.message}")

    manifest_path = run_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    validate("manifest", manifest_path, manifest)

    result_path = run_dir / "result.json"
    if result_path.exists():
        schema = RESULT_SCHEMA.get(manifest.get("command"))
        if schema is None:
            errors.append(f"{result_path}: no schema for command {manifest.get('command')!r}")
        else:
            validate(schema, result_path, json.loads(result_path.read_text()))
    elif manifest.get("status") == "ok":
        errors.append(f"{run_dir}: status ok but result.json is missing")

    for name in manifest.get("outputs", []):
        path = run_dir / name
        if not path.exists():
            errors.append(f"{path}: listed in manifest but missing")
        elif name in CSV_HEADERS:
            with path.open() as f:
                header = f.readline().rstrip("\n")
            if header not in CSV_HEADERS[name]:
                errors.append(f"{path}: unexpected header {header!r}")
    return errors


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--schemas", required=True, help="directory holding *.schema.json")
    parser.add_argument("roots", nargs="+", help="run directories or trees containing them")
    args = parser.parse_args()

    schemas = load_schemas(args.schemas)
    runs = sorted({m.parent for root in args.roots for m in Path(root).rglob("manifest.json")})
    if not runs:
        print("no manifest.json found", file=sys.stderr)
        return 1
    errors = []
    for run_dir in runs:
        errors.extend(check_dir(run_dir, schemas))
    for e in errors:
        print(e)
    print(f"{len(runs)} run directories checked, {len(errors)} problems")
    return 1 if errors else 0


if __name__ == "__main__":
    sys.exit(main())
