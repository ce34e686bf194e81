"""Command-line entry point.

Runs in-process by default. With ``--server URL`` (or ``QNNBENCH_SERVER``) every
command is forwarded to a running ``qnnbench serve`` instance instead.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import experiments
from .experiments import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_PARTIAL,
    ExperimentError,
    SuiteResult,
    load_config,
)

SERVER_ENV = "QNNBENCH_SERVER"

RUN_KINDS = {
    "run-random-suite": "random_suite",
    "run-conv-suite": "conv_suite",
    "cross-dataset": "cross_dataset",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--workers", type=int, help="parallel training processes")
    p.add_argument("--out", help="result store / output directory")
    p.add_argument("--resume", action="store_true", default=None, help="continue an existing store (fails when there is none)")
    p.add_argument("--server", default=os.environ.get(SERVER_ENV), help="forward to a running service")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qnnbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen-data", help="generate and persist data set versions")
    _common(p)
    p.add_argument("--images", action="store_true", help="keep full-resolution images instead of PCA features")
    for name in RUN_KINDS:
        _common(sub.add_parser(name, help=f"run the {RUN_KINDS[name].replace('_', ' ')} protocol"))
    p = sub.add_parser("analyze", help="correlation tables and trend fits for a result store")
    _common(p)
    p = sub.add_parser("report", help="write CSV/JSON artifacts from a result store")
    _common(p)
    p.add_argument("--kind", default="summary", choices=experiments.REPORT_KINDS)
    p.add_argument("--report-dir", help="where to write (default: <store>/reports)")
    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _config(args, kind: str | None):
    overrides = {"workers": args.workers, "out": args.out, "resume": args.resume}
    if kind is not None:
        overrides["kind"] = kind
    return load_config(args.config, **overrides)


def _print(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True, default=str))


def _suite_payload(result) -> tuple[dict, int]:
    if isinstance(result, SuiteResult):
        payload = {"counts": result.counts, "n_failed": result.n_failed,
                   "summaries": {k: {"best": s.best, "average": s.average, "worst": s.worst,
                                     "excluded": s.excluded} for k, s in result.items()}}
    else:
        payload = result
    return payload, (EXIT_PARTIAL if payload.get("n_failed") else EXIT_OK)


def run_local(args) -> int:
    cmd = args.command
    if cmd == "gen-data":
        config = _config(args, "conv_suite" if args.images else None)
        _print({"versions": experiments.generate_data(config)})
        return EXIT_OK
    if cmd in RUN_KINDS:
        config = _config(args, RUN_KINDS[cmd])
        payload, code = _suite_payload(experiments.run(config, progress=_progress))
        _print(payload)
        return code
    store = args.out or (load_config(args.config).out if args.config else None)
    if store is None:
        raise experiments.ConfigError("--out (the result store) is required")
    if cmd == "analyze":
        _print(experiments.analyze(store))
        return EXIT_OK
    files = experiments.report(store, args.kind, args.report_dir)
    _print({"files": [str(f) for f in files]})
    return EXIT_OK


def _progress(done: int, total: int) -> None:
    print(f"\r{done}/{total} runs", end="\n" if done == total else "", file=sys.stderr, flush=True)


def run_remote(args) -> int:
    import httpx

    base = args.server.rstrip("/")
    cmd = args.command
    with httpx.Client(base_url=base, timeout=None) as client:
        if cmd == "gen-data":
            config = _config(args, "conv_suite" if args.images else None)
            resp = client.post("/datasets", json={"config": config.model_dump(mode="json")})
        elif cmd in RUN_KINDS:
            config = _config(args, RUN_KINDS[cmd])
            resp = client.post("/jobs", json={"config": config.model_dump(mode="json")})
            if resp.status_code == 202:
                job_id = resp.json()["job_id"]
                while True:
                    resp = client.get(f"/jobs/{job_id}")
                    job = resp.json()
                    if job["state"] in ("done", "failed"):
                        _print(job)
                        return job["exit_code"]
                    if job["total"]:
                        _progress(job["completed"], job["total"])
                    time.sleep(1.0)
        elif cmd == "analyze":
            resp = client.post("/analyze", json={"store": args.out})
        else:
            resp = client.post("/reports", json={"store": args.out, "kind": args.kind,
                                                 "out_dir": args.report_dir})
    body = resp.json()
    _print(body)
    if resp.is_success:
        return EXIT_OK
    return body.get("exit_code", EXIT_CONFIG) if isinstance(body, dict) else EXIT_CONFIG


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("qnnbench.service.app:app", host=args.host, port=args.port)
        return EXIT_OK
    try:
        return run_remote(args) if args.server else run_local(args)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
