"""Command line client.  Talks to a running service with --server, otherwise
spins the service up in process.

Exit codes: 0 pass, 1 a check failed, 2 configuration or input error.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import httpx

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class InputError(Exception):
    pass


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    with warnings.catch_warnings():
        # starlette nags about its httpx backend; irrelevant for an in-process client
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service.app import app
    return TestClient(app)


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise InputError(f"{path}: cannot read: {e.strerror}") from None


def _read_json(path: str) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    try:
        return json.loads(_read(str(p)))
    except json.JSONDecodeError as e:
        raise InputError(f"{p}:{e.lineno}: invalid JSON: {e.msg}") from None


def _config_errors(resp) -> int:
    body = resp.json()
    for line in body.get("errors") or [json.dumps(body.get("detail", body))]:
        print(line, file=sys.stderr)
    return EXIT_CONFIG


def cmd_run(args, client) -> int:
    text = _read(args.file)
    resp = client.post("/runs", json={"scenario_text": text, "filename": args.file, "seed": args.seed,
                                      "out_dir": args.out})
    if resp.status_code != 200:
        return _config_errors(resp)
    body = resp.json()
    report = body["report"]
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['detail']}")
    print(f"report: {Path(body['out_dir']) / 'report.json'}")
    return EXIT_PASS if report["passed"] else EXIT_FAIL


def cmd_compare(args, client) -> int:
    report, golden = _read_json(args.report), _read_json(args.golden)
    resp = client.post("/compare", json={"report": report, "golden": golden, "tol": args.tol})
    if resp.status_code != 200:
        return _config_errors(resp)
    body = resp.json()
    for r in body["results"]:
        extra = f" ({r['reason']})" if r["reason"] else ""
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['metric']}{extra}")
    return EXIT_PASS if body["passed"] else EXIT_FAIL


def cmd_emit(args, client) -> int:
    report = _read_json(args.report)
    base = Path(args.report) if Path(args.report).is_dir() else Path(args.report).parent
    if "figures" not in report.get("files", {}):
        raise InputError(f"{args.report}: report lists no figure data")
    figures = _read(str(base / report["files"]["figures"]))
    resp = client.post("/emit", json={"figures_csv": figures, "fig": args.fig})
    if resp.status_code != 200:
        return _config_errors(resp)
    text = resp.json()["csv"]
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_PASS


def cmd_serve(args, client) -> int:
    import uvicorn

    from .service.app import app
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uwdt", description=__doc__.splitlines()[0])
    p.add_argument("--server", help="service base URL; runs in process when omitted")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("file")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory")
    r.set_defaults(fn=cmd_run)
    c = sub.add_parser("compare", help="compare a report with a golden file")
    c.add_argument("report")
    c.add_argument("golden")
    c.add_argument("--tol", type=float, default=1e-6)
    c.set_defaults(fn=cmd_compare)
    e = sub.add_parser("emit", help="write one figure's data as long-format CSV")
    e.add_argument("report")
    e.add_argument("--fig", required=True)
    e.add_argument("--out", help="file to write instead of stdout")
    e.set_defaults(fn=cmd_emit)
    s = sub.add_parser("serve", help="start the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        client = None if args.command == "serve" else _client(args.server)
        return args.fn(args, client)
    except InputError as e:
        print(e, file=sys.stderr)
        return EXIT_CONFIG
    except httpx.HTTPError as e:
        print(f"service unreachable: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
