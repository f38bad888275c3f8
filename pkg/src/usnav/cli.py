"""Command-line front end: every subcommand is a thin HTTP client.

Subcommands map one-to-one onto the service's stage endpoints, so a
local run and a run against a shared server (``--server URL``) send
identical requests. Without ``--server`` the service runs in-process
and no sockets are opened except the navigation scene stream itself.

Exit codes: 0 success, 2 bad input (missing/invalid files or
arguments), 3 runtime failure (unreachable server, internal errors).
"""

from __future__ import annotations

import argparse
import asyncio
import sys
from pathlib import Path

import httpx

__all__ = ["main", "build_parser"]

_TIMEOUT = 600.0


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def _vec3(text: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"expected three comma-separated numbers, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected three comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="usnav",
        description="ultrasound-only surgical navigation: phantom "
                    "simulation, freehand 3D reconstruction, live guidance "
                    "and clip-based accuracy evaluation")
    parser.add_argument("--server", metavar="URL", default=None,
                        help="send commands to a running service instead of "
                             "executing in-process (see the serve command)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate",
                       help="synthesize a phantom, probe sweep, tracking "
                            "log and ultrasound frames")
    p.add_argument("--out", required=True, help="output work directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate-hz", type=float, default=60.0,
                   help="tracker sample rate (default 60)")
    p.add_argument("--spacing-mm", type=float, default=0.5,
                   help="ground-truth voxel spacing (default 0.5)")
    p.add_argument("--noise-rot-deg", type=float, default=0.2,
                   help="tracking rotation jitter, std dev per axis")
    p.add_argument("--noise-trans-mm", type=float, default=0.2,
                   help="tracking translation jitter, std dev per axis")
    p.add_argument("--detach-at", type=float, default=None, metavar="S",
                   help="reference sensor goes MISSING at this time")
    p.add_argument("--reattach-at", type=float, default=None, metavar="S",
                   help="reference sensor returns at this time")
    p.add_argument("--tumor-radius", type=float, default=None, metavar="MM",
                   help="sphere phantom of this radius instead of the "
                        "default 15 mm")
    p.add_argument("--phantom", default=None, metavar="FILE",
                   help="phantom description file overriding the default")

    p = sub.add_parser("reconstruct",
                       help="compound tracked frames into a 3D volume")
    p.add_argument("--work", required=True, help="work directory")
    p.add_argument("--spacing-mm", type=float, default=0.5,
                   help="output voxel spacing (default 0.5)")

    p = sub.add_parser("segment",
                       help="grow the tumor from a seed, extract surfaces, "
                            "margin and distance field")
    p.add_argument("--work", required=True, help="work directory")
    p.add_argument("--seed-point", type=_vec3, default=[0.0, 0.0, 0.0],
                   metavar="X,Y,Z", help="tumor seed in mm (default 0,0,0)")
    p.add_argument("--tolerance", type=float, default=45.0,
                   help="region-growing intensity tolerance (default 45)")
    p.add_argument("--margin-mm", type=float, default=10.0,
                   help="resection margin in mm (presets 5, 7, 10; any "
                        "positive value accepted)")
    p.add_argument("--vessel-threshold", type=float, default=25.0,
                   help="vessel darkness threshold (default 25)")

    p = sub.add_parser("register",
                       help="place the preoperative model into the "
                            "reference frame by a single landmark")
    p.add_argument("--work", required=True, help="work directory")

    p = sub.add_parser("navigate",
                       help="run navigation: scripted clip placements by "
                            "default, or an interactive session with "
                            "--serve")
    p.add_argument("--work", required=True, help="work directory")
    p.add_argument("--margin-mm", type=float, default=10.0,
                   help="resection margin in mm (presets 5, 7, 10)")
    p.add_argument("--n-clips", type=int, default=6,
                   help="scripted clip placements (default 6)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate-hz", type=float, default=60.0,
                   help="tracker sample rate (default 60)")
    p.add_argument("--noise-rot-deg", type=float, default=0.2)
    p.add_argument("--noise-trans-mm", type=float, default=0.2)
    p.add_argument("--detach-at", type=float, default=None, metavar="S",
                   help="reference sensor goes MISSING at this time")
    p.add_argument("--reattach-at", type=float, default=None, metavar="S")
    p.add_argument("--port", type=int, default=None,
                   help="serve the scene stream on this TCP port "
                        "(0 = any free port)")
    p.add_argument("--serve", action="store_true",
                   help="interactive session until interrupted instead of "
                        "the scripted run")
    p.add_argument("--duration", type=float, default=None, metavar="S",
                   help="with --serve: stop after this many seconds")

    p = sub.add_parser("evaluate",
                       help="score navigation runs against synthesized "
                            "resection specimens")
    p.add_argument("--cohort", default=None, metavar="DIR",
                   help="directory whose subdirectories are one run each")
    p.add_argument("--work", action="append", default=None, metavar="DIR",
                   help="a single run directory (repeatable)")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP service for browsers "
                                     "and remote CLI use")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


# -- client plumbing ---------------------------------------------------------


def _make_client(server: str | None) -> httpx.AsyncClient:
    if server:
        return httpx.AsyncClient(base_url=server.rstrip("/"),
                                 timeout=_TIMEOUT)
    from .service import create_app
    transport = httpx.ASGITransport(app=create_app())
    return httpx.AsyncClient(transport=transport,
                             base_url="http://usnav.internal",
                             timeout=_TIMEOUT)


def _detail(response: httpx.Response) -> str:
    try:
        return str(response.json()["detail"])
    except Exception:
        return response.text


async def _request(client: httpx.AsyncClient, method: str, path: str,
                   payload: dict | None = None) -> dict:
    try:
        response = await client.request(method, path, json=payload)
    except httpx.HTTPError as exc:
        raise CliError(3, f"cannot reach the service: {exc}") from exc
    if response.status_code >= 500:
        raise CliError(3, _detail(response))
    if response.status_code >= 400:
        raise CliError(2, _detail(response))
    return response.json()


def _print_stage(doc: dict) -> None:
    print(f"stage {doc['stage']} finished in {doc['seconds']:.3f} s")
    for key in sorted(doc.get("info", {})):
        print(f"  {key} = {doc['info'][key]}")
    for key in sorted(doc.get("outputs", {})):
        print(f"  wrote {doc['outputs'][key]}")


# -- subcommands -------------------------------------------------------------


async def _cmd_simulate(client, args) -> int:
    payload = {"out_dir": args.out, "seed": args.seed,
               "rate_hz": args.rate_hz, "spacing_mm": args.spacing_mm,
               "noise_rot_deg": args.noise_rot_deg,
               "noise_trans_mm": args.noise_trans_mm,
               "detach_at": args.detach_at, "reattach_at": args.reattach_at,
               "tumor_radius_mm": args.tumor_radius,
               "phantom_spec": args.phantom}
    _print_stage(await _request(client, "POST", "/stages/simulate", payload))
    return 0


async def _cmd_reconstruct(client, args) -> int:
    payload = {"work_dir": args.work, "spacing_mm": args.spacing_mm}
    _print_stage(await _request(client, "POST", "/stages/reconstruct",
                                payload))
    return 0


async def _cmd_segment(client, args) -> int:
    payload = {"work_dir": args.work, "seed_point_mm": args.seed_point,
               "tolerance": args.tolerance, "margin_mm": args.margin_mm,
               "vessel_threshold": args.vessel_threshold}
    _print_stage(await _request(client, "POST", "/stages/segment", payload))
    return 0


async def _cmd_register(client, args) -> int:
    _print_stage(await _request(client, "POST", "/stages/register",
                                {"work_dir": args.work}))
    return 0


async def _cmd_navigate(client, args) -> int:
    if args.serve:
        return await _navigate_serve(client, args)
    payload = {"work_dir": args.work, "margin_mm": args.margin_mm,
               "n_clips": args.n_clips, "rate_hz": args.rate_hz,
               "noise_rot_deg": args.noise_rot_deg,
               "noise_trans_mm": args.noise_trans_mm,
               "detach_at": args.detach_at, "reattach_at": args.reattach_at,
               "seed": args.seed, "stream_port": args.port}
    _print_stage(await _request(client, "POST", "/stages/navigate", payload))
    return 0


async def _navigate_serve(client, args) -> int:
    payload = {"work_dir": args.work, "margin_mm": args.margin_mm,
               "rate_hz": args.rate_hz,
               "stream_port": args.port if args.port is not None else 0}
    doc = await _request(client, "POST", "/sessions", payload)
    sid = doc["session_id"]
    print(f"session {sid} {doc['state']}, margin {doc['margin_mm']} mm")
    print(f"  scene stream  tcp port {doc['stream_port']}")
    if args.server:
        ws_base = args.server.rstrip("/")
        for scheme, ws_scheme in (("https", "wss"), ("http", "ws")):
            if ws_base.startswith(scheme + "://"):
                ws_base = ws_scheme + ws_base[len(scheme):]
                break
        print(f"  websocket     {ws_base}/sessions/{sid}/ws")
    print("press Ctrl-C to stop")
    try:
        if args.duration is not None:
            await asyncio.sleep(args.duration)
        else:
            await asyncio.Event().wait()
    finally:
        summary = await _request(client, "DELETE", f"/sessions/{sid}")
        print(f"session {sid} stopped, "
              f"{summary['clips_digitized']} clips digitized")
        print(f"  wrote {summary['log']}")
    return 0


async def _cmd_evaluate(client, args) -> int:
    runs: list[str] = []
    if args.cohort is not None:
        cohort = Path(args.cohort)
        if not cohort.is_dir():
            raise CliError(2, f"cohort directory not found: {cohort}")
        runs.extend(str(p) for p in sorted(cohort.iterdir())
                    if p.is_dir() and (p / "session.log").exists())
        if not runs:
            raise CliError(2, f"no completed runs under {cohort} "
                              "(expected subdirectories with session.log)")
    if args.work:
        runs.extend(args.work)
    if not runs:
        raise CliError(2, "evaluate needs --cohort or --work")
    payload = {"run_dirs": runs, "out_dir": args.out, "seed": args.seed}
    _print_stage(await _request(client, "POST", "/stages/evaluate", payload))
    return 0


async def _run(args) -> int:
    handlers = {
        "simulate": _cmd_simulate,
        "reconstruct": _cmd_reconstruct,
        "segment": _cmd_segment,
        "register": _cmd_register,
        "navigate": _cmd_navigate,
        "evaluate": _cmd_evaluate,
    }
    async with _make_client(args.server) as client:
        return await handlers[args.command](client, args)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import create_app
        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0
    try:
        return asyncio.run(_run(args))
    except KeyboardInterrupt:
        return 0
    except CliError as exc:
        print(f"usnav {args.command}: {exc.message}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
