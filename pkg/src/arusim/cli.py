"""Command-line front end.

Subcommands: run, plan, capacity, spectrogram, serve, profile.
Exit codes: 0 success, 1 runtime failure (one-line diagnostic on stderr),
2 usage errors (argparse).
"""

from __future__ import annotations

import argparse
import sys
from datetime import date, datetime
from pathlib import Path

from .model import (
    DEFAULT_OVERHEAD_FRACTION,
    bytes_per_second,
    capacity_files,
    factory_defaults,
    session_file_bytes,
)
from .protocol import ProfileError, profile_export, profile_import
from .scheduler import plan_for_day


def _load_profile(path_arg):
    if path_arg is None:
        return factory_defaults()
    return profile_import(Path(path_arg).read_text())


def cmd_run(args) -> int:
    from .sim import Scenario, run_scenario

    scenario = Scenario.from_file(args.scenario)
    out = Path(args.out)
    ledger = run_scenario(scenario, out)
    summary = ledger.of_type("summary")[0]
    print(f"run complete: {summary['sessions']} sessions, "
          f"{summary['files']} files, "
          f"{summary['consumed_mah']:.1f} mAh consumed, "
          f"final state {summary['final_state']}")
    print(f"ledger: {out / 'ledger.jsonl'}")
    if args.figures:
        from .plotting import (
            render_energy_figure,
            render_recording_figure,
            render_storage_figure,
        )
        figdir = out / "figures"
        render_energy_figure(ledger, figdir / "energy.png")
        render_storage_figure(ledger, figdir / "storage.png")
        wavs = sorted((out / "sessions").glob("*.wav"))
        if wavs:
            render_recording_figure(wavs[-1], figdir / "last_session.png")
        print(f"figures: {figdir}")
    return 0


def cmd_plan(args) -> int:
    cfg = _load_profile(args.profile)
    day = date.fromisoformat(args.date) if args.date else datetime.now().date()
    plan = plan_for_day(cfg.schedule, day)
    for entry in plan.entries:
        print(f"{entry.wake_at.isoformat()}  {entry.duration_s} s")
    return 0


def cmd_capacity(args) -> int:
    cfg = _load_profile(args.profile)
    fmt = cfg.format
    bps = bytes_per_second(fmt)
    per_file = session_file_bytes(fmt, args.duration)
    files = capacity_files(args.storage_bytes, fmt, args.duration, args.overhead)
    print(f"format: {fmt.sample_rate_hz} Hz / {fmt.bit_depth}-bit / "
          f"{fmt.channels_per_file}ch")
    print(f"data rate: {bps:,} bytes/s per file (two files per session)")
    print(f"file size at {args.duration:.0f} s: {per_file:,} bytes")
    print(f"session size (two files): {2 * per_file:,} bytes")
    print(f"storage: {args.storage_bytes:,} bytes, "
          f"overhead factor {args.overhead}")
    print(f"capacity: {files:,} files")
    return 0


def cmd_spectrogram(args) -> int:
    from .plotting import render_recording_figure

    png = args.png or str(Path(args.wav).with_suffix(".png"))
    out = render_recording_figure(args.wav, png, window_len=args.window,
                                  hop=args.hop)
    print(f"wrote {out}")
    return 0


def cmd_serve(args) -> int:
    from .sim import Scenario
    from .service import serve

    if args.scenario:
        scenario = Scenario.from_file(args.scenario)
    else:
        scenario = Scenario.from_dict({
            "start_time": "2026-01-01T06:00:00",
            "duration": "24h",
            "boot_mode": "config",
        })
    out = Path(args.out) if args.out else None
    frontend = Path(args.frontend) if args.frontend else None
    print(f"serving on http://127.0.0.1:{args.port} "
          f"(realtime factor {args.realtime_factor})")
    serve(scenario, args.port, out_dir=out,
          realtime_factor=args.realtime_factor, frontend_dir=frontend)
    return 0


def cmd_profile_validate(args) -> int:
    try:
        cfg = profile_import(Path(args.file).read_text())
    except ProfileError as exc:
        print(f"invalid profile: {exc}", file=sys.stderr)
        return 1
    name = cfg.extras.get("profile_name", "unnamed")
    print(f"valid profile ({name})")
    return 0


def cmd_profile_default(args) -> int:
    sys.stdout.write(profile_export(factory_defaults(), profile_name="default"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="arusim",
        description="Deterministic simulator of a solar-powered autonomous "
                    "bird-call recording unit")
    sub = p.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a scenario file into an output directory")
    runp.add_argument("scenario", help="scenario YAML/JSON file")
    runp.add_argument("--out", required=True, help="output directory")
    runp.add_argument("--figures", action="store_true",
                      help="render energy/storage/spectrogram PNGs")
    runp.set_defaults(fn=cmd_run)

    planp = sub.add_parser("plan", help="print the wake plan for a date")
    planp.add_argument("profile", nargs="?", default=None,
                       help="JSON profile (defaults to factory settings)")
    planp.add_argument("--date", default=None, help="ISO date, e.g. 2026-06-01")
    planp.set_defaults(fn=cmd_plan)

    capp = sub.add_parser("capacity", help="storage arithmetic for a profile")
    capp.add_argument("profile", nargs="?", default=None,
                      help="JSON profile (defaults to factory settings)")
    capp.add_argument("--storage-bytes", type=int, default=128 * 10**9)
    capp.add_argument("--duration", type=float, default=600.0,
                      help="recording length in seconds")
    capp.add_argument("--overhead", type=float, default=DEFAULT_OVERHEAD_FRACTION,
                      help="filesystem overhead fraction")
    capp.set_defaults(fn=cmd_capacity)

    specp = sub.add_parser("spectrogram", help="render waveform + spectrogram PNG")
    specp.add_argument("wav")
    specp.add_argument("--png", default=None)
    specp.add_argument("--window", type=int, default=1024)
    specp.add_argument("--hop", type=int, default=256)
    specp.set_defaults(fn=cmd_spectrogram)

    servep = sub.add_parser("serve", help="start the operator-UI-facing service")
    servep.add_argument("--port", type=int, default=8000)
    servep.add_argument("--scenario", default=None)
    servep.add_argument("--out", default=None,
                        help="directory for emitted session audio")
    servep.add_argument("--realtime-factor", type=float, default=0.0,
                        help="virtual seconds per wall second; 0 = manual "
                             "stepping via POST /api/advance")
    servep.add_argument("--frontend", default=None,
                        help="directory of built UI assets to serve at /")
    servep.set_defaults(fn=cmd_serve)

    profp = sub.add_parser("profile", help="profile tools")
    profsub = profp.add_subparsers(dest="profile_command", required=True)
    valp = profsub.add_parser("validate", help="check a profile file")
    valp.add_argument("file")
    valp.set_defaults(fn=cmd_profile_validate)
    defp = profsub.add_parser("default", help="print the factory default profile")
    defp.set_defaults(fn=cmd_profile_default)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
