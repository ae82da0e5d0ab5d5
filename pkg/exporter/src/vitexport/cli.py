"""vitexport command line: export, golden, tiny."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .archive import write_archive
from .convert import build_report, convert_state_dict, synthesize_tiny
from .golden import export_golden_taps, load_frames


def _checksum_of(path) -> int:
    import struct

    blob = Path(path).read_bytes()
    (stored,) = struct.unpack_from("<Q", blob, len(blob) - 8)
    return stored


def _cmd_export(args) -> int:
    import torch

    obj = torch.load(args.checkpoint, map_location="cpu", weights_only=True)
    sd = obj.get("state_dict", obj) if isinstance(obj, dict) else obj
    tensors, meta = convert_state_dict(sd, heads=args.heads, activation=args.activation)
    write_archive(args.out, tensors, meta)
    report = build_report(tensors, meta, _checksum_of(args.out))
    print(report.render())
    return 0


def _cmd_golden(args) -> int:
    frames = load_frames(args.frames)
    if args.limit:
        frames = frames[: args.limit]
    written = export_golden_taps(args.archive, frames, args.out)
    print(f"wrote {len(written)} golden tap archives to {args.out}")
    return 0


def _cmd_tiny(args) -> int:
    tensors, meta = synthesize_tiny(args.seed)
    write_archive(args.out, tensors, meta)
    report = build_report(tensors, meta, _checksum_of(args.out))
    print(report.render())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vitexport",
                                     description="ViT checkpoint converter and fixture generator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="convert a checkpoint into a tensor archive")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--heads", type=int, help="attention head count when not inferable")
    p.add_argument("--activation", default="quick_gelu", choices=("quick_gelu", "gelu"))

    p = sub.add_parser("golden", help="emit per-frame golden tap fixtures")
    p.add_argument("--archive", required=True)
    p.add_argument("--frames", required=True, help="image directory or packed frame container")
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=0)

    p = sub.add_parser("tiny", help="synthesize the desk-scale random archive")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        return {"export": _cmd_export, "golden": _cmd_golden, "tiny": _cmd_tiny}[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
