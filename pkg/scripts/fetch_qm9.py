#!/usr/bin/env python3
"""Download and unpack the QM9 per-molecule XYZ archive.

Network access required; run this once out of band, then point
``dataset.path`` at the output directory with ``dataset.schema =
builtin:qm9``. The tool itself never downloads anything.
"""
import argparse
import sys
import tarfile
import urllib.request
from pathlib import Path

# figshare record "dsgdb9nsd.xyz.tar.bz2" (133,885 molecules)
URL = "https://figshare.com/ndownloader/files/3195389"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", default="qm9_xyz", help="output directory")
    parser.add_argument("--url", default=URL)
    args = parser.parse_args()

    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    archive = dest / "dsgdb9nsd.xyz.tar.bz2"
    if not archive.exists():
        print(f"downloading {args.url} ...", file=sys.stderr)
        urllib.request.urlretrieve(args.url, archive)
    print(f"unpacking into {dest} ...", file=sys.stderr)
    with tarfile.open(archive, "r:bz2") as tar:
        tar.extractall(dest, filter="data")
    count = sum(1 for _ in dest.glob("*.xyz"))
    print(f"{count} molecules under {dest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
