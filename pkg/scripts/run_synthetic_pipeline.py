"""Write a synthetic dataset, run the full pipeline on it and print the report."""

import argparse
from pathlib import Path

from gestaltfuse.cli import main as cli


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("workdir", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-users", type=int, default=50)
    p.add_argument("--n-videos", type=int, default=100)
    args = p.parse_args()

    data = args.workdir / "data"
    out = args.workdir / "output"
    synth = ["synth", "--out", str(data), "--seed", str(args.seed),
             "--n-users", str(args.n_users), "--n-videos", str(args.n_videos)]
    if cli(synth) != 0:
        raise SystemExit(1)
    if cli(["pipeline", "--config", str(data / "pipeline_config.json"), "--out", str(out)]) != 0:
        raise SystemExit(1)
    print()
    print((out / "report.md").read_text(), end="")


if __name__ == "__main__":
    main()
