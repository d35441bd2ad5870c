"""Calibrated run3 against run4 on synthetic media with gestalt-dependent audio accuracy."""

import argparse

from gestaltfuse.experiments import gestalt_effect
from gestaltfuse.synth import MediaSpec


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[1])
    p.add_argument("--n-videos", type=int, default=1000)
    p.add_argument("--n-train", type=int, default=800)
    p.add_argument("--audio-sd-high", type=float, default=MediaSpec.audio_sd_high)
    p.add_argument("--audio-sd-low", type=float, default=MediaSpec.audio_sd_low)
    p.add_argument("--threshold", type=float, default=MediaSpec.gestalt_threshold)
    args = p.parse_args()

    media = MediaSpec(
        audio_sd_high=args.audio_sd_high,
        audio_sd_low=args.audio_sd_low,
        gestalt_threshold=args.threshold,
    )
    print("seed\ttarget\trun3_val\trun4_val\trun3_test\trun4_test")
    for seed in args.seeds:
        for r in gestalt_effect(seed, args.n_videos, args.n_train, media):
            print(
                f"{seed}\t{r.target.value}\t{r.run3_validation:.4f}\t{r.run4_validation:.4f}"
                f"\t{r.run3_test:.4f}\t{r.run4_test:.4f}"
            )


if __name__ == "__main__":
    main()
