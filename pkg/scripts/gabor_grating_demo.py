"""Show which Gabor kernel responds most strongly to a sinusoidal grating at each orientation.

    python scripts/gabor_grating_demo.py [--wavelength 16] [--size 64]
"""
import argparse

import numpy as np

from dtsr.gabor import ORIENTATIONS, build_bank, correlate_plane


def grating(n, wavelength, theta_deg):
    y, x = np.mgrid[0:n, 0:n].astype(float)
    t = np.deg2rad(theta_deg)
    return 0.5 + 0.5 * np.sin(2 * np.pi * (x * np.cos(t) + y * np.sin(t)) / wavelength)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wavelength", type=float, default=16.0)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args(argv)
    bank = build_bank()
    real = [i for i, p in enumerate(bank.params) if p.part == "real"]
    print("grating  winner(wavelength, orientation, aspect)  mean |response|")
    for theta in ORIENTATIONS:
        resp = np.abs(correlate_plane(grating(args.size, args.wavelength, theta), bank.kernels[real], "fft"))
        score = resp.mean(axis=(0, 1))
        p = bank.params[real[int(score.argmax())]]
        print(f"{theta:5d}    ({p.wavelength:4.0f}, {p.orientation:3d}, {p.aspect})"
              f"{'':22s}{score.max():.4f}")


if __name__ == "__main__":
    main()
