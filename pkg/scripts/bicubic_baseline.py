"""Mean Y-channel PSNR/SSIM of the bicubic baseline on a folder of HR PNGs (e.g. Set5).

    python scripts/bicubic_baseline.py path/to/Set5 [--scales 2 3 4] [--crop N]
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

from dtsr.config import MetricConfig
from dtsr.metrics import psnr_y, ssim_y
from dtsr.resample import bicubic_baseline
from dtsr.tensor import load_image


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("hr_dir", type=Path)
    ap.add_argument("--scales", type=int, nargs="+", default=[2, 3, 4])
    ap.add_argument("--crop", type=int, help="border crop in pixels (default: the scale factor)")
    args = ap.parse_args(argv)
    files = sorted(p for p in args.hr_dir.iterdir() if p.suffix.lower() == ".png")
    if not files:
        sys.exit(f"no PNG files in {args.hr_dir}")
    cfg = MetricConfig(border_crop=args.crop)
    hrs = [(p.stem, load_image(p)) for p in files]
    t0 = time.perf_counter()
    for s in args.scales:
        ps, ss = [], []
        for name, hr in hrs:
            sr, gt = bicubic_baseline(hr, s)
            ps.append(psnr_y(sr, gt, cfg, s))
            ss.append(ssim_y(sr, gt, cfg, s))
            print(f"x{s} {name:12s} {ps[-1]:7.3f} dB  {ss[-1]:.4f}")
        print(f"x{s} {'mean':12s} {np.mean(ps):7.3f} dB  {np.mean(ss):.4f}")
    print(f"{time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
