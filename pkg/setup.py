#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Prepare a working checkout: output directories, requirements, default settings and .env."""
import argparse
import os
import subprocess
import sys
from pathlib import Path

WORK_DIRS = ('data', 'runs', 'demo_out')
ENV_TEMPLATE = "# thread count for plane sweeps, CGH channels and evaluation\nHOLO_WORKERS={workers}\n"


def install_requirements(requirements: str = 'requirements.txt') -> bool:
    print(f"\nInstalling packages from {requirements}...")
    try:
        subprocess.check_call([sys.executable, '-m', 'pip', 'install', '-r', requirements])
    except subprocess.CalledProcessError as e:
        print(f"pip failed with status {e.returncode}")
        return False
    return True


def check_numerics() -> bool:
    """A tiny FFT round trip so a broken NumPy/SciPy install shows up before the first run."""
    try:
        import numpy as np
        from scipy import fft as sfft
    except ImportError as e:
        print(f"Numeric stack unavailable: {e}")
        return False
    x = np.arange(16, dtype=np.complex128).reshape(4, 4)
    ok = np.allclose(sfft.ifft2(sfft.fft2(x, norm='ortho'), norm='ortho'), x)
    print(f"NumPy {np.__version__}, FFT round trip {'ok' if ok else 'FAILED'}")
    return ok


def setup_environment(install: bool = True, workers: int = 0) -> bool:
    print("Setting up hologram super-resolution workspace...")

    for name in WORK_DIRS:
        Path(name).mkdir(exist_ok=True)
        print(f"  {name}/")

    if install and not install_requirements():
        return False
    if not check_numerics():
        return False

    if not Path('config.json').exists():
        from holo_config import HoloSettings
        HoloSettings('config.json')
        print("Wrote default config.json")

    env = Path('.env')
    if not env.exists():
        env.write_text(ENV_TEMPLATE.format(workers=workers or os.cpu_count() or 1), encoding='utf-8')
        print(f"Wrote {env} (edit HOLO_WORKERS to change the thread count)")

    print("\nReady. Try:\n")
    print("  python launch_holo.py depth-table")
    print("  python launch_holo.py pipeline-demo --preset smoke")
    return True


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument('--no-install', action='store_true', help='skip pip install')
    parser.add_argument('--workers', type=int, default=0, help='HOLO_WORKERS for the generated .env')
    args = parser.parse_args()
    sys.exit(0 if setup_environment(not args.no_install, args.workers) else 1)
