"""Regenerate the calibrated H20 fixture from the published case-study numbers.

    python scripts/derive_h20_profile.py [--out PATH]
"""

import argparse
from pathlib import Path

from prfaas.calibration import derive_h20_profile
from prfaas.profiles import save_profile

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "prfaas" / "data" / "internal-1t-h20-calibrated.json"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()
    d = derive_h20_profile()
    for col, rate in d.decode_rates.items():
        print(f"decode rate from {col:12s}: {rate:8.2f} tok/s")
    print(f"decode rate used           : {d.decode_token_rate:8.2f} tok/s")
    for s, lat in d.knots:
        print(f"T_prefill({s:6d}) = {lat:.4f} s")
    save_profile(d.profile, args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
