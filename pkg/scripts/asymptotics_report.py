"""Certification report of the 1D interface identities, plus c0 against s
for the relaxed potential.

Usage: python3 scripts/asymptotics_report.py
"""

from pfopt.asymptotics import c0_identities, certification_report, format_report
from pfopt.material import PotentialParams


def main():
    print(format_report(certification_report(["obstacle", "quartic", "relaxed"])), end="")
    print("\ns,c0_def,c0_profile")
    for s in (3.0, 10.0, 1e2, 1e4, 1e6):
        d, p = c0_identities(PotentialParams(s))
        print(f"{s:g},{d:.8f},{p:.8f}")


if __name__ == "__main__":
    main()
