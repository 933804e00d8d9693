"""Run the GEO loop on one instance over five seeds (default burma14, desk preset)."""
import sys

from tngeo import cli

if __name__ == "__main__":
    argv = ["--mode", "geo", "--seeds", "0-4", "--out", "results/geo", "-v"]
    if not any(a == "--instance" for a in sys.argv[1:]):
        argv += ["--instance", "burma14"]
    sys.exit(cli.main(argv + sys.argv[1:]))
