"""Gradient training against two-site DMRG sweeps on ulysses16 at chi = 16."""
import sys

from tngeo import cli

if __name__ == "__main__":
    argv = ["--mode", "trainer-compare", "--instance", "ulysses16", "--chi", "16",
            "--max-epochs", "10000", "--out", "results/trainers"]
    sys.exit(cli.main(argv + sys.argv[1:]))
