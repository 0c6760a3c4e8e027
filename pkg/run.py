"""Simple script to run the command-line interface."""

from invest_exit.cli import cli

if __name__ == "__main__":
    cli(prog_name="run.py")
