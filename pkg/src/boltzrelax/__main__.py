"""Entry point for `python -m boltzrelax`."""

from boltzrelax.main import entrypoint

if __name__ == "__main__":
    entrypoint()
