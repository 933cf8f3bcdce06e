"""Module entry point: `python -m reactive_avatar`."""

from .cli import main

if __name__ == "__main__":
    main()
