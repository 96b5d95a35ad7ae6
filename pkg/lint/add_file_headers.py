# lint/add_file_headers.py

"""Ensure every Python file starts with a `# <relative path>` comment.

Exits 1 when any file was rewritten so the format step fails until the change is
committed.
"""

# Standard library imports
from pathlib import Path
from sys import exit
from typing import Iterator
from typing import List

PACKAGES = ("flowdcn", "tests", "lint")


def python_files(root: Path) -> Iterator[Path]:
    for package in PACKAGES:
        if (root / package).is_dir():
            yield from sorted((root / package).rglob("*.py"))


def fix_header(path: Path, root: Path) -> bool:
    """Rewrite the path comment of one file. Returns True if the file changed."""
    header = f"# {path.relative_to(root).as_posix()}"
    lines: List[str] = path.read_text(encoding="utf-8").splitlines(keepends=True)
    if lines and lines[0].rstrip("\n") == header:
        return False
    if lines and lines[0].startswith("# ") and lines[0].rstrip().endswith(".py"):
        lines[0] = f"{header}\n"
    else:
        lines[:0] = [f"{header}\n", "\n"]
    path.write_text("".join(lines), encoding="utf-8")
    return True


def main() -> None:
    root = Path.cwd()
    changed = [p for p in python_files(root) if fix_header(p, root)]
    for path in changed:
        print(f"fixed header: {path.relative_to(root)}")
    exit(1 if changed else 0)


if __name__ == "__main__":
    main()
