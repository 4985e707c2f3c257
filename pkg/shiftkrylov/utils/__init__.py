import logging
import shutil
import tarfile
from pathlib import Path

logger = logging.getLogger("shiftkrylov")

ARCHIVE_SUFFIXES = (".tar.gz", ".tgz", ".tar")


def _strip_suffix(path: Path) -> Path:
    for suffix in ARCHIVE_SUFFIXES:
        if path.name.endswith(suffix):
            return path.with_name(path.name[: -len(suffix)])
    return path


def clean_up_dir(path: Path):
    for item in path.rglob("__MACOSX"):
        if item.is_dir():
            shutil.rmtree(item)
    for item in path.rglob(".DS_Store"):
        if item.is_file():
            item.unlink()


def extract_archives(path: Path):
    """
    Unpacks all tarballs within `path`, flattening the single top-level
    directory SuiteSparse archives carry, and removes the archives.
    """
    archives = [p for p in path.rglob("*") if p.is_file() and p.name.endswith(ARCHIVE_SUFFIXES)]
    for archive in archives:
        out_dir = _strip_suffix(archive)

        # the intended output path already exists (extracted by an earlier run)
        if out_dir.exists() and out_dir.is_file():
            logger.debug(f"Skipping {archive} as an item with the same name already exists.")
            archive.unlink()
            continue

        logger.debug(f"Extracting: {archive}")
        out_dir.mkdir(exist_ok=True)
        with tarfile.open(archive, "r:*") as tar:
            for member in tar.getmembers():
                target = (out_dir / member.name).resolve()
                if not target.is_relative_to(out_dir.resolve()):
                    raise ValueError(f"refusing to extract {member.name} outside {out_dir}")
            tar.extractall(out_dir)

        clean_up_dir(out_dir)
        contents = list(out_dir.iterdir())

        # the archive holds a single dir with the same name: move its contents up
        if len(contents) == 1 and contents[0].name == out_dir.name and contents[0].is_dir():
            sub_item = contents[0]
            logger.debug(f"Flattening nested directory of {archive}")
            for f in sub_item.iterdir():
                shutil.move(str(f), out_dir)
            sub_item.rmdir()

        archive.unlink()
