import logging
from pathlib import Path
from typing import Dict, List, Sequence

import config
from disclab.errors import DomainError
from disclab.randmat_core import SymMatrix

logger = logging.getLogger(__name__)


def write_fixture(path: Path, Ws: Sequence[SymMatrix]) -> None:
    """Write a matrix family as back-to-back binary matrices"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        for W in Ws:
            f.write(W.to_bytes())


def read_fixture(path: Path) -> List[SymMatrix]:
    """
    Read every matrix in a fixture file.

    Raises:
        DomainError: on a truncated record or an empty file
    """
    payload = Path(path).read_bytes()
    family = []
    offset = 0
    while offset < len(payload):
        W, used = SymMatrix.from_bytes(payload[offset:])
        family.append(W)
        offset += used
    if not family:
        raise DomainError(f"fixture {path} holds no matrices")
    return family


class FixtureStore:
    """Cached access to the binary matrix fixtures under one directory"""

    def __init__(self, fixtures_dir: str = None):
        self.fixtures_dir = Path(fixtures_dir or config.FIXTURES_DIR)
        self._cache: Dict[Path, List[SymMatrix]] = {}

    def _resolve(self, name: str) -> Path:
        path = Path(name)
        if path.is_absolute() or path.exists():
            return path
        if path.suffix != ".bin":
            path = path.with_suffix(".bin")
        return self.fixtures_dir / path

    def load(self, name: str) -> List[SymMatrix]:
        """Family stored under `name` (a path, or a name inside the store)"""
        path = self._resolve(name)
        if path not in self._cache:
            if not path.exists():
                raise DomainError(f"fixture not found: {path}")
            self._cache[path] = read_fixture(path)
            logger.debug("loaded %d matrices from %s", len(self._cache[path]), path)
        return self._cache[path]

    def save(self, name: str, Ws: Sequence[SymMatrix]) -> Path:
        path = self._resolve(name)
        write_fixture(path, Ws)
        self._cache[path] = list(Ws)
        return path

    def names(self) -> List[str]:
        if not self.fixtures_dir.exists():
            return []
        return sorted(p.stem for p in self.fixtures_dir.glob("*.bin"))


# Singleton instance
_fixture_store = None


def get_fixture_store() -> FixtureStore:
    """Get or create FixtureStore instance"""
    global _fixture_store
    if _fixture_store is None:
        _fixture_store = FixtureStore()
    return _fixture_store
