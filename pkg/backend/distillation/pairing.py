"""
Mutual nearest-neighbour ("best buddies") pairing and the pair file format:
one `structure_id<TAB>appearance_id` line per unordered pair plus a
`<file>.meta.json` sidecar.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple

from distillation.descriptor_index import DescriptorIndex, knn, knn_table
from utils.errors import PairFileError, SpliceIOError

logger = logging.getLogger(__name__)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


@dataclass
class PairSet:
    pairs: List[Tuple[str, str]]
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)

    def training_pairs(self) -> List[Tuple[str, str]]:
        """Every stored pair in both (structure, appearance) orders"""
        ordered = []
        for a, b in self.pairs:
            ordered += [(a, b), (b, a)]
        return ordered

    def image_ids(self) -> List[str]:
        return sorted({i for pair in self.pairs for i in pair})

    def save(self, path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("".join(f"{a}\t{b}\n" for a, b in self.pairs))
            meta_path(path).write_text(json.dumps(self.provenance, indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise SpliceIOError(f"cannot write pair file {path}: {exc}") from exc
        return path

    @classmethod
    def load(cls, path) -> "PairSet":
        path = Path(path)
        if not path.is_file():
            raise SpliceIOError(f"pair file not found: {path}")
        pairs = []
        for number, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not all(f.strip() for f in fields):
                raise PairFileError(f"expected 'structure_id<TAB>appearance_id', got {line!r}", number)
            a, b = (f.strip() for f in fields)
            if a == b:
                raise PairFileError(f"self-pair {a!r}", number)
            pairs.append((a, b))

        provenance = {}
        if meta_path(path).is_file():
            try:
                provenance = json.loads(meta_path(path).read_text())
            except ValueError as exc:
                raise PairFileError(f"unreadable metadata {meta_path(path)}: {exc}") from exc
        return cls(pairs=pairs, provenance=provenance)


def mutual_knn_pairs(index: DescriptorIndex, k: int = 10) -> PairSet:
    """Pairs (a, b), a before b, with b among a's k nearest neighbours and a among b's"""
    table = knn_table(index, k)
    neighbours = [set(row.tolist()) for row in table]
    pairs = []
    for i, row in enumerate(table):
        for j in sorted(row.tolist()):
            if i < j and i in neighbours[j]:
                pairs.append((index.image_ids[i], index.image_ids[j]))

    provenance = {
        "k": k,
        "window": index.window,
        "metric": index.metric,
        "num_images": len(index),
        "num_pairs": len(pairs),
    }
    provenance.update(index.provenance)
    logger.info("Kept %d mutual pairs among %d images (K=%d)", len(pairs), len(index), k)
    return PairSet(pairs=pairs, provenance=provenance)


def verify_pairs(index: DescriptorIndex, pair_set: PairSet, k: int = None) -> List[Tuple[str, str]]:
    """Pairs that fail the mutual-neighbour check (empty when all pass)"""
    k = k or pair_set.provenance["k"]
    failures = []
    for a, b in pair_set.pairs:
        if b not in knn(index, a, k) or a not in knn(index, b, k):
            failures.append((a, b))
    return failures
