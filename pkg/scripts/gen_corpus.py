"""Regenerate the checked-in synthetic mini-corpus under corpus/.

The corpus is fully determined by the generator seeds, so this script is
only needed when the synthetic world changes; tests/test_synthetic.py
guards against accidental drift between the generator and the checked-in
files.
"""

from __future__ import annotations

import shutil
from pathlib import Path

from veraser import synthetic as syn

OUT_DIR = Path(__file__).resolve().parent.parent / "corpus"

CORPUS_SEEDS = list(range(50))
CORPUS_OBJECT_COUNTS = [2 + seed % 4 for seed in CORPUS_SEEDS]
CORPUS_KS = [1, 2]


def main() -> None:
    if OUT_DIR.exists():
        shutil.rmtree(OUT_DIR)
    manifest = syn.write_corpus(OUT_DIR, CORPUS_SEEDS, CORPUS_OBJECT_COUNTS, ks=CORPUS_KS)
    n_lines = len(manifest.read_text().splitlines())
    print(f"wrote {len(CORPUS_SEEDS)} scenes, {n_lines} samples to {OUT_DIR}")


if __name__ == "__main__":
    main()
