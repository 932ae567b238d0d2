"""How much does the template representation itself cost?

Run:  python3 demos/02_upperbound.py [out_dir]

Every ground-truth mask is encoded with the learned dictionaries, rebuilt from
its codes and placed back in its true box. The fused result is scored with
the super-pixel vote and with a per-pixel argmax.
"""
import sys
from pathlib import Path

import numpy as np

from atr.data import PALETTE, save_image, synth_generate
from atr.dictionary import learn_dictionaries
from atr.evaluation import Confusion, accumulate, format_table, metrics
from atr.pipeline import overlay, upperbound_parse

N = 120
K = PALETTE.K


def main(out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = synth_generate(7, N)
    print(f"learning {K} dictionaries (M=50, 100x100) from {N} label maps ...")
    dicts = learn_dictionaries([s.labels for s in samples], K, M=50, epochs=10)
    with_spr, without_spr = Confusion(K), Confusion(K)
    for i, s in enumerate(samples):
        labels = upperbound_parse(s, dicts)
        accumulate(with_spr, labels, s.labels)
        accumulate(without_spr, upperbound_parse(s, dicts, seg=None), s.labels)
        if i < 4:
            save_image(np.concatenate([overlay(s.image, s.labels), overlay(s.image, labels)], axis=1), out_dir / f"upperbound_{i}.png")
    print(format_table({"super-pixel vote": metrics(with_spr), "per-pixel argmax": metrics(without_spr)}))
    print(f"side-by-side overlays (truth | rebuilt) in {out_dir}")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out"))
