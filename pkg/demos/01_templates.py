"""Learn active templates for a few labels and look at how well they rebuild masks.

Run:  python3 demos/01_templates.py [out_dir]

Writes a sheet of the learned atoms per label and prints the mean absolute
reconstruction error of held-out masks for the NMF, l1 and PCA variants.
"""
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from atr.data import PALETTE, synth_generate
from atr.dictionary import extract_label_masks, learn_dictionary, resize_mask

SIZE = 40  # normalised mask side, smaller than the 100 used for real runs to keep this quick
ATOMS = 12
LABELS = ("upper-clothes", "pants", "hair", "left-arm")


def label_masks(samples, label):
    k = PALETTE.index(label)
    out = []
    for s in samples:
        m = extract_label_masks(s.labels, PALETTE.K)[k]
        if m is not None:
            out.append(resize_mask(m.values, SIZE, SIZE))
    return np.stack(out)


def atom_sheet(atoms):
    tiles = [(a / max(a.max(), 1e-12)).reshape(SIZE, SIZE) for a in atoms.T]
    row = np.concatenate([np.pad(t, 1, constant_values=1.0) for t in tiles], axis=1)
    return (255 * row).astype(np.uint8)


def main(out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    train, held_out = synth_generate(1, 300), synth_generate(2, 60)
    sheets = []
    print(f"{'label':15s} {'nmf_l2':>8s} {'nmf_l1':>8s} {'pca':>8s}   (mean abs error on held-out masks)")
    for label in LABELS:
        X, Y = label_masks(train, label), label_masks(held_out, label)
        errors = []
        for variant in ("nmf_l2", "nmf_l1", "pca"):
            d = learn_dictionary(X, ATOMS, lam=1e-3, variant=variant, epochs=10, batch=32)
            rec = d.reconstruct(d.encode(Y.reshape(len(Y), -1)))
            errors.append(np.abs(rec.reshape(Y.shape) - Y).mean())
            if variant == "nmf_l2":
                sheets.append(atom_sheet(d.atoms))
        print(f"{label:15s} " + " ".join(f"{e:8.4f}" for e in errors))
    Image.fromarray(np.concatenate(sheets, axis=0)).save(out_dir / "templates.png")
    print(f"atoms written to {out_dir / 'templates.png'} (one row per label: {', '.join(LABELS)})")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out"))
