"""Train the two desk-scale regressors on synthetic figures and parse new ones.

Run:  python3 demos/03_train_and_parse.py [out_dir] [epochs]

A short schedule (default 8 epochs, about 10 minutes on one core) is enough to
see the parser pull away from the positional baseline. The acceptance suite
uses a longer one. Overlays of a few held-out parses are written to out_dir.
"""
import logging
import sys
from pathlib import Path

import numpy as np

from atr.data import PALETTE, save_image, synth_generate
from atr.evaluation import Confusion, accumulate, format_table, metrics
from atr.nets import TrainConfig
from atr.pipeline import FitConfig, fit_models, overlay, parse_image, person_box, positional_baseline, save_model

K = PALETTE.K


def main(out_dir, epochs):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = synth_generate(100, 120), synth_generate(200, 30)

    # dictionaries from the person crops, then both nets on the 24-fold augmented crops
    schedule = TrainConfig(lr=0.01, epochs=epochs)
    fit = fit_models(train, FitConfig(template=schedule, shape=schedule))
    save_model(fit.model, out_dir / "dict.atrd", out_dir / "template.atrn", out_dir / "shape.atrn")
    print("template loss per epoch:", " ".join(f"{v:.2f}" for v in fit.template_losses))
    print("shape loss per epoch:   ", " ".join(f"{v:.2f}" for v in fit.shape_losses))

    # a per-position majority vote over the training maps is the bar to clear
    baseline = positional_baseline([s.labels for s in train], K)
    rows = {name: Confusion(K) for name in ("positional baseline", "parser", "parser, no super-pixels")}
    for i, s in enumerate(test):
        result = parse_image(fit.model, s.image, person_box(s))
        accumulate(rows["positional baseline"], baseline, s.labels)
        accumulate(rows["parser"], result.labels, s.labels)
        accumulate(rows["parser, no super-pixels"], parse_image(fit.model, s.image, person_box(s), seg=None).labels, s.labels)
        if i < 6:
            panel = np.concatenate([s.image, overlay(s.image, s.labels), overlay(s.image, result.labels)], axis=1)
            save_image(panel, out_dir / f"parse_{i}.png")
    print(format_table({name: metrics(c) for name, c in rows.items()}))
    print(f"model and panels (image | truth | parse) in {out_dir}")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out"), int(sys.argv[2]) if len(sys.argv) > 2 else 8)
