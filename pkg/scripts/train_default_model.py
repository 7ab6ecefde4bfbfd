"""Regenerate the shipped estimator: nominal training grid -> KAN -> models/kan_default.json."""
import argparse
import tempfile
from pathlib import Path

from kan_koopman import pipeline
from kan_koopman.config import DEFAULT_MODEL, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="nominal")
    ap.add_argument("--out", default=str(DEFAULT_MODEL))
    args = ap.parse_args()

    sc = load_config(args.config)
    with tempfile.TemporaryDirectory() as tmp:
        files = pipeline.generate_training_data(sc, tmp)
        x, y = pipeline.read_dataset(files)
        res = pipeline.train_estimator(sc, x, y)
        out = Path(args.out)
        pipeline.save_training(res, sc, out, out.with_name(out.stem + "_loss.csv"), files)
    print(f"{len(x)} rows, loss {res.history[0]:.4g} -> {res.history[-1]:.4g}")
    print(f"train rmse {res.train_rmse:.4f} K, held-out rmse {res.holdout_rmse:.4f} K -> {out}")


if __name__ == "__main__":
    main()
