"""Writes the desk10 source photographs to data/desk_sources.

Each class of the desk10 corpus is the set of augmented crops of one of the
public-domain sample images shipped with scikit-image. Images are rescaled
so the longer side is 256 px and stored as 8-bit RGB PNG.
"""

import argparse
import json
from pathlib import Path

import numpy as np
import skimage.data
import skimage.transform
from PIL import Image

CLASSES = [
    "astronaut",
    "brick",
    "chelsea",
    "coffee",
    "grass",
    "gravel",
    "hubble_deep_field",
    "immunohistochemistry",
    "rocket",
    "retina",
]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "desk_sources"))
    ap.add_argument("--max-side", type=int, default=256)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"corpus": "desk10", "max_side": args.max_side, "classes": []}
    for name in CLASSES:
        im = getattr(skimage.data, name)()
        if im.ndim == 2:
            im = np.stack([im] * 3, -1)
        im = im[..., :3].astype(np.float32) / 255.0
        scale = args.max_side / max(im.shape[:2])
        im = skimage.transform.rescale(im, scale, channel_axis=-1, anti_aliasing=True)
        px = np.clip(np.rint(im * 255.0), 0, 255).astype(np.uint8)
        fname = f"{name}.png"
        Image.fromarray(px).save(out / fname)
        manifest["classes"].append({"name": name, "file": fname, "shape": list(px.shape)})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
