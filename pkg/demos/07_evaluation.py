"""Score a directory of generated images against reference annotations.

The report combines three views: box-overlap quality (sam_iou), label-to-crop
agreement in the encoder's feature space (crop_clip), and a distribution
distance between generated and reference feature clouds (fid).  Here the
"predictions" are the references themselves with one deliberately corrupted
entry, so every metric moves exactly the way it should.
"""

import numpy as np

from learn.boxes import BoundingBox, Layout, LayoutElement, box_iou
from learn.encoders import encode_image, toy_encoder
from learn.metrics import (
    build_report,
    clarity_metrics,
    fid_score,
    mask_from_box,
    sam_iou,
)


def main():
    enc = toy_encoder()
    rng = np.random.default_rng(0)

    # two reference scenes: a box each
    refs = [
        (BoundingBox(0.1, 0.1, 0.4, 0.4), "red-square"),
        (BoundingBox(0.5, 0.5, 0.4, 0.4), "blue-disc"),
    ]
    perfect = Layout(elements=[LayoutElement(lbl, box) for box, lbl in refs])
    shifted = Layout(elements=[
        LayoutElement("red-square", BoundingBox(0.2, 0.2, 0.4, 0.4)),  # off by 0.1
        LayoutElement("blue-disc", BoundingBox(0.5, 0.5, 0.4, 0.4)),
    ])
    masks = [mask_from_box(box, lbl, 64, 64) for box, lbl in refs]
    print(f"sam_iou perfect layout:  {sam_iou(perfect, masks):.1f}")
    print(f"sam_iou shifted layout:  {sam_iou(shifted, masks):.1f}")
    print(f"  (box_iou of the shifted pair alone: "
          f"{box_iou(refs[0][0], shifted.elements[0].box):.3f})")

    # fid on feature clouds: identical, then mean-shifted
    feats = rng.standard_normal((24, 8))
    print(f"\nfid identical sets:      {fid_score(feats, feats.copy()):.6f}")
    shift = feats + np.array([1.0] + [0.0] * 7)
    print(f"fid after unit mean shift: {fid_score(feats, shift):.6f}")

    # clarity on a flat image vs a split one
    flat = np.full((16, 16, 3), 0.5)
    split = np.zeros((16, 16, 3))
    split[:, 8:] = 1.0
    print(f"\nclarity flat image:      {clarity_metrics(flat)}")
    lv, cl = clarity_metrics(split)
    print(f"clarity half/half split: ({lv:.3f}, {cl:.3f})")

    # a combined report over two items
    img = rng.random((32, 32, 3))
    items = [
        {"id": "scene-0", "sam_iou": sam_iou(perfect, masks), "crop_clip": None},
        {"id": "scene-1", "sam_iou": sam_iou(shifted, masks), "crop_clip": None},
    ]
    a = encode_image(enc, img).values
    b = encode_image(enc, 1.0 - img).values
    report = build_report(items, fid=fid_score(np.stack([a, b]), np.stack([a, b])))
    print("\naggregated report:")
    for key, value in report.to_dict().items():
        if key != "items":
            print(f"  {key}: {value}")


if __name__ == "__main__":
    main()
