#!/usr/bin/env python3
"""Regenerates the small synthetic page corpora under tests/fixtures/.

Pages are drawn procedurally (white background, gray text stripes, black
title bars, bulleted lists, ruled tables, tinted figures) and annotated in
COCO format with PubLayNet category names. Output is deterministic.
"""
import json
import os
import random

from PIL import Image, ImageDraw

HERE = os.path.dirname(os.path.abspath(__file__))
CATEGORIES = [(1, "text"), (2, "title"), (3, "list"), (4, "table"), (5, "figure")]
CAT_ID = {name: cid for cid, name in CATEGORIES}


def draw_object(draw, rng, label, x, y, w, h):
    if label == "text":
        step = 4
        for yy in range(y + 1, y + h - 1, step):
            end = x + w if yy + step < y + h - 1 else x + int(w * rng.uniform(0.4, 0.9))
            draw.rectangle([x, yy, end - 1, yy + 1], fill=(90, 90, 90))
    elif label == "title":
        draw.rectangle([x, y, x + w - 1, y + h - 1], fill=(20, 20, 20))
    elif label == "list":
        step = 6
        for yy in range(y + 1, y + h - 2, step):
            draw.rectangle([x, yy, x + 2, yy + 2], fill=(0, 0, 0))
            draw.rectangle([x + 5, yy, x + int(w * rng.uniform(0.5, 1.0)) - 1, yy + 1], fill=(110, 110, 110))
    elif label == "table":
        draw.rectangle([x, y, x + w - 1, y + h - 1], outline=(40, 40, 40))
        for yy in range(y, y + h, max(4, h // 5)):
            draw.line([x, yy, x + w - 1, yy], fill=(60, 60, 60))
        for xx in range(x, x + w, max(6, w // 4)):
            draw.line([xx, y, xx, y + h - 1], fill=(60, 60, 60))
    elif label == "figure":
        tint = (rng.randint(60, 200), rng.randint(60, 200), rng.randint(120, 230))
        draw.rectangle([x, y, x + w - 1, y + h - 1], fill=tint)
        cx, cy = x + w // 2, y + h // 2
        r = max(2, min(w, h) // 4)
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=(250, 250, 250))
    else:
        draw.rectangle([x, y, x + w - 1, y + h - 1], fill=(180, 40, 40))


def random_page(rng, width, height, n_objects, labels=None):
    """Stacks n_objects full-width or half-width blocks down the page."""
    objects = []
    margin = 6
    y = margin
    avail = height - 2 * margin
    slot = avail // n_objects
    for i in range(n_objects):
        label = labels[i] if labels else rng.choice([c[1] for c in CATEGORIES])
        h = max(4, int(slot * rng.uniform(0.55, 0.85)))
        if label == "title":
            h = max(4, min(h, 8))
        if rng.random() < 0.3:
            w = (width - 2 * margin) // 2 - 2
            x = margin if rng.random() < 0.5 else width // 2 + 2
        else:
            w = width - 2 * margin
            x = margin
        objects.append((label, x, y, w, h))
        y += slot
    return objects


def write_corpus(dirname, pages, width=96, height=128):
    out = os.path.join(HERE, dirname)
    os.makedirs(os.path.join(out, "images"), exist_ok=True)
    images, annotations = [], []
    ann_id = 1
    for idx, (objects, seed) in enumerate(pages):
        rng = random.Random(seed)
        img = Image.new("RGB", (width, height), (255, 255, 255))
        draw = ImageDraw.Draw(img)
        for label, x, y, w, h in objects:
            draw_object(draw, rng, label, x, y, w, h)
            annotations.append({
                "id": ann_id,
                "image_id": idx + 1,
                "category_id": CAT_ID.get(label, 99),
                "bbox": [x, y, w, h],
                "area": w * h,
                "iscrowd": 0,
            })
            ann_id += 1
        fname = "page_%03d.png" % idx
        img.save(os.path.join(out, "images", fname))
        images.append({"id": idx + 1, "file_name": fname, "width": width, "height": height})
    categories = [{"id": cid, "name": name, "supercategory": ""} for cid, name in CATEGORIES]
    if any(a["category_id"] == 99 for a in annotations):
        categories.append({"id": 99, "name": "footnote", "supercategory": ""})
    with open(os.path.join(out, "annotations.json"), "w") as f:
        json.dump({"images": images, "annotations": annotations, "categories": categories}, f, indent=1)


def main():
    rng = random.Random(20240601)

    # 16-page corpus; the first page carries every category so any batch
    # containing it touches the full label embedding table.
    pages16 = []
    first = random_page(rng, 96, 128, 5, ["title", "text", "list", "table", "figure"])
    pages16.append((first, 1000))
    for i in range(1, 16):
        pages16.append((random_page(rng, 96, 128, rng.randint(2, 4)), 1000 + i))
    write_corpus("pages16", pages16)

    # Two hand-placed pages.
    pages2 = [
        ([("title", 8, 6, 80, 8), ("text", 8, 20, 80, 50), ("figure", 8, 76, 80, 44)], 1),
        ([("text", 6, 6, 40, 116), ("table", 50, 6, 40, 60)], 2),
    ]
    write_corpus("pages2", pages2)

    # One regular page, one 12-object page, one page with an unknown category.
    crowded = random_page(rng, 96, 128, 12, ["text"] * 12)
    filters = [
        ([("title", 8, 6, 80, 8), ("text", 8, 20, 80, 90)], 3),
        (crowded, 4),
        ([("text", 8, 8, 80, 60), ("footnote", 8, 100, 80, 10)], 5),
    ]
    write_corpus("filters", filters)


if __name__ == "__main__":
    main()
