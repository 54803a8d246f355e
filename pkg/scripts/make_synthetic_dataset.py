#!/usr/bin/env python3
"""Generate a synthetic dataset file with a chosen label distribution.

Defaults reproduce the public corpus statistics (5728 posts: 3050
non-hostile, fake 1144, hate 792, offensive 742, defamation 564), which
is handy for exercising the preprocess/split path at full size without
the real data. Text content is filler; only ids and labels matter.
"""

import argparse
import csv
import sys

FINE_ORDER = ("fake", "hate", "offensive", "defamation")


def build_rows(non_hostile, fake, hate, offensive, defamation, total):
    n_hostile = total - non_hostile
    tag_queue = (
        ["fake"] * fake + ["hate"] * hate + ["offensive"] * offensive + ["defamation"] * defamation
    )
    if len(tag_queue) < n_hostile:
        raise SystemExit("fine tag counts must cover every hostile row")
    n_double = len(tag_queue) - n_hostile
    if n_double > n_hostile:
        raise SystemExit("too many fine tags for the number of hostile rows")
    rows = [(f"n{i}", "aam khabar sach baat", "non-hostile") for i in range(non_hostile)]
    front, back = 0, len(tag_queue) - 1
    for i in range(n_hostile):
        if i < n_double:
            labels = f"{tag_queue[front]}|{tag_queue[back]}"
            front += 1
            back -= 1
        else:
            labels = tag_queue[front]
            front += 1
        rows.append((f"h{i}", "buri khabar jhooth nafrat", labels))
    return rows


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output csv path")
    parser.add_argument("--total", type=int, default=5728)
    parser.add_argument("--non-hostile", type=int, default=3050)
    parser.add_argument("--fake", type=int, default=1144)
    parser.add_argument("--hate", type=int, default=792)
    parser.add_argument("--offensive", type=int, default=742)
    parser.add_argument("--defamation", type=int, default=564)
    args = parser.parse_args()
    rows = build_rows(
        args.non_hostile, args.fake, args.hate, args.offensive, args.defamation, args.total
    )
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "text", "labels"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}", file=sys.stderr)
