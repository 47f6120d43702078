#!/usr/bin/env python3
"""Convert a geom-gcn style benchmark (texas, wisconsin, cornell, ...) into
the dataset JSON read by chatgnn.

Inputs, as laid out in the geom-gcn repository:
  new_data/<name>/out1_node_feature_label.txt
      header line, then `node_id<TAB>f1,f2,...<TAB>label`
  new_data/<name>/out1_graph_edges.txt
      header line, then `src<TAB>dst`
  splits/<name>_split_0.6_0.2_<i>.npz
      boolean arrays `train_mask`, `val_mask`, `test_mask`

Field mapping:
  node_id        -> row index into `features` and `labels`
  feature column -> `features[node_id]` (binary bag of words)
  label column   -> `labels[node_id]`
  edge rows      -> `edges`; the graph is stored undirected and duplicate
                    or reversed pairs are dropped, self loops are removed
  split masks    -> `splits[i].train/val/test` as sorted node indices
  normalize_features stays false so features are used as published; pass
                    --normalize to L1-normalize rows on load instead.

Usage:
  python scripts/convert_geom_gcn.py --root path/to/geom-gcn --name texas \
      --out data/texas.json
"""

import argparse
import glob
import json
import os
import re

import numpy as np


def read_nodes(path):
    features, labels = {}, {}
    with open(path) as f:
        next(f)
        for line in f:
            node, feats, label = line.rstrip("\n").split("\t")
            node = int(node)
            features[node] = [float(x) for x in feats.split(",")]
            labels[node] = int(label)
    n = len(features)
    if sorted(features) != list(range(n)):
        raise SystemExit(f"{path}: node ids are not 0..{n - 1}")
    return [features[i] for i in range(n)], [labels[i] for i in range(n)]


def read_edges(path, n):
    edges = set()
    with open(path) as f:
        next(f)
        for line in f:
            u, v = (int(x) for x in line.split())
            if u == v:
                continue
            if not (0 <= u < n and 0 <= v < n):
                raise SystemExit(f"{path}: edge ({u}, {v}) out of range")
            edges.add((min(u, v), max(u, v)))
    return sorted(edges)


def read_splits(root, name):
    pattern = os.path.join(root, "splits", f"{name}_split_0.6_0.2_*.npz")
    files = glob.glob(pattern)
    if not files:
        raise SystemExit(f"no split files match {pattern}")
    files.sort(key=lambda p: int(re.search(r"_(\d+)\.npz$", p).group(1)))
    splits = []
    for path in files:
        masks = np.load(path)
        splits.append(
            {
                part: np.flatnonzero(masks[f"{part}_mask"]).tolist()
                for part in ("train", "val", "test")
            }
        )
    return splits


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", required=True, help="geom-gcn checkout")
    ap.add_argument("--name", required=True, help="dataset name, e.g. texas")
    ap.add_argument("--out", required=True, help="output JSON path")
    ap.add_argument(
        "--normalize", action="store_true", help="L1-normalize feature rows on load"
    )
    args = ap.parse_args()

    base = os.path.join(args.root, "new_data", args.name)
    features, labels = read_nodes(os.path.join(base, "out1_node_feature_label.txt"))
    edges = read_edges(os.path.join(base, "out1_graph_edges.txt"), len(labels))
    dataset = {
        "name": args.name,
        "num_nodes": len(labels),
        "directed": False,
        "normalize_features": args.normalize,
        "num_classes": max(labels) + 1,
        "edges": [list(e) for e in edges],
        "features": features,
        "labels": labels,
        "splits": read_splits(args.root, args.name),
    }
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w") as f:
        json.dump(dataset, f)
    print(
        f"{args.name}: {len(labels)} nodes, {len(edges)} edges, "
        f"{len(features[0])} features, {len(dataset['splits'])} splits -> {args.out}"
    )


if __name__ == "__main__":
    main()
