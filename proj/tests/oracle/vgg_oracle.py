#!/usr/bin/env python3
#
# SPDX-License-Identifier: Apache-2.0
#
"""Compares the C++ VGG-19 taps against torchvision on random weights."""
import argparse
import os
import subprocess
import sys

import numpy as np
import torch
from torchvision.models import vgg19

MID_END = 14   # through relu3_2
DEEP_END = 23  # through relu4_2
TOLERANCE = 1e-6


def parse_probe(text):
    taps = {}
    lines = text.split("\n")
    i = 0
    while i < len(lines) and lines[i]:
        name, *dims = lines[i].split()
        shape = tuple(int(d) for d in dims)
        count = int(np.prod(shape))
        taps[name] = np.array([float(v) for v in lines[i + 1:i + 1 + count]]).reshape(shape)
        i += 1 + count
    return taps


def main(argv):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--probe", required=True)
    ap.add_argument("--converter", required=True)
    ap.add_argument("--work", required=True)
    args = ap.parse_args(argv)
    os.makedirs(args.work, exist_ok=True)

    torch.manual_seed(0)
    model = vgg19(weights=None).eval()
    state_path = os.path.join(args.work, "vgg19-random.pth")
    torch.save(model.state_dict(), state_path)
    weights_path = os.path.join(args.work, "vgg19-random.tgvgg")
    subprocess.run([sys.executable, args.converter, "--state-dict", state_path, "--out", weights_path],
                   check=True, stdout=subprocess.DEVNULL)

    rng = np.random.default_rng(1)
    h, w = 40, 36
    gray = rng.uniform(0.0, 1.0, size=(h, w))
    input_path = os.path.join(args.work, "input.txt")
    with open(input_path, "w") as f:
        f.write(f"{h} {w}\n")
        f.write("\n".join(f"{v:.17g}" for v in gray.flatten()))
        f.write("\n")
    out = subprocess.run([args.probe, weights_path, input_path], check=True, capture_output=True, text=True).stdout
    got = parse_probe(out)

    # The C++ side stores float32 weights and computes in float64.
    features = model.features.double()
    for p in features.parameters():
        p.data = p.data.float().double()
    mean = torch.tensor([0.485, 0.456, 0.406], dtype=torch.float64).view(1, 3, 1, 1)
    std = torch.tensor([0.229, 0.224, 0.225], dtype=torch.float64).view(1, 3, 1, 1)
    x = (torch.from_numpy(gray).view(1, 1, h, w).repeat(1, 3, 1, 1) - mean) / std
    with torch.no_grad():
        want = {"mid": features[:MID_END](x).numpy(), "deep": features[:DEEP_END](x).numpy()}

    ok = True
    for name, ref in want.items():
        if got[name].shape != ref.shape:
            print(f"{name}: shape {got[name].shape} vs {ref.shape}")
            ok = False
            continue
        err = np.abs(got[name] - ref).max() / max(np.abs(ref).max(), 1e-30)
        print(f"{name} {ref.shape}: max error relative to peak {err:.3e} (< {TOLERANCE:g})")
        ok = ok and err < TOLERANCE
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
