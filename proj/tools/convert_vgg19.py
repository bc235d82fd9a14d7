#!/usr/bin/env python3
#
# SPDX-License-Identifier: Apache-2.0
#
"""Convert torchvision VGG-19 weights (conv1_1 .. conv4_2) to the TGVGG19 file
read by the feature extractor.

    python3 tools/convert_vgg19.py --out vgg19.tgvgg
    python3 tools/convert_vgg19.py --state-dict vgg19-dcbb9e9d.pth --out vgg19.tgvgg
"""
import argparse
import struct
import sys

# Indices of conv1_1 .. conv4_2 inside torchvision's vgg19().features.
CONV_INDICES = [0, 2, 5, 7, 10, 12, 14, 16, 19, 21]
MAGIC = b"TGVGG19\0"
VERSION = 1


def load_state_dict(path):
    import torch

    if path:
        return torch.load(path, map_location="cpu")
    from torchvision.models import VGG19_Weights, vgg19

    return vgg19(weights=VGG19_Weights.IMAGENET1K_V1).state_dict()


def convert(state, out):
    with open(out, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for idx in CONV_INDICES:
            w = state[f"features.{idx}.weight"].detach().float().contiguous()
            b = state[f"features.{idx}.bias"].detach().float().contiguous()
            cout, cin, kh, kw = w.shape
            if kh != 3 or kw != 3:
                raise ValueError(f"features.{idx}: expected a 3x3 kernel, got {kh}x{kw}")
            f.write(struct.pack("<III", cout, cin, kh))
            f.write(struct.pack(f"<{w.numel()}f", *w.flatten().tolist()))
            f.write(struct.pack(f"<{b.numel()}f", *b.tolist()))


def main(argv):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--state-dict", help="torchvision vgg19 .pth file; downloaded when omitted")
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    convert(load_state_dict(args.state_dict), args.out)
    print(args.out)


if __name__ == "__main__":
    main(sys.argv[1:])
