#!/usr/bin/env python3
"""Convert a torch Swin checkpoint (.pth) into the mcnet blob format.

Tensor names are written unchanged; the loader's key translation
(translate_swin_checkpoint) maps them onto the C++ module layout and
transposes linear weights, so this script only needs to serialize.

Usage: convert_swin_checkpoint.py swin_base_patch4_window12_384_22k.pth out.blob
"""

import struct
import sys

MAGIC = 0x4D434B50  # "MCKP"
VERSION = 1


def write_blob(path, tensors, strings):
    with open(path + ".tmp", "wb") as f:
        f.write(struct.pack("<II", MAGIC, VERSION))
        f.write(struct.pack("<Q", len(tensors) + len(strings)))
        for name in sorted(tensors):
            t = tensors[name]
            f.write(b"\x00")
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<b", t.ndim))
            for d in t.shape:
                f.write(struct.pack("<q", d))
            f.write(t.astype("<f4").tobytes())
        for name in sorted(strings):
            f.write(b"\x01")
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            sb = strings[name].encode()
            f.write(struct.pack("<Q", len(sb)))
            f.write(sb)
    import os

    os.replace(path + ".tmp", path)


def main():
    if len(sys.argv) != 3:
        print(__doc__.strip(), file=sys.stderr)
        return 1
    src, dst = sys.argv[1], sys.argv[2]

    import torch

    state = torch.load(src, map_location="cpu", weights_only=False)
    # released checkpoints wrap the weights in a "model" entry
    for key in ("model", "state_dict"):
        if isinstance(state, dict) and key in state and isinstance(state[key], dict):
            state = state[key]
            break

    tensors = {}
    skipped = []
    for name, value in state.items():
        if not torch.is_tensor(value):
            skipped.append(name)
            continue
        if not torch.is_floating_point(value):
            skipped.append(name)  # relative position index buffers are rebuilt
            continue
        tensors[name] = value.detach().to(torch.float32).numpy()

    write_blob(dst, tensors, {"source": src, "converter": "convert_swin_checkpoint.py"})
    print(f"wrote {len(tensors)} tensors to {dst}")
    if skipped:
        print(f"skipped {len(skipped)} non-float entries (rebuilt at load time)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
