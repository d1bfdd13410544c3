"""Reading CIFAR-10 binary batches and making them long-tailed.

Each record is one label byte followed by 3072 pixel bytes (three 32x32
planes, red then green then blue).  Without a real batch file at hand, this
script writes a small synthetic one, reads it back, and builds an IR=10
long-tailed subset plus its balanced resample.

Run:  python3 demos/cifar_loader.py [path/to/data_batch_1.bin]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from ltrobust.datasets import (
    ImbalanceProfile,
    LabeledSet,
    cifar10_bytes,
    load_cifar10_binary,
    make_balanced_subset,
    make_long_tailed,
)

if len(sys.argv) > 1:
    path = Path(sys.argv[1])
else:
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(10), 60)
    pixels = rng.integers(0, 256, size=(len(labels), 3, 32, 32)) / 255.0
    path = Path(tempfile.mkdtemp()) / "fake_batch.bin"
    path.write_bytes(cifar10_bytes(LabeledSet(pixels, labels, 10)))

data = load_cifar10_binary(path)
print(f"{path.name}: {len(data)} images, shape {data.features.shape[1:]}, "
      f"pixel range [{data.features.min():.2f}, {data.features.max():.2f}]")

lt = make_long_tailed(data, ImbalanceProfile(10.0), seed=0, n_max=int(data.class_counts.min()))
print("long-tailed counts:", lt.class_counts.tolist())
balanced = make_balanced_subset(lt, gamma=5.0, seed=0)
print("balanced resample counts:", balanced.class_counts.tolist())
