"""Write the 5000-digit MNIST subset bundled with mlxtend as IDX files.

    pip install mlxtend
    python scripts/prepare_mnist_subset.py --out data

The bundled CSV has 784 pixel columns followed by the label.  A wheel file or
the CSV itself can be given with ``--source`` instead of installing mlxtend.
"""
import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from lamaml.tasks import write_idx

CSV_IN_PACKAGE = "mlxtend/data/data/mnist_5k.csv.gz"


def read_source(source):
    if source is None:
        import mlxtend

        source = Path(mlxtend.__file__).parent / "data" / "data" / "mnist_5k.csv.gz"
    source = Path(source)
    if source.suffix == ".whl":
        raw = zipfile.ZipFile(source).read(CSV_IN_PACKAGE)
    else:
        raw = source.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    table = np.loadtxt(io.StringIO(raw.decode()), delimiter=",", dtype=np.int64)
    return table[:, :-1], table[:, -1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--source", help="mlxtend wheel or mnist_5k.csv(.gz); default: installed mlxtend")
    ap.add_argument("--out", default="data")
    args = ap.parse_args()
    pixels, labels = read_source(args.source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(
        pixels.reshape(-1, 28, 28),
        labels,
        out / "mnist5k-images-idx3-ubyte.gz",
        out / "mnist5k-labels-idx1-ubyte.gz",
        compress=True,
    )
    print(f"wrote {pixels.shape[0]} images to {out}/")


if __name__ == "__main__":
    main()
