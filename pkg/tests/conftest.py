import numpy as np
import pytest

from donnsim.data_io import load_mnist, mnist_dir
from donnsim.network import TrainConfig, train
from donnsim.quantize import preprocess_images


@pytest.fixture(scope="session")
def mnist():
    d = mnist_dir()
    if not (d / "train-images-idx3-ubyte").exists():
        pytest.skip(f"MNIST IDX files not present in {d} (set DONNSIM_MNIST_DIR)")
    tr = load_mnist("train", d)
    te = load_mnist("test", d, max_items=500)
    return {
        "x_train": preprocess_images(tr.images),
        "y_train": tr.labels.astype(np.int64),
        "x_test": preprocess_images(te.images),
        "y_test": te.labels.astype(np.int64),
    }


@pytest.fixture(scope="session")
def trained_model(mnist):
    return train(mnist["x_train"], mnist["y_train"], TrainConfig()).model
