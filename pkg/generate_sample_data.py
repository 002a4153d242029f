# anchorcast/generate_sample_data.py
import os
import sys
import time
import django

# Set up Django environment to use the project's components
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'anchorcast_config.settings')
django.setup()

from anchorcast_core.data_manager import validate_dataset
from anchorcast_core.toy_data import build_toy_dataset
from anchorcast_core.utils import TOY_DATASET_DIR


def main(frame_count=8, size=64, seed=0):
    """
    Writes the synthetic toy dataset (a drawn avatar waving its arms) to data/toy_dataset
    and validates it the way `train` will.
    """
    print(f"[{time.ctime()}] --- Generating toy dataset ---")
    build_toy_dataset(TOY_DATASET_DIR, frame_count=frame_count, size=size, seed=seed)
    manifest = validate_dataset(TOY_DATASET_DIR)

    print("\n--------------------------------------------------")
    print(f"Toy dataset ready: {manifest.frame_count} frames at {manifest.resolution[1]}x{manifest.resolution[0]}.")
    print(f"Next Step: Run 'python manage.py train --dataset {TOY_DATASET_DIR}' to fine-tune on it.")
    print("--------------------------------------------------")


if __name__ == "__main__":
    # Optional positional overrides: frame count, then image size.
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)
