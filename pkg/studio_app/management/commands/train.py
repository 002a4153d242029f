# anchorcast/studio_app/management/commands/train.py
import os
from anchorcast_core.data_manager import validate_dataset
from anchorcast_core.exceptions import InputValidationError
from anchorcast_core.training import GestureDataset, LOSS_FILE, fit
from ._base import AnchorcastCommand


class Command(AnchorcastCommand):
    help = "Fine-tunes the ReferenceNet on a validated dataset; backbone and ControlNet stay frozen."
    command_name = 'train'
    config_options = {
        'dataset': 'dataset', 'steps': 'total_steps', 'learning_rate': 'learning_rate',
        'batch_size': 'batch_size', 'checkpoint_every': 'checkpoint_every', 'base_steps': 'base_steps',
        'schedule_steps': 'schedule_steps', 'image_size': 'image_size',
    }

    def add_command_arguments(self, parser):
        parser.add_argument('--dataset', help="Dataset root (frames/, face_masks/, joints.txt, camera.txt).")
        parser.add_argument('--steps', type=int, default=None, help="Fine-tuning steps.")
        parser.add_argument('--learning-rate', type=float, default=None)
        parser.add_argument('--batch-size', type=int, default=None)
        parser.add_argument('--checkpoint-every', type=int, default=None)
        parser.add_argument('--base-steps', type=int, default=None,
                            help="Warm-up steps for backbone and ControlNet before fine-tuning.")
        parser.add_argument('--schedule-steps', type=int, default=None)
        parser.add_argument('--image-size', type=int, default=None)

    def run(self, config, out_dir, options):
        if not config.dataset:
            raise InputValidationError("no dataset given (--dataset or DATASET in the config file)")
        manifest = validate_dataset(config.dataset)
        model_config = config.model_config()
        if tuple(model_config.image_size) != tuple(manifest.resolution):
            raise InputValidationError(f"dataset frames are {manifest.resolution[0]}x{manifest.resolution[1]}, "
                                       f"model expects {model_config.image_size[0]}x{model_config.image_size[1]}")
        dataset = GestureDataset.from_manifest(manifest, config.line_width, config.point_radius)
        checkpoint = fit(dataset, config.train_config(), out_dir, model_config)
        return self.write_run_record(
            out_dir, config, checkpoint=checkpoint,
            outputs={'summary': f"checkpoint {checkpoint}", 'checkpoint': os.path.abspath(checkpoint),
                     'loss_log': os.path.abspath(os.path.join(out_dir, LOSS_FILE))},
            inputs={'dataset': manifest.as_dict()})
