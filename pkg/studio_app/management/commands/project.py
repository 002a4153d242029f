# anchorcast/studio_app/management/commands/project.py
import os
from anchorcast_core.data_manager import frame_name, write_png
from anchorcast_core.skeleton import (load_camera, load_joint_sequence, load_labeled_joint_sequence,
                                      render_skeleton_sequence, scale_focal)
from anchorcast_core.exceptions import InputValidationError
from ._base import AnchorcastCommand


def load_any_joint_sequence(path):
    """`.jsonl` files hold labeled records; anything else is the 541-field slot format."""
    if path.lower().endswith('.jsonl'):
        return load_labeled_joint_sequence(path)
    return load_joint_sequence(path)


class Command(AnchorcastCommand):
    help = "Projects 3D joints through a pinhole camera and writes numbered skeleton-map PNGs."
    command_name = 'project'
    config_options = {'focal_scale': 'focal_scale', 'line_width': 'line_width', 'point_radius': 'point_radius'}

    def add_command_arguments(self, parser):
        parser.add_argument('--joints', required=True, help="Slot-format joint file, or labeled .jsonl.")
        parser.add_argument('--camera', required=True, help="Camera file of `key = value` lines.")
        parser.add_argument('--focal-scale', type=float, default=None,
                            help="Multiply fx and fy; s > 1 enlarges the skeleton about the principal point.")
        parser.add_argument('--line-width', type=int, default=None)
        parser.add_argument('--point-radius', type=int, default=None)

    def run(self, config, out_dir, options):
        if not os.path.isfile(options['joints']):
            raise InputValidationError(f"joint file not found: {options['joints']}")
        camera = scale_focal(load_camera(options['camera']), config.focal_scale)
        sequence = load_any_joint_sequence(options['joints'])
        if not sequence:
            raise InputValidationError(f"{options['joints']} holds no joint records")
        maps = render_skeleton_sequence(sequence, camera, line_width=config.line_width,
                                        point_radius=config.point_radius)
        written = [write_png(os.path.join(out_dir, frame_name(i)), m.pixels) for i, m in enumerate(maps)]
        return self.write_run_record(
            out_dir, config,
            outputs={'summary': f"{len(written)} skeleton maps in {out_dir}",
                     'frames': [os.path.basename(p) for p in written],
                     'frame_indices': [m.frame_index for m in maps],
                     'camera': camera.as_dict()},
            inputs={'joints': os.path.abspath(options['joints']), 'camera': os.path.abspath(options['camera'])})
