# anchorcast/studio_app/management/commands/generate.py
import os
from anchorcast_core.checkpoint import load_checkpoint
from anchorcast_core.data_manager import read_png, read_mask, read_skeleton_dir, write_frame_dir
from anchorcast_core.exceptions import InputValidationError
from anchorcast_core.sampler import generate_video, partition_windows
from anchorcast_core.schedule import build_schedule
from anchorcast_core.skeleton import load_camera, render_skeleton_sequence, scale_focal
from anchorcast_core.utils import write_json_atomic
from ._base import AnchorcastCommand
from .project import load_any_joint_sequence

FRAMES_SUBDIR = 'frames'
MANIFEST_FILE = 'manifest.json'


class Command(AnchorcastCommand):
    help = "Samples a video, window by window, from skeleton maps and one reference image."
    command_name = 'generate'
    config_options = {
        'window_size': 'window_size', 'temporal_mode': 'temporal_mode', 'noise_mode': 'noise_mode',
        'steps': 'steps', 'n_jobs': 'n_jobs', 'focal_scale': 'focal_scale',
    }

    def add_command_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--skeleton-dir', help="Directory of numbered skeleton-map PNGs.")
        source.add_argument('--joints', help="Joint file to project (needs --camera).")
        parser.add_argument('--camera')
        parser.add_argument('--reference', required=True, help="Reference RGB frame (PNG).")
        parser.add_argument('--face-mask', required=True, help="Face mask of the reference frame (PNG).")
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--window-size', type=int, default=None)
        parser.add_argument('--temporal-mode', choices=['all-frames', 'per-frame'], default=None)
        parser.add_argument('--noise-mode', choices=['shared', 'per-slot', 'independent'], default=None)
        parser.add_argument('--steps', type=int, default=None, help="DDIM steps.")
        parser.add_argument('--n-jobs', type=int, default=None, help="Windows sampled concurrently.")
        parser.add_argument('--focal-scale', type=float, default=None)

    def _skeletons(self, config, options):
        if options.get('skeleton_dir'):
            return read_skeleton_dir(options['skeleton_dir'])
        if not options.get('camera'):
            raise InputValidationError("--joints needs --camera")
        camera = scale_focal(load_camera(options['camera']), config.focal_scale)
        return render_skeleton_sequence(load_any_joint_sequence(options['joints']), camera,
                                        line_width=config.line_width, point_radius=config.point_radius)

    def run(self, config, out_dir, options):
        sampler_config = config.sampler_config()
        skeletons = self._skeletons(config, options)
        reference = read_png(options['reference'])
        face_mask = read_mask(options['face_mask'])
        if face_mask.shape != reference.shape[:2]:
            raise InputValidationError(f"face mask {options['face_mask']} is {face_mask.shape}, "
                                       f"reference is {reference.shape[:2]}")
        model, manifest = load_checkpoint(options['checkpoint'])
        if reference.shape[:2] != tuple(model.config.image_size):
            raise InputValidationError(f"reference is {reference.shape[:2]}, model expects {model.config.image_size}")
        schedule = manifest['schedule'] or {'kind': 'linear', 'num_steps': 1000}
        sched = build_schedule(schedule['num_steps'], schedule['kind'])

        frames = generate_video(skeletons, reference, face_mask, model, sampler_config, sched)
        paths = write_frame_dir(os.path.join(out_dir, FRAMES_SUBDIR), frames)
        write_json_atomic(os.path.join(out_dir, MANIFEST_FILE), {
            'frames': [os.path.basename(p) for p in paths],
            'skeleton_frame_indices': [s.frame_index for s in skeletons],
            'windows': partition_windows(len(skeletons), sampler_config.window_size),
            'sampler': sampler_config.as_dict(),
            'schedule': sched.descriptor(),
        })
        return self.write_run_record(
            out_dir, config, checkpoint=options['checkpoint'],
            outputs={'summary': f"{len(paths)} frames in {os.path.join(out_dir, FRAMES_SUBDIR)}",
                     'frames_dir': os.path.abspath(os.path.join(out_dir, FRAMES_SUBDIR)),
                     'frame_count': len(paths)},
            inputs={k: os.path.abspath(options[k]) if options.get(k) else None
                    for k in ('skeleton_dir', 'joints', 'camera', 'reference', 'face_mask')})
